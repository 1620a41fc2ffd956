#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dto/data.hpp"
#include "dto/model.hpp"
#include "dto/tracker_noise.hpp"
#include "dto/train.hpp"

namespace dto {

/// Everything a CLI command may read. Keys of the JSON config file are the
/// long flag names with '-' replaced by '_'.
struct RunConfig {
  std::string command;
  std::string dataset = "synth";  // TrajNet file/directory, or "synth"
  std::string preset = "sdd";
  std::uint64_t seed = 1;
  std::uint64_t split_seed = 0;
  std::string out = "runs";
  std::string split = "test";

  std::size_t obs = 2;
  std::size_t lag = 1;
  std::vector<std::size_t> lags{1, 2, 3};
  std::size_t obs_min = 2;
  std::size_t obs_max = 8;

  double alpha = 1.0, beta = 1.0, gamma = 1.0;
  std::size_t epochs = 200;
  double lr = -1.0;  // negative: preset value
  std::size_t batch = 0;  // 0: preset value
  std::size_t eval_every = 10;

  double jitter = 0.05, drift = 0.05, frag = 0.05;

  std::string checkpoint;  // model under evaluation
  std::string teacher;
  std::string student;
  std::string scratch;
  std::string generator;  // past generator for baseline pastgen evaluation
  std::string kind;  // baseline kind: scratch | variable | pastgen

  std::size_t scenes = 150;
  std::size_t scene_steps = 30;
  std::size_t min_agents = 1;
  std::size_t max_agents = 3;
  std::vector<double> weights{0.35, 0.35, 0.1, 0.2};

  void validate() const;
  SttConfig model_config() const;
  TrainConfig train_config() const;
  DistillConfig distill_config(std::size_t teacher_obs) const;
  NoiseSpec noise() const;
  SynthSpec synth_spec() const;
};

/// Applies a JSON object onto `config`; unknown keys and wrong types are
/// config errors.
void apply_json(RunConfig& config, const std::string& json_text);
void apply_json_file(RunConfig& config, const std::filesystem::path& path);
std::string to_json(const RunConfig& config);

}  // namespace dto
