#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dto/batch.hpp"
#include "dto/data.hpp"
#include "dto/model.hpp"

namespace dto {

struct TrainConfig {
  std::size_t epochs = 200;
  double lr = 5e-4;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double clip_norm = 1.0;
  bool augment = true;
  /// Validation ADE every n epochs (and after the last one); 0 disables it.
  std::size_t eval_every = 1;
  /// Observation counts used for training; one is drawn per batch. Zero
  /// means the model's native t_obs.
  std::size_t obs_min = 0;
  std::size_t obs_max = 0;
  /// Observation count for validation; zero means the model's native t_obs.
  std::size_t val_obs = 0;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean total loss over batches
  double l_gt = 0.0;
  double l_ed = 0.0;
  double l_dd = 0.0;
  double val_ade = -1.0;  // negative when not evaluated
  double seconds = 0.0;
};

struct InitialLosses {
  double l_gt = 0.0;
  double l_ed = 0.0;
  double l_dd = 0.0;
};

struct TrainRunManifest {
  std::string kind;  // teacher | student | scratch | variable | pastgen
  std::string dataset_id;
  std::uint64_t train_hash = 0;
  std::uint64_t val_hash = 0;
  SttConfig model;
  TrainConfig train;
  double alpha = 1.0, beta = 1.0, gamma = 1.0;
  std::size_t teacher_obs = 0, student_obs = 0;
  std::vector<EpochLog> epochs;
  InitialLosses initial;
  std::size_t best_epoch = 0;
  double best_val_ade = -1.0;
  double wall_seconds = 0.0;
  std::string checkpoint;
};

struct TrainResult {
  SttModel model;
  TrainRunManifest manifest;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Supervised training with teacher forcing and the ground-truth loss. The
/// observation count per batch is drawn from [obs_min, obs_max].
TrainResult train_teacher(std::span<const SceneWindow> train, std::span<const SceneWindow> val,
                          const SttConfig& config, const TrainConfig& tc,
                          const EpochCallback& on_epoch = {});

struct DistillConfig {
  std::size_t teacher_obs = 8;
  std::size_t student_obs = 2;
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;

  void validate() const;
};

struct DistillLosses {
  Tensor total, l_gt, l_ed, l_dd;
};

/// Student losses on one batch. The teacher runs without gradients and without
/// dropout; `mode` drives the student.
DistillLosses distill_losses(const SttModel& teacher, const SttModel& student,
                             std::span<const SceneWindow> batch, const DistillConfig& dc,
                             ForwardMode& mode);

/// Student initialised from the teacher's parameters and trained on the
/// weighted sum of the three losses. The teacher is never modified.
TrainResult distill_student(const SttModel& teacher, std::span<const SceneWindow> train,
                            std::span<const SceneWindow> val, const DistillConfig& dc,
                            const TrainConfig& tc, const EpochCallback& on_epoch = {});

/// Mean losses of the student over `windows` in evaluation mode.
InitialLosses mean_distill_losses(const SttModel& teacher, const SttModel& student,
                                  std::span<const SceneWindow> windows, const DistillConfig& dc,
                                  std::size_t chunk = 64);

/// Copies the windows of `indices`, rotated by one random angle each when
/// `rng` is given.
std::vector<SceneWindow> gather_batch(std::span<const SceneWindow> windows,
                                      std::span<const std::size_t> indices, Rng* rng);

}  // namespace dto
