#include "dto/run_config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"

#include "dto/error.hpp"

namespace dto {

using nlohmann::json;

void RunConfig::validate() const {
  parse_preset(preset);
  if (split != "train" && split != "val" && split != "test") {
    throw Error(ErrorKind::config, "split must be train, val or test");
  }
  if (obs < 2) throw Error(ErrorKind::config, "--obs must be >= 2");
  if (lag < 1) throw Error(ErrorKind::config, "--lag must be >= 1");
  for (auto l : lags)
    if (l < 1) throw Error(ErrorKind::config, "lags must be >= 1");
  if (obs_min < 2 || obs_min > obs_max) throw Error(ErrorKind::config, "need 2 <= obs_min <= obs_max");
  if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) {
    throw Error(ErrorKind::config, "loss weights must be >= 0");
  }
  if (epochs == 0) throw Error(ErrorKind::config, "--epochs must be >= 1");
  noise().validate();
  synth_spec().validate();
}

SttConfig RunConfig::model_config() const { return SttConfig::preset(parse_preset(preset)); }

TrainConfig RunConfig::train_config() const {
  const TrainPreset tp = TrainPreset::preset(parse_preset(preset));
  TrainConfig tc;
  tc.epochs = epochs;
  tc.lr = lr >= 0.0 ? lr : tp.lr;
  tc.batch_size = batch ? batch : tp.batch_size;
  tc.seed = seed;
  tc.eval_every = eval_every;
  return tc;
}

DistillConfig RunConfig::distill_config(std::size_t teacher_obs) const {
  DistillConfig dc;
  dc.teacher_obs = teacher_obs;
  dc.student_obs = obs;
  dc.alpha = alpha;
  dc.beta = beta;
  dc.gamma = gamma;
  return dc;
}

NoiseSpec RunConfig::noise() const {
  NoiseSpec n;
  n.jitter = jitter;
  n.drift = drift;
  n.frag = frag;
  n.seed = seed;
  return n;
}

SynthSpec RunConfig::synth_spec() const {
  SynthSpec s;
  s.scenes = scenes;
  s.steps_per_scene = scene_steps;
  s.min_agents = min_agents;
  s.max_agents = max_agents;
  if (weights.size() != 4) throw Error(ErrorKind::config, "weights needs 4 entries");
  for (std::size_t i = 0; i < 4; ++i) s.weights[i] = weights[i];
  return s;
}

namespace {

// One accessor per key, shared by parsing and serialization.
template <class T>
std::function<void(RunConfig&, const json&)> setter(T RunConfig::*field) {
  return [field](RunConfig& c, const json& v) { c.*field = v.get<T>(); };
}

template <class T>
std::function<void(const RunConfig&, json&, const std::string&)> getter(T RunConfig::*field) {
  return [field](const RunConfig& c, json& j, const std::string& key) { j[key] = c.*field; };
}

struct Field {
  std::function<void(RunConfig&, const json&)> set;
  std::function<void(const RunConfig&, json&, const std::string&)> get;
};

template <class T>
Field field(T RunConfig::*f) {
  return {setter(f), getter(f)};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"command", field(&RunConfig::command)},
      {"dataset", field(&RunConfig::dataset)},
      {"preset", field(&RunConfig::preset)},
      {"seed", field(&RunConfig::seed)},
      {"split_seed", field(&RunConfig::split_seed)},
      {"out", field(&RunConfig::out)},
      {"split", field(&RunConfig::split)},
      {"obs", field(&RunConfig::obs)},
      {"lag", field(&RunConfig::lag)},
      {"lags", field(&RunConfig::lags)},
      {"obs_min", field(&RunConfig::obs_min)},
      {"obs_max", field(&RunConfig::obs_max)},
      {"alpha", field(&RunConfig::alpha)},
      {"beta", field(&RunConfig::beta)},
      {"gamma", field(&RunConfig::gamma)},
      {"epochs", field(&RunConfig::epochs)},
      {"lr", field(&RunConfig::lr)},
      {"batch", field(&RunConfig::batch)},
      {"eval_every", field(&RunConfig::eval_every)},
      {"jitter", field(&RunConfig::jitter)},
      {"drift", field(&RunConfig::drift)},
      {"frag", field(&RunConfig::frag)},
      {"checkpoint", field(&RunConfig::checkpoint)},
      {"teacher", field(&RunConfig::teacher)},
      {"student", field(&RunConfig::student)},
      {"scratch", field(&RunConfig::scratch)},
      {"generator", field(&RunConfig::generator)},
      {"kind", field(&RunConfig::kind)},
      {"scenes", field(&RunConfig::scenes)},
      {"scene_steps", field(&RunConfig::scene_steps)},
      {"min_agents", field(&RunConfig::min_agents)},
      {"max_agents", field(&RunConfig::max_agents)},
      {"weights", field(&RunConfig::weights)},
  };
  return table;
}

}  // namespace

void apply_json(RunConfig& config, const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::config, "config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto f = fields().find(it.key());
    if (f == fields().end()) throw Error(ErrorKind::config, "unknown config key '" + it.key() + "'");
    try {
      f->second.set(config, it.value());
    } catch (const json::exception& e) {
      throw Error(ErrorKind::config, "config key '" + it.key() + "': " + e.what());
    }
  }
}

void apply_json_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_json(config, ss.str());
}

std::string to_json(const RunConfig& config) {
  json j = json::object();
  for (const auto& [key, f] : fields()) f.get(config, j, key);
  return j.dump(2);
}

}  // namespace dto
