// Command-line front end: one subcommand per experiment step.
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dto/baselines.hpp"
#include "dto/checkpoint.hpp"
#include "dto/error.hpp"
#include "dto/metrics.hpp"
#include "dto/rng.hpp"
#include "dto/run_config.hpp"
#include "dto/runtime.hpp"
#include "dto/tracker_noise.hpp"
#include "dto/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dto;

namespace {

using Override = std::function<void(RunConfig&)>;

template <class T>
void flag(CLI::App* app, std::vector<Override>& overrides, const std::string& name,
          T RunConfig::*field, const std::string& help) {
  auto holder = std::make_shared<T>();
  CLI::Option* opt = app->add_option("--" + name, *holder, help);
  overrides.push_back([opt, holder, field](RunConfig& c) {
    if (opt->count() > 0) c.*field = *holder;
  });
}

void add_common_flags(CLI::App* app, std::vector<Override>& ov) {
  flag(app, ov, "seed", &RunConfig::seed, "run seed");
  flag(app, ov, "split-seed", &RunConfig::split_seed, "seed of synthesis and scene split");
  flag(app, ov, "out", &RunConfig::out, "output root directory");
  flag(app, ov, "dataset", &RunConfig::dataset, "TrajNet file/directory or 'synth'");
  flag(app, ov, "preset", &RunConfig::preset, "ethucy|sdd|lyft");
  flag(app, ov, "split", &RunConfig::split, "train|val|test");
  flag(app, ov, "obs", &RunConfig::obs, "observation count K");
  flag(app, ov, "lag", &RunConfig::lag, "time lag between observations");
  flag(app, ov, "lags", &RunConfig::lags, "lags for sweep-lag");
  flag(app, ov, "obs-min", &RunConfig::obs_min, "smallest K");
  flag(app, ov, "obs-max", &RunConfig::obs_max, "largest K");
  flag(app, ov, "alpha", &RunConfig::alpha, "ground-truth loss weight");
  flag(app, ov, "beta", &RunConfig::beta, "encoder distillation weight");
  flag(app, ov, "gamma", &RunConfig::gamma, "decoder distillation weight");
  flag(app, ov, "epochs", &RunConfig::epochs, "training epochs");
  flag(app, ov, "lr", &RunConfig::lr, "learning rate (negative: preset)");
  flag(app, ov, "batch", &RunConfig::batch, "batch size (0: preset)");
  flag(app, ov, "eval-every", &RunConfig::eval_every, "validation interval in epochs");
  flag(app, ov, "jitter", &RunConfig::jitter, "tracker jitter sigma (m)");
  flag(app, ov, "drift", &RunConfig::drift, "tracker drift sigma (m/sqrt(step))");
  flag(app, ov, "frag", &RunConfig::frag, "tracker fragmentation probability");
  flag(app, ov, "checkpoint", &RunConfig::checkpoint, "model checkpoint");
  flag(app, ov, "teacher", &RunConfig::teacher, "teacher checkpoint");
  flag(app, ov, "student", &RunConfig::student, "student checkpoint");
  flag(app, ov, "scratch", &RunConfig::scratch, "from-scratch checkpoint");
  flag(app, ov, "generator", &RunConfig::generator, "past generator checkpoint");
  flag(app, ov, "scenes", &RunConfig::scenes, "synthetic scene count");
  flag(app, ov, "scene-steps", &RunConfig::scene_steps, "sampled steps per synthetic scene");
  flag(app, ov, "min-agents", &RunConfig::min_agents, "fewest agents per synthetic scene");
  flag(app, ov, "max-agents", &RunConfig::max_agents, "most agents per synthetic scene");
  flag(app, ov, "weights", &RunConfig::weights, "linear turn stop_go avoid mixture");
}

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%S", &tm);
  return buf;
}

fs::path make_run_dir(const RunConfig& c) {
  const std::string base = c.command + "-" + timestamp() + "-" + std::to_string(c.seed);
  fs::path dir = fs::path(c.out) / base;
  for (int n = 1; fs::exists(dir); ++n) dir = fs::path(c.out) / (base + "-" + std::to_string(n));
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::istreambuf_iterator<char> it(in), end; it != end; ++it) {
    h ^= static_cast<unsigned char>(*it);
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct Data {
  std::string id;
  std::vector<SceneWindow> train, val, test;

  const std::vector<SceneWindow>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    return test;
  }
};

// eth.txt was recorded at a different frame rate
DatasetSpec dataset_spec() {
  DatasetSpec spec;
  spec.stride_overrides = {{"eth", 6}};
  return spec;
}

std::vector<Scene> load_scenes(const RunConfig& c, std::string& id) {
  if (c.dataset == "synth") {
    Rng rng = Rng(c.split_seed).stream("synth");
    id = "synth:" + std::to_string(c.scenes) + ":" + std::to_string(c.split_seed);
    return synthesize_dataset(c.synth_spec(), rng);
  }
  if (!fs::exists(c.dataset)) throw Error(ErrorKind::io, "dataset not found: " + c.dataset);
  id = c.dataset;
  return load_trajnet(c.dataset, dataset_spec());
}

Data load_data(const RunConfig& c) {
  Data d;
  const DatasetSpec spec = dataset_spec();
  Rng rng = Rng(c.split_seed).stream("split");
  auto split = split_scenes(load_scenes(c, d.id), spec, rng);
  d.train = windows_for(split.train, spec);
  d.val = windows_for(split.val, spec);
  d.test = windows_for(split.test, spec);
  if (d.train.empty()) throw Error(ErrorKind::data, "dataset yields no training windows");
  return d;
}

SttModel load_model(const std::string& path, const char* what) {
  if (path.empty()) throw Error(ErrorKind::config, std::string("--") + what + " is required");
  if (!fs::exists(path)) throw Error(ErrorKind::io, std::string(what) + " not found: " + path);
  return load_checkpoint(path);
}

class Run {
 public:
  explicit Run(const RunConfig& c) : config_(c), dir_(make_run_dir(c)) {
    manifest_["command"] = c.command;
    manifest_["config"] = json::parse(to_json(c));
    manifest_["started"] = timestamp();
  }

  const fs::path& dir() const { return dir_; }
  json& manifest() { return manifest_; }

  void input_file(const std::string& key, const std::string& path) {
    manifest_["inputs"][key] = {{"path", path}, {"fnv64", hex(file_hash(path))}};
  }
  void input_data(const Data& d) {
    manifest_["inputs"]["dataset"] = {{"id", d.id},
                                      {"train_windows", d.train.size()},
                                      {"val_windows", d.val.size()},
                                      {"test_windows", d.test.size()},
                                      {"train_hash", hex(hash_windows(d.train))},
                                      {"val_hash", d.val.empty() ? "" : hex(hash_windows(d.val))},
                                      {"test_hash", d.test.empty() ? "" : hex(hash_windows(d.test))}};
  }
  void output(const std::string& name) { manifest_["outputs"].push_back(name); }

  void write_metrics(const std::vector<MetricsRow>& rows) {
    write_metrics_csv(rows, dir_ / "metrics.csv");
    output("metrics.csv");
    std::cout << metrics_csv(rows);
  }

  void finish() {
    manifest_["wall_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::ofstream out(dir_ / "manifest.json");
    out << manifest_.dump(2) << '\n';
    if (!out) throw Error(ErrorKind::io, "cannot write manifest in " + dir_.string());
    std::cout << "run directory: " << dir_.string() << '\n';
  }

 private:
  RunConfig config_;
  fs::path dir_;
  json manifest_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

json train_manifest_json(const TrainRunManifest& m) {
  json epochs = json::array();
  for (const auto& e : m.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"loss", e.train_loss}, {"l_gt", e.l_gt},
                      {"l_ed", e.l_ed}, {"l_dd", e.l_dd}, {"val_ade", e.val_ade},
                      {"seconds", e.seconds}});
  }
  return {{"kind", m.kind},
          {"train_hash", hex(m.train_hash)},
          {"val_hash", hex(m.val_hash)},
          {"model", json::parse(config_json(m.model))},
          {"seed", m.train.seed},
          {"epochs_run", m.train.epochs},
          {"lr", m.train.lr},
          {"batch", m.train.batch_size},
          {"clip_norm", m.train.clip_norm},
          {"alpha", m.alpha},
          {"beta", m.beta},
          {"gamma", m.gamma},
          {"teacher_obs", m.teacher_obs},
          {"student_obs", m.student_obs},
          {"initial_losses", {{"l_gt", m.initial.l_gt}, {"l_ed", m.initial.l_ed}, {"l_dd", m.initial.l_dd}}},
          {"best_epoch", m.best_epoch},
          {"best_val_ade", m.best_val_ade},
          {"wall_seconds", m.wall_seconds},
          {"checkpoint", m.checkpoint},
          {"epochs", epochs}};
}

EpochCallback progress() {
  return [](const EpochLog& e) {
    if (e.val_ade >= 0.0) {
      std::fprintf(stderr, "epoch %zu loss %.5f val_ade %.4f (%.1fs)\n", e.epoch, e.train_loss,
                   e.val_ade, e.seconds);
    }
  };
}

MetricsRow row_template(const RunConfig& c, const Data& d, const std::string& model,
                        std::size_t train_obs) {
  MetricsRow r;
  r.dataset = d.id;
  r.split = c.split;
  r.model = model;
  r.train_obs = train_obs;
  r.seed = c.seed;
  return r;
}

void save_trained(Run& run, TrainResult& result, const std::string& file) {
  result.manifest.checkpoint = file;
  save_checkpoint(result.model, run.dir() / file);
  run.output(file);
  run.manifest()["training"] = train_manifest_json(result.manifest);
}

void cmd_synth(const RunConfig& c) {
  Run run(c);
  Rng rng = Rng(c.split_seed).stream("synth");
  const auto scenes = synthesize_dataset(c.synth_spec(), rng);
  write_trajnet_dir(scenes, run.dir() / "data");
  run.output("data");
  run.manifest()["scenes"] = scenes.size();
  run.finish();
}

void cmd_train_teacher(const RunConfig& c) {
  const Data d = load_data(c);
  Run run(c);
  run.input_data(d);
  auto result = train_teacher(d.train, d.val, c.model_config(), c.train_config(), progress());
  save_trained(run, result, "teacher.ckpt");
  const SttModel model = load_checkpoint(run.dir() / "teacher.ckpt");
  const auto t = model.config().t_obs;
  run.write_metrics({evaluate_row(ModelForecaster(model), d.split(c.split), {t, 1},
                                  row_template(c, d, "teacher", t))});
  run.finish();
}

void cmd_distill(const RunConfig& c) {
  const SttModel teacher = load_model(c.teacher, "teacher");
  const Data d = load_data(c);
  Run run(c);
  run.input_data(d);
  run.input_file("teacher", c.teacher);
  const std::uint64_t before = teacher.parameter_hash();
  auto result = distill_student(teacher, d.train, d.val, c.distill_config(teacher.config().t_obs),
                                c.train_config(), progress());
  if (teacher.parameter_hash() != before) throw Error(ErrorKind::numeric, "teacher was modified");
  const auto& init = result.manifest.initial;
  std::printf("initial losses: l_gt %.9g l_ed %.9g l_dd %.9g\n", init.l_gt, init.l_ed, init.l_dd);
  save_trained(run, result, "student.ckpt");
  const SttModel student = load_checkpoint(run.dir() / "student.ckpt");
  run.write_metrics({evaluate_row(ModelForecaster(student), d.split(c.split), {c.obs, 1},
                                  row_template(c, d, "dto", c.obs))});
  run.finish();
}

void cmd_eval(const RunConfig& c) {
  const SttModel model = load_model(c.checkpoint, "checkpoint");
  const Data d = load_data(c);
  Run run(c);
  run.input_data(d);
  run.input_file("checkpoint", c.checkpoint);
  const auto& windows = d.split(c.split);
  run.write_metrics({evaluate_row(ModelForecaster(model), windows, {c.obs, c.lag},
                                  row_template(c, d, "stt", model.config().t_obs))});
  dump_qualitative(ModelForecaster(model), windows, {c.obs, c.lag}, run.dir() / "qualitative.csv");
  run.output("qualitative.csv");
  run.finish();
}

void cmd_sweep_length(const RunConfig& c) {
  const SttModel model = load_model(c.checkpoint, "checkpoint");
  const Data d = load_data(c);
  Run run(c);
  run.input_data(d);
  run.input_file("checkpoint", c.checkpoint);
  std::vector<std::size_t> ks;
  for (std::size_t k = c.obs_min; k <= std::min<std::size_t>(c.obs_max, 8); ++k) ks.push_back(k);
  run.write_metrics(length_shift_sweep(ModelForecaster(model), d.split(c.split), ks,
                                       row_template(c, d, "stt", model.config().t_obs)));
  run.finish();
}

void cmd_sweep_lag(const RunConfig& c) {
  const SttModel model = load_model(c.checkpoint, "checkpoint");
  const Data d = load_data(c);
  Run run(c);
  run.input_data(d);
  run.input_file("checkpoint", c.checkpoint);
  run.write_metrics(time_lag_sweep(ModelForecaster(model), d.split(c.split), c.obs, c.lags,
                                   row_template(c, d, "stt", model.config().t_obs)));
  run.finish();
}

void cmd_tracker_sim(const RunConfig& c) {
  const Data d = load_data(c);
  Run run(c);
  run.input_data(d);
  std::vector<std::unique_ptr<SttModel>> models;
  std::vector<std::unique_ptr<ModelForecaster>> forecasters;
  std::vector<NamedForecaster> named;
  for (const auto& [name, path] : std::vector<std::pair<std::string, std::string>>{
           {"teacher", c.teacher}, {"dto", c.student}, {"scratch", c.scratch}}) {
    if (path.empty()) continue;
    models.push_back(std::make_unique<SttModel>(load_model(path, name.c_str())));
    run.input_file(name, path);
    forecasters.push_back(std::make_unique<ModelForecaster>(*models.back()));
    named.push_back({name, forecasters.back().get(), models.back()->config().t_obs});
  }
  CvmForecaster cvm;
  named.push_back({"cvm", &cvm, 2});
  run.write_metrics(gt_vs_tracked_report(named, d.split(c.split), c.noise(),
                                         row_template(c, d, "", 0)));
  run.finish();
}

void cmd_attn_stats(const RunConfig& c) {
  const SttModel model = load_model(c.checkpoint, "checkpoint");
  const Data d = load_data(c);
  Run run(c);
  run.input_data(d);
  run.input_file("checkpoint", c.checkpoint);
  const auto stats = attention_coefficient_stats(model, d.split(c.split));
  std::ofstream out(run.dir() / "attention_stats.csv");
  out << attention_stats_csv(stats);
  if (!out) throw Error(ErrorKind::io, "cannot write attention_stats.csv");
  run.output("attention_stats.csv");
  run.manifest()["max_row_sum_error"] = stats.max_row_sum_error;
  std::cout << attention_stats_csv(stats);
  run.finish();
}

void cmd_cvm(const RunConfig& c) {
  const Data d = load_data(c);
  Run run(c);
  run.input_data(d);
  run.write_metrics({evaluate_row(CvmForecaster(), d.split(c.split), {c.obs, c.lag},
                                  row_template(c, d, "cvm", 2))});
  run.finish();
}

void cmd_baseline(const RunConfig& c) {
  const Data d = load_data(c);
  Run run(c);
  run.input_data(d);
  const SttConfig cfg = c.model_config();
  const TrainConfig tc = c.train_config();
  const auto& windows = d.split(c.split);
  if (c.kind == "scratch") {
    auto result = train_from_scratch_k(d.train, d.val, c.obs, cfg, tc, progress());
    save_trained(run, result, "scratch.ckpt");
    const SttModel m = load_checkpoint(run.dir() / "scratch.ckpt");
    run.write_metrics({evaluate_row(ModelForecaster(m), windows, {c.obs, 1},
                                    row_template(c, d, "scratch", c.obs))});
  } else if (c.kind == "variable") {
    auto result = train_variable_obs(d.train, d.val, c.obs_min, c.obs_max, cfg, tc, progress());
    save_trained(run, result, "variable.ckpt");
    const SttModel m = load_checkpoint(run.dir() / "variable.ckpt");
    std::vector<std::size_t> ks;
    for (std::size_t k = c.obs_min; k <= c.obs_max; ++k) ks.push_back(k);
    run.write_metrics(length_shift_sweep(ModelForecaster(m), windows, ks,
                                         row_template(c, d, "variable", c.obs_max)));
  } else if (c.kind == "pastgen") {
    // --checkpoint names the primary model the generated history feeds
    const SttModel primary = load_model(c.checkpoint, "checkpoint");
    run.input_file("checkpoint", c.checkpoint);
    SttModel generator;
    if (!c.generator.empty()) {
      generator = load_model(c.generator, "generator");
      run.input_file("generator", c.generator);
    } else {
      auto result = train_past_generator(d.train, d.val, c.obs, cfg, tc, progress());
      save_trained(run, result, "pastgen.ckpt");
      generator = load_checkpoint(run.dir() / "pastgen.ckpt");
    }
    ModelPastGenerator gen(generator);
    run.write_metrics({evaluate_row(PastGenForecaster(primary, gen), windows, {c.obs, 1},
                                    row_template(c, d, "pastgen", c.obs))});
  } else {
    throw Error(ErrorKind::config, "unknown baseline kind '" + c.kind +
                                       "' (expected scratch|variable|pastgen)");
  }
  run.finish();
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"STT trajectory forecasting with observation distillation"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON run configuration");

  const std::map<std::string, std::pair<std::string, void (*)(const RunConfig&)>> commands = {
      {"synth", {"write a synthetic TrajNet dataset", cmd_synth}},
      {"train-teacher", {"train the T-observation teacher", cmd_train_teacher}},
      {"distill", {"distill a K-observation student from a teacher", cmd_distill}},
      {"eval", {"ADE/FDE of a checkpoint", cmd_eval}},
      {"sweep-length", {"evaluate over observation counts", cmd_sweep_length}},
      {"sweep-lag", {"evaluate over time lags", cmd_sweep_lag}},
      {"tracker-sim", {"clean vs tracked observations", cmd_tracker_sim}},
      {"attn-stats", {"cross-attention coefficients per encoder step", cmd_attn_stats}},
      {"cvm", {"constant-velocity baseline", cmd_cvm}},
      {"baseline", {"train a baseline: scratch|variable|pastgen", cmd_baseline}},
  };
  std::map<std::string, std::vector<Override>> overrides;
  std::string kind;
  for (const auto& [name, entry] : commands) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    sub->add_option("--config", config_path, "JSON run configuration");
    add_common_flags(sub, overrides[name]);
    if (name == "baseline") sub->add_option("kind", kind, "scratch|variable|pastgen")->required();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error[%s]: %s\n", to_string(ErrorKind::config).data(), e.what());
    return exit_code(ErrorKind::config);
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    RunConfig config;
    if (!config_path.empty()) apply_json_file(config, config_path);
    for (const auto& apply : overrides[name]) apply(config);
    config.command = name;
    if (!kind.empty()) config.kind = kind;
    config.validate();
    commands.at(name).second(config);
  } catch (const Error& e) {
    std::fprintf(stderr, "error[%s]: %s\n", to_string(e.kind()).data(), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error[internal]: %s\n", e.what());
    return 2;
  }
  return 0;
}
