#include "dto/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "dto/error.hpp"
#include "dto/rng.hpp"

namespace dto {

namespace fs = std::filesystem;

double norm(Vec2 v) { return std::hypot(v.x, v.y); }

Vec2 rotate(Vec2 v, double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

long DatasetSpec::stride_for(const std::string& scene_id) const {
  auto it = stride_overrides.find(scene_id);
  return it == stride_overrides.end() ? frame_stride : it->second;
}

void DatasetSpec::validate() const {
  if (t_obs < 2) throw Error(ErrorKind::config, "t_obs must be >= 2");
  if (t_pred < 1) throw Error(ErrorKind::config, "t_pred must be >= 1");
  if (frame_stride < 1) throw Error(ErrorKind::config, "frame stride must be >= 1");
  for (const auto& [scene, stride] : stride_overrides) {
    if (stride < 1) throw Error(ErrorKind::config, "frame stride for " + scene + " must be >= 1");
  }
  double total = 0.0;
  for (double f : split_fractions) {
    if (f < 0.0) throw Error(ErrorKind::config, "split fractions must be >= 0");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorKind::config, "split fractions must sum to 1");
}

std::size_t SceneWindow::loss_agents() const {
  return static_cast<std::size_t>(std::count(loss_agent.begin(), loss_agent.end(), 1));
}

Vec2 SceneWindow::world(std::size_t agent, std::size_t step) const {
  if (normalized && !source_positions.empty()) return source_positions[agent * steps() + step];
  const Vec2 p = at(agent, step);
  return normalized ? p + offsets[agent] : p;
}

namespace {

bool parse_number(std::string_view token, double& out) {
  const char* first = token.data();
  const char* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

bool parse_integral(std::string_view token, long& out) {
  double v = 0.0;
  if (!parse_number(token, v) || v != std::floor(v)) return false;
  out = static_cast<long>(v);
  return true;
}

}  // namespace

Scene load_trajnet_file(const fs::path& file, const DatasetSpec& spec) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::io, "cannot read " + file.string());

  struct Row {
    long frame;
    long ped;
    double x, y;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    std::vector<std::string> tokens;
    for (std::string tok; fields >> tok;) tokens.push_back(tok);
    Row row{};
    if (tokens.size() != 4 || !parse_integral(tokens[0], row.frame) ||
        !parse_integral(tokens[1], row.ped) || !parse_number(tokens[2], row.x) ||
        !parse_number(tokens[3], row.y)) {
      throw Error(ErrorKind::data, file.string() + ":" + std::to_string(line_no) +
                                       ": expected `frame_id ped_id x y`, got \"" + line + "\"");
    }
    rows.push_back(row);
  }
  if (rows.empty()) throw Error(ErrorKind::data, file.string() + ": no records");

  Scene scene;
  scene.id = file.stem().string();
  scene.frame_stride = spec.stride_for(scene.id);
  scene.frame_origin = std::min_element(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
                         return a.frame < b.frame;
                       })->frame;

  std::map<long, Trajectory> by_agent;
  for (const auto& r : rows) {
    if ((r.frame - scene.frame_origin) % scene.frame_stride != 0) continue;
    auto& traj = by_agent[r.ped];
    traj.agent_id = static_cast<int>(r.ped);
    traj.samples.push_back({r.frame, r.x, r.y});
  }
  for (auto& [ped, traj] : by_agent) {
    std::sort(traj.samples.begin(), traj.samples.end(),
              [](const TrackSample& a, const TrackSample& b) { return a.frame < b.frame; });
    for (std::size_t i = 1; i < traj.samples.size(); ++i) {
      if (traj.samples[i].frame == traj.samples[i - 1].frame) {
        throw Error(ErrorKind::data, file.string() + ": agent " + std::to_string(ped) +
                                         " has two records at frame " +
                                         std::to_string(traj.samples[i].frame));
      }
    }
    scene.agents.push_back(std::move(traj));
  }
  return scene;
}

std::vector<Scene> load_trajnet(const fs::path& path, const DatasetSpec& spec) {
  spec.validate();
  std::vector<Scene> scenes;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() != ".json") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) scenes.push_back(load_trajnet_file(f, spec));
  } else if (fs::exists(path)) {
    scenes.push_back(load_trajnet_file(path, spec));
  } else {
    throw Error(ErrorKind::io, "cannot read " + path.string());
  }
  if (scenes.empty()) throw Error(ErrorKind::data, path.string() + ": no scene files");
  return scenes;
}

void write_trajnet(const Scene& scene, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw Error(ErrorKind::io, "cannot write " + file.string());
  struct Rec {
    long frame;
    int ped;
    double x, y;
  };
  std::vector<Rec> recs;
  for (const auto& traj : scene.agents)
    for (const auto& s : traj.samples) recs.push_back({s.frame, traj.agent_id, s.x, s.y});
  std::stable_sort(recs.begin(), recs.end(), [](const Rec& a, const Rec& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.ped < b.ped;
  });
  char buf[128];
  for (const auto& r : recs) {
    std::snprintf(buf, sizeof buf, "%ld\t%d\t%.17g\t%.17g\n", r.frame, r.ped, r.x, r.y);
    out << buf;
  }
  if (!out) throw Error(ErrorKind::io, "failed writing " + file.string());
}

void write_trajnet_dir(std::span<const Scene> scenes, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& s : scenes) write_trajnet(s, dir / (s.id + ".txt"));
}

std::vector<SceneWindow> build_windows(const Scene& scene, const DatasetSpec& spec) {
  spec.validate();
  const std::size_t len = spec.window_length();
  std::vector<SceneWindow> out;
  if (scene.agents.empty()) return out;

  // Dense per-agent step -> position lookup over the scene's step range.
  long lo = std::numeric_limits<long>::max(), hi = std::numeric_limits<long>::min();
  for (const auto& traj : scene.agents) {
    for (const auto& s : traj.samples) {
      lo = std::min(lo, scene.step_of(s.frame));
      hi = std::max(hi, scene.step_of(s.frame));
    }
  }
  if (hi < lo || static_cast<std::size_t>(hi - lo + 1) < len) return out;
  const std::size_t span_len = static_cast<std::size_t>(hi - lo + 1);
  const std::size_t n_agents = scene.agents.size();
  std::vector<Vec2> pos(n_agents * span_len);
  std::vector<std::uint8_t> has(n_agents * span_len, 0);
  for (std::size_t a = 0; a < n_agents; ++a) {
    for (const auto& s : scene.agents[a].samples) {
      const auto t = static_cast<std::size_t>(scene.step_of(s.frame) - lo);
      pos[a * span_len + t] = {s.x, s.y};
      has[a * span_len + t] = 1;
    }
  }

  for (std::size_t start = 0; start + len <= span_len; ++start) {
    SceneWindow w;
    w.scene_id = scene.id;
    w.start_step = lo + static_cast<long>(start);
    w.t_obs = spec.t_obs;
    w.t_pred = spec.t_pred;
    bool any_loss = false;
    for (std::size_t a = 0; a < n_agents; ++a) {
      std::size_t count = 0, obs_count = 0;
      for (std::size_t t = 0; t < len; ++t) {
        if (has[a * span_len + start + t]) {
          ++count;
          if (t < spec.t_obs) ++obs_count;
        }
      }
      if (obs_count == 0) continue;
      const bool full = count == len;
      any_loss = any_loss || full;
      w.agent_ids.push_back(scene.agents[a].agent_id);
      w.families.push_back(scene.agents[a].family);
      w.loss_agent.push_back(full ? 1 : 0);
      for (std::size_t t = 0; t < len; ++t) {
        w.positions.push_back(pos[a * span_len + start + t]);
        w.present.push_back(has[a * span_len + start + t]);
      }
    }
    if (!any_loss) continue;
    w.offsets.assign(w.agents(), Vec2{});
    out.push_back(std::move(w));
  }
  return out;
}

void nabs_normalize(SceneWindow& w) {
  if (w.normalized) throw Error(ErrorKind::data, "window " + w.scene_id + " is already normalized");
  w.source_positions = w.positions;
  w.offsets.assign(w.agents(), Vec2{});
  for (std::size_t a = 0; a < w.agents(); ++a) {
    // Partial neighbours use their latest observed position.
    std::size_t anchor = w.t_obs;
    for (std::size_t t = w.t_obs; t-- > 0;) {
      if (w.is_present(a, t)) {
        anchor = t;
        break;
      }
    }
    if (anchor == w.t_obs) continue;
    const Vec2 origin = w.at(a, anchor);
    w.offsets[a] = origin;
    for (std::size_t t = 0; t < w.steps(); ++t) {
      if (w.is_present(a, t)) w.at(a, t) = w.at(a, t) - origin;
    }
  }
  w.normalized = true;
}

void denormalize(SceneWindow& w) {
  if (!w.normalized) throw Error(ErrorKind::data, "window " + w.scene_id + " is not normalized");
  w.positions = std::move(w.source_positions);
  w.source_positions.clear();
  w.offsets.assign(w.agents(), Vec2{});
  w.normalized = false;
}

void rotate_window(SceneWindow& w, double theta) {
  for (std::size_t i = 0; i < w.positions.size(); ++i) {
    if (w.present[i]) w.positions[i] = rotate(w.positions[i], theta);
  }
  for (std::size_t i = 0; i < w.source_positions.size(); ++i) {
    if (w.present[i]) w.source_positions[i] = rotate(w.source_positions[i], theta);
  }
  for (auto& o : w.offsets) o = rotate(o, theta);
}

void random_rotation_augment(std::span<SceneWindow> batch, Rng& rng) {
  for (auto& w : batch) rotate_window(w, rng.uniform(0.0, 2.0 * std::numbers::pi));
}

std::vector<Batch> batch_windows(std::span<const SceneWindow> windows, std::size_t batch_size,
                                 Rng& rng) {
  if (batch_size == 0) throw Error(ErrorKind::config, "batch size must be >= 1");
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  std::vector<Batch> batches;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    Batch b;
    std::size_t agents = 0;
    for (std::size_t i = begin; i < std::min(order.size(), begin + batch_size); ++i) {
      const auto& w = windows[order[i]];
      b.windows.push_back(order[i]);
      b.blocks.push_back({agents, agents + w.agents(), w.scene_id});
      agents += w.agents();
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

SceneSplit split_scenes(std::vector<Scene> scenes, const DatasetSpec& spec, Rng& rng) {
  spec.validate();
  for (std::size_t i = scenes.size(); i > 1; --i) std::swap(scenes[i - 1], scenes[rng.below(i)]);
  const double n = static_cast<double>(scenes.size());
  const auto n_train = static_cast<std::size_t>(std::llround(spec.split_fractions[0] * n));
  const auto n_val = std::min(scenes.size() - n_train,
                              static_cast<std::size_t>(std::llround(spec.split_fractions[1] * n)));
  SceneSplit split;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    auto& dst = i < n_train ? split.train : (i < n_train + n_val ? split.val : split.test);
    dst.push_back(std::move(scenes[i]));
  }
  return split;
}

std::vector<SceneWindow> windows_for(std::span<const Scene> scenes, const DatasetSpec& spec) {
  std::vector<SceneWindow> out;
  for (const auto& scene : scenes) {
    for (auto& w : build_windows(scene, spec)) {
      nabs_normalize(w);
      out.push_back(std::move(w));
    }
  }
  return out;
}

std::uint64_t hash_windows(std::span<const SceneWindow> windows) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& w : windows) {
    feed(w.scene_id.data(), w.scene_id.size());
    feed(&w.start_step, sizeof w.start_step);
    feed(w.positions.data(), w.positions.size() * sizeof(Vec2));
    feed(w.present.data(), w.present.size());
    feed(w.loss_agent.data(), w.loss_agent.size());
  }
  return h;
}

}  // namespace dto
