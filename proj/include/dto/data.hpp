#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace dto {

class Rng;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double k, Vec2 a) { return {k * a.x, k * a.y}; }
double norm(Vec2 v);
Vec2 rotate(Vec2 v, double theta);

/// Generator family of a synthetic agent; `unknown` for loaded data.
enum class MotionFamily : int { unknown = -1, linear = 0, turn = 1, stop_go = 2, avoid = 3 };

struct TrackSample {
  long frame = 0;
  double x = 0.0;
  double y = 0.0;
};

struct Trajectory {
  int agent_id = 0;
  MotionFamily family = MotionFamily::unknown;
  std::vector<TrackSample> samples;  // strictly increasing frames
};

/// All trajectories of one scene file after frame sub-sampling. Sampled step
/// index of a frame is (frame - frame_origin) / frame_stride.
struct Scene {
  std::string id;
  long frame_origin = 0;
  long frame_stride = 1;
  std::vector<Trajectory> agents;

  long step_of(long frame) const { return (frame - frame_origin) / frame_stride; }
};

struct DatasetSpec {
  std::size_t t_obs = 8;
  std::size_t t_pred = 12;
  /// Raw frames per sampled step; 10 turns 25 FPS annotations into 2.5 FPS.
  long frame_stride = 10;
  /// Per-scene overrides, e.g. {"eth": 6} for the accelerated ETH video.
  std::map<std::string, long> stride_overrides;
  std::array<double, 3> split_fractions{0.7, 0.1, 0.2};

  std::size_t window_length() const { return t_obs + t_pred; }
  long stride_for(const std::string& scene_id) const;
  void validate() const;
};

/// P agents x (t_obs + t_pred) steps of one scene. Agents flagged in
/// `loss_agent` are present at every step; others are partial neighbours
/// that only take part in spatial attention where present.
struct SceneWindow {
  std::string scene_id;
  long start_step = 0;
  std::size_t t_obs = 0;
  std::size_t t_pred = 0;
  std::vector<int> agent_ids;
  std::vector<MotionFamily> families;
  std::vector<Vec2> positions;  // agent-major, active frame
  std::vector<std::uint8_t> present;
  std::vector<std::uint8_t> loss_agent;
  std::vector<Vec2> offsets;  // Nabs offsets (active when normalized)
  std::vector<Vec2> source_positions;  // frame before Nabs, for exact inversion
  bool normalized = false;

  std::size_t agents() const { return agent_ids.size(); }
  std::size_t steps() const { return t_obs + t_pred; }
  std::size_t loss_agents() const;
  Vec2& at(std::size_t agent, std::size_t step) { return positions[agent * steps() + step]; }
  const Vec2& at(std::size_t agent, std::size_t step) const {
    return positions[agent * steps() + step];
  }
  bool is_present(std::size_t agent, std::size_t step) const {
    return present[agent * steps() + step] != 0;
  }
  /// Position in the frame the window had before normalization.
  Vec2 world(std::size_t agent, std::size_t step) const;
};

std::vector<Scene> load_trajnet(const std::filesystem::path& path, const DatasetSpec& spec);
Scene load_trajnet_file(const std::filesystem::path& file, const DatasetSpec& spec);
/// Writes a scene as `frame_id ped_id x y` records, one file per scene.
void write_trajnet(const Scene& scene, const std::filesystem::path& file);
void write_trajnet_dir(std::span<const Scene> scenes, const std::filesystem::path& dir);

std::vector<SceneWindow> build_windows(const Scene& scene, const DatasetSpec& spec);

void nabs_normalize(SceneWindow& window);
void denormalize(SceneWindow& window);
/// Rotates every coordinate of the window (and its offsets) about the origin.
void rotate_window(SceneWindow& window, double theta);
/// One angle per window, uniform in [0, 2*pi).
void random_rotation_augment(std::span<SceneWindow> batch, Rng& rng);

struct Block {
  std::size_t agent_begin = 0;
  std::size_t agent_end = 0;
  std::string scene_id;
};

struct Batch {
  std::vector<std::size_t> windows;  // indices into the source window list
  std::vector<Block> blocks;  // one per window, along the concatenated agent axis
};

std::vector<Batch> batch_windows(std::span<const SceneWindow> windows,
                                 std::size_t batch_size, Rng& rng);

struct SceneSplit {
  std::vector<Scene> train;
  std::vector<Scene> val;
  std::vector<Scene> test;
};

/// Partitions whole scenes (never windows) by DatasetSpec::split_fractions.
SceneSplit split_scenes(std::vector<Scene> scenes, const DatasetSpec& spec, Rng& rng);

/// Windows of all scenes, Nabs-normalized.
std::vector<SceneWindow> windows_for(std::span<const Scene> scenes, const DatasetSpec& spec);

/// FNV-1a digest of the window contents, for manifests.
std::uint64_t hash_windows(std::span<const SceneWindow> windows);

struct SynthSpec {
  std::size_t scenes = 150;
  std::size_t steps_per_scene = 30;
  std::size_t min_agents = 1;
  std::size_t max_agents = 3;
  /// Mixture over {linear, turn, stop_go, avoid}; must sum to 1.
  std::array<double, 4> weights{0.35, 0.35, 0.1, 0.2};
  double min_speed = 0.3;
  double max_speed = 1.5;
  /// Radius of the constant-turn arcs; turn rate is speed / radius.
  double turn_radius = 8.0;
  double avoid_distance = 1.0;
  long frame_stride = 10;

  void validate() const;
};

std::vector<Scene> synthesize_dataset(const SynthSpec& spec, Rng& rng);

}  // namespace dto
