#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dto/data.hpp"
#include "dto/metrics.hpp"

namespace dto {

class Rng;

struct NoiseSpec {
  double jitter = 0.05;  // sigma_j, metres per step
  double drift = 0.05;  // sigma_d, metres per sqrt(step)
  double frag = 0.05;  // per-step probability of a drift reset
  std::uint64_t seed = 0;

  void validate() const;
  bool is_zero() const { return jitter == 0.0 && drift == 0.0; }
  /// Tag used in metrics rows, e.g. "j0.05_d0.05_f0.05".
  std::string tag() const;
};

/// Corrupts the observed steps [t_obs - length, t_obs) of one window in its
/// world frame, as a tracker delivering a tracklet of `length` points would.
/// Drift starts at zero at the first tracklet point. Normalized windows are
/// re-normalized on the corrupted last observation; the future is untouched.
void inject_tracking_noise(SceneWindow& window, std::size_t length, const NoiseSpec& spec,
                           Rng& rng);

/// Corrupted copies, one independent RNG stream per window index.
std::vector<SceneWindow> corrupt_windows(std::span<const SceneWindow> windows,
                                         std::size_t length, const NoiseSpec& spec);

/// Mean displacement between clean and corrupted observed points over the
/// last `length` observed steps of each loss agent.
double mean_corruption(std::span<const SceneWindow> clean, std::span<const SceneWindow> noisy,
                       std::size_t length);

struct NamedForecaster {
  std::string name;
  const Forecaster* forecaster = nullptr;
  std::size_t obs = 8;  // native observation count
};

/// Every forecaster on clean and on tracked observations; the tracklet
/// length is each forecaster's native count. Rows carry noise "none" or the
/// spec tag.
std::vector<MetricsRow> gt_vs_tracked_report(std::span<const NamedForecaster> models,
                                             std::span<const SceneWindow> windows,
                                             const NoiseSpec& spec, const MetricsRow& tmpl);

}  // namespace dto
