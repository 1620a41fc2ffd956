#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dto/data.hpp"

namespace dto {

/// Which observed steps a model consumes: `count` steps spaced `lag` apart,
/// ending at the window's last observation.
struct ObsSelection {
  std::size_t count = 8;
  std::size_t lag = 1;

  /// Window step indices, oldest first. Throws ErrorKind::data if the
  /// subsequence would start before the window.
  std::vector<std::size_t> steps(std::size_t t_obs) const;
};

/// One agent row of a model input and where it came from.
struct AgentRef {
  std::size_t window = 0;  // index into the window span handed to make_input
  std::size_t agent = 0;  // agent index inside that window
  bool loss = false;
};

/// Dense, model-ready view of a batch of normalized windows. Agents of all
/// windows are concatenated; rows of per-step arrays are agent-major.
struct ModelInput {
  std::size_t agents = 0;
  std::size_t obs_len = 0;
  std::size_t pred_len = 0;
  std::vector<AgentRef> refs;
  std::vector<Block> blocks;
  std::vector<double> obs;  // agents * obs_len * 2
  std::vector<std::uint8_t> obs_present;  // agents * obs_len
  std::vector<double> future;  // agents * pred_len * 2 (zeros where absent)
  std::vector<std::uint8_t> future_present;
  /// Spatial masks, one agents x agents matrix per observed step.
  std::vector<std::vector<std::uint8_t>> obs_masks;
  /// Mask used by every decoder step (built at the last observation).
  std::vector<std::uint8_t> decoder_mask;
  std::vector<std::size_t> loss_rows;  // agent indices with loss = true

  std::size_t loss_agents() const { return loss_rows.size(); }
};

/// Builds the model input for normalized windows. Non-loss agents with no
/// observation among the selected steps are dropped.
ModelInput make_input(std::span<const SceneWindow> windows, const ObsSelection& selection,
                      double spatial_threshold);

}  // namespace dto
