#include "dto/batch.hpp"

#include <string>

#include "dto/error.hpp"
#include "dto/spatial_mask.hpp"

namespace dto {

std::vector<std::size_t> ObsSelection::steps(std::size_t t_obs) const {
  if (count == 0 || lag == 0) throw Error(ErrorKind::config, "observation count and lag must be >= 1");
  const std::size_t reach = (count - 1) * lag;
  if (reach + 1 > t_obs) {
    throw Error(ErrorKind::data, "selection of " + std::to_string(count) + " observations at lag " +
                                     std::to_string(lag) + " exits a " + std::to_string(t_obs) +
                                     "-step observation window");
  }
  std::vector<std::size_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = t_obs - 1 - (count - 1 - i) * lag;
  return out;
}

std::vector<std::uint8_t> build_spatial_mask(std::span<const Vec2> positions,
                                             std::span<const std::uint8_t> present,
                                             std::span<const Block> blocks, double threshold) {
  const std::size_t n = positions.size();
  std::vector<std::uint8_t> mask(n * n, 0);
  for (const auto& b : blocks) {
    if (b.agent_end > n || b.agent_begin > b.agent_end) {
      throw Error(ErrorKind::dimension, "spatial mask block exceeds the agent axis");
    }
    for (std::size_t i = b.agent_begin; i < b.agent_end; ++i) {
      if (!present[i]) continue;
      for (std::size_t j = b.agent_begin; j < b.agent_end; ++j) {
        if (present[j] && norm(positions[i] - positions[j]) <= threshold) mask[i * n + j] = 1;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) mask[i * n + i] = 1;
  return mask;
}

ModelInput make_input(std::span<const SceneWindow> windows, const ObsSelection& selection,
                      double spatial_threshold) {
  ModelInput in;
  if (windows.empty()) throw Error(ErrorKind::data, "make_input: no windows");
  const std::size_t t_obs = windows.front().t_obs;
  const std::size_t t_pred = windows.front().t_pred;
  const auto steps = selection.steps(t_obs);
  in.obs_len = steps.size();
  in.pred_len = t_pred;

  for (std::size_t w = 0; w < windows.size(); ++w) {
    const auto& win = windows[w];
    if (!win.normalized) throw Error(ErrorKind::data, "make_input: window is not normalized");
    if (win.t_obs != t_obs || win.t_pred != t_pred) {
      throw Error(ErrorKind::dimension, "make_input: windows disagree on horizon lengths");
    }
    Block block{in.refs.size(), in.refs.size(), win.scene_id};
    for (std::size_t a = 0; a < win.agents(); ++a) {
      const bool loss = win.loss_agent[a] != 0;
      bool seen = false;
      for (auto t : steps) seen = seen || win.is_present(a, t);
      if (!loss && !seen) continue;
      if (loss) in.loss_rows.push_back(in.refs.size());
      in.refs.push_back({w, a, loss});
    }
    block.agent_end = in.refs.size();
    in.blocks.push_back(std::move(block));
  }
  in.agents = in.refs.size();

  const std::size_t n = in.agents;
  in.obs.assign(n * in.obs_len * 2, 0.0);
  in.obs_present.assign(n * in.obs_len, 0);
  in.future.assign(n * t_pred * 2, 0.0);
  in.future_present.assign(n * t_pred, 0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto& win = windows[in.refs[r].window];
    const std::size_t a = in.refs[r].agent;
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (!win.is_present(a, steps[i])) continue;
      const Vec2 p = win.at(a, steps[i]);
      in.obs[(r * in.obs_len + i) * 2] = p.x;
      in.obs[(r * in.obs_len + i) * 2 + 1] = p.y;
      in.obs_present[r * in.obs_len + i] = 1;
    }
    for (std::size_t t = 0; t < t_pred; ++t) {
      if (!win.is_present(a, t_obs + t)) continue;
      const Vec2 p = win.at(a, t_obs + t);
      in.future[(r * t_pred + t) * 2] = p.x;
      in.future[(r * t_pred + t) * 2 + 1] = p.y;
      in.future_present[r * t_pred + t] = 1;
    }
  }

  // Distances are measured in the shared (pre-Nabs) frame.
  std::vector<Vec2> world(n);
  std::vector<std::uint8_t> here(n);
  auto mask_at = [&](std::size_t step) {
    for (std::size_t r = 0; r < n; ++r) {
      const auto& win = windows[in.refs[r].window];
      here[r] = win.is_present(in.refs[r].agent, step) ? 1 : 0;
      world[r] = here[r] ? win.world(in.refs[r].agent, step) : Vec2{};
    }
    return build_spatial_mask(world, here, in.blocks, spatial_threshold);
  };
  for (auto t : steps) in.obs_masks.push_back(mask_at(t));
  in.decoder_mask = in.obs_masks.back();  // steps end at t_obs - 1
  return in;
}

}  // namespace dto
