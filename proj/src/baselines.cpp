#include "dto/baselines.hpp"

#include "dto/error.hpp"

namespace dto {

std::vector<Vec2> cvm_predict(std::span<const Vec2> observed, std::size_t t_pred) {
  if (observed.size() < 2) throw Error(ErrorKind::data, "cvm needs two observations");
  const Vec2 last = observed[observed.size() - 1];
  const Vec2 v = last - observed[observed.size() - 2];
  std::vector<Vec2> out(t_pred);
  for (std::size_t i = 0; i < t_pred; ++i) out[i] = last + static_cast<double>(i + 1) * v;
  return out;
}

std::vector<Vec2> CvmForecaster::forecast(std::span<const SceneWindow> windows,
                                          const ObsSelection& selection) const {
  std::vector<Vec2> out;
  for (const auto& w : windows) {
    const auto steps = selection.steps(w.t_obs);
    if (steps.size() < 2) throw Error(ErrorKind::data, "cvm needs two observations");
    const std::size_t s1 = steps[steps.size() - 2], s2 = steps.back();
    const double lag = static_cast<double>(s2 - s1);
    for (std::size_t a = 0; a < w.agents(); ++a) {
      if (!w.loss_agent[a]) continue;
      const Vec2 prev = w.at(a, s2) - (1.0 / lag) * (w.at(a, s2) - w.at(a, s1));
      const Vec2 obs[2] = {prev, w.at(a, s2)};
      for (const auto& p : cvm_predict(obs, w.t_pred)) out.push_back(p);
    }
  }
  return out;
}

TrainResult train_from_scratch_k(std::span<const SceneWindow> train,
                                 std::span<const SceneWindow> val, std::size_t k, SttConfig config,
                                 TrainConfig tc, const EpochCallback& on_epoch) {
  if (k < 2 || k > config.t_obs) {
    throw Error(ErrorKind::config, "from-scratch K must lie in [2, " +
                                       std::to_string(config.t_obs) + "]");
  }
  config.t_obs = k;
  tc.obs_min = tc.obs_max = tc.val_obs = k;
  auto result = train_teacher(train, val, config, tc, on_epoch);
  result.manifest.kind = "scratch";
  return result;
}

TrainResult train_variable_obs(std::span<const SceneWindow> train,
                               std::span<const SceneWindow> val, std::size_t k_min,
                               std::size_t k_max, SttConfig config, TrainConfig tc,
                               const EpochCallback& on_epoch) {
  if (k_min < 2 || k_min > k_max || k_max > config.t_obs) {
    throw Error(ErrorKind::config, "variable observation range must lie in [2, " +
                                       std::to_string(config.t_obs) + "]");
  }
  config.t_obs = k_max;
  tc.obs_min = k_min;
  tc.obs_max = k_max;
  tc.val_obs = k_max;
  auto result = train_teacher(train, val, config, tc, on_epoch);
  result.manifest.kind = "variable";
  return result;
}

std::vector<SceneWindow> reversed_windows(std::span<const SceneWindow> windows, std::size_t k) {
  std::vector<SceneWindow> out;
  out.reserve(windows.size());
  for (const auto& w : windows) {
    const std::size_t t = w.t_obs;
    if (k < 2 || k >= t) {
      throw Error(ErrorKind::config, "past generation needs 2 <= K < " + std::to_string(t));
    }
    SceneWindow r;
    r.scene_id = w.scene_id;
    r.start_step = w.start_step;
    r.t_obs = k;
    r.t_pred = t - k;
    r.agent_ids = w.agent_ids;
    r.families = w.families;
    r.loss_agent = w.loss_agent;
    r.positions.resize(w.agents() * t);
    r.present.resize(w.agents() * t);
    for (std::size_t a = 0; a < w.agents(); ++a) {
      for (std::size_t i = 0; i < t; ++i) {
        const std::size_t src = t - 1 - i;
        r.present[a * t + i] = w.present[a * w.steps() + src];
        r.positions[a * t + i] = w.is_present(a, src) ? w.world(a, src) : Vec2{};
      }
    }
    nabs_normalize(r);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<SceneWindow> OraclePastGenerator::complete(std::span<const SceneWindow> windows,
                                                       std::size_t) const {
  return {windows.begin(), windows.end()};
}

std::vector<SceneWindow> ModelPastGenerator::complete(std::span<const SceneWindow> windows,
                                                      std::size_t k) const {
  std::vector<SceneWindow> out(windows.begin(), windows.end());
  if (windows.empty() || k == windows.front().t_obs) return out;
  if (model_.config().t_obs != k) {
    throw Error(ErrorKind::architecture, "past generator expects K=" +
                                             std::to_string(model_.config().t_obs));
  }
  const auto rev = reversed_windows(windows, k);
  const ModelInput in = make_input(rev, {k, 1}, model_.config().spatial_threshold);
  const auto preds = model_.predict(in);
  const std::size_t gen = in.pred_len;
  // neighbours only keep their real observations
  for (auto& w : out) {
    for (std::size_t a = 0; a < w.agents(); ++a) {
      if (w.loss_agent[a]) continue;
      for (std::size_t step = 0; step < gen; ++step) {
        const std::size_t i = a * w.steps() + step;
        w.present[i] = 0;
        w.positions[i] = Vec2{};
        w.source_positions[i] = Vec2{};
      }
    }
  }
  for (std::size_t r = 0; r < in.agents; ++r) {
    const auto [wi, a, loss] = in.refs[r];
    if (!loss) continue;
    SceneWindow& w = out[wi];
    for (std::size_t j = 0; j < gen; ++j) {
      // the j-th generated point walks back in time from step t_obs - k - 1
      const std::size_t i = a * w.steps() + gen - 1 - j;
      const Vec2 world{preds[(r * gen + j) * 2] + rev[wi].offsets[a].x,
                       preds[(r * gen + j) * 2 + 1] + rev[wi].offsets[a].y};
      w.source_positions[i] = world;
      w.positions[i] = world - w.offsets[a];
    }
  }
  return out;
}

TrainResult train_past_generator(std::span<const SceneWindow> train,
                                 std::span<const SceneWindow> val, std::size_t k,
                                 SttConfig config, TrainConfig tc, const EpochCallback& on_epoch) {
  const auto rev_train = reversed_windows(train, k);
  const auto rev_val = reversed_windows(val, k);
  config.t_pred = config.t_obs - k;
  config.t_obs = k;
  tc.obs_min = tc.obs_max = tc.val_obs = k;
  auto result = train_teacher(rev_train, rev_val, config, tc, on_epoch);
  result.manifest.kind = "pastgen";
  return result;
}

std::vector<Vec2> PastGenForecaster::forecast(std::span<const SceneWindow> windows,
                                              const ObsSelection& selection) const {
  const std::size_t t = primary_.config().t_obs;
  if (selection.lag != 1) throw Error(ErrorKind::config, "past generation supports lag 1 only");
  if (selection.count == t) return ModelForecaster(primary_).forecast(windows, selection);
  const auto completed = generator_.complete(windows, selection.count);
  return ModelForecaster(primary_).forecast(completed, {t, 1});
}

}  // namespace dto
