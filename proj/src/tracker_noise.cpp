#include "dto/tracker_noise.hpp"

#include <cstdio>

#include "dto/error.hpp"
#include "dto/rng.hpp"

namespace dto {

void NoiseSpec::validate() const {
  if (!(jitter >= 0.0) || !(drift >= 0.0)) {
    throw Error(ErrorKind::config, "noise sigmas must be >= 0");
  }
  if (!(frag >= 0.0 && frag <= 1.0)) {
    throw Error(ErrorKind::config, "fragmentation probability must be in [0, 1]");
  }
}

std::string NoiseSpec::tag() const {
  char buf[96];
  std::snprintf(buf, sizeof buf, "j%g_d%g_f%g", jitter, drift, frag);
  return buf;
}

void inject_tracking_noise(SceneWindow& w, std::size_t length, const NoiseSpec& spec, Rng& rng) {
  spec.validate();
  if (length == 0 || length > w.t_obs) {
    throw Error(ErrorKind::config, "tracklet length must lie in [1, " + std::to_string(w.t_obs) + "]");
  }
  const bool was_normalized = w.normalized;
  if (was_normalized) denormalize(w);
  const std::size_t first = w.t_obs - length;
  for (std::size_t a = 0; a < w.agents(); ++a) {
    Vec2 drift{};
    for (std::size_t t = first; t < w.t_obs; ++t) {
      if (t > first) {
        if (rng.bernoulli(spec.frag)) {
          drift = {};
        } else {
          drift = drift + Vec2{rng.normal(0.0, spec.drift), rng.normal(0.0, spec.drift)};
        }
      }
      const Vec2 jitter{rng.normal(0.0, spec.jitter), rng.normal(0.0, spec.jitter)};
      if (w.is_present(a, t)) w.at(a, t) = w.at(a, t) + drift + jitter;
    }
  }
  if (was_normalized) nabs_normalize(w);
}

std::vector<SceneWindow> corrupt_windows(std::span<const SceneWindow> windows,
                                         std::size_t length, const NoiseSpec& spec) {
  const Rng root = Rng(spec.seed).stream("noise");
  std::vector<SceneWindow> out(windows.begin(), windows.end());
  if (spec.is_zero()) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng = root.stream(static_cast<std::uint64_t>(i));
    inject_tracking_noise(out[i], length, spec, rng);
  }
  return out;
}

double mean_corruption(std::span<const SceneWindow> clean, std::span<const SceneWindow> noisy,
                       std::size_t length) {
  if (clean.size() != noisy.size()) throw Error(ErrorKind::dimension, "window count mismatch");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const auto& c = clean[i];
    const auto& n = noisy[i];
    for (std::size_t a = 0; a < c.agents(); ++a) {
      if (!c.loss_agent[a]) continue;
      for (std::size_t t = c.t_obs - length; t < c.t_obs; ++t) {
        total += norm(n.world(a, t) - c.world(a, t));
        ++count;
      }
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

std::vector<MetricsRow> gt_vs_tracked_report(std::span<const NamedForecaster> models,
                                             std::span<const SceneWindow> windows,
                                             const NoiseSpec& spec, const MetricsRow& tmpl) {
  std::vector<MetricsRow> rows;
  for (const auto& m : models) {
    MetricsRow base = tmpl;
    base.model = m.name;
    base.train_obs = m.obs;
    base.noise = "none";
    rows.push_back(evaluate_row(*m.forecaster, windows, {m.obs, 1}, base));
    const auto noisy = corrupt_windows(windows, m.obs, spec);
    base.noise = spec.tag();
    rows.push_back(evaluate_row(*m.forecaster, noisy, {m.obs, 1}, base));
  }
  return rows;
}

}  // namespace dto
