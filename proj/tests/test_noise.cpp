#include "doctest.h"

#include "dto/baselines.hpp"
#include "dto/error.hpp"
#include "dto/rng.hpp"
#include "dto/tracker_noise.hpp"
#include "test_util.hpp"

using namespace dto;
using dto::testing::micro_config;
using dto::testing::synth_windows;

namespace {

// 10^4 windows by replicating a synthetic set under distinct RNG streams
double corruption_at(const std::vector<SceneWindow>& base, std::size_t length, NoiseSpec spec,
                     std::size_t target = 10000) {
  double total = 0.0;
  std::size_t rounds = 0;
  for (std::size_t seen = 0; seen < target; seen += base.size(), ++rounds) {
    spec.seed = 1000 + rounds;
    const auto noisy = corrupt_windows(base, length, spec);
    total += mean_corruption(base, noisy, length);
  }
  return total / static_cast<double>(rounds);
}

}  // namespace

TEST_CASE("zero noise is the identity") {
  auto windows = synth_windows(6, 51);
  NoiseSpec zero;
  zero.jitter = zero.drift = 0.0;
  auto out = corrupt_windows(windows, 8, zero);
  REQUIRE(out.size() == windows.size());
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i].positions == windows[i].positions);

  Rng rng(1);
  SceneWindow w = windows[0];
  inject_tracking_noise(w, 8, zero, rng);
  CHECK(mean_corruption(windows, out, 8) == 0.0);
}

TEST_CASE("corruption is seed-deterministic and leaves the future alone") {
  auto windows = synth_windows(6, 52);
  NoiseSpec spec;
  spec.seed = 9;
  auto a = corrupt_windows(windows, 8, spec);
  auto b = corrupt_windows(windows, 8, spec);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].positions == b[i].positions);
  spec.seed = 10;
  auto c = corrupt_windows(windows, 8, spec);
  CHECK(c[0].positions != a[0].positions);

  bool moved = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& w = windows[i];
    for (std::size_t ag = 0; ag < w.agents(); ++ag) {
      for (std::size_t t = 0; t < w.steps(); ++t) {
        if (!w.is_present(ag, t)) continue;
        const Vec2 clean = w.world(ag, t), noisy = a[i].world(ag, t);
        if (t >= w.t_obs) {
          CHECK(clean == noisy);
        } else if (!(clean == noisy)) {
          moved = true;
        }
      }
    }
    CHECK(a[i].normalized);
    // re-normalized on the corrupted last observation
    for (std::size_t ag = 0; ag < w.agents(); ++ag) {
      if (w.loss_agent[ag]) CHECK(a[i].at(ag, w.t_obs - 1) == Vec2{0, 0});
    }
  }
  CHECK(moved);
}

TEST_CASE("short tracklets leave earlier observations untouched") {
  auto windows = synth_windows(4, 53);
  NoiseSpec spec;
  auto two = corrupt_windows(windows, 2, spec);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    for (std::size_t a = 0; a < windows[i].agents(); ++a) {
      for (std::size_t t = 0; t < 6; ++t) {
        if (windows[i].is_present(a, t)) CHECK(two[i].world(a, t) == windows[i].world(a, t));
      }
    }
  }
  Rng rng(0);
  SceneWindow w = windows[0];
  CHECK_THROWS_AS(inject_tracking_noise(w, 9, spec, rng), Error);
  CHECK_THROWS_AS(inject_tracking_noise(w, 0, spec, rng), Error);
}

TEST_CASE("noise spec validation and tag") {
  NoiseSpec s;
  CHECK(s.tag() == "j0.05_d0.05_f0.05");
  s.jitter = -1;
  CHECK_THROWS_AS(s.validate(), Error);
  s = {};
  s.frag = 1.5;
  CHECK_THROWS_AS(s.validate(), Error);
}

TEST_CASE("corruption grows with tracklet length and with jitter") {
  auto base = synth_windows(40, 54);
  NoiseSpec spec;
  const double c8 = corruption_at(base, 8, spec);
  const double c2 = corruption_at(base, 2, spec);
  MESSAGE("mean corruption 8-step " << c8 << ", 2-step " << c2 << ", ratio " << c8 / c2);
  CHECK(c8 > c2);

  double prev = 0.0;
  for (double j : {0.0, 0.02, 0.05, 0.1, 0.2}) {
    NoiseSpec s = spec;
    s.jitter = j;
    const double c = corruption_at(base, 8, s);
    CHECK(c >= prev);
    prev = c;
  }
}

TEST_CASE("tracked report with zero noise repeats the clean rows") {
  auto windows = synth_windows(6, 55);
  SttModel m8(micro_config(8, 12), 1), m2(micro_config(2, 12), 2);
  ModelForecaster f8(m8), f2(m2);
  CvmForecaster cvm;
  NamedForecaster models[] = {{"teacher", &f8, 8}, {"dto", &f2, 2}, {"cvm", &cvm, 2}};
  NoiseSpec zero;
  zero.jitter = zero.drift = 0.0;
  MetricsRow tmpl;
  tmpl.dataset = "synth";
  auto rows = gt_vs_tracked_report(models, windows, zero, tmpl);
  REQUIRE(rows.size() == 6);
  for (std::size_t i = 0; i < 6; i += 2) {
    CHECK(rows[i].noise == "none");
    CHECK(rows[i].ade == rows[i + 1].ade);
    CHECK(rows[i].fde == rows[i + 1].fde);
  }
  CHECK(rows[0].ade == evaluate(f8, windows, {8, 1}).ade);
  CHECK(rows[2].eval_obs == 2);

  auto noisy = gt_vs_tracked_report(models, windows, NoiseSpec{}, tmpl);
  CHECK(noisy[1].noise == NoiseSpec{}.tag());
  CHECK(noisy[1].ade != noisy[0].ade);
}
