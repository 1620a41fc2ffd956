#include "doctest.h"

#include <cmath>

#include "dto/baselines.hpp"
#include "dto/error.hpp"
#include "test_util.hpp"

using namespace dto;
using dto::testing::micro_config;
using dto::testing::synth_windows;

namespace {

TrainConfig tiny(std::size_t epochs) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.lr = 1e-3;
  tc.batch_size = 8;
  tc.seed = 4;
  tc.eval_every = 0;
  return tc;
}

std::vector<double> losses(const TrainResult& r) {
  std::vector<double> out;
  for (const auto& e : r.manifest.epochs) out.push_back(e.train_loss);
  return out;
}

}  // namespace

TEST_CASE("cvm_predict examples") {
  const Vec2 obs[] = {{0, 0}, {1, 0}};
  auto p = cvm_predict(obs, 12);
  REQUIRE(p.size() == 12);
  for (std::size_t i = 0; i < 12; ++i) CHECK(p[i] == Vec2{2.0 + i, 0});

  const Vec2 still[] = {{3, -1}, {3, -1}};
  for (const auto& q : cvm_predict(still, 5)) CHECK(q == Vec2{3, -1});

  const Vec2 one[] = {{0, 0}};
  CHECK_THROWS_AS(cvm_predict(one, 12), Error);
}

TEST_CASE("CVM is exact on linear agents and its output is linear") {
  auto windows = synth_windows(20, 41, {1, 0, 0, 0});
  REQUIRE(!windows.empty());
  CvmForecaster cvm;
  auto r = evaluate(cvm, windows, {2, 1});
  CHECK(r.ade < 1e-9);
  CHECK(r.fde < 1e-9);
  auto lagged = evaluate(cvm, windows, {2, 3});
  CHECK(lagged.ade < 1e-9);

  auto mixed = synth_windows(10, 42);
  auto preds = cvm.forecast(mixed, {2, 1});
  REQUIRE(preds.size() % 12 == 0);
  double worst = 0.0;
  for (std::size_t a = 0; a < preds.size() / 12; ++a) {
    for (std::size_t t = 2; t < 12; ++t) {
      const Vec2 d2 = preds[a * 12 + t] - 2.0 * preds[a * 12 + t - 1] + preds[a * 12 + t - 2];
      worst = std::max(worst, norm(d2));
    }
  }
  CHECK(worst < 1e-12);
  CHECK(cvm.forecast(mixed, {2, 1}) == preds);
}

TEST_CASE("from scratch at K = T is the teacher pipeline") {
  auto windows = synth_windows(6, 43);
  auto c = micro_config(8, 12);
  auto a = train_teacher(windows, {}, c, tiny(3));
  auto b = train_from_scratch_k(windows, {}, 8, c, tiny(3));
  CHECK(losses(a) == losses(b));
  CHECK(a.model.parameter_hash() == b.model.parameter_hash());
  CHECK(b.manifest.kind == "scratch");

  auto k2 = train_from_scratch_k(windows, {}, 2, c, tiny(1));
  CHECK(k2.model.config().t_obs == 2);
  CHECK_THROWS_AS(train_from_scratch_k(windows, {}, 1, c, tiny(1)), Error);
  CHECK_THROWS_AS(train_from_scratch_k(windows, {}, 9, c, tiny(1)), Error);
}

TEST_CASE("variable observations") {
  auto windows = synth_windows(6, 44);
  auto c = micro_config(8, 12);
  auto single = train_variable_obs(windows, {}, 8, 8, c, tiny(3));
  auto teacher = train_teacher(windows, {}, c, tiny(3));
  CHECK(losses(single) == losses(teacher));
  CHECK(single.model.parameter_hash() == teacher.model.parameter_hash());

  auto var = train_variable_obs(windows, {}, 2, 8, c, tiny(2));
  CHECK(var.manifest.kind == "variable");
  ModelForecaster f(var.model);
  for (std::size_t k = 2; k <= 8; ++k) {
    auto r = evaluate(f, windows, {k, 1});
    CHECK(std::isfinite(r.ade));
  }
  CHECK_THROWS_AS(train_variable_obs(windows, {}, 5, 3, c, tiny(1)), Error);
}

TEST_CASE("reversed windows run backwards from the last observation") {
  auto windows = synth_windows(4, 45);
  auto rev = reversed_windows(windows, 2);
  REQUIRE(rev.size() == windows.size());
  const auto& w = windows[0];
  const auto& r = rev[0];
  CHECK(r.t_obs == 2);
  CHECK(r.t_pred == 6);
  CHECK(r.normalized);
  for (std::size_t a = 0; a < w.agents(); ++a) {
    if (!w.loss_agent[a]) continue;
    for (std::size_t i = 0; i < 8; ++i) {
      const Vec2 d = r.world(a, i) - w.world(a, 7 - i);
      CHECK(norm(d) < 1e-12);
    }
    CHECK(r.at(a, 1) == Vec2{0, 0});
  }
  CHECK_THROWS_AS(reversed_windows(windows, 8), Error);
  CHECK_THROWS_AS(reversed_windows(windows, 1), Error);
}

TEST_CASE("past generation pipeline") {
  auto windows = synth_windows(5, 46);
  SttModel primary(micro_config(8, 12), 5);
  ModelForecaster direct(primary);
  OraclePastGenerator oracle;
  PastGenForecaster pipeline(primary, oracle);

  // K = T bypasses the generator
  CHECK(pipeline.forecast(windows, {8, 1}) == direct.forecast(windows, {8, 1}));
  // true history substituted back gives the untouched primary output
  CHECK(pipeline.forecast(windows, {3, 1}) == direct.forecast(windows, {8, 1}));

  auto c = micro_config(8, 12);
  auto gen = train_past_generator(windows, {}, 3, c, tiny(1));
  CHECK(gen.model.config().t_obs == 3);
  CHECK(gen.model.config().t_pred == 5);
  CHECK(gen.manifest.kind == "pastgen");
  ModelPastGenerator mg(gen.model);
  auto done = mg.complete(windows, 3);
  REQUIRE(done.size() == windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    for (std::size_t a = 0; a < windows[i].agents(); ++a) {
      for (std::size_t t = 5; t < windows[i].steps(); ++t) {
        if (!windows[i].is_present(a, t)) continue;
        CHECK(done[i].at(a, t) == windows[i].at(a, t));
      }
      if (!windows[i].loss_agent[a]) {
        for (std::size_t t = 0; t < 5; ++t) CHECK(!done[i].is_present(a, t));
      }
    }
  }
  PastGenForecaster learned(primary, mg);
  auto r = evaluate(learned, windows, {3, 1});
  CHECK(std::isfinite(r.ade));
  CHECK_THROWS_AS(mg.complete(windows, 4), Error);
  CHECK_THROWS_AS(learned.forecast(windows, {3, 2}), Error);
}

TEST_CASE("every strategy sees the same model input") {
  auto windows = synth_windows(6, 47);
  auto a = make_input(windows, {2, 1}, 5.0);
  auto b = make_input(windows, {2, 1}, 5.0);
  CHECK(a.obs == b.obs);
  CHECK(a.future == b.future);
  CHECK(a.obs_masks == b.obs_masks);
  CHECK(hash_windows(windows) == hash_windows(synth_windows(6, 47)));
}
