#include "doctest.h"

#include <cmath>
#include <numbers>
#include <set>

#include "dto/batch.hpp"
#include "dto/error.hpp"
#include "dto/losses.hpp"
#include "dto/metrics.hpp"
#include "dto/model.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace dto;
using dto::testing::micro_config;
using dto::testing::random_tensor;

namespace {

// Two agents in one scene, 3 + 2 steps, curved enough to be non-trivial.
std::vector<SceneWindow> micro_windows() {
  Scene s;
  s.id = "micro";
  for (int a = 0; a < 2; ++a) {
    Trajectory t;
    t.agent_id = a;
    for (long k = 0; k < 5; ++k) {
      t.samples.push_back({k, 0.8 * k + 0.5 * a, 0.1 * k * k - a});
    }
    s.agents.push_back(t);
  }
  DatasetSpec spec;
  spec.t_obs = 3;
  spec.t_pred = 2;
  spec.frame_stride = 1;
  const std::vector<Scene> scenes{s};
  return windows_for(scenes, spec);
}

Tensor teacher_forced_loss(const SttModel& m, const ModelInput& in) {
  ForwardMode mode;
  auto enc = m.encode(in, mode);
  auto dec = m.decode_teacher_forced(enc, in, mode);
  return loss_gt(dec.predictions, Tensor::from({in.agents * in.pred_len, 2}, in.future),
                 in.agents);
}

std::vector<Tensor> param_tensors(SttModel& m) {
  std::vector<Tensor> out;
  for (auto& p : m.parameters()) out.push_back(p.tensor);
  return out;
}

SceneWindow permuted(const SceneWindow& w, const std::vector<std::size_t>& order) {
  SceneWindow o = w;
  const std::size_t s = w.steps();
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t a = order[i];
    o.agent_ids[i] = w.agent_ids[a];
    o.families[i] = w.families[a];
    o.loss_agent[i] = w.loss_agent[a];
    o.offsets[i] = w.offsets[a];
    for (std::size_t t = 0; t < s; ++t) {
      o.positions[i * s + t] = w.positions[a * s + t];
      o.present[i * s + t] = w.present[a * s + t];
      o.source_positions[i * s + t] = w.source_positions[a * s + t];
    }
  }
  return o;
}

}  // namespace

TEST_CASE("scaled dot-product attention examples") {
  auto one = scaled_dot_product_attention(Tensor::from({1, 2}, {0.3, -1}),
                                          Tensor::from({1, 2}, {2, 5}),
                                          Tensor::from({1, 2}, {7, 8}), {});
  CHECK(one.coeffs.at(0) == 1.0);
  CHECK(one.output.at(0) == 7.0);
  CHECK(one.output.at(1) == 8.0);

  auto uniform = scaled_dot_product_attention(Tensor::from({1, 2}, {1, 0}),
                                              Tensor::from({3, 2}, {0, 1, 0, 2, 0, -4}),
                                              Tensor::from({3, 1}, {3, 6, 9}), {});
  for (std::size_t j = 0; j < 3; ++j) CHECK(uniform.coeffs.at(j) == doctest::Approx(1.0 / 3));
  CHECK(uniform.output.at(0) == doctest::Approx(6.0));

  // logits q.k / sqrt(1) = [0, ln 2]
  auto two = scaled_dot_product_attention(Tensor::from({1, 1}, {std::log(2.0)}),
                                          Tensor::from({2, 1}, {0, 1}),
                                          Tensor::from({2, 1}, {0, 1}), {});
  CHECK(two.coeffs.at(0) == doctest::Approx(1.0 / 3).epsilon(1e-14));
  CHECK(two.coeffs.at(1) == doctest::Approx(2.0 / 3).epsilon(1e-14));
}

TEST_CASE("multi-head attention") {
  Rng rng(1);
  const std::size_t d = 4, rows = 6;
  auto w_of = [&] {
    return AttentionWeights{random_tensor({d, d}, rng), random_tensor({d}, rng),
                            random_tensor({d, d}, rng), random_tensor({d}, rng),
                            random_tensor({d, d}, rng), random_tensor({d}, rng),
                            random_tensor({d, d}, rng), random_tensor({d}, rng)};
  };
  auto w = w_of();
  auto x = random_tensor({rows, d}, rng);
  const GroupLayout all{1, rows, 0, 1};
  ForwardMode eval;

  SUBCASE("one head reduces to single-head attention plus projections") {
    auto mh = multi_head_attention(x, x, w, all, all, 1, {}, 0.0, eval);
    auto q = add_bias(matmul(x, w.wq), w.bq);
    auto k = add_bias(matmul(x, w.wk), w.bk);
    auto v = add_bias(matmul(x, w.wv), w.bv);
    auto single = scaled_dot_product_attention(q, k, v, {});
    auto expect = add_bias(matmul(single.output, w.wo), w.bo);
    for (std::size_t i = 0; i < expect.numel(); ++i)
      CHECK(mh.output.at(i) == doctest::Approx(expect.at(i)).epsilon(1e-12));
  }

  SUBCASE("output shape equals input shape") {
    auto mh = multi_head_attention(x, x, w, all, all, 2, {}, 0.0, eval);
    CHECK(mh.output.shape() == x.shape());
    CHECK(mh.coeffs.shape() == Shape{1, 2, rows, rows});
  }

  SUBCASE("identical head projections give identical per-head coefficients") {
    // block-diagonal projections with equal 2x2 blocks make every head see the same features
    std::vector<double> blk(d * d, 0.0);
    const double b[4] = {0.3, -0.7, 1.1, 0.2};
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) blk[(2 * h + i) * d + 2 * h + j] = b[i * 2 + j];
    auto same = Tensor::from({d, d}, blk);
    AttentionWeights tied{same, Tensor::zeros({d}), same, Tensor::zeros({d}),
                          same, Tensor::zeros({d}), same, Tensor::zeros({d})};
    std::vector<double> xv(rows * d);
    for (std::size_t r = 0; r < rows; ++r) {
      xv[r * d] = xv[r * d + 2] = rng.normal();
      xv[r * d + 1] = xv[r * d + 3] = rng.normal();
    }
    auto mh = multi_head_attention(Tensor::from({rows, d}, xv), Tensor::from({rows, d}, xv), tied,
                                   all, all, 2, {}, 0.0, eval);
    for (std::size_t i = 0; i < rows * rows; ++i)
      CHECK(mh.coeffs.at(i) == mh.coeffs.at(rows * rows + i));
  }

  SUBCASE("an isolated agent attends only to itself") {
    const std::size_t agents = 3;
    const GroupLayout spatial{2, agents, 1, 2};
    std::vector<std::uint8_t> mask(2 * agents * agents, 0);
    for (std::size_t g = 0; g < 2; ++g)
      for (std::size_t i = 0; i < agents; ++i) mask[(g * agents + i) * agents + i] = 1;
    auto mh = multi_head_attention(x, x, w, spatial, spatial, 2, mask, 0.0, eval);
    for (std::size_t g = 0; g < 2; ++g)
      for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t i = 0; i < agents; ++i)
          CHECK(mh.coeffs.at(((g * 2 + h) * agents + i) * agents + i) == 1.0);
  }
}

TEST_CASE("config presets and validation") {
  auto eth = SttConfig::preset(Preset::ethucy);
  CHECK(eth.d_model == 64);
  CHECK(eth.d_ff == 128);
  CHECK(eth.heads == 8);
  CHECK(eth.layers == 2);
  auto sdd = SttConfig::preset(parse_preset("sdd"));
  CHECK(sdd.d_model == 32);
  CHECK(sdd.layers == 1);
  CHECK(TrainPreset::preset(Preset::ethucy).lr == 1e-4);
  CHECK(TrainPreset::preset(Preset::ethucy).batch_size == 16);
  CHECK(TrainPreset::preset(Preset::lyft).lr == 5e-5);
  CHECK_THROWS_AS(parse_preset("nope"), Error);
  SttConfig bad = sdd;
  bad.heads = 5;
  CHECK_THROWS_AS(SttModel(bad, 1), Error);
}

TEST_CASE("parameters are uniquely named and encoder/decoder stacks mirror") {
  SttModel m(SttConfig::preset(Preset::ethucy), 3);
  std::set<std::string> names;
  std::size_t enc_layers = 0, dec_layers = 0;
  for (const auto& p : m.parameters()) {
    CHECK(names.insert(p.name).second);
    if (p.name.ends_with(".temporal.wq")) ++enc_layers;
    if (p.name.ends_with(".self.wq")) ++dec_layers;
  }
  CHECK(enc_layers == 2);
  CHECK(dec_layers == 2);
  CHECK(m.param("dec.start_token").shape() == Shape{1, 64});
}

TEST_CASE("clone and parameter hash") {
  SttModel a(micro_config(), 5);
  SttModel b = a.clone();
  CHECK(a.parameter_hash() == b.parameter_hash());
  b.parameters()[0].tensor.mutable_values()[0] += 1.0;
  CHECK(a.parameter_hash() != b.parameter_hash());
  CHECK(SttModel(micro_config(), 5).parameter_hash() == a.parameter_hash());
  CHECK(SttModel(micro_config(), 6).parameter_hash() != a.parameter_hash());
  CHECK_THROWS_AS(a.set_native_obs(1), Error);
}

TEST_CASE("encoder and decoder shapes") {
  auto windows = dto::testing::synth_windows(4, 2);
  SttModel m(SttConfig::preset(Preset::sdd), 1);
  std::vector<SceneWindow> ws(windows.begin(), windows.begin() + 3);
  for (std::size_t k : {2, 5, 8}) {
    auto in = make_input(ws, {k, 1}, 5.0);
    ForwardMode eval;
    auto enc = m.encode(in, eval);
    CHECK(enc.states.shape() == Shape{in.agents * k, 32});
    auto dec = m.decode_teacher_forced(enc, in, eval);
    CHECK(dec.predictions.shape() == Shape{in.agents * 12, 2});
    CHECK(dec.pre_head.shape() == Shape{in.agents * 12, 32});
    CHECK(dec.self_attention.shape() == Shape{in.agents, 8, 12, 12});
    CHECK(dec.cross_attention.shape() == Shape{in.agents, 8, 12, k});
  }
}

TEST_CASE("decoder self-attention is causal and row-stochastic") {
  auto windows = dto::testing::synth_windows(3, 4);
  SttModel m(SttConfig::preset(Preset::sdd), 2);
  auto in = make_input(windows, {8, 1}, 5.0);
  ForwardMode eval;
  auto enc = m.encode(in, eval);
  auto dec = m.decode_teacher_forced(enc, in, eval);
  const std::size_t len = 12;
  for (std::size_t gh = 0; gh < in.agents * 8; ++gh) {
    for (std::size_t i = 0; i < len; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double a = dec.self_attention.at((gh * len + i) * len + j);
        if (j > i) CHECK(a == 0.0);
        s += a;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("teacher-forced prediction at step t ignores the future from t on") {
  auto windows = dto::testing::synth_windows(3, 5);
  SttModel m(SttConfig::preset(Preset::sdd), 3);
  auto in = make_input(windows, {8, 1}, 5.0);
  ForwardMode eval;
  auto enc = m.encode(in, eval);
  const auto base = m.decode_teacher_forced(enc, in, eval).predictions;
  for (std::size_t t : {0, 4, 11}) {
    ModelInput probe = in;
    for (std::size_t a = 0; a < in.agents; ++a)
      for (std::size_t s = t; s < in.pred_len; ++s) {
        probe.future[(a * in.pred_len + s) * 2] += 3.0;
        probe.future[(a * in.pred_len + s) * 2 + 1] -= 2.0;
      }
    const auto p = m.decode_teacher_forced(enc, probe, eval).predictions;
    for (std::size_t a = 0; a < in.agents; ++a)
      for (std::size_t s = 0; s <= t; ++s)
        for (std::size_t c = 0; c < 2; ++c) {
          const std::size_t i = (a * in.pred_len + s) * 2 + c;
          CHECK(p.at(i) == base.at(i));
        }
  }
}

TEST_CASE("autoregressive decoding") {
  auto windows = dto::testing::synth_windows(3, 6);
  SttModel m(SttConfig::preset(Preset::sdd), 4);
  auto in = make_input(windows, {8, 1}, 5.0);
  ForwardMode eval;
  auto enc = m.encode(in, eval);
  auto tf = m.decode_teacher_forced(enc, in, eval).predictions;
  auto ar = m.decode_autoregressive(enc, in);
  for (std::size_t a = 0; a < in.agents; ++a)
    for (std::size_t c = 0; c < 2; ++c)
      CHECK(ar[a * 12 * 2 + c] == tf.at(a * 12 * 2 + c));
  CHECK(m.predict(in) == m.predict(in));
}

TEST_CASE("random-weight models stay finite over 100 seeds") {
  auto windows = dto::testing::synth_windows(2, 7);
  auto in = make_input(windows, {8, 1}, 5.0);
  bool finite = true;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SttModel m(SttConfig::preset(Preset::sdd), seed);
    for (double v : m.predict(in)) finite = finite && std::isfinite(v);
  }
  CHECK(finite);
}

TEST_CASE("agent permutation permutes the outputs") {
  auto windows = dto::testing::synth_windows(20, 8);
  const SceneWindow* pick = nullptr;
  for (const auto& w : windows)
    if (w.agents() >= 3) pick = &w;
  REQUIRE(pick != nullptr);
  std::vector<std::size_t> order(pick->agents());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = order.size() - 1 - i;
  SttModel m(SttConfig::preset(Preset::sdd), 9);
  std::vector<SceneWindow> a{*pick}, b{permuted(*pick, order)};
  auto pa = m.predict(make_input(a, {8, 1}, 5.0));
  auto pb = m.predict(make_input(b, {8, 1}, 5.0));
  const std::size_t per = 12 * 2;
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t j = 0; j < per; ++j)
      CHECK(pb[i * per + j] == doctest::Approx(pa[order[i] * per + j]).epsilon(1e-10));
}

TEST_CASE("micro-model teacher-forced loss gradient matches finite differences") {
  auto windows = micro_windows();
  REQUIRE(windows.size() == 1);
  auto in = make_input(windows, {3, 1}, 5.0);
  REQUIRE(in.agents == 2);
  SttModel m(micro_config(), 11);
  auto r = dto::testing::check_gradients(
      [&](const std::vector<Tensor>&) { return teacher_forced_loss(m, in); }, param_tensors(m));
  // Key biases get an exactly-zero gradient (softmax is shift invariant), so
  // only the stacked error over all parameters is meaningful for them.
  MESSAGE("micro-model relative error " << r.total_rel_error);
  CHECK(r.inputs == m.parameters().size());
  CHECK(r.total_rel_error < 1e-4);
  for (std::size_t i = 0; i < r.per_input.size(); ++i) {
    if (m.parameters()[i].name.ends_with(".bk")) continue;
    CHECK_MESSAGE(r.per_input[i] < 1e-4, m.parameters()[i].name);
  }
}

TEST_CASE("decoder-distillation gradient flows through the attention term") {
  auto windows = micro_windows();
  auto in = make_input(windows, {3, 1}, 5.0);
  SttModel teacher(micro_config(), 12), student(micro_config(), 13);
  ForwardMode eval;
  DecoderOutput t_out;
  {
    NoGradGuard ng;
    auto enc = teacher.encode(in, eval);
    t_out = teacher.decode_teacher_forced(enc, in, eval);
  }
  auto a_only = [&](const std::vector<Tensor>&) {
    ForwardMode mode;
    auto enc = student.encode(in, mode);
    auto dec = student.decode_teacher_forced(enc, in, mode);
    return loss_decoder_distill(Tensor::zeros({1}), Tensor::zeros({1}),
                                reshape(t_out.self_attention, {in.agents, 2 * 2 * 2}),
                                reshape(dec.self_attention, {in.agents, 2 * 2 * 2}), in.agents);
  };
  auto r = dto::testing::check_gradients(a_only, param_tensors(student));
  CHECK(r.total_rel_error < 1e-4);
  // the self-attention query projection is reached only through A
  CHECK(dto::testing::norm2(std::vector<double>(student.param("dec.0.self.wq").grad().begin(),
                                                student.param("dec.0.self.wq").grad().end())) >
        0.0);
}

TEST_CASE("spatial mask isolates scenes in the forward pass") {
  auto windows = dto::testing::synth_windows(6, 10);
  std::vector<SceneWindow> pair{windows.front()};
  for (const auto& w : windows)
    if (w.scene_id != pair[0].scene_id) {
      pair.push_back(w);
      break;
    }
  REQUIRE(pair.size() == 2);
  SttModel m(SttConfig::preset(Preset::sdd), 14);
  auto in = make_input(pair, {8, 1}, 1e6);
  const auto base = teacher_forced_loss(m, in);
  const std::size_t a_rows = in.blocks[0].agent_end;
  // loss restricted to scene A agents
  auto scene_a_loss = [&](const ModelInput& x) {
    ForwardMode eval;
    auto enc = m.encode(x, eval);
    auto dec = m.decode_teacher_forced(enc, x, eval);
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < a_rows * x.pred_len; ++r) rows.push_back(r);
    std::vector<double> fut(x.future.begin(), x.future.begin() + a_rows * x.pred_len * 2);
    return loss_gt(gather_rows(dec.predictions, rows),
                   Tensor::from({a_rows * x.pred_len, 2}, fut), a_rows).item();
  };
  const double before = scene_a_loss(in);
  ModelInput moved = in;
  for (std::size_t r = a_rows; r < in.agents; ++r) {
    for (std::size_t i = 0; i < in.obs_len * 2; ++i) moved.obs[r * in.obs_len * 2 + i] += 0.37 * (i + 1);
    for (std::size_t i = 0; i < in.pred_len * 2; ++i) moved.future[r * in.pred_len * 2 + i] -= 0.5;
  }
  CHECK(scene_a_loss(moved) == before);
  CHECK(base.item() != teacher_forced_loss(m, moved).item());
}

TEST_CASE("rotating inputs barely changes ADE of an untrained model in expectation") {
  auto windows = dto::testing::synth_windows(30, 15);
  SttModel m(SttConfig::preset(Preset::sdd), 16);
  ModelForecaster f(m);
  const double base = evaluate(f, windows, {8, 1}).ade;
  double mean = 0.0;
  const int n = 8;
  for (int i = 0; i < n; ++i) {
    auto rotated = windows;
    for (auto& w : rotated) rotate_window(w, 2.0 * std::numbers::pi * (i + 0.5) / n);
    mean += evaluate(f, rotated, {8, 1}).ade / n;
  }
  CHECK(std::abs(mean - base) / base < 0.05);
}
