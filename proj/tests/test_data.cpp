#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "dto/batch.hpp"
#include "dto/data.hpp"
#include "dto/error.hpp"
#include "dto/rng.hpp"
#include "dto/spatial_mask.hpp"
#include "test_util.hpp"

using namespace dto;
namespace fs = std::filesystem;

namespace {

Scene write_and_load(const std::string& name, const std::string& text, long stride = 1) {
  const auto dir = dto::testing::scratch_dir("data");
  const auto file = dir / (name + ".txt");
  std::ofstream(file) << text;
  DatasetSpec spec;
  spec.frame_stride = stride;
  return load_trajnet_file(file, spec);
}

Scene linear_scene(const std::string& id, std::size_t steps, std::size_t agents, Vec2 v,
                   std::size_t first_step = 0) {
  Scene s;
  s.id = id;
  for (std::size_t a = 0; a < agents; ++a) {
    Trajectory t;
    t.agent_id = static_cast<int>(a);
    for (std::size_t i = 0; i < steps; ++i) {
      const double k = static_cast<double>(i + first_step);
      t.samples.push_back({static_cast<long>(i + first_step), 3.0 * a + k * v.x, -1.0 + k * v.y});
    }
    s.agents.push_back(t);
  }
  return s;
}

DatasetSpec unit_stride() {
  DatasetSpec spec;
  spec.frame_stride = 1;
  return spec;
}

}  // namespace

TEST_CASE("load_trajnet: two-line file gives one trajectory of length two") {
  auto s = write_and_load("two", "# comment\n0 1 0.5 1.5\n1 1 1.0 2.0\n");
  REQUIRE(s.agents.size() == 1);
  CHECK(s.agents[0].samples.size() == 2);
  CHECK(s.agents[0].samples[1].x == 1.0);
  CHECK(s.id == "two");
}

TEST_CASE("load_trajnet: row order does not matter") {
  auto a = write_and_load("sorted", "0 1 0 0\n1 1 1 0\n0 2 5 5\n1 2 6 5\n");
  auto b = write_and_load("shuffled", "1 2 6 5\n1 1 1 0\n0 2 5 5\n0 1 0 0\n");
  REQUIRE(a.agents.size() == b.agents.size());
  for (std::size_t i = 0; i < a.agents.size(); ++i) {
    CHECK(a.agents[i].agent_id == b.agents[i].agent_id);
    REQUIRE(a.agents[i].samples.size() == b.agents[i].samples.size());
    for (std::size_t j = 0; j < a.agents[i].samples.size(); ++j) {
      CHECK(a.agents[i].samples[j].frame == b.agents[i].samples[j].frame);
      CHECK(a.agents[i].samples[j].x == b.agents[i].samples[j].x);
    }
  }
}

TEST_CASE("load_trajnet: frame stride and per-scene override") {
  auto s10 = write_and_load("s10", "0 1 0 0\n5 1 9 9\n10 1 1 0\n20 1 2 0\n", 10);
  CHECK(s10.agents[0].samples.size() == 3);
  CHECK(s10.step_of(20) == 2);

  const auto dir = dto::testing::scratch_dir("data");
  std::ofstream(dir / "eth.txt") << "0 1 0 0\n6 1 1 0\n12 1 2 0\n";
  DatasetSpec spec;
  spec.stride_overrides["eth"] = 6;
  auto eth = load_trajnet_file(dir / "eth.txt", spec);
  CHECK(eth.frame_stride == 6);
  CHECK(eth.agents[0].samples.size() == 3);
}

TEST_CASE("load_trajnet: malformed lines are reported with their line number") {
  try {
    write_and_load("bad", "0 1 0 0\n1 1 x 0\n");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
    CHECK(std::string(e.what()).find("bad.txt:2") != std::string::npos);
  }
  CHECK_THROWS_AS(write_and_load("empty", "# nothing\n"), Error);
  CHECK_THROWS_AS(load_trajnet_file("/nonexistent/file.txt", DatasetSpec{}), Error);
}

TEST_CASE("trajnet write/load round trip") {
  Rng rng(4);
  SynthSpec ss;
  ss.scenes = 3;
  auto scenes = synthesize_dataset(ss, rng);
  const auto dir = dto::testing::scratch_dir("roundtrip");
  write_trajnet_dir(scenes, dir);
  DatasetSpec spec;
  auto back = load_trajnet(dir, spec);
  REQUIRE(back.size() == 3);
  std::sort(back.begin(), back.end(), [](auto& a, auto& b) { return a.id < b.id; });
  std::sort(scenes.begin(), scenes.end(), [](auto& a, auto& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(back[i].agents.size() == scenes[i].agents.size());
    for (std::size_t a = 0; a < back[i].agents.size(); ++a) {
      for (std::size_t t = 0; t < back[i].agents[a].samples.size(); ++t) {
        CHECK(back[i].agents[a].samples[t].x == scenes[i].agents[a].samples[t].x);
        CHECK(back[i].agents[a].samples[t].y == scenes[i].agents[a].samples[t].y);
      }
    }
  }
}

TEST_CASE("build_windows examples") {
  const auto spec = unit_stride();
  CHECK(build_windows(linear_scene("a", 25, 1, {1, 0}), spec).size() == 6);
  CHECK(build_windows(linear_scene("b", 19, 1, {1, 0}), spec).empty());
  auto two = build_windows(linear_scene("c", 20, 2, {0.5, 0.2}), spec);
  REQUIRE(two.size() == 1);
  CHECK(two[0].agents() == 2);
  CHECK(two[0].loss_agents() == 2);
}

TEST_CASE("build_windows: partial neighbours are kept but never loss agents") {
  Scene s = linear_scene("p", 20, 1, {1, 0});
  Trajectory partial;
  partial.agent_id = 9;
  for (long t = 3; t < 12; ++t) partial.samples.push_back({t, 1.0, static_cast<double>(t)});
  s.agents.push_back(partial);
  auto w = build_windows(s, unit_stride());
  REQUIRE(w.size() == 1);
  CHECK(w[0].agents() == 2);
  CHECK(w[0].loss_agent[1] == 0);
  CHECK_FALSE(w[0].is_present(1, 0));
  CHECK(w[0].is_present(1, 5));
}

TEST_CASE("windowing never fabricates positions") {
  Rng rng(2);
  SynthSpec ss;
  ss.scenes = 5;
  auto scenes = synthesize_dataset(ss, rng);
  DatasetSpec spec;
  for (const auto& scene : scenes) {
    std::set<std::pair<double, double>> source;
    for (const auto& a : scene.agents)
      for (const auto& p : a.samples) source.insert({p.x, p.y});
    for (const auto& w : build_windows(scene, spec)) {
      for (std::size_t i = 0; i < w.positions.size(); ++i) {
        if (w.present[i]) CHECK(source.count({w.positions[i].x, w.positions[i].y}) == 1);
      }
    }
  }
}

TEST_CASE("nabs_normalize") {
  auto windows = build_windows(linear_scene("n", 22, 2, {0.7, -0.3}), unit_stride());
  for (auto& w : windows) {
    const SceneWindow original = w;
    nabs_normalize(w);
    for (std::size_t a = 0; a < w.agents(); ++a) {
      CHECK(w.at(a, w.t_obs - 1) == Vec2{0.0, 0.0});
    }
    CHECK_THROWS_AS(nabs_normalize(w), Error);
    denormalize(w);
    CHECK(w.positions == original.positions);
  }

  Scene still = linear_scene("still", 20, 1, {0, 0});
  still.agents[0].samples.assign(20, {});
  for (long t = 0; t < 20; ++t) still.agents[0].samples[t] = {t, 5.0, 5.0};
  auto w = build_windows(still, unit_stride()).at(0);
  nabs_normalize(w);
  for (const auto& p : w.positions) CHECK(p == Vec2{0.0, 0.0});
  CHECK(w.world(0, 3) == Vec2{5.0, 5.0});
}

TEST_CASE("rotation augment") {
  auto w = build_windows(linear_scene("r", 20, 2, {1, 0.5}), unit_stride()).at(0);
  nabs_normalize(w);
  SceneWindow same = w;
  rotate_window(same, 0.0);
  CHECK(same.positions == w.positions);

  CHECK(rotate(Vec2{1, 0}, std::numbers::pi).x == doctest::Approx(-1.0));
  CHECK(std::abs(rotate(Vec2{1, 0}, std::numbers::pi).y) < 1e-15);

  std::vector<SceneWindow> batch{w};
  Rng rng(8);
  random_rotation_augment(batch, rng);
  for (std::size_t t = 0; t < w.steps(); ++t) {
    const double before = norm(w.at(0, t) - w.at(1, t) + w.offsets[0] - w.offsets[1]);
    const auto& r = batch[0];
    const double after = norm(r.at(0, t) - r.at(1, t) + r.offsets[0] - r.offsets[1]);
    CHECK(std::abs(before - after) < 1e-9);
  }
}

TEST_CASE("synthesize_dataset") {
  SynthSpec lin;
  lin.scenes = 20;
  lin.weights = {1, 0, 0, 0};
  Rng r1(5);
  for (const auto& scene : synthesize_dataset(lin, r1)) {
    for (const auto& a : scene.agents) {
      CHECK(a.family == MotionFamily::linear);
      for (std::size_t t = 2; t < a.samples.size(); ++t) {
        const double ax = a.samples[t].x - 2 * a.samples[t - 1].x + a.samples[t - 2].x;
        const double ay = a.samples[t].y - 2 * a.samples[t - 1].y + a.samples[t - 2].y;
        CHECK(std::hypot(ax, ay) < 1e-9);
      }
    }
  }

  SynthSpec mix;
  mix.scenes = 10;
  Rng a(9), b(9);
  auto d1 = synthesize_dataset(mix, a), d2 = synthesize_dataset(mix, b);
  REQUIRE(d1.size() == d2.size());
  for (std::size_t s = 0; s < d1.size(); ++s) {
    REQUIRE(d1[s].agents.size() == d2[s].agents.size());
    for (std::size_t i = 0; i < d1[s].agents.size(); ++i) {
      for (std::size_t t = 0; t < d1[s].agents[i].samples.size(); ++t) {
        CHECK(d1[s].agents[i].samples[t].x == d2[s].agents[i].samples[t].x);
      }
    }
  }

  SynthSpec turn;
  turn.scenes = 10;
  turn.weights = {0, 1, 0, 0};
  Rng r2(6);
  for (const auto& scene : synthesize_dataset(turn, r2)) {
    for (const auto& ag : scene.agents) {
      const auto& s = ag.samples;
      auto heading = [&](std::size_t t) {
        return std::atan2(s[t + 1].y - s[t].y, s[t + 1].x - s[t].x);
      };
      const double first = std::remainder(heading(1) - heading(0), 2 * std::numbers::pi);
      const double speed = std::hypot(s[1].x - s[0].x, s[1].y - s[0].y);
      CHECK(first == doctest::Approx(speed / turn.turn_radius).epsilon(1e-9));
      for (std::size_t t = 1; t + 2 < s.size(); ++t) {
        const double d = std::remainder(heading(t + 1) - heading(t), 2 * std::numbers::pi);
        CHECK(std::abs(d - first) < 1e-6);
      }
    }
  }

  SynthSpec bad;
  bad.weights = {0.5, 0.5, 0.5, 0};
  Rng r3(1);
  CHECK_THROWS_AS(synthesize_dataset(bad, r3), Error);
}

TEST_CASE("synthesized speeds stay in range") {
  SynthSpec ss;
  ss.scenes = 30;
  Rng rng(12);
  for (const auto& scene : synthesize_dataset(ss, rng)) {
    CHECK(scene.agents.size() >= ss.min_agents);
    for (const auto& a : scene.agents) {
      CHECK(a.samples.size() == ss.steps_per_scene);
      for (std::size_t t = 1; t < a.samples.size(); ++t) {
        const double v = std::hypot(a.samples[t].x - a.samples[t - 1].x,
                                    a.samples[t].y - a.samples[t - 1].y);
        CHECK(v >= 0.3 - 1e-9);
        CHECK(v <= 2.5 + 1e-9);
      }
    }
  }
}

TEST_CASE("batch_windows") {
  std::vector<SceneWindow> windows;
  for (int s = 0; s < 5; ++s) {
    auto w = build_windows(linear_scene("b" + std::to_string(s), 22, 1 + s % 2, {1, 0}),
                           unit_stride());
    windows.insert(windows.end(), w.begin(), w.end());
  }
  Rng rng(3);
  auto one = batch_windows(windows, 1000, rng);
  REQUIRE(one.size() == 1);
  CHECK(one[0].windows.size() == windows.size());

  auto many = batch_windows(windows, 4, rng);
  std::multiset<std::size_t> seen;
  for (const auto& b : many) {
    std::size_t agent = 0;
    for (std::size_t i = 0; i < b.windows.size(); ++i) {
      seen.insert(b.windows[i]);
      CHECK(b.blocks[i].agent_begin == agent);
      agent = b.blocks[i].agent_end;
      CHECK(b.blocks[i].scene_id == windows[b.windows[i]].scene_id);
    }
  }
  std::multiset<std::size_t> all;
  for (std::size_t i = 0; i < windows.size(); ++i) all.insert(i);
  CHECK(seen == all);
  CHECK_THROWS_AS(batch_windows(windows, 0, rng), Error);
}

TEST_CASE("split_scenes partitions scenes") {
  Rng rng(1);
  SynthSpec ss;
  ss.scenes = 40;
  auto scenes = synthesize_dataset(ss, rng);
  DatasetSpec spec;
  Rng split_rng(2);
  auto split = split_scenes(scenes, spec, split_rng);
  CHECK(split.train.size() + split.val.size() + split.test.size() == 40);
  CHECK(split.train.size() == 28);
  std::set<std::string> ids;
  for (auto* part : {&split.train, &split.val, &split.test})
    for (const auto& s : *part) CHECK(ids.insert(s.id).second);
}

TEST_CASE("spatial mask examples") {
  const std::vector<Vec2> pos{{0, 0}, {1, 0}, {0, 0}, {1, 0}};
  const std::vector<std::uint8_t> present(4, 1);
  const std::vector<Block> blocks{{0, 2, "a"}, {2, 4, "b"}};
  auto m = build_spatial_mask(pos, present, blocks, 5.0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(m[i * 4 + j] == ((i < 2) == (j < 2)));

  auto id = build_spatial_mask(pos, present, blocks, 0.0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(id[i * 4 + j] == (i == j));

  const std::vector<Vec2> far{{0, 0}, {3, 0}};
  const std::vector<Block> one{{0, 2, "a"}};
  const std::vector<std::uint8_t> both(2, 1);
  CHECK(build_spatial_mask(far, both, one, 2.0)[1] == 0);
  CHECK(build_spatial_mask(far, both, one, 4.0)[1] == 1);
  const std::vector<std::uint8_t> second_absent{1, 0};
  auto absent = build_spatial_mask(far, second_absent, one, 4.0);
  CHECK(absent[1] == 0);
  CHECK(absent[3] == 1);
}

TEST_CASE("ObsSelection steps") {
  CHECK(ObsSelection{2, 1}.steps(8) == std::vector<std::size_t>{6, 7});
  CHECK(ObsSelection{2, 3}.steps(8) == std::vector<std::size_t>{4, 7});
  CHECK(ObsSelection{8, 1}.steps(8).front() == 0);
  CHECK_THROWS_AS((ObsSelection{3, 4}.steps(8)), Error);
}

TEST_CASE("make_input re-normalizes on the selected last observation") {
  auto w = build_windows(linear_scene("m", 20, 2, {1, 0}), unit_stride()).at(0);
  nabs_normalize(w);
  std::vector<SceneWindow> ws{w};
  auto in = make_input(ws, ObsSelection{2, 1}, 5.0);
  CHECK(in.agents == 2);
  CHECK(in.obs_len == 2);
  CHECK(in.pred_len == 12);
  CHECK(in.loss_agents() == 2);
  CHECK(in.obs[2] == 0.0);
  CHECK(in.obs[0] == -1.0);
  CHECK(in.future[0] == 1.0);
  CHECK(in.obs_masks.size() == 2);
  CHECK(in.decoder_mask == std::vector<std::uint8_t>{1, 1, 1, 1});
}

TEST_CASE("make_input rejects unnormalized windows") {
  auto w = build_windows(linear_scene("u", 20, 1, {1, 0}), unit_stride());
  CHECK_THROWS_AS(make_input(w, ObsSelection{2, 1}, 5.0), Error);
}
