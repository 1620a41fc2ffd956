#include <algorithm>
#include <cmath>
#include <numbers>

#include "dto/data.hpp"
#include "dto/error.hpp"
#include "dto/rng.hpp"

namespace dto {

void SynthSpec::validate() const {
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw Error(ErrorKind::config, "synthetic mixture weights must be >= 0");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorKind::config, "synthetic mixture weights must sum to 1");
  }
  if (min_agents < 1 || max_agents < min_agents) {
    throw Error(ErrorKind::config, "synthetic agent range is empty");
  }
  if (!(min_speed >= 0.3 && max_speed <= 2.5 && min_speed <= max_speed)) {
    throw Error(ErrorKind::config, "synthetic speeds must lie in [0.3, 2.5] m/step");
  }
  if (steps_per_scene < 20) throw Error(ErrorKind::config, "synthetic scenes need >= 20 steps");
  if (!(turn_radius > 0.0)) throw Error(ErrorKind::config, "turn radius must be positive");
  if (frame_stride < 1) throw Error(ErrorKind::config, "frame stride must be >= 1");
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

MotionFamily pick_family(const std::array<double, 4>& weights, bool allow_pair, Rng& rng) {
  std::array<double, 4> w = weights;
  if (!allow_pair) w[3] = 0.0;
  double total = w[0] + w[1] + w[2] + w[3];
  if (total <= 0.0) return MotionFamily::linear;
  double u = rng.uniform() * total;
  for (int i = 0; i < 4; ++i) {
    if (u < w[i]) return static_cast<MotionFamily>(i);
    u -= w[i];
  }
  return MotionFamily::linear;
}

std::vector<Vec2> walk(Vec2 start, double heading, std::size_t steps, auto&& speed_at,
                       double turn_rate) {
  std::vector<Vec2> out(steps);
  out[0] = start;
  for (std::size_t t = 1; t < steps; ++t) {
    const double s = speed_at(t - 1);
    out[t] = out[t - 1] + s * Vec2{std::cos(heading), std::sin(heading)};
    heading += turn_rate;
  }
  return out;
}

Trajectory to_trajectory(int id, MotionFamily family, const std::vector<Vec2>& pts,
                         long stride) {
  Trajectory traj;
  traj.agent_id = id;
  traj.family = family;
  for (std::size_t t = 0; t < pts.size(); ++t) {
    traj.samples.push_back({static_cast<long>(t) * stride, pts[t].x, pts[t].y});
  }
  return traj;
}

}  // namespace

std::vector<Scene> synthesize_dataset(const SynthSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t steps = spec.steps_per_scene;
  std::vector<Scene> scenes;
  for (std::size_t s = 0; s < spec.scenes; ++s) {
    Scene scene;
    scene.id = "synth_" + std::to_string(s);
    scene.frame_origin = 0;
    scene.frame_stride = spec.frame_stride;
    const std::size_t target =
        spec.min_agents + rng.below(spec.max_agents - spec.min_agents + 1);
    int next_id = 0;
    while (scene.agents.size() < target) {
      const bool room_for_pair = target - scene.agents.size() >= 2;
      const MotionFamily family = pick_family(spec.weights, room_for_pair, rng);
      const Vec2 start{rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0)};
      const double heading = rng.uniform(0.0, kTwoPi);
      const double speed = rng.uniform(spec.min_speed, spec.max_speed);
      switch (family) {
        case MotionFamily::linear: {
          auto pts = walk(start, heading, steps, [&](std::size_t) { return speed; }, 0.0);
          scene.agents.push_back(to_trajectory(next_id++, family, pts, spec.frame_stride));
          break;
        }
        case MotionFamily::turn: {
          const double rate = speed / spec.turn_radius;
          auto pts = walk(start, heading, steps, [&](std::size_t) { return speed; }, rate);
          scene.agents.push_back(to_trajectory(next_id++, family, pts, spec.frame_stride));
          break;
        }
        case MotionFamily::stop_go: {
          const double period = rng.uniform(16.0, 24.0);
          const double phase = rng.uniform(0.0, kTwoPi);
          auto speed_at = [&](std::size_t t) {
            const double v = speed * (0.6 + 0.4 * std::cos(kTwoPi * t / period + phase));
            return std::clamp(v, spec.min_speed, 2.5);
          };
          auto pts = walk(start, heading, steps, speed_at, 0.0);
          scene.agents.push_back(to_trajectory(next_id++, family, pts, spec.frame_stride));
          break;
        }
        case MotionFamily::avoid: {
          // Two agents approach each other head-on (small lateral offset) and
          // both veer left of their heading whenever the next step would bring
          // them closer than the avoidance distance.
          const double speed2 = rng.uniform(spec.min_speed, spec.max_speed);
          const double lateral = rng.uniform(-0.5, 0.5);
          const double meet = rng.uniform(0.35, 0.65) * static_cast<double>(steps);
          const Vec2 dir{std::cos(heading), std::sin(heading)};
          const Vec2 side{-dir.y, dir.x};
          const Vec2 centre = start;
          std::array<Vec2, 2> p{centre - (meet * speed) * dir,
                                centre + (meet * speed2) * dir + lateral * side};
          std::array<double, 2> head{heading, heading + std::numbers::pi};
          const std::array<double, 2> spd{speed, speed2};
          std::array<std::vector<Vec2>, 2> pts;
          pts[0].push_back(p[0]);
          pts[1].push_back(p[1]);
          for (std::size_t t = 1; t < steps; ++t) {
            std::array<Vec2, 2> next;
            for (int tries = 0; tries < 8; ++tries) {
              for (int i = 0; i < 2; ++i) {
                next[i] = p[i] + spd[i] * Vec2{std::cos(head[i]), std::sin(head[i])};
              }
              if (norm(next[0] - next[1]) >= spec.avoid_distance) break;
              head[0] += 0.3;
              head[1] += 0.3;
            }
            p = next;
            pts[0].push_back(p[0]);
            pts[1].push_back(p[1]);
          }
          scene.agents.push_back(to_trajectory(next_id++, family, pts[0], spec.frame_stride));
          scene.agents.push_back(to_trajectory(next_id++, family, pts[1], spec.frame_stride));
          break;
        }
        case MotionFamily::unknown:
          break;
      }
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

}  // namespace dto
