#include "dto/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dto/error.hpp"

namespace dto {

double ade(std::span<const Vec2> predicted, std::span<const Vec2> truth) {
  if (predicted.empty() || predicted.size() != truth.size()) {
    throw Error(ErrorKind::dimension, "ade: need equal, non-empty inputs");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) total += norm(predicted[i] - truth[i]);
  return total / static_cast<double>(predicted.size());
}

double fde(std::span<const Vec2> predicted, std::span<const Vec2> truth, std::size_t steps) {
  if (predicted.empty() || predicted.size() != truth.size() || steps == 0 ||
      predicted.size() % steps != 0) {
    throw Error(ErrorKind::dimension, "fde: need equal, non-empty inputs of whole trajectories");
  }
  const std::size_t agents = predicted.size() / steps;
  double total = 0.0;
  for (std::size_t a = 0; a < agents; ++a) {
    const std::size_t last = a * steps + steps - 1;
    total += norm(predicted[last] - truth[last]);
  }
  return total / static_cast<double>(agents);
}

std::vector<Vec2> loss_agent_points(const ModelInput& in, std::span<const double> predictions) {
  std::vector<Vec2> out;
  out.reserve(in.loss_agents() * in.pred_len);
  for (auto r : in.loss_rows) {
    for (std::size_t t = 0; t < in.pred_len; ++t) {
      const std::size_t i = (r * in.pred_len + t) * 2;
      out.push_back({predictions[i], predictions[i + 1]});
    }
  }
  return out;
}

std::vector<Vec2> ModelForecaster::forecast(std::span<const SceneWindow> windows,
                                            const ObsSelection& selection) const {
  if (windows.empty()) return {};
  const ModelInput in = make_input(windows, selection, model_.config().spatial_threshold);
  const auto preds = model_.predict(in);
  return loss_agent_points(in, preds);
}

std::vector<Vec2> OracleForecaster::forecast(std::span<const SceneWindow> windows,
                                             const ObsSelection& selection) const {
  std::vector<Vec2> out;
  for (const auto& w : windows) {
    selection.steps(w.t_obs);
    for (std::size_t a = 0; a < w.agents(); ++a) {
      if (!w.loss_agent[a]) continue;
      for (std::size_t t = 0; t < w.t_pred; ++t) out.push_back(w.at(a, w.t_obs + t));
    }
  }
  return out;
}

EvalResult evaluate(const Forecaster& forecaster, std::span<const SceneWindow> windows,
                    const ObsSelection& selection, const AgentFilter& filter, std::size_t chunk) {
  if (windows.empty()) throw Error(ErrorKind::data, "evaluate: no windows");
  selection.steps(windows.front().t_obs);
  double dist_sum = 0.0, final_sum = 0.0;
  std::size_t points = 0;
  EvalResult result;
  for (std::size_t begin = 0; begin < windows.size(); begin += chunk) {
    const auto part = windows.subspan(begin, std::min(chunk, windows.size() - begin));
    const auto preds = forecaster.forecast(part, selection);
    std::size_t cursor = 0;
    for (const auto& w : part) {
      bool counted = false;
      for (std::size_t a = 0; a < w.agents(); ++a) {
        if (!w.loss_agent[a]) continue;
        const std::size_t base = cursor;
        cursor += w.t_pred;
        if (filter && !filter(w, a)) continue;
        counted = true;
        const Vec2 offset = w.normalized ? w.offsets[a] : Vec2{};
        for (std::size_t t = 0; t < w.t_pred; ++t) {
          const Vec2 predicted = preds.at(base + t) + offset;
          const double d = norm(predicted - w.world(a, w.t_obs + t));
          dist_sum += d;
          if (t + 1 == w.t_pred) final_sum += d;
        }
        points += w.t_pred;
        result.agents += 1;
      }
      if (counted) result.windows += 1;
    }
    if (cursor != preds.size()) {
      throw Error(ErrorKind::dimension, "forecaster returned " + std::to_string(preds.size()) +
                                            " points, expected " + std::to_string(cursor));
    }
  }
  if (result.agents == 0) throw Error(ErrorKind::data, "evaluate: no agents pass the filter");
  result.ade = dist_sum / static_cast<double>(points);
  result.fde = final_sum / static_cast<double>(result.agents);
  return result;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::ostringstream os;
  os << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    os << r.dataset << ',' << r.split << ',' << r.model << ',' << r.train_obs << ','
       << r.eval_obs << ',' << r.lag << ',' << r.noise << ',' << r.seed << ','
       << fmt_double(r.ade) << ',' << fmt_double(r.fde) << ',' << r.windows << '\n';
  }
  return os.str();
}

void write_metrics_csv(std::span<const MetricsRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << metrics_csv(rows);
  if (!out) throw Error(ErrorKind::io, "failed writing " + path.string());
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw Error(ErrorKind::data, path.string() + ": unexpected metrics header");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 11) throw Error(ErrorKind::data, path.string() + ": malformed row " + line);
    MetricsRow r;
    r.dataset = f[0];
    r.split = f[1];
    r.model = f[2];
    r.train_obs = std::stoul(f[3]);
    r.eval_obs = std::stoul(f[4]);
    r.lag = std::stoul(f[5]);
    r.noise = f[6];
    r.seed = std::stoull(f[7]);
    r.ade = std::stod(f[8]);
    r.fde = std::stod(f[9]);
    r.windows = std::stoul(f[10]);
    rows.push_back(std::move(r));
  }
  return rows;
}

MetricsRow evaluate_row(const Forecaster& forecaster, std::span<const SceneWindow> windows,
                        const ObsSelection& selection, MetricsRow tmpl) {
  const auto res = evaluate(forecaster, windows, selection);
  tmpl.eval_obs = selection.count;
  tmpl.lag = selection.lag;
  tmpl.ade = res.ade;
  tmpl.fde = res.fde;
  tmpl.windows = res.windows;
  return tmpl;
}

std::vector<MetricsRow> length_shift_sweep(const Forecaster& forecaster,
                                           std::span<const SceneWindow> windows,
                                           std::span<const std::size_t> counts,
                                           const MetricsRow& tmpl) {
  std::vector<MetricsRow> rows;
  for (auto k : counts) {
    if (k < 2) throw Error(ErrorKind::config, "length sweep needs K >= 2");
    rows.push_back(evaluate_row(forecaster, windows, {k, 1}, tmpl));
  }
  return rows;
}

std::vector<MetricsRow> time_lag_sweep(const Forecaster& forecaster,
                                       std::span<const SceneWindow> windows, std::size_t count,
                                       std::span<const std::size_t> lags, const MetricsRow& tmpl) {
  std::vector<MetricsRow> rows;
  for (auto lag : lags) rows.push_back(evaluate_row(forecaster, windows, {count, lag}, tmpl));
  return rows;
}

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

AttentionStatsResult attention_coefficient_stats(const SttModel& model,
                                                 std::span<const SceneWindow> windows,
                                                 std::size_t chunk) {
  const std::size_t k = model.config().t_obs;
  const std::size_t heads = model.config().heads;
  std::vector<std::vector<double>> groups(k);
  AttentionStatsResult result;
  for (std::size_t begin = 0; begin < windows.size(); begin += chunk) {
    const auto part = windows.subspan(begin, std::min(chunk, windows.size() - begin));
    const ModelInput in = make_input(part, {k, 1}, model.config().spatial_threshold);
    NoGradGuard no_grad;
    ForwardMode eval;
    const EncoderOutput enc = model.encode(in, eval);
    Tensor cross;
    model.decode_autoregressive(enc, in, &cross);
    const auto v = cross.values();
    const std::size_t len = in.pred_len;
    for (auto a : in.loss_rows) {
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t base = ((a * heads + h) * len + i) * k;
          double row_sum = 0.0;
          for (std::size_t j = 0; j < k; ++j) {
            groups[j].push_back(v[base + j]);
            row_sum += v[base + j];
          }
          result.max_row_sum_error = std::max(result.max_row_sum_error, std::abs(row_sum - 1.0));
        }
      }
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    auto& g = groups[j];
    std::sort(g.begin(), g.end());
    CoefficientStats s;
    s.encoder_index = j;
    s.count = g.size();
    if (!g.empty()) {
      s.min = g.front();
      s.max = g.back();
      s.q1 = quantile(g, 0.25);
      s.median = quantile(g, 0.5);
      s.q3 = quantile(g, 0.75);
      double total = 0.0;
      for (double x : g) total += x;
      s.mean = total / static_cast<double>(g.size());
    }
    result.per_index.push_back(s);
  }
  return result;
}

std::string attention_stats_csv(const AttentionStatsResult& stats) {
  std::ostringstream os;
  os << "encoder_index,count,min,q1,median,q3,max,mean\n";
  for (const auto& s : stats.per_index) {
    os << s.encoder_index << ',' << s.count << ',' << fmt_double(s.min) << ','
       << fmt_double(s.q1) << ',' << fmt_double(s.median) << ',' << fmt_double(s.q3) << ','
       << fmt_double(s.max) << ',' << fmt_double(s.mean) << '\n';
  }
  return os.str();
}

std::size_t dump_qualitative(const Forecaster& forecaster, std::span<const SceneWindow> windows,
                             const ObsSelection& selection, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << "window_id,agent_id,kind,step,x,y\n";
  const auto preds = forecaster.forecast(windows, selection);
  std::size_t cursor = 0, rows = 0;
  char buf[160];
  auto emit = [&](std::size_t w, int agent, const char* kind, std::size_t step, Vec2 p) {
    std::snprintf(buf, sizeof buf, "%zu,%d,%s,%zu,%.9g,%.9g\n", w, agent, kind, step, p.x, p.y);
    out << buf;
    ++rows;
  };
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const auto& win = windows[w];
    for (std::size_t a = 0; a < win.agents(); ++a) {
      if (!win.loss_agent[a]) continue;
      const int id = win.agent_ids[a];
      for (std::size_t t = 0; t < win.t_obs; ++t) emit(w, id, "obs", t, win.world(a, t));
      for (std::size_t t = 0; t < win.t_pred; ++t)
        emit(w, id, "gt", win.t_obs + t, win.world(a, win.t_obs + t));
      const Vec2 offset = win.normalized ? win.offsets[a] : Vec2{};
      for (std::size_t t = 0; t < win.t_pred; ++t)
        emit(w, id, "pred", win.t_obs + t, preds.at(cursor + t) + offset);
      cursor += win.t_pred;
    }
  }
  if (!out) throw Error(ErrorKind::io, "failed writing " + path.string());
  return rows;
}

}  // namespace dto
