#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dto/batch.hpp"
#include "dto/data.hpp"
#include "dto/model.hpp"

namespace dto {

/// Mean Euclidean distance over every point; spans hold agents * steps points.
double ade(std::span<const Vec2> predicted, std::span<const Vec2> truth);
/// Mean Euclidean distance at the last of `steps` points of each agent.
double fde(std::span<const Vec2> predicted, std::span<const Vec2> truth, std::size_t steps);

/// Anything that turns observed windows into future positions.
class Forecaster {
 public:
  virtual ~Forecaster() = default;
  /// Predictions for the loss agents of every window, in window order then
  /// agent order, t_pred points each, in each window's normalized frame.
  virtual std::vector<Vec2> forecast(std::span<const SceneWindow> windows,
                                     const ObsSelection& selection) const = 0;
};

class ModelForecaster : public Forecaster {
 public:
  explicit ModelForecaster(const SttModel& model) : model_(model) {}
  std::vector<Vec2> forecast(std::span<const SceneWindow> windows,
                             const ObsSelection& selection) const override;

 private:
  const SttModel& model_;
};

/// Returns the ground-truth future; for harness checks.
class OracleForecaster : public Forecaster {
 public:
  std::vector<Vec2> forecast(std::span<const SceneWindow> windows,
                             const ObsSelection& selection) const override;
};

/// Loss-agent predictions of a model input, gathered in loss-row order.
std::vector<Vec2> loss_agent_points(const ModelInput& in, std::span<const double> predictions);

using AgentFilter = std::function<bool(const SceneWindow&, std::size_t agent)>;

struct EvalResult {
  double ade = 0.0;
  double fde = 0.0;
  std::size_t windows = 0;
  std::size_t agents = 0;
};

/// ADE/FDE in the world frame over all loss agents (optionally filtered).
/// Windows are forecast in chunks of `chunk` for throughput.
EvalResult evaluate(const Forecaster& forecaster, std::span<const SceneWindow> windows,
                    const ObsSelection& selection, const AgentFilter& filter = {},
                    std::size_t chunk = 64);

struct MetricsRow {
  std::string dataset;
  std::string split;
  std::string model;
  std::size_t train_obs = 0;
  std::size_t eval_obs = 0;
  std::size_t lag = 1;
  std::string noise = "none";
  std::uint64_t seed = 0;
  double ade = 0.0;
  double fde = 0.0;
  std::size_t windows = 0;
};

inline constexpr const char* kMetricsHeader =
    "dataset,split,model,train_obs,eval_obs,lag,noise,seed,ade,fde,windows";

std::string metrics_csv(std::span<const MetricsRow> rows);
void write_metrics_csv(std::span<const MetricsRow> rows, const std::filesystem::path& path);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

MetricsRow evaluate_row(const Forecaster& forecaster, std::span<const SceneWindow> windows,
                        const ObsSelection& selection, MetricsRow tmpl);

/// One row per observation count in `counts` (lag 1).
std::vector<MetricsRow> length_shift_sweep(const Forecaster& forecaster,
                                           std::span<const SceneWindow> windows,
                                           std::span<const std::size_t> counts,
                                           const MetricsRow& tmpl);

/// One row per lag for a fixed observation count.
std::vector<MetricsRow> time_lag_sweep(const Forecaster& forecaster,
                                       std::span<const SceneWindow> windows, std::size_t count,
                                       std::span<const std::size_t> lags, const MetricsRow& tmpl);

struct CoefficientStats {
  std::size_t encoder_index = 0;
  std::size_t count = 0;
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0, mean = 0.0;
};

struct AttentionStatsResult {
  std::vector<CoefficientStats> per_index;
  /// Largest |sum_j coeff - 1| over all query rows seen.
  double max_row_sum_error = 0.0;
};

/// Distribution of last-layer encoder-decoder attention coefficients per
/// encoder time index, collected over the loss agents of `windows` during
/// autoregressive decoding with the model's native observation count.
AttentionStatsResult attention_coefficient_stats(const SttModel& model,
                                                 std::span<const SceneWindow> windows,
                                                 std::size_t chunk = 64);

std::string attention_stats_csv(const AttentionStatsResult& stats);

/// Writes `window_id,agent_id,kind,step,x,y` rows (kind in obs|gt|pred) in
/// world coordinates for the loss agents of each window. Returns rows written.
std::size_t dump_qualitative(const Forecaster& forecaster, std::span<const SceneWindow> windows,
                             const ObsSelection& selection, const std::filesystem::path& path);

}  // namespace dto
