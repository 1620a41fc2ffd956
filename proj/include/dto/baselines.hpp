#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "dto/data.hpp"
#include "dto/metrics.hpp"
#include "dto/train.hpp"

namespace dto {

/// Constant-velocity extrapolation: step i (1-based) is last + i * (last - prev).
std::vector<Vec2> cvm_predict(std::span<const Vec2> observed, std::size_t t_pred);

/// CVM on the last two selected observations of every loss agent. With a lag
/// the velocity is divided by the lag so that steps stay one sample apart.
class CvmForecaster : public Forecaster {
 public:
  std::vector<Vec2> forecast(std::span<const SceneWindow> windows,
                             const ObsSelection& selection) const override;
};

/// train_teacher with a K-observation model.
TrainResult train_from_scratch_k(std::span<const SceneWindow> train,
                                 std::span<const SceneWindow> val, std::size_t k, SttConfig config,
                                 TrainConfig tc, const EpochCallback& on_epoch = {});

/// One model trained with K drawn per batch from [k_min, k_max].
TrainResult train_variable_obs(std::span<const SceneWindow> train,
                               std::span<const SceneWindow> val, std::size_t k_min,
                               std::size_t k_max, SttConfig config, TrainConfig tc,
                               const EpochCallback& on_epoch = {});

/// Time-reversed copies of the observed part of each window: the K most recent
/// observations, newest first, become the observations and the T - K earlier
/// steps (going back in time) the targets. Re-normalized.
std::vector<SceneWindow> reversed_windows(std::span<const SceneWindow> windows, std::size_t k);

/// Fills in the earlier observations a K-observation input lacks.
class PastGenerator {
 public:
  virtual ~PastGenerator() = default;
  /// Copies of `windows` whose first t_obs - k observed steps are generated
  /// from the last k for every loss agent.
  virtual std::vector<SceneWindow> complete(std::span<const SceneWindow> windows,
                                            std::size_t k) const = 0;
};

/// Keeps the true history; for harness checks.
class OraclePastGenerator : public PastGenerator {
 public:
  std::vector<SceneWindow> complete(std::span<const SceneWindow> windows,
                                    std::size_t k) const override;
};

/// An STT trained on reversed windows.
class ModelPastGenerator : public PastGenerator {
 public:
  explicit ModelPastGenerator(const SttModel& model) : model_(model) {}
  std::vector<SceneWindow> complete(std::span<const SceneWindow> windows,
                                    std::size_t k) const override;

 private:
  const SttModel& model_;
};

/// Trains the backward generator for K observations on the training split.
TrainResult train_past_generator(std::span<const SceneWindow> train,
                                 std::span<const SceneWindow> val, std::size_t k,
                                 SttConfig config, TrainConfig tc,
                                 const EpochCallback& on_epoch = {});

/// Generated history followed by the primary T-observation model. With K = T
/// the generator is bypassed.
class PastGenForecaster : public Forecaster {
 public:
  PastGenForecaster(const SttModel& primary, const PastGenerator& generator)
      : primary_(primary), generator_(generator) {}
  std::vector<Vec2> forecast(std::span<const SceneWindow> windows,
                             const ObsSelection& selection) const override;

 private:
  const SttModel& primary_;
  const PastGenerator& generator_;
};

}  // namespace dto
