#include "dto/train.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "dto/error.hpp"
#include "dto/losses.hpp"
#include "dto/metrics.hpp"
#include "dto/optim.hpp"
#include "dto/rng.hpp"

namespace dto {

void TrainConfig::validate() const {
  if (epochs == 0) throw Error(ErrorKind::config, "epochs must be >= 1");
  if (!(lr >= 0.0)) throw Error(ErrorKind::config, "learning rate must be >= 0");
  if (batch_size == 0) throw Error(ErrorKind::config, "batch size must be >= 1");
  if (!(clip_norm > 0.0)) throw Error(ErrorKind::config, "clip norm must be > 0");
  if (obs_min > obs_max) throw Error(ErrorKind::config, "obs_min exceeds obs_max");
  if (obs_max != 0 && obs_min < 2) throw Error(ErrorKind::config, "need at least 2 observations");
}

void DistillConfig::validate() const {
  if (student_obs < 2) throw Error(ErrorKind::config, "student needs K >= 2");
  if (student_obs > teacher_obs) {
    throw Error(ErrorKind::config, "student K=" + std::to_string(student_obs) +
                                       " exceeds teacher T=" + std::to_string(teacher_obs));
  }
  if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) {
    throw Error(ErrorKind::config, "loss weights must be >= 0");
  }
}

std::vector<SceneWindow> gather_batch(std::span<const SceneWindow> windows,
                                      std::span<const std::size_t> indices, Rng* rng) {
  std::vector<SceneWindow> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(windows[i]);
  if (rng) random_rotation_augment(out, *rng);
  return out;
}

namespace {

std::vector<std::size_t> loss_step_rows(std::span<const std::size_t> agents, std::size_t len) {
  std::vector<std::size_t> rows;
  rows.reserve(agents.size() * len);
  for (auto a : agents)
    for (std::size_t t = 0; t < len; ++t) rows.push_back(a * len + t);
  return rows;
}

Tensor future_of(const ModelInput& in) {
  std::vector<double> v;
  v.reserve(in.loss_agents() * in.pred_len * 2);
  for (auto a : in.loss_rows)
    for (std::size_t i = 0; i < in.pred_len * 2; ++i) v.push_back(in.future[a * in.pred_len * 2 + i]);
  return Tensor::from({in.loss_agents() * in.pred_len, 2}, std::move(v));
}

Tensor gt_loss(const DecoderOutput& dec, const ModelInput& in) {
  const auto rows = loss_step_rows(in.loss_rows, in.pred_len);
  return loss_gt(gather_rows(dec.predictions, rows), future_of(in), in.loss_agents());
}

struct BatchLosses {
  Tensor total;
  double l_gt = 0.0, l_ed = 0.0, l_dd = 0.0;
};

using BatchFn = std::function<BatchLosses(const SttModel&, std::span<const SceneWindow>,
                                          std::size_t k, ForwardMode&)>;

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

TrainResult run_training(SttModel model, std::span<const SceneWindow> train,
                         std::span<const SceneWindow> val, const TrainConfig& tc,
                         std::size_t obs_min, std::size_t obs_max, std::size_t val_obs,
                         const BatchFn& batch_loss, TrainRunManifest manifest,
                         const EpochCallback& on_epoch) {
  tc.validate();
  if (train.empty()) throw Error(ErrorKind::data, "no training windows");
  const auto start = std::chrono::steady_clock::now();
  const Rng root(tc.seed);
  Rng shuffle = root.stream("shuffle");
  Rng augment = root.stream("augment");
  Rng drop = root.stream("dropout");
  Rng obs = root.stream("obs");

  manifest.train_hash = hash_windows(train);
  manifest.val_hash = val.empty() ? 0 : hash_windows(val);
  manifest.train = tc;

  AdamState adam;
  SttModel best;
  double best_ade = std::numeric_limits<double>::infinity();
  const bool validating = !val.empty() && tc.eval_every > 0;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    const auto batches = batch_windows(train, tc.batch_size, shuffle);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      auto windows = gather_batch(train, batches[b].windows, tc.augment ? &augment : nullptr);
      const std::size_t k = obs_min + obs.below(obs_max - obs_min + 1);
      ForwardMode mode{true, &drop};
      BatchLosses losses = batch_loss(model, windows, k, mode);
      const double value = losses.total.item();
      if (!std::isfinite(value)) {
        throw Error(ErrorKind::numeric, "non-finite loss at epoch " + std::to_string(epoch) +
                                            ", batch " + std::to_string(b));
      }
      zero_grads(model.parameters());
      backward(losses.total);
      clip_grad_norm(model.parameters(), tc.clip_norm);
      adam_step(model.parameters(), adam, tc.lr);
      log.train_loss += value;
      log.l_gt += losses.l_gt;
      log.l_ed += losses.l_ed;
      log.l_dd += losses.l_dd;
    }
    const double nb = static_cast<double>(batches.size());
    log.train_loss /= nb;
    log.l_gt /= nb;
    log.l_ed /= nb;
    log.l_dd /= nb;
    if (validating && (epoch % tc.eval_every == 0 || epoch == tc.epochs)) {
      log.val_ade = evaluate(ModelForecaster(model), val, {val_obs, 1}).ade;
      if (log.val_ade < best_ade) {
        best_ade = log.val_ade;
        best = model.clone();
        manifest.best_epoch = epoch;
        manifest.best_val_ade = log.val_ade;
      }
    }
    log.seconds = seconds_since(epoch_start);
    manifest.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  manifest.wall_seconds = seconds_since(start);
  if (!validating) {
    best = std::move(model);
    manifest.best_epoch = tc.epochs;
  }
  zero_grads(best.parameters());
  manifest.model = best.config();
  return {std::move(best), std::move(manifest)};
}

}  // namespace

TrainResult train_teacher(std::span<const SceneWindow> train, std::span<const SceneWindow> val,
                          const SttConfig& config, const TrainConfig& tc,
                          const EpochCallback& on_epoch) {
  const std::size_t obs_max = tc.obs_max ? tc.obs_max : config.t_obs;
  const std::size_t obs_min = tc.obs_min ? tc.obs_min : obs_max;
  const std::size_t val_obs = tc.val_obs ? tc.val_obs : config.t_obs;
  SttModel model(config, Rng(tc.seed).stream("model").seed());
  const double threshold = config.spatial_threshold;
  BatchFn fn = [threshold](const SttModel& m, std::span<const SceneWindow> windows, std::size_t k,
                           ForwardMode& mode) {
    const ModelInput in = make_input(windows, {k, 1}, threshold);
    const EncoderOutput enc = m.encode(in, mode);
    const DecoderOutput dec = m.decode_teacher_forced(enc, in, mode);
    BatchLosses out;
    out.total = gt_loss(dec, in);
    out.l_gt = out.total.item();
    return out;
  };
  TrainRunManifest manifest;
  manifest.kind = obs_min == obs_max ? "teacher" : "variable";
  manifest.teacher_obs = obs_max;
  return run_training(std::move(model), train, val, tc, obs_min, obs_max, val_obs, fn,
                      std::move(manifest), on_epoch);
}

DistillLosses distill_losses(const SttModel& teacher, const SttModel& student,
                             std::span<const SceneWindow> batch, const DistillConfig& dc,
                             ForwardMode& mode) {
  dc.validate();
  const SttConfig& tcfg = teacher.config();
  SttConfig scfg = student.config();
  scfg.t_obs = tcfg.t_obs;
  if (!(scfg == tcfg)) {
    throw Error(ErrorKind::architecture, "teacher and student architectures differ");
  }
  const std::size_t t = dc.teacher_obs, k = dc.student_obs;
  const ModelInput in_t = make_input(batch, {t, 1}, tcfg.spatial_threshold);
  const ModelInput in_s = make_input(batch, {k, 1}, tcfg.spatial_threshold);
  const std::size_t p = in_s.loss_agents(), len = in_s.pred_len;
  const std::size_t heads = tcfg.heads;

  EncoderOutput enc_t;
  DecoderOutput dec_t;
  {
    NoGradGuard no_grad;
    ForwardMode eval;
    enc_t = teacher.encode(in_t, eval);
    dec_t = teacher.decode_teacher_forced(enc_t, in_t, eval);
  }
  const EncoderOutput enc_s = student.encode(in_s, mode);
  const DecoderOutput dec_s = student.decode_teacher_forced(enc_s, in_s, mode);

  const Tensor h_t = gather_rows(enc_t.states, loss_step_rows(in_t.loss_rows, t));
  const Tensor h_s = gather_rows(enc_s.states, loss_step_rows(in_s.loss_rows, k));
  const Tensor o_t = gather_rows(dec_t.pre_head, loss_step_rows(in_t.loss_rows, len));
  const Tensor o_s = gather_rows(dec_s.pre_head, loss_step_rows(in_s.loss_rows, len));
  const Shape flat{in_t.agents, heads * len * len};
  const Tensor a_t = gather_rows(reshape(dec_t.self_attention, flat), in_t.loss_rows);
  const Tensor a_s = gather_rows(reshape(dec_s.self_attention, {in_s.agents, heads * len * len}),
                                 in_s.loss_rows);

  DistillLosses out;
  out.l_gt = gt_loss(dec_s, in_s);
  out.l_ed = loss_encoder_distill(h_t, h_s, t, k, p);
  out.l_dd = loss_decoder_distill(o_t, o_s, a_t, a_s, p);
  out.total = loss_student_total(out.l_gt, out.l_ed, out.l_dd, dc.alpha, dc.beta, dc.gamma);
  return out;
}

InitialLosses mean_distill_losses(const SttModel& teacher, const SttModel& student,
                                  std::span<const SceneWindow> windows, const DistillConfig& dc,
                                  std::size_t chunk) {
  NoGradGuard no_grad;
  InitialLosses sums;
  double agents = 0.0;
  for (std::size_t begin = 0; begin < windows.size(); begin += chunk) {
    const auto part = windows.subspan(begin, std::min(chunk, windows.size() - begin));
    ForwardMode eval;
    const auto l = distill_losses(teacher, student, part, dc, eval);
    std::size_t p = 0;
    for (const auto& w : part) p += w.loss_agents();
    sums.l_gt += l.l_gt.item() * static_cast<double>(p);
    sums.l_ed += l.l_ed.item() * static_cast<double>(p);
    sums.l_dd += l.l_dd.item() * static_cast<double>(p);
    agents += static_cast<double>(p);
  }
  if (agents > 0.0) {
    sums.l_gt /= agents;
    sums.l_ed /= agents;
    sums.l_dd /= agents;
  }
  return sums;
}

TrainResult distill_student(const SttModel& teacher, std::span<const SceneWindow> train,
                            std::span<const SceneWindow> val, const DistillConfig& dc,
                            const TrainConfig& tc, const EpochCallback& on_epoch) {
  dc.validate();
  if (teacher.config().t_obs != dc.teacher_obs) {
    throw Error(ErrorKind::architecture,
                "teacher was trained with " + std::to_string(teacher.config().t_obs) +
                    " observations, distillation expects " + std::to_string(dc.teacher_obs));
  }
  SttModel student = teacher.clone();
  student.set_native_obs(dc.student_obs);

  TrainRunManifest manifest;
  manifest.kind = "student";
  manifest.alpha = dc.alpha;
  manifest.beta = dc.beta;
  manifest.gamma = dc.gamma;
  manifest.teacher_obs = dc.teacher_obs;
  manifest.student_obs = dc.student_obs;
  manifest.initial = mean_distill_losses(teacher, student, train, dc);

  BatchFn fn = [&teacher, dc](const SttModel& s, std::span<const SceneWindow> windows,
                              std::size_t, ForwardMode& mode) {
    auto l = distill_losses(teacher, s, windows, dc, mode);
    BatchLosses out;
    out.total = l.total;
    out.l_gt = l.l_gt.item();
    out.l_ed = l.l_ed.item();
    out.l_dd = l.l_dd.item();
    return out;
  };
  return run_training(std::move(student), train, val, tc, dc.student_obs, dc.student_obs,
                      dc.student_obs, fn, std::move(manifest), on_epoch);
}

}  // namespace dto
