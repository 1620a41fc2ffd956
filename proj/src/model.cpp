#include "dto/model.hpp"

#include <cmath>
#include <cstring>

#include "dto/error.hpp"
#include "dto/rng.hpp"

namespace dto {

Preset parse_preset(const std::string& name) {
  if (name == "ethucy") return Preset::ethucy;
  if (name == "sdd") return Preset::sdd;
  if (name == "lyft") return Preset::lyft;
  throw Error(ErrorKind::config, "unknown preset '" + name + "' (expected ethucy|sdd|lyft)");
}

std::string to_string(Preset preset) {
  switch (preset) {
    case Preset::ethucy: return "ethucy";
    case Preset::sdd: return "sdd";
    case Preset::lyft: return "lyft";
  }
  return "sdd";
}

void SttConfig::validate() const {
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw Error(ErrorKind::config, "d_model must be a positive multiple of heads");
  }
  if (d_ff == 0 || layers == 0) throw Error(ErrorKind::config, "d_ff and layers must be >= 1");
  if (t_obs < 2 || t_pred < 1) throw Error(ErrorKind::config, "need t_obs >= 2 and t_pred >= 1");
  if (!(spatial_threshold >= 0.0)) throw Error(ErrorKind::config, "spatial threshold must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorKind::config, "dropout must be in [0, 1)");
}

SttConfig SttConfig::preset(Preset p) {
  SttConfig c;
  switch (p) {
    case Preset::ethucy:
      c.d_model = 64;
      c.d_ff = 128;
      c.heads = 8;
      c.layers = 2;
      break;
    case Preset::sdd:
    case Preset::lyft:
      c.d_model = 32;
      c.d_ff = 128;
      c.heads = 8;
      c.layers = 1;
      break;
  }
  return c;
}

TrainPreset TrainPreset::preset(Preset p) {
  switch (p) {
    case Preset::ethucy: return {1e-4, 16};
    case Preset::sdd: return {5e-4, 32};
    case Preset::lyft: return {5e-5, 32};
  }
  return {};
}

std::vector<double> positional_encoding(std::size_t len, std::size_t d_model) {
  std::vector<double> pe(len * d_model);
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model));
      const double angle = static_cast<double>(pos) * freq;
      pe[pos * d_model + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

AttentionResult scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                             std::span<const std::uint8_t> mask) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || k.dim(0) != v.dim(0)) {
    throw Error(ErrorKind::dimension, "attention: shapes " + shape_str(q.shape()) + ", " +
                                          shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const GroupLayout ql{1, q.dim(0), 0, 1};
  const GroupLayout kl{1, k.dim(0), 0, 1};
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Tensor logits = attention_logits(q, k, ql, kl, 1, inv_sqrt);
  Tensor coeffs = softmax_masked(logits, mask);
  Tensor out = attention_apply(coeffs, v, ql, kl, 1, q.dim(0));
  return {out, coeffs};
}

AttentionResult multi_head_attention(const Tensor& queries, const Tensor& keys_values,
                                     const AttentionWeights& w, const GroupLayout& ql,
                                     const GroupLayout& kl, std::size_t heads,
                                     std::span<const std::uint8_t> mask, double dropout_rate,
                                     ForwardMode& mode) {
  const std::size_t d = queries.dim(1);
  if (d % heads != 0) throw Error(ErrorKind::dimension, "attention width not divisible by heads");
  Tensor q = add_bias(matmul(queries, w.wq), w.bq);
  Tensor k = add_bias(matmul(keys_values, w.wk), w.bk);
  Tensor v = add_bias(matmul(keys_values, w.wv), w.bv);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d / heads));
  std::vector<std::uint8_t> expanded;
  if (!mask.empty()) {
    const std::size_t per_group = ql.length * kl.length;
    if (mask.size() != ql.groups * per_group) {
      throw Error(ErrorKind::dimension, "attention mask size mismatch");
    }
    expanded.resize(ql.groups * heads * per_group);
    for (std::size_t g = 0; g < ql.groups; ++g)
      for (std::size_t h = 0; h < heads; ++h)
        std::memcpy(expanded.data() + (g * heads + h) * per_group, mask.data() + g * per_group,
                    per_group);
  }
  Tensor logits = attention_logits(q, k, ql, kl, heads, inv_sqrt, expanded);
  Tensor coeffs = softmax_masked(logits, expanded);
  Tensor used = coeffs;
  if (mode.training && dropout_rate > 0.0) used = dropout(coeffs, dropout_rate, *mode.rng);
  Tensor mixed = attention_apply(used, v, ql, kl, heads, queries.dim(0), expanded);
  Tensor out = add_bias(matmul(mixed, w.wo), w.bo);
  return {out, coeffs};
}

namespace {

void push_attention(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix,
                    std::size_t d) {
  for (const char* m : {"wq", "wk", "wv", "wo"}) {
    out.emplace_back(prefix + "." + m, Shape{d, d});
    out.emplace_back(prefix + ".b" + std::string(m + 1), Shape{d});
  }
}

void push_norm(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix,
               std::size_t d) {
  out.emplace_back(prefix + ".gain", Shape{d});
  out.emplace_back(prefix + ".bias", Shape{d});
}

void push_ffn(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix,
              std::size_t d, std::size_t d_ff) {
  out.emplace_back(prefix + ".w1", Shape{d, d_ff});
  out.emplace_back(prefix + ".b1", Shape{d_ff});
  out.emplace_back(prefix + ".w2", Shape{d_ff, d});
  out.emplace_back(prefix + ".b2", Shape{d});
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Temporal rows: group = agent, item = step.
GroupLayout temporal_layout(std::size_t agents, std::size_t steps) {
  return {agents, steps, steps, 1};
}

// Spatial rows: group = step, item = agent.
GroupLayout spatial_layout(std::size_t agents, std::size_t steps) {
  return {steps, agents, 1, steps};
}

Tensor embed_positions(const Tensor& w, const Tensor& b, std::span<const double> xy,
                       std::size_t rows, std::size_t steps, std::size_t d) {
  Tensor coords = Tensor::from({rows, 2}, std::vector<double>(xy.begin(), xy.end()));
  Tensor emb = add_bias(matmul(coords, w), b);
  const auto pe = positional_encoding(steps, d);
  std::vector<double> tiled(rows * d);
  for (std::size_t r = 0; r < rows; ++r)
    std::memcpy(tiled.data() + r * d, pe.data() + (r % steps) * d, d * sizeof(double));
  return add(emb, Tensor::from({rows, d}, std::move(tiled)));
}

}  // namespace

std::vector<std::pair<std::string, Shape>> SttModel::parameter_layout(const SttConfig& c) {
  std::vector<std::pair<std::string, Shape>> out;
  const std::size_t d = c.d_model;
  out.emplace_back("enc.embed.w", Shape{2, d});
  out.emplace_back("enc.embed.b", Shape{d});
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    push_attention(out, pre + ".temporal", d);
    push_norm(out, pre + ".temporal_norm", d);
    push_attention(out, pre + ".spatial", d);
    push_norm(out, pre + ".spatial_norm", d);
    push_ffn(out, pre + ".ffn", d, c.d_ff);
    push_norm(out, pre + ".ffn_norm", d);
  }
  out.emplace_back("dec.embed.w", Shape{2, d});
  out.emplace_back("dec.embed.b", Shape{d});
  out.emplace_back("dec.start_token", Shape{1, d});
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    push_attention(out, pre + ".self", d);
    push_norm(out, pre + ".self_norm", d);
    push_attention(out, pre + ".spatial", d);
    push_norm(out, pre + ".spatial_norm", d);
    push_attention(out, pre + ".cross", d);
    push_norm(out, pre + ".cross_norm", d);
    push_ffn(out, pre + ".ffn", d, c.d_ff);
    push_norm(out, pre + ".ffn_norm", d);
  }
  out.emplace_back("head.w", Shape{d, 2});
  out.emplace_back("head.b", Shape{2});
  return out;
}

SttModel::SttModel(const SttConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  build(seed);
}

void SttModel::build(std::uint64_t seed) {
  Rng root(seed);
  Rng init = root.stream("init");
  std::size_t i = 0;
  for (auto& [name, shape] : parameter_layout(config_)) {
    Tensor t;
    if (shape.size() == 2) {
      t = xavier_init(shape, init.stream(i).seed());
    } else if (ends_with(name, ".gain")) {
      t = Tensor::parameter(shape, std::vector<double>(numel_of(shape), 1.0));
    } else {
      t = Tensor::parameter(shape, std::vector<double>(numel_of(shape), 0.0));
    }
    index_[name] = params_.size();
    params_.push_back({name, std::move(t)});
    ++i;
  }
}

void SttModel::set_native_obs(std::size_t t_obs) {
  if (t_obs < 2) throw Error(ErrorKind::config, "native observation count must be >= 2");
  config_.t_obs = t_obs;
}

const Tensor& SttModel::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::architecture, "model has no parameter " + name);
  return params_[it->second].tensor;
}

SttModel SttModel::clone() const {
  SttModel copy;
  copy.config_ = config_;
  copy.index_ = index_;
  for (const auto& p : params_) {
    const auto v = p.tensor.values();
    copy.params_.push_back(
        {p.name, Tensor::parameter(p.tensor.shape(), std::vector<double>(v.begin(), v.end()))});
  }
  return copy;
}

std::uint64_t SttModel::parameter_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : params_) {
    feed(p.name.data(), p.name.size());
    feed(p.tensor.values().data(), p.tensor.numel() * sizeof(double));
  }
  return h;
}

std::size_t SttModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

AttentionWeights SttModel::attention(const std::string& prefix) const {
  return {p(prefix + ".wq"), p(prefix + ".bq"), p(prefix + ".wk"), p(prefix + ".bk"),
          p(prefix + ".wv"), p(prefix + ".bv"), p(prefix + ".wo"), p(prefix + ".bo")};
}

Tensor SttModel::norm(const Tensor& x, const std::string& prefix) const {
  return layer_norm(x, p(prefix + ".gain"), p(prefix + ".bias"));
}

Tensor SttModel::feed_forward(const Tensor& x, const std::string& prefix,
                              ForwardMode& mode) const {
  Tensor hidden = relu(add_bias(matmul(x, p(prefix + ".w1")), p(prefix + ".b1")));
  if (mode.training && config_.dropout > 0.0) hidden = dropout(hidden, config_.dropout, *mode.rng);
  return add_bias(matmul(hidden, p(prefix + ".w2")), p(prefix + ".b2"));
}

EncoderOutput SttModel::encode(const ModelInput& in, ForwardMode& mode) const {
  const std::size_t n = in.agents, steps = in.obs_len, d = config_.d_model;
  if (steps < 2) throw Error(ErrorKind::data, "encoder needs at least 2 observations");
  if (mode.training && config_.dropout > 0.0 && mode.rng == nullptr) {
    throw Error(ErrorKind::config, "training forward pass needs a dropout rng");
  }
  Tensor x = embed_positions(p("enc.embed.w"), p("enc.embed.b"), in.obs, n * steps, steps, d);

  // Absent steps are hidden as keys; every query keeps itself.
  std::vector<std::uint8_t> temporal_mask(n * steps * steps);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t i = 0; i < steps; ++i)
      for (std::size_t j = 0; j < steps; ++j)
        temporal_mask[(a * steps + i) * steps + j] = (in.obs_present[a * steps + j] || i == j);

  std::vector<std::uint8_t> spatial_mask(steps * n * n);
  for (std::size_t t = 0; t < steps; ++t)
    std::memcpy(spatial_mask.data() + t * n * n, in.obs_masks[t].data(), n * n);

  const auto tl = temporal_layout(n, steps);
  const auto sl = spatial_layout(n, steps);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    auto temporal = multi_head_attention(x, x, attention(pre + ".temporal"), tl, tl,
                                         config_.heads, temporal_mask, config_.dropout, mode);
    x = norm(add(x, temporal.output), pre + ".temporal_norm");
    auto spatial = multi_head_attention(x, x, attention(pre + ".spatial"), sl, sl, config_.heads,
                                        spatial_mask, config_.dropout, mode);
    x = norm(add(x, spatial.output), pre + ".spatial_norm");
    x = norm(add(x, feed_forward(x, pre + ".ffn", mode)), pre + ".ffn_norm");
  }
  return {x, n, steps};
}

DecoderOutput SttModel::decode(const EncoderOutput& enc, const ModelInput& in,
                               std::span<const double> inputs, std::size_t len,
                               ForwardMode& mode) const {
  const std::size_t n = in.agents, d = config_.d_model;
  if (len == 0) throw Error(ErrorKind::dimension, "decoder needs at least the start token");
  if (inputs.size() < n * (len - 1) * 2) {
    throw Error(ErrorKind::dimension, "decoder inputs shorter than requested length");
  }

  // Rows of [start_token; embedded inputs] gathered into agent-major order.
  std::vector<Tensor> table_parts{p("dec.start_token")};
  if (len > 1) {
    std::vector<double> xy(n * (len - 1) * 2);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t t = 0; t + 1 < len; ++t)
        for (std::size_t c = 0; c < 2; ++c)
          xy[(a * (len - 1) + t) * 2 + c] = inputs[(a * (len - 1) + t) * 2 + c];
    Tensor coords = Tensor::from({n * (len - 1), 2}, std::move(xy));
    table_parts.push_back(add_bias(matmul(coords, p("dec.embed.w")), p("dec.embed.b")));
  }
  Tensor table = table_parts.size() == 1 ? table_parts[0] : concat_rows(table_parts);
  std::vector<std::size_t> rows(n * len);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t t = 0; t < len; ++t) rows[a * len + t] = t == 0 ? 0 : 1 + a * (len - 1) + t - 1;
  Tensor y = gather_rows(table, rows);
  {
    const auto pe = positional_encoding(len, d);
    std::vector<double> tiled(n * len * d);
    for (std::size_t r = 0; r < n * len; ++r)
      std::memcpy(tiled.data() + r * d, pe.data() + (r % len) * d, d * sizeof(double));
    y = add(y, Tensor::from({n * len, d}, std::move(tiled)));
  }

  std::vector<std::uint8_t> causal(n * len * len);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < len; ++j) causal[(a * len + i) * len + j] = j <= i;

  std::vector<std::uint8_t> spatial_mask(len * n * n);
  for (std::size_t t = 0; t < len; ++t)
    std::memcpy(spatial_mask.data() + t * n * n, in.decoder_mask.data(), n * n);

  const std::size_t enc_steps = enc.steps;
  std::vector<std::uint8_t> cross_mask(n * len * enc_steps);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < enc_steps; ++j)
        cross_mask[(a * len + i) * enc_steps + j] = in.obs_present[a * enc_steps + j];

  const auto tl = temporal_layout(n, len);
  const auto sl = spatial_layout(n, len);
  const auto el = temporal_layout(n, enc_steps);
  DecoderOutput out;
  out.len = len;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    auto self = multi_head_attention(y, y, attention(pre + ".self"), tl, tl, config_.heads, causal,
                                     config_.dropout, mode);
    y = norm(add(y, self.output), pre + ".self_norm");
    auto spatial = multi_head_attention(y, y, attention(pre + ".spatial"), sl, sl, config_.heads,
                                        spatial_mask, config_.dropout, mode);
    y = norm(add(y, spatial.output), pre + ".spatial_norm");
    auto cross = multi_head_attention(y, enc.states, attention(pre + ".cross"), tl, el,
                                      config_.heads, cross_mask, config_.dropout, mode);
    y = norm(add(y, cross.output), pre + ".cross_norm");
    y = norm(add(y, feed_forward(y, pre + ".ffn", mode)), pre + ".ffn_norm");
    out.self_attention = self.coeffs;
    out.cross_attention = cross.coeffs;
  }
  out.pre_head = y;
  out.predictions = add_bias(matmul(y, p("head.w")), p("head.b"));
  return out;
}

DecoderOutput SttModel::decode_teacher_forced(const EncoderOutput& enc, const ModelInput& in,
                                              ForwardMode& mode) const {
  const std::size_t n = in.agents, len = in.pred_len;
  std::vector<double> shifted(n * (len - 1) * 2);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t t = 0; t + 1 < len; ++t)
      for (std::size_t c = 0; c < 2; ++c)
        shifted[(a * (len - 1) + t) * 2 + c] = in.future[(a * len + t) * 2 + c];
  return decode(enc, in, shifted, len, mode);
}

std::vector<double> SttModel::decode_autoregressive(const EncoderOutput& enc, const ModelInput& in,
                                                    Tensor* cross_attention) const {
  NoGradGuard no_grad;
  ForwardMode eval;
  const std::size_t n = in.agents, horizon = in.pred_len;
  std::vector<double> preds(n * horizon * 2, 0.0);
  std::vector<double> fed;
  for (std::size_t step = 1; step <= horizon; ++step) {
    // inputs for a decoder of length `step`: the step-1 predictions so far
    fed.assign(n * (step - 1) * 2, 0.0);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t t = 0; t + 1 < step; ++t)
        for (std::size_t c = 0; c < 2; ++c)
          fed[(a * (step - 1) + t) * 2 + c] = preds[(a * horizon + t) * 2 + c];
    DecoderOutput out = decode(enc, in, fed, step, eval);
    const auto v = out.predictions.values();
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t c = 0; c < 2; ++c)
        preds[(a * horizon + step - 1) * 2 + c] = v[(a * step + step - 1) * 2 + c];
    if (step == horizon && cross_attention) *cross_attention = out.cross_attention;
  }
  return preds;
}

std::vector<double> SttModel::predict(const ModelInput& in) const {
  NoGradGuard no_grad;
  ForwardMode eval;
  EncoderOutput enc = encode(in, eval);
  return decode_autoregressive(enc, in);
}

}  // namespace dto
