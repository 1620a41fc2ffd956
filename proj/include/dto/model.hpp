#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dto/batch.hpp"
#include "dto/optim.hpp"
#include "dto/tensor.hpp"

namespace dto {

class Rng;

enum class Preset { ethucy, sdd, lyft };

Preset parse_preset(const std::string& name);
std::string to_string(Preset preset);

struct SttConfig {
  std::size_t d_model = 32;
  std::size_t d_ff = 128;
  std::size_t heads = 8;
  std::size_t layers = 1;
  std::size_t t_obs = 8;
  std::size_t t_pred = 12;
  double spatial_threshold = 5.0;  // metres
  double dropout = 0.1;

  std::size_t d_head() const { return d_model / heads; }
  void validate() const;
  static SttConfig preset(Preset p);

  friend bool operator==(const SttConfig&, const SttConfig&) = default;
};

/// Optimizer defaults that go with each architecture preset.
struct TrainPreset {
  double lr = 5e-4;
  std::size_t batch_size = 32;
  static TrainPreset preset(Preset p);
};

struct ForwardMode {
  bool training = false;
  Rng* rng = nullptr;  // dropout source, required when training with dropout > 0
};

struct AttentionResult {
  Tensor output;  // [rows, d_model]
  Tensor coeffs;  // [groups, heads, q_len, k_len], before dropout
};

/// softmax(Q K^T / sqrt(d_k), mask) V for one query/key set; `mask` is empty
/// or holds q_rows * k_rows keep-flags.
AttentionResult scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                             std::span<const std::uint8_t> mask);

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

/// h heads of width d_model / h over grouped rows, concatenated and projected
/// by W_O. `mask` has groups * q_len * k_len flags shared by all heads, or is
/// empty.
AttentionResult multi_head_attention(const Tensor& queries, const Tensor& keys_values,
                                     const AttentionWeights& w, const GroupLayout& q_layout,
                                     const GroupLayout& kv_layout, std::size_t heads,
                                     std::span<const std::uint8_t> mask, double dropout,
                                     ForwardMode& mode);

struct EncoderOutput {
  Tensor states;  // [agents * steps, d_model], agent-major
  std::size_t agents = 0;
  std::size_t steps = 0;
};

struct DecoderOutput {
  Tensor predictions;  // [agents * len, 2], normalized frame
  Tensor pre_head;  // o: [agents * len, d_model]
  Tensor self_attention;  // A: [agents, heads, len, len], last decoder layer
  Tensor cross_attention;  // [agents, heads, len, enc_steps], last decoder layer
  std::size_t len = 0;
};

/// Spatio-temporal transformer: encoder and decoder stacks of temporal,
/// spatial (and, in the decoder, cross) attention with post-norm residuals.
class SttModel {
 public:
  SttModel() = default;
  SttModel(const SttConfig& config, std::uint64_t seed);

  const SttConfig& config() const { return config_; }
  /// Changes the recorded native observation count; parameters do not depend on it.
  void set_native_obs(std::size_t t_obs);
  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  const Tensor& param(const std::string& name) const;
  /// Shapes every parameter must have for `config`, in registration order.
  static std::vector<std::pair<std::string, Shape>> parameter_layout(const SttConfig& config);

  /// Deep copy with independent parameter storage.
  SttModel clone() const;
  std::uint64_t parameter_hash() const;
  std::size_t parameter_count() const;

  EncoderOutput encode(const ModelInput& in, ForwardMode& mode) const;

  /// Runs the decoder on `len` inputs per agent: the start token followed by
  /// the first len - 1 rows of `inputs` (agents * (len - 1) * 2, normalized).
  DecoderOutput decode(const EncoderOutput& enc, const ModelInput& in,
                       std::span<const double> inputs, std::size_t len, ForwardMode& mode) const;

  /// Decoder fed with the ground-truth future shifted right by the start token.
  DecoderOutput decode_teacher_forced(const EncoderOutput& enc, const ModelInput& in,
                                      ForwardMode& mode) const;

  /// Feeds back its own predictions for in.pred_len steps. Returns
  /// agents * pred_len * 2 values in the normalized frame; when
  /// `cross_attention` is given it receives the last layer's cross-attention
  /// coefficients of the final pass.
  std::vector<double> decode_autoregressive(const EncoderOutput& enc, const ModelInput& in,
                                            Tensor* cross_attention = nullptr) const;

  /// Encode + autoregressive decode with gradients disabled.
  std::vector<double> predict(const ModelInput& in) const;

 private:
  void build(std::uint64_t seed);
  const Tensor& p(const std::string& name) const { return param(name); }
  AttentionWeights attention(const std::string& prefix) const;
  Tensor feed_forward(const Tensor& x, const std::string& prefix, ForwardMode& mode) const;
  Tensor norm(const Tensor& x, const std::string& prefix) const;

  SttConfig config_;
  std::vector<NamedTensor> params_;
  std::map<std::string, std::size_t> index_;
};

/// Row-major [len, d_model] sinusoidal positional encodings.
std::vector<double> positional_encoding(std::size_t len, std::size_t d_model);

}  // namespace dto
