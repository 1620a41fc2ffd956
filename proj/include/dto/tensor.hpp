#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dto {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the dynamic differentiation graph. Values are row-major f64;
// `grad` is allocated on first use and always has the same length as `value`.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Handle to a node of the differentiation graph. Copies share the node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  /// Leaf tensor that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t numel() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat) const { return values()[flat]; }

  /// Gradient buffer; allocated as zeros on first access.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  bool has_grad() const;
  void zero_grad();

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  /// Fresh leaf with copied values and no history.
  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Reverse sweep from a scalar loss. Calling it twice on the same loss throws.
void backward(const Tensor& loss);

// Differentiable primitives. Matrices are rank-2 tensors; ops documented as
// "row-wise" treat the last axis as the row and all leading axes as rows.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// a[m, n] + bias[n] broadcast over rows.
Tensor add_bias(const Tensor& a, const Tensor& bias);
Tensor relu(const Tensor& a);
/// x^2 elementwise.
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);

/// Row-wise softmax. `mask` is empty (nothing masked) or holds one flag per
/// element, nonzero meaning "keep". Masked entries come out exactly 0.
Tensor softmax_masked(const Tensor& logits, std::span<const std::uint8_t> mask);

/// Row-wise normalization to zero mean and unit variance, then gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

/// (1/divisor) * sum((a - b)^2).
Tensor mse(const Tensor& a, const Tensor& b, double divisor);

/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng);

Tensor reshape(const Tensor& x, Shape shape);
/// Concatenate along axis 0; trailing dimensions must agree.
Tensor concat_rows(const std::vector<Tensor>& parts);
/// Rows [begin, end) along axis 0.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
/// Rows of `table` picked by index along axis 0 (embedding lookup).
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);

/// How attention groups map onto rows of a [rows, d_model] activation matrix:
/// element i of group g lives at row g * group_stride + i * item_stride.
struct GroupLayout {
  std::size_t groups = 0;
  std::size_t length = 0;
  std::size_t group_stride = 0;
  std::size_t item_stride = 0;

  std::size_t row(std::size_t g, std::size_t i) const {
    return g * group_stride + i * item_stride;
  }
};

/// Per-head scaled dot products: out[g, head, i, j] = scale * <q_i, k_j>
/// restricted to the head's slice of the feature axis. When `mask` (one flag
/// per output entry) is given, masked entries are left at 0 and get no gradient.
Tensor attention_logits(const Tensor& q, const Tensor& k,
                        const GroupLayout& q_layout,
                        const GroupLayout& k_layout, std::size_t heads,
                        double scale, std::span<const std::uint8_t> mask = {});

/// Weighted sums of value rows: out[row(g, i), head slice] =
/// sum_j coeffs[g, head, i, j] * v[row(g, j), head slice]. The output has as
/// many rows as `q_rows`. Entries flagged 0 in `mask` are treated as
/// structural zeros: they are skipped and receive no gradient.
Tensor attention_apply(const Tensor& coeffs, const Tensor& v,
                       const GroupLayout& q_layout,
                       const GroupLayout& v_layout, std::size_t heads,
                       std::size_t q_rows, std::span<const std::uint8_t> mask = {});

}  // namespace dto
