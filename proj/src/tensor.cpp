#include "dto/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "dto/error.hpp"
#include "dto/rng.hpp"

#include <Eigen/Core>

namespace dto {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
}  // namespace

namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr new_node(Shape shape, std::vector<double> value) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  return node;
}

// Wraps a freshly computed value into a graph node. The backward closure and
// parent links are only kept when some parent needs a gradient.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<NodePtr> parents,
                   std::function<void(detail::Node&)> bw) {
  auto node = new_node(std::move(shape), std::move(value));
  if (g_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr& p) { return p->requires_grad; });
    if (any) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward = std::move(bw);
    }
  }
  return Tensor(std::move(node));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::dimension, std::string(op) + ": shape mismatch " +
                                          shape_str(a.shape()) + " vs " +
                                          shape_str(b.shape()));
  }
}

std::size_t row_length(const Tensor& t) {
  if (t.rank() == 0) return 1;
  return t.shape().back();
}

}  // namespace

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = numel_of(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (numel_of(shape) != values.size()) {
    throw Error(ErrorKind::dimension,
                "tensor shape " + shape_str(shape) + " does not hold " +
                    std::to_string(values.size()) + " values");
  }
  return Tensor(new_node(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }
std::span<const double> Tensor::values() const { return node_->value; }
std::span<double> Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) {
    throw Error(ErrorKind::dimension,
                "item() on tensor of shape " + shape_str(shape()));
  }
  return node_->value[0];
}

std::span<const double> Tensor::grad() const { return node_->ensure_grad(); }
std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }
bool Tensor::has_grad() const { return node_->grad.size() == node_->value.size(); }

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }

Tensor Tensor::detach() const { return from(shape(), node_->value); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw Error(ErrorKind::dimension,
                "backward needs a scalar loss, got shape " +
                    (loss.defined() ? shape_str(loss.shape()) : "<undefined>"));
  }
  detail::Node* root = loss.node();
  if (root->backward_done) {
    throw Error(ErrorKind::tape, "backward already ran on this tape");
  }
  root->backward_done = true;
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) node->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw Error(ErrorKind::dimension, "matmul: incompatible shapes " +
                                          shape_str(a.shape()) + " and " +
                                          shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  // Eigen picks a different micro-kernel for the trailing rows of a panel, so
  // a row's result would depend on how many rows share the product. Padding
  // to whole panels keeps every row on the same kernel.
  constexpr std::size_t mr = Eigen::internal::gebp_traits<double, double>::mr;
  const std::size_t mp = (m + mr - 1) / mr * mr;
  std::vector<double> out(mp * n);
  if (mp == m) {
    MatMap(out.data(), m, n).noalias() = CMatMap(a.values().data(), m, k) * CMatMap(b.values().data(), k, n);
  } else {
    std::vector<double> lhs(mp * k, 0.0);
    std::copy(a.values().begin(), a.values().end(), lhs.begin());
    MatMap(out.data(), mp, n).noalias() = CMatMap(lhs.data(), mp, k) * CMatMap(b.values().data(), k, n);
    out.resize(m * n);
  }
  return make_result({m, n}, std::move(out), {a.node_ptr(), b.node_ptr()},
                     [m, k, n](detail::Node& self) {
                       auto& pa = *self.parents[0];
                       auto& pb = *self.parents[1];
                       const CMatMap g(self.grad.data(), m, n);
                       if (pa.requires_grad) {
                         MatMap(pa.ensure_grad().data(), m, k).noalias() +=
                             g * CMatMap(pb.value.data(), k, n).transpose();
                       }
                       if (pb.requires_grad) {
                         MatMap(pb.ensure_grad().data(), k, n).noalias() +=
                             CMatMap(pa.value.data(), m, k).transpose() * g;
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_result(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                     [](detail::Node& self) {
                       for (auto& parent : self.parents) {
                         if (!parent->requires_grad) continue;
                         auto& g = parent->ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_result(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                     [](detail::Node& self) {
                       for (std::size_t p = 0; p < 2; ++p) {
                         auto& parent = self.parents[p];
                         if (!parent->requires_grad) continue;
                         const double sign = p == 0 ? 1.0 : -1.0;
                         auto& g = parent->ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_result(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                     [](detail::Node& self) {
                       auto& pa = *self.parents[0];
                       auto& pb = *self.parents[1];
                       if (pa.requires_grad) {
                         auto& g = pa.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
                       }
                       if (pb.requires_grad) {
                         auto& g = pb.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
                       }
                     });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * factor;
  return make_result(a.shape(), std::move(out), {a.node_ptr()},
                     [factor](detail::Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
                     });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (a.rank() != 2 || bias.numel() != a.dim(1)) {
    throw Error(ErrorKind::dimension, "add_bias: shapes " + shape_str(a.shape()) +
                                          " and " + shape_str(bias.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = bias.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return make_result(a.shape(), std::move(out), {a.node_ptr(), bias.node_ptr()},
                     [m, n](detail::Node& self) {
                       auto& pa = *self.parents[0];
                       auto& pb = *self.parents[1];
                       if (pa.requires_grad) {
                         auto& g = pa.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                       if (pb.requires_grad) {
                         auto& g = pb.ensure_grad();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
                       }
                     });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) > 0.0 ? a.at(i) : 0.0;
  return make_result(a.shape(), std::move(out), {a.node_ptr()},
                     [](detail::Node& self) {
                       auto& parent = *self.parents[0];
                       auto& g = parent.ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         if (parent.value[i] > 0.0) g[i] += self.grad[i];
                     });
}

Tensor square(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * a.at(i);
  return make_result(a.shape(), std::move(out), {a.node_ptr()},
                     [](detail::Node& self) {
                       auto& parent = *self.parents[0];
                       auto& g = parent.ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += 2.0 * parent.value[i] * self.grad[i];
                     });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return make_result({}, {total}, {a.node_ptr()}, [](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& x : g) x += self.grad[0];
  });
}

Tensor softmax_masked(const Tensor& logits, std::span<const std::uint8_t> mask) {
  const std::size_t n = row_length(logits);
  const std::size_t total = logits.numel();
  if (!mask.empty() && mask.size() != total) {
    throw Error(ErrorKind::dimension,
                "softmax_masked: mask holds " + std::to_string(mask.size()) +
                    " flags for logits of shape " + shape_str(logits.shape()));
  }
  const std::size_t rows = n == 0 ? 0 : total / n;
  const auto x = logits.values();
  std::vector<double> out(total, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * n;
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask.empty() || mask[base + j]) {
        any = true;
        // NaN wins so that it reaches the loss instead of vanishing here
        mx = std::isnan(x[base + j]) || std::isnan(mx) ? std::numeric_limits<double>::quiet_NaN()
                                                       : std::max(mx, x[base + j]);
      }
    }
    if (!any) {
      throw Error(ErrorKind::numeric,
                  "softmax_masked: row " + std::to_string(r) + " is fully masked");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask.empty() || mask[base + j]) {
        out[base + j] = std::exp(x[base + j] - mx);
        z += out[base + j];
      }
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < n; ++j) out[base + j] *= inv;
  }
  return make_result(logits.shape(), std::move(out), {logits.node_ptr()},
                     [rows, n](detail::Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       const auto& y = self.value;
                       for (std::size_t r = 0; r < rows; ++r) {
                         const std::size_t base = r * n;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j) dot += y[base + j] * self.grad[base + j];
                         for (std::size_t j = 0; j < n; ++j)
                           g[base + j] += y[base + j] * (self.grad[base + j] - dot);
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t n = row_length(x);
  if (gain.numel() != n || bias.numel() != n) {
    throw Error(ErrorKind::dimension, "layer_norm: gain/bias length must equal " +
                                          std::to_string(n));
  }
  const std::size_t rows = x.numel() / n;
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xv[base + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xv[base + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xv[base + j] - mean) * inv;
      (*xhat)[base + j] = h;
      out[base + j] = gv[j] * h + bv[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
      [rows, n, xhat, inv_std](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& h = *xhat;
        if (pg.requires_grad) {
          auto& g = pg.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j] * h[r * n + j];
        }
        if (pb.requires_grad) {
          auto& g = pb.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
        }
        if (px.requires_grad) {
          auto& g = px.ensure_grad();
          const double nn = static_cast<double>(n);
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t base = r * n;
            double sum_d = 0.0, sum_dh = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = self.grad[base + j] * pg.value[j];
              sum_d += d;
              sum_dh += d * h[base + j];
            }
            const double k = (*inv_std)[r] / nn;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = self.grad[base + j] * pg.value[j];
              g[base + j] += k * (nn * d - sum_d - h[base + j] * sum_dh);
            }
          }
        }
      });
}

Tensor mse(const Tensor& a, const Tensor& b, double divisor) {
  require_same_shape(a, b, "mse");
  if (!(divisor > 0.0)) {
    throw Error(ErrorKind::numeric, "mse: divisor must be positive");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a.at(i) - b.at(i);
    total += d * d;
  }
  return make_result({}, {total / divisor}, {a.node_ptr(), b.node_ptr()},
                     [divisor](detail::Node& self) {
                       auto& pa = *self.parents[0];
                       auto& pb = *self.parents[1];
                       const double k = 2.0 * self.grad[0] / divisor;
                       if (pa.requires_grad) {
                         auto& g = pa.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * (pa.value[i] - pb.value[i]);
                       }
                       if (pb.requires_grad) {
                         auto& g = pb.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] -= k * (pa.value[i] - pb.value[i]);
                       }
                     });
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw Error(ErrorKind::config, "dropout rate must be below 1");
  const double keep_scale = 1.0 / (1.0 - p);
  auto factors = std::make_shared<std::vector<double>>(x.numel(), keep_scale);
  std::vector<double> out(x.numel(), 0.0);
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    // exact zeros (masked attention, dead units) are kept without a draw
    if (xv[i] == 0.0) continue;
    if (rng.uniform() < p) (*factors)[i] = 0.0;
    out[i] = xv[i] * (*factors)[i];
  }
  return make_result(x.shape(), std::move(out), {x.node_ptr()},
                     [factors](detail::Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*factors)[i];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw Error(ErrorKind::dimension, "reshape: " + shape_str(x.shape()) + " -> " +
                                          shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {x.node_ptr()},
                     [](detail::Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                     });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error(ErrorKind::dimension, "concat_rows: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    if (p.rank() == 0 || Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
      throw Error(ErrorKind::dimension, "concat_rows: incompatible shape " +
                                            shape_str(p.shape()));
    }
    rows += p.dim(0);
    parents.push_back(p.node_ptr());
  }
  std::vector<double> out;
  out.reserve(rows * numel_of(tail));
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  Shape shape = tail;
  shape.insert(shape.begin(), rows);
  return make_result(std::move(shape), std::move(out), std::move(parents),
                     [](detail::Node& self) {
                       std::size_t offset = 0;
                       for (auto& parent : self.parents) {
                         const std::size_t n = parent->value.size();
                         if (parent->requires_grad) {
                           auto& g = parent->ensure_grad();
                           for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
                         }
                         offset += n;
                       }
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin > end || end > x.dim(0)) {
    throw Error(ErrorKind::dimension, "slice_rows: [" + std::to_string(begin) + ", " +
                                          std::to_string(end) + ") out of " +
                                          shape_str(x.shape()));
  }
  const std::size_t width = x.numel() / x.dim(0);
  std::vector<double> out(x.values().begin() + begin * width,
                          x.values().begin() + end * width);
  Shape shape = x.shape();
  shape[0] = end - begin;
  return make_result(std::move(shape), std::move(out), {x.node_ptr()},
                     [offset = begin * width](detail::Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
                     });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
  if (table.rank() == 0) throw Error(ErrorKind::dimension, "gather_rows: scalar table");
  const std::size_t width = table.numel() / table.dim(0);
  std::vector<double> out(rows.size() * width);
  const auto tv = table.values();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= table.dim(0)) {
      throw Error(ErrorKind::dimension, "gather_rows: index " + std::to_string(rows[r]) +
                                            " out of " + shape_str(table.shape()));
    }
    std::copy_n(tv.begin() + rows[r] * width, width, out.begin() + r * width);
  }
  Shape shape = table.shape();
  shape[0] = rows.size();
  auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  return make_result(std::move(shape), std::move(out), {table.node_ptr()},
                     [idx, width](detail::Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t r = 0; r < idx->size(); ++r)
                         for (std::size_t j = 0; j < width; ++j)
                           g[(*idx)[r] * width + j] += self.grad[r * width + j];
                     });
}

}  // namespace dto
