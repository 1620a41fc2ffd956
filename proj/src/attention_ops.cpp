#include <string>

#include "dto/error.hpp"
#include "dto/tensor.hpp"

namespace dto {

namespace {

void check_layouts(const Tensor& a, const Tensor& b, const GroupLayout& la,
                   const GroupLayout& lb, std::size_t heads, const char* op) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw Error(ErrorKind::dimension, std::string(op) + ": feature shapes " +
                                          shape_str(a.shape()) + " and " +
                                          shape_str(b.shape()));
  }
  if (heads == 0 || a.dim(1) % heads != 0) {
    throw Error(ErrorKind::dimension, std::string(op) + ": width " +
                                          std::to_string(a.dim(1)) +
                                          " not divisible by " + std::to_string(heads) +
                                          " heads");
  }
  if (la.groups != lb.groups) {
    throw Error(ErrorKind::dimension, std::string(op) + ": group count mismatch");
  }
  if (la.groups && la.length && la.row(la.groups - 1, la.length - 1) >= a.dim(0)) {
    throw Error(ErrorKind::dimension, std::string(op) + ": query layout exceeds rows");
  }
  if (lb.groups && lb.length && lb.row(lb.groups - 1, lb.length - 1) >= b.dim(0)) {
    throw Error(ErrorKind::dimension, std::string(op) + ": key layout exceeds rows");
  }
}

}  // namespace

Tensor attention_logits(const Tensor& q, const Tensor& k, const GroupLayout& ql,
                        const GroupLayout& kl, std::size_t heads, double scale,
                        std::span<const std::uint8_t> mask) {
  check_layouts(q, k, ql, kl, heads, "attention_logits");
  if (!mask.empty() && mask.size() != ql.groups * heads * ql.length * kl.length) {
    throw Error(ErrorKind::dimension, "attention_logits: mask size mismatch");
  }
  const std::size_t d = q.dim(1);
  const std::size_t dk = d / heads;
  const std::size_t G = ql.groups, Lq = ql.length, Lk = kl.length;
  std::vector<double> out(G * heads * Lq * Lk, 0.0);
  const double* qv = q.values().data();
  const double* kv = k.values().data();
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < Lq; ++i) {
        const double* qrow = qv + ql.row(g, i) * d + h * dk;
        double* orow = out.data() + ((g * heads + h) * Lq + i) * Lk;
        const std::uint8_t* mrow = mask.empty() ? nullptr : mask.data() + (orow - out.data());
        for (std::size_t j = 0; j < Lk; ++j) {
          if (mrow && !mrow[j]) continue;
          const double* krow = kv + kl.row(g, j) * d + h * dk;
          double acc = 0.0;
          for (std::size_t c = 0; c < dk; ++c) acc += qrow[c] * krow[c];
          orow[j] = acc * scale;
        }
      }
    }
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = {G, heads, Lq, Lk};
  node->value = std::move(out);
  if (grad_enabled() && (q.requires_grad() || k.requires_grad())) {
    node->requires_grad = true;
    node->parents = {q.node_ptr(), k.node_ptr()};
    auto keep = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
    node->backward = [ql, kl, heads, scale, d, dk, keep](detail::Node& self) {
      auto& pq = *self.parents[0];
      auto& pk = *self.parents[1];
      double* gq = pq.requires_grad ? pq.ensure_grad().data() : nullptr;
      double* gk = pk.requires_grad ? pk.ensure_grad().data() : nullptr;
      const std::size_t Lq = ql.length, Lk = kl.length;
      for (std::size_t g = 0; g < ql.groups; ++g) {
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t i = 0; i < Lq; ++i) {
            const std::size_t qoff = ql.row(g, i) * d + h * dk;
            const std::size_t base = ((g * heads + h) * Lq + i) * Lk;
            const double* grow = self.grad.data() + base;
            for (std::size_t j = 0; j < Lk; ++j) {
              if (!keep->empty() && !(*keep)[base + j]) continue;
              const double go = grow[j] * scale;
              if (go == 0.0) continue;
              const std::size_t koff = kl.row(g, j) * d + h * dk;
              if (gq) {
                for (std::size_t c = 0; c < dk; ++c) gq[qoff + c] += go * pk.value[koff + c];
              }
              if (gk) {
                for (std::size_t c = 0; c < dk; ++c) gk[koff + c] += go * pq.value[qoff + c];
              }
            }
          }
        }
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor attention_apply(const Tensor& coeffs, const Tensor& v, const GroupLayout& ql,
                       const GroupLayout& vl, std::size_t heads, std::size_t q_rows,
                       std::span<const std::uint8_t> mask) {
  if (v.rank() != 2 || heads == 0 || v.dim(1) % heads != 0) {
    throw Error(ErrorKind::dimension, "attention_apply: value shape " +
                                          shape_str(v.shape()) + " with " +
                                          std::to_string(heads) + " heads");
  }
  if (coeffs.shape() != Shape{ql.groups, heads, ql.length, vl.length} ||
      ql.groups != vl.groups) {
    throw Error(ErrorKind::dimension, "attention_apply: coefficient shape " +
                                          shape_str(coeffs.shape()) +
                                          " does not match layouts");
  }
  if (ql.groups && ql.length && ql.row(ql.groups - 1, ql.length - 1) >= q_rows) {
    throw Error(ErrorKind::dimension, "attention_apply: query layout exceeds rows");
  }
  if (vl.groups && vl.length && vl.row(vl.groups - 1, vl.length - 1) >= v.dim(0)) {
    throw Error(ErrorKind::dimension, "attention_apply: value layout exceeds rows");
  }
  if (!mask.empty() && mask.size() != coeffs.numel()) {
    throw Error(ErrorKind::dimension, "attention_apply: mask size mismatch");
  }
  const std::size_t d = v.dim(1);
  const std::size_t dk = d / heads;
  const std::size_t Lq = ql.length, Lk = vl.length;
  std::vector<double> out(q_rows * d, 0.0);
  const double* av = coeffs.values().data();
  const double* vv = v.values().data();
  for (std::size_t g = 0; g < ql.groups; ++g) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < Lq; ++i) {
        double* orow = out.data() + ql.row(g, i) * d + h * dk;
        const double* arow = av + ((g * heads + h) * Lq + i) * Lk;
        for (std::size_t j = 0; j < Lk; ++j) {
          const double a = arow[j];
          if (a == 0.0) continue;
          const double* vrow = vv + vl.row(g, j) * d + h * dk;
          for (std::size_t c = 0; c < dk; ++c) orow[c] += a * vrow[c];
        }
      }
    }
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = {q_rows, d};
  node->value = std::move(out);
  if (grad_enabled() && (coeffs.requires_grad() || v.requires_grad())) {
    node->requires_grad = true;
    node->parents = {coeffs.node_ptr(), v.node_ptr()};
    auto keep = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
    node->backward = [ql, vl, heads, d, dk, keep](detail::Node& self) {
      auto& pa = *self.parents[0];
      auto& pv = *self.parents[1];
      double* ga = pa.requires_grad ? pa.ensure_grad().data() : nullptr;
      double* gv = pv.requires_grad ? pv.ensure_grad().data() : nullptr;
      const std::size_t Lq = ql.length, Lk = vl.length;
      for (std::size_t g = 0; g < ql.groups; ++g) {
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t i = 0; i < Lq; ++i) {
            const double* grow = self.grad.data() + ql.row(g, i) * d + h * dk;
            const std::size_t aoff = ((g * heads + h) * Lq + i) * Lk;
            for (std::size_t j = 0; j < Lk; ++j) {
              if (!keep->empty() && !(*keep)[aoff + j]) continue;
              const std::size_t voff = vl.row(g, j) * d + h * dk;
              if (ga) {
                double acc = 0.0;
                for (std::size_t c = 0; c < dk; ++c) acc += grow[c] * pv.value[voff + c];
                ga[aoff + j] += acc;
              }
              if (gv) {
                const double a = pa.value[aoff + j];
                if (a == 0.0) continue;
                for (std::size_t c = 0; c < dk; ++c) gv[voff + c] += a * grow[c];
              }
            }
          }
        }
      }
    };
  }
  return Tensor(std::move(node));
}

}  // namespace dto
