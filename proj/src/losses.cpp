#include "dto/losses.hpp"

#include <string>
#include <vector>

#include "dto/error.hpp"

namespace dto {

Tensor loss_gt(const Tensor& predicted, const Tensor& truth, std::size_t agents) {
  if (agents == 0) throw Error(ErrorKind::data, "loss_gt: no agents");
  return mse(predicted, truth, static_cast<double>(agents));
}

Tensor loss_encoder_distill(const Tensor& h_teacher, const Tensor& h_student, std::size_t t,
                            std::size_t k, std::size_t agents) {
  if (k > t) {
    throw Error(ErrorKind::config, "encoder distillation needs K <= T (K=" + std::to_string(k) +
                                       ", T=" + std::to_string(t) + ")");
  }
  if (agents == 0) throw Error(ErrorKind::data, "loss_encoder_distill: no agents");
  if (h_teacher.rank() != 2 || h_student.rank() != 2 || h_teacher.dim(0) != agents * t ||
      h_student.dim(0) != agents * k || h_teacher.dim(1) != h_student.dim(1)) {
    throw Error(ErrorKind::dimension, "loss_encoder_distill: shapes " +
                                          shape_str(h_teacher.shape()) + " and " +
                                          shape_str(h_student.shape()));
  }
  std::vector<std::size_t> rows;
  rows.reserve(agents * k);
  for (std::size_t p = 0; p < agents; ++p)
    for (std::size_t i = 0; i < k; ++i) rows.push_back(p * t + (t - k) + i);
  return mse(gather_rows(h_teacher, rows), h_student, static_cast<double>(agents));
}

Tensor loss_decoder_distill(const Tensor& o_teacher, const Tensor& o_student,
                            const Tensor& a_teacher, const Tensor& a_student, std::size_t agents) {
  if (agents == 0) throw Error(ErrorKind::data, "loss_decoder_distill: no agents");
  if (o_teacher.shape() != o_student.shape() || a_teacher.shape() != a_student.shape()) {
    throw Error(ErrorKind::dimension,
                "loss_decoder_distill: teacher/student shapes differ (" +
                    shape_str(o_teacher.shape()) + " vs " + shape_str(o_student.shape()) + ", " +
                    shape_str(a_teacher.shape()) + " vs " + shape_str(a_student.shape()) + ")");
  }
  const double p = static_cast<double>(agents);
  return add(mse(o_teacher, o_student, p), mse(a_teacher, a_student, p));
}

Tensor loss_student_total(const Tensor& l_gt, const Tensor& l_ed, const Tensor& l_dd, double alpha,
                          double beta, double gamma) {
  if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) {
    throw Error(ErrorKind::config, "loss weights must be >= 0");
  }
  return add(add(scale(l_gt, alpha), scale(l_ed, beta)), scale(l_dd, gamma));
}

}  // namespace dto
