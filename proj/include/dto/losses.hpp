#pragma once

#include <cstddef>

#include "dto/tensor.hpp"

namespace dto {

/// Ground-truth loss: (1/P) * sum_p ||x_p - x_hat_p||^2 over the whole
/// predicted sequence of each agent (divided by P only).
Tensor loss_gt(const Tensor& predicted, const Tensor& truth, std::size_t agents);

/// Encoder distillation: the teacher's last K of T states against the
/// student's K states, summed and divided by P. h_teacher is [P * T, d],
/// h_student is [P * K, d], both agent-major.
Tensor loss_encoder_distill(const Tensor& h_teacher, const Tensor& h_student, std::size_t t,
                            std::size_t k, std::size_t agents);

/// Decoder distillation: pre-head activations plus last-layer decoder
/// self-attention coefficients, (1/P) * sum_p (||o_T - o_S||^2 + ||A_T - A_S||^2).
Tensor loss_decoder_distill(const Tensor& o_teacher, const Tensor& o_student,
                            const Tensor& a_teacher, const Tensor& a_student, std::size_t agents);

/// alpha * L_GT + beta * L_ED + gamma * L_DD.
Tensor loss_student_total(const Tensor& l_gt, const Tensor& l_ed, const Tensor& l_dd, double alpha,
                          double beta, double gamma);

}  // namespace dto
