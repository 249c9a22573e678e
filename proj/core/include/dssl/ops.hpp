#pragma once

#include <cstddef>
#include <span>

#include "dssl/tensor.hpp"

// Forward kernels shared by the autograd graph and the gradient-free inference path.
// Both paths call these functions, so recorded and unrecorded forwards agree bitwise.
namespace dssl::ops {

// x: B×in, W: in×out, b: out.
Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b);

// x: C×H×W or B×C×H×W; kernels: O×C×k×k. Cross-correlation with zero padding.
Tensor conv2d(const Tensor& x, const Tensor& kernels, std::size_t stride, std::size_t pad);

// Gradients of conv2d given the output gradient; either output pointer may be null.
void conv2d_backward(const Tensor& x, const Tensor& kernels, std::size_t stride, std::size_t pad,
                     const Tensor& grad_out, Tensor* grad_x, Tensor* grad_kernels);

Tensor relu(const Tensor& x);

// C×H×W -> C, or B×C×H×W -> B×C.
Tensor global_avg_pool(const Tensor& x);

// Rank 1: the whole vector. Rank 2: each row independently.
Tensor l2_normalize(const Tensor& v, double eps);

// Rank 1 or row-wise rank 2; max-subtracted.
Tensor softmax_with_temperature(const Tensor& z, double tau);
Tensor log_softmax_rows(const Tensor& z);

// B×(M+1) logits: column 0 holds q_b·k_plus_b, column 1+j holds q_b·queue_j, all divided by tau.
Tensor key_logits(const Tensor& q, const Tensor& k_plus, const Tensor& queue, double tau);

// Mean over rows of -log softmax(logits_b)[labels_b].
double cross_entropy(const Tensor& logits, std::span<const int> labels);

// Mean over rows of KL(targets_b || softmax(logits_b)), with 0·ln 0 = 0.
double kl_to_logits(const Tensor& targets, const Tensor& logits);

// KL(p || q) between distributions (rank 1) or the batch mean over rows (rank 2).
double kl_divergence(const Tensor& p, const Tensor& q);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

}  // namespace dssl::ops
