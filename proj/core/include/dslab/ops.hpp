#pragma once

#include <span>
#include <vector>

#include "dslab/tensor.hpp"

namespace dslab {

// All ops run in double precision on row-major data (activations are NCHW).
// When a tape is active and any input requires grad, the op records a node
// whose backward accumulates into the inputs' grad buffers.

// [m, k] x [k, n] -> [m, n]
Tensor matmul(const Tensor& a, const Tensor& b);

// x: [N, Cin, H, W], w: [Cout, Cin, kh, kw], bias: [Cout] or undefined.
// Zero padding; stride 1 or 2. Implemented as im2col + matmul.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int padding);

Tensor add(const Tensor& a, const Tensor& b);

// Concatenates along `axis` (default: channel axis 1). All other dims must
// match.
Tensor concat(std::span<const Tensor> parts, std::size_t axis = 1);

Tensor relu(const Tensor& x);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;  // starts at 1
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// x: [N, C, H, W], gamma/beta: [C]. Training mode normalizes with batch
// statistics and, when update_running is set, folds them into the running
// estimates; eval mode normalizes with the running estimates.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, bool training,
                   bool update_running = true);

// [N, C, H, W] -> [N, C]
Tensor global_avg_pool(const Tensor& x);

// y = x w^T + b. x: [N, in], w: [out, in], b: [out] or undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// logits: [N, C], labels in [0, C). Mean cross-entropy over the batch,
// computed via the log-sum-exp trick.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

Tensor scalar_mul(const Tensor& x, double s);

// y = gate[0] * x with a trainable 1-element gate tensor; the learnable
// counterpart of scalar_mul, needed by residual-scale layers.
Tensor gate_mul(const Tensor& x, const Tensor& gate);

// Sum of all elements -> scalar.
Tensor sum(const Tensor& x);

// Fixed-coefficient scalarization sum_i c_i * x_i -> scalar. Lets gradient
// checks inject a non-uniform upstream gradient through a single backward.
Tensor weighted_sum(const Tensor& x, std::span<const double> coeffs);

// Row argmax for [N, C] score matrices.
std::vector<int> argmax_rows(const Tensor& scores);

}  // namespace dslab
