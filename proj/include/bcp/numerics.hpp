#pragma once

#include <bcp/types.hpp>

#include <functional>
#include <vector>

namespace bcp {

enum class Mode { Train, Eval };
enum class Activation { Identity, Tanh, Relu };

// One 2-D convolution filter. Rows index consecutive frames (the filter
// width), columns index feature coefficients; a filter always spans the full
// feature dimension of its input, so a valid convolution yields a 1-D map.
struct ConvFilter {
  Matrix weights;
  double bias = 0.0;
  Index width() const { return weights.rows(); }
  Index height() const { return weights.cols(); }
};

// Valid (no padding) convolution of an [n_frames x d] input against filters
// that all share one width. Output is [n_frames - width + 1 x n_filters].
Matrix conv_valid(const Matrix& input, const std::vector<ConvFilter>& filters);

// Gradients of a scalar objective w.r.t. filter weights and biases, given the
// gradient w.r.t. the convolution output. The input is data, not a parameter.
std::vector<ConvFilter> conv_valid_param_grad(const Matrix& input,
                                              const std::vector<ConvFilter>& filters,
                                              const Matrix& d_out);

// ReLU followed by per-column non-overlapping max pooling over pool_rows rows
// (trailing remainder rows dropped). Pools of one column are contiguous in the
// result: out[c * n_pools + p].
Vector relu_maxpool(const Matrix& map, Index pool_rows);

// Routes d_out back through the pooling argmax (first maximum on ties) and the
// ReLU gate.
Matrix relu_maxpool_backward(const Matrix& map, Index pool_rows, const Vector& d_out);

Vector softmax(const Vector& logits);

// Negative log-likelihood of the gold class; probability floored at 1e-12.
double cross_entropy(const Vector& probs, int gold);

// d cross_entropy(softmax(z), gold) / d z, evaluated at probs = softmax(z).
Vector softmax_xent_grad(const Vector& probs, int gold);

// Inverted dropout: zeroes entries with probability rate and scales survivors
// by 1/(1-rate) so the expectation is preserved. Eval mode is the identity.
Vector dropout(const Vector& v, double rate, Mode mode, Rng& rng);

// Same, but also returns the per-entry multiplier (0 or 1/(1-rate)) so a
// backward pass can reuse the exact mask.
Vector dropout_masked(const Vector& v, double rate, Mode mode, Rng& rng, Vector& mask);

struct Affine {
  Matrix W;  // [out x in]
  Vector b;
  Activation act = Activation::Identity;
};

struct AffineGrad {
  Matrix W;
  Vector b;
};

Vector affine_forward(const Affine& layer, const Vector& x);

// Accumulates parameter gradients into grad and returns d_x. y must be the
// forward output for x (the activation derivative is reconstructed from it).
Vector affine_backward(const Affine& layer, const Vector& x, const Vector& y,
                       const Vector& d_y, AffineGrad& grad);

struct GradCheckReport {
  std::string op_name;
  double max_relative_error = 0.0;
  Index worst_parameter_index = -1;
};

// Central-difference check of an analytic gradient. Per-coordinate relative
// error uses max(|analytic|, |numeric|, abs_floor) as denominator.
GradCheckReport grad_check(const std::string& op_name,
                           const std::function<double(const Vector&)>& loss,
                           const std::function<Vector(const Vector&)>& analytic_grad,
                           const Vector& theta, double eps = 1e-5,
                           double abs_floor = 1e-6);

// Overload for ops whose output has not been reduced yet; the objective must
// produce a single value.
GradCheckReport grad_check(const std::string& op_name,
                           const std::function<Vector(const Vector&)>& objective,
                           const std::function<Vector(const Vector&)>& analytic_grad,
                           const Vector& theta, double eps = 1e-5,
                           double abs_floor = 1e-6);

}  // namespace bcp
