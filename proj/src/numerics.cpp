#include <bcp/numerics.hpp>

#include <cmath>
#include <string>

namespace bcp {

namespace {

void validate_filters(const Matrix& input, const std::vector<ConvFilter>& filters) {
  if (filters.empty()) fail("DimensionMismatch", "conv_valid: no filters");
  Index width = filters.front().width();
  for (const ConvFilter& f : filters) {
    if (f.height() != input.cols())
      fail("DimensionMismatch",
           "filter height " + std::to_string(f.height()) + " != input dim " +
               std::to_string(input.cols()));
    if (f.width() != width)
      fail("DimensionMismatch", "filters in one call must share a width");
    if (f.width() > input.rows())
      fail("FilterTooWide", "filter width " + std::to_string(f.width()) +
                                " exceeds " + std::to_string(input.rows()) + " frames");
  }
}

}  // namespace

Matrix conv_valid(const Matrix& input, const std::vector<ConvFilter>& filters) {
  validate_filters(input, filters);
  Index width = filters.front().width();
  Index out_len = input.rows() - width + 1;
  Matrix out(out_len, static_cast<Index>(filters.size()));
  for (Index j = 0; j < out.cols(); ++j) {
    const ConvFilter& f = filters[static_cast<std::size_t>(j)];
    for (Index x = 0; x < out_len; ++x) {
      out(x, j) = input.block(x, 0, width, input.cols()).cwiseProduct(f.weights).sum() + f.bias;
    }
  }
  return out;
}

std::vector<ConvFilter> conv_valid_param_grad(const Matrix& input,
                                              const std::vector<ConvFilter>& filters,
                                              const Matrix& d_out) {
  validate_filters(input, filters);
  Index width = filters.front().width();
  Index out_len = input.rows() - width + 1;
  if (d_out.rows() != out_len || d_out.cols() != static_cast<Index>(filters.size()))
    fail("DimensionMismatch", "conv_valid_param_grad: d_out shape mismatch");
  std::vector<ConvFilter> grads(filters.size());
  for (std::size_t j = 0; j < filters.size(); ++j) {
    grads[j].weights = Matrix::Zero(width, input.cols());
    grads[j].bias = 0.0;
    for (Index x = 0; x < out_len; ++x) {
      double g = d_out(x, static_cast<Index>(j));
      grads[j].weights += g * input.block(x, 0, width, input.cols());
      grads[j].bias += g;
    }
  }
  return grads;
}

Vector relu_maxpool(const Matrix& map, Index pool_rows) {
  if (map.rows() == 0) fail("EmptyMap", "relu_maxpool: map has no rows");
  if (pool_rows < 1) fail("InvalidConfig", "relu_maxpool: pool_rows must be >= 1");
  Index n_pools = map.rows() / pool_rows;
  Vector out(n_pools * map.cols());
  for (Index c = 0; c < map.cols(); ++c) {
    for (Index p = 0; p < n_pools; ++p) {
      double best = 0.0;  // ReLU floor: an all-negative pool yields 0
      for (Index r = p * pool_rows; r < (p + 1) * pool_rows; ++r) {
        double v = map(r, c);
        if (v > best) best = v;
      }
      out(c * n_pools + p) = best;
    }
  }
  return out;
}

Matrix relu_maxpool_backward(const Matrix& map, Index pool_rows, const Vector& d_out) {
  if (map.rows() == 0) fail("EmptyMap", "relu_maxpool_backward: map has no rows");
  if (pool_rows < 1) fail("InvalidConfig", "relu_maxpool_backward: pool_rows must be >= 1");
  Index n_pools = map.rows() / pool_rows;
  if (d_out.size() != n_pools * map.cols())
    fail("DimensionMismatch", "relu_maxpool_backward: d_out size mismatch");
  Matrix d_map = Matrix::Zero(map.rows(), map.cols());
  for (Index c = 0; c < map.cols(); ++c) {
    for (Index p = 0; p < n_pools; ++p) {
      Index best_row = -1;
      double best = 0.0;
      for (Index r = p * pool_rows; r < (p + 1) * pool_rows; ++r) {
        double v = map(r, c);
        if (v > best) {
          best = v;
          best_row = r;
        }
      }
      if (best_row >= 0) d_map(best_row, c) = d_out(c * n_pools + p);
    }
  }
  return d_map;
}

Vector softmax(const Vector& logits) {
  if (logits.size() == 0) fail("DimensionMismatch", "softmax: empty input");
  Vector shifted = logits.array() - logits.maxCoeff();
  Vector e = shifted.array().exp();
  return e / e.sum();
}

double cross_entropy(const Vector& probs, int gold) {
  if (gold < 0 || gold >= probs.size())
    fail("IndexOutOfRange", "cross_entropy: gold class " + std::to_string(gold) +
                                " outside [0, " + std::to_string(probs.size()) + ")");
  return -std::log(std::max(probs(gold), 1e-12));
}

Vector softmax_xent_grad(const Vector& probs, int gold) {
  if (gold < 0 || gold >= probs.size())
    fail("IndexOutOfRange", "softmax_xent_grad: gold class out of range");
  Vector g = probs;
  g(gold) -= 1.0;
  return g;
}

Vector dropout_masked(const Vector& v, double rate, Mode mode, Rng& rng, Vector& mask) {
  if (rate < 0.0 || rate >= 1.0)
    fail("InvalidConfig", "dropout rate must lie in [0, 1)");
  mask = Vector::Ones(v.size());
  if (mode == Mode::Eval || rate == 0.0) return v;
  double keep_scale = 1.0 / (1.0 - rate);
  Vector out(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    if (rng.uniform01() < rate) {
      mask(i) = 0.0;
      out(i) = 0.0;
    } else {
      mask(i) = keep_scale;
      out(i) = v(i) * keep_scale;
    }
  }
  return out;
}

Vector dropout(const Vector& v, double rate, Mode mode, Rng& rng) {
  Vector mask;
  return dropout_masked(v, rate, mode, rng, mask);
}

namespace {

Vector apply_activation(Activation act, const Vector& pre) {
  switch (act) {
    case Activation::Identity: return pre;
    case Activation::Tanh: return pre.array().tanh();
    case Activation::Relu: return pre.cwiseMax(0.0);
  }
  fail("InvalidConfig", "unknown activation");
}

}  // namespace

Vector affine_forward(const Affine& layer, const Vector& x) {
  if (layer.W.cols() != x.size())
    fail("DimensionMismatch", "affine: input size " + std::to_string(x.size()) +
                                  " != " + std::to_string(layer.W.cols()));
  return apply_activation(layer.act, layer.W * x + layer.b);
}

Vector affine_backward(const Affine& layer, const Vector& x, const Vector& y,
                       const Vector& d_y, AffineGrad& grad) {
  Vector d_pre;
  switch (layer.act) {
    case Activation::Identity: d_pre = d_y; break;
    case Activation::Tanh: d_pre = d_y.cwiseProduct(Vector::Ones(y.size()) - y.cwiseProduct(y)); break;
    case Activation::Relu:
      d_pre = d_y.cwiseProduct((y.array() > 0.0).cast<double>().matrix());
      break;
  }
  if (grad.W.size() == 0) {
    grad.W = Matrix::Zero(layer.W.rows(), layer.W.cols());
    grad.b = Vector::Zero(layer.b.size());
  }
  grad.W += d_pre * x.transpose();
  grad.b += d_pre;
  return layer.W.transpose() * d_pre;
}

GradCheckReport grad_check(const std::string& op_name,
                           const std::function<double(const Vector&)>& loss,
                           const std::function<Vector(const Vector&)>& analytic_grad,
                           const Vector& theta, double eps, double abs_floor) {
  Vector analytic = analytic_grad(theta);
  if (analytic.size() != theta.size())
    fail("DimensionMismatch", "grad_check: analytic gradient size mismatch");
  GradCheckReport report;
  report.op_name = op_name;
  Vector probe = theta;
  for (Index i = 0; i < theta.size(); ++i) {
    probe(i) = theta(i) + eps;
    double up = loss(probe);
    probe(i) = theta(i) - eps;
    double down = loss(probe);
    probe(i) = theta(i);
    double numeric = (up - down) / (2.0 * eps);
    double denom = std::max({std::abs(analytic(i)), std::abs(numeric), abs_floor});
    double rel = std::abs(analytic(i) - numeric) / denom;
    if (rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_parameter_index = i;
    }
  }
  return report;
}

GradCheckReport grad_check(const std::string& op_name,
                           const std::function<Vector(const Vector&)>& objective,
                           const std::function<Vector(const Vector&)>& analytic_grad,
                           const Vector& theta, double eps, double abs_floor) {
  auto scalar = [&objective, &op_name](const Vector& t) {
    Vector out = objective(t);
    if (out.size() != 1)
      fail("NonScalarLoss", op_name + ": objective output has size " +
                                std::to_string(out.size()));
    return out(0);
  };
  scalar(theta);  // surface NonScalarLoss before the sweep
  return grad_check(op_name, std::function<double(const Vector&)>(scalar),
                    analytic_grad, theta, eps, abs_floor);
}

}  // namespace bcp
