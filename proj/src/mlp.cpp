#include "tsmc/mlp.hpp"

#include <cassert>
#include <cmath>

#include "tsmc/errors.hpp"

namespace tsmc {

Mlp::Mlp(int in_dim, int hidden_dim, int out_dim)
    : in_(in_dim), hidden_(hidden_dim), out_(out_dim) {
  if (in_ < 1 || hidden_ < 1 || out_ < 1)
    throw InputError("Mlp dimensions must be positive");
  params_.assign(b2_off() + out_, 0.0);
}

void Mlp::init(RngStream stream) {
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i] = 0.0;
  std::size_t n1 = static_cast<std::size_t>(in_) * hidden_;
  for (std::size_t i = 0; i < n1; ++i)
    params_[w1_off() + i] = stream.uniform_range(i, -0.1, 0.1);
}

void Mlp::forward(std::span<const int> active, std::span<double> hidden,
                  std::span<double> out) const {
  assert(static_cast<int>(hidden.size()) == hidden_);
  assert(static_cast<int>(out.size()) == out_);
  const double* w1 = params_.data() + w1_off();
  const double* b1 = params_.data() + b1_off();
  const double* w2 = params_.data() + w2_off();
  const double* b2 = params_.data() + b2_off();

  for (int h = 0; h < hidden_; ++h) hidden[h] = b1[h];
  for (int f : active) {
    assert(f >= 0 && f < in_);
    const double* col = w1 + static_cast<std::size_t>(f) * hidden_;
    for (int h = 0; h < hidden_; ++h) hidden[h] += col[h];
  }
  for (int h = 0; h < hidden_; ++h) hidden[h] = std::tanh(hidden[h]);

  for (int v = 0; v < out_; ++v) out[v] = b2[v];
  for (int h = 0; h < hidden_; ++h) {
    const double a = hidden[h];
    const double* row = w2 + static_cast<std::size_t>(h) * out_;
    for (int v = 0; v < out_; ++v) out[v] += a * row[v];
  }
}

void Mlp::backward(std::span<const int> active, std::span<const double> hidden,
                   std::span<const double> dout,
                   std::span<double> grad) const {
  assert(grad.size() == params_.size());
  const double* w2 = params_.data() + w2_off();
  double* g_w2 = grad.data() + w2_off();
  double* g_b2 = grad.data() + b2_off();
  double* g_w1 = grad.data() + w1_off();
  double* g_b1 = grad.data() + b1_off();

  for (int v = 0; v < out_; ++v) g_b2[v] += dout[v];

  // d/dhidden and dW2 in one sweep.
  for (int h = 0; h < hidden_; ++h) {
    const double a = hidden[h];
    const double* row = w2 + static_cast<std::size_t>(h) * out_;
    double* g_row = g_w2 + static_cast<std::size_t>(h) * out_;
    double da = 0.0;
    for (int v = 0; v < out_; ++v) {
      g_row[v] += a * dout[v];
      da += row[v] * dout[v];
    }
    const double dpre = da * (1.0 - a * a);
    g_b1[h] += dpre;
    for (int f : active)
      g_w1[static_cast<std::size_t>(f) * hidden_ + h] += dpre;
  }
}

void Mlp::backward_component(std::span<const int> active,
                             std::span<const double> hidden, int component,
                             double coeff, std::span<double> grad) const {
  assert(component >= 0 && component < out_);
  if (coeff == 0.0) return;
  const double* w2 = params_.data() + w2_off();
  double* g_w2 = grad.data() + w2_off();
  double* g_b2 = grad.data() + b2_off();
  double* g_w1 = grad.data() + w1_off();
  double* g_b1 = grad.data() + b1_off();

  g_b2[component] += coeff;
  for (int h = 0; h < hidden_; ++h) {
    const double a = hidden[h];
    g_w2[static_cast<std::size_t>(h) * out_ + component] += a * coeff;
    const double dpre =
        w2[static_cast<std::size_t>(h) * out_ + component] * coeff *
        (1.0 - a * a);
    g_b1[h] += dpre;
    for (int f : active)
      g_w1[static_cast<std::size_t>(f) * hidden_ + h] += dpre;
  }
}

}  // namespace tsmc
