#ifndef TSMC_MLP_HPP_
#define TSMC_MLP_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "tsmc/rng.hpp"

namespace tsmc {

// One-hidden-layer tanh MLP over sparse binary features (a list of active
// feature indices, each with weight 1). Parameters live in one flat vector,
// laid out as [W1 (in*hidden, feature-major), b1, W2 (hidden*out), b2], which
// keeps optimizers and finite-difference checks trivial.
class Mlp {
 public:
  Mlp() = default;
  Mlp(int in_dim, int hidden_dim, int out_dim);

  int in_dim() const { return in_; }
  int hidden_dim() const { return hidden_; }
  int out_dim() const { return out_; }

  std::size_t param_count() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  // Hidden weights uniform in [-0.1, 0.1], biases and output head zero, so
  // the initial output is identically zero.
  void init(RngStream stream);

  // hidden must have size hidden_dim(), out size out_dim(). hidden receives
  // the post-tanh activations needed by the backward passes.
  void forward(std::span<const int> active, std::span<double> hidden,
               std::span<double> out) const;

  // grad += d(sum_v dout[v] * out[v]) / dparams, reusing hidden from forward.
  void backward(std::span<const int> active, std::span<const double> hidden,
                std::span<const double> dout, std::span<double> grad) const;

  // Fast path for dout = coeff * e_component.
  void backward_component(std::span<const int> active,
                          std::span<const double> hidden, int component,
                          double coeff, std::span<double> grad) const;

 private:
  // Flat offsets.
  std::size_t w1_off() const { return 0; }
  std::size_t b1_off() const { return static_cast<std::size_t>(in_) * hidden_; }
  std::size_t w2_off() const { return b1_off() + hidden_; }
  std::size_t b2_off() const {
    return w2_off() + static_cast<std::size_t>(hidden_) * out_;
  }

  int in_ = 0, hidden_ = 0, out_ = 0;
  std::vector<double> params_;
};

}  // namespace tsmc

#endif  // TSMC_MLP_HPP_
