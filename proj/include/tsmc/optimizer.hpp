#ifndef TSMC_OPTIMIZER_HPP_
#define TSMC_OPTIMIZER_HPP_

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tsmc/errors.hpp"

namespace tsmc {

enum class OptimizerKind { kSgd, kAdam };

OptimizerKind optimizer_kind_from_string(const std::string& s);
std::string to_string(OptimizerKind kind);

// First-order optimizer over a flat parameter vector. update() takes the
// gradient of the quantity being minimized.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::size_t dim, double learning_rate,
            double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
            double weight_decay = 0.0)
      : kind_(kind),
        lr_(learning_rate),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps),
        weight_decay_(weight_decay) {
    if (learning_rate <= 0.0) throw InputError("learning rate must be > 0");
    if (kind_ == OptimizerKind::kAdam) {
      m_.assign(dim, 0.0);
      v_.assign(dim, 0.0);
    }
  }

  void update(std::span<double> params, std::span<const double> grad) {
    if (params.size() != grad.size())
      throw InputError("optimizer: parameter/gradient size mismatch");
    if (weight_decay_ > 0.0)
      for (std::size_t i = 0; i < params.size(); ++i)
        params[i] -= lr_ * weight_decay_ * params[i];
    if (kind_ == OptimizerKind::kSgd) {
      for (std::size_t i = 0; i < params.size(); ++i)
        params[i] -= lr_ * grad[i];
      return;
    }
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
      const double mh = m_[i] / c1;
      const double vh = v_[i] / c2;
      params[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }

 private:
  OptimizerKind kind_;
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  int64_t step_ = 0;
  std::vector<double> m_, v_;
};

inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer kind: " + s);
}

inline std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adam";
}

}  // namespace tsmc

#endif  // TSMC_OPTIMIZER_HPP_
