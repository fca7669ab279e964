#include "tsmc/potential.hpp"

#include <algorithm>
#include <cmath>

#include "tsmc/errors.hpp"

namespace tsmc {

Potential Potential::logistic(std::vector<double> token_weights, double bias,
                              double beta, double log_floor) {
  if (beta < 0.0) throw InputError("potential beta must be >= 0");
  Potential p;
  p.pot_kind_ = PotentialKind::kLogistic;
  p.token_weights_ = std::move(token_weights);
  p.bias_ = bias;
  p.beta_ = beta;
  p.log_floor_ = log_floor;
  p.vocab_size_ = static_cast<int>(p.token_weights_.size());
  return p;
}

Potential Potential::table(
    int vocab_size, std::vector<std::pair<std::vector<int>, double>> entries,
    double default_score, double beta, double log_floor) {
  if (beta < 0.0) throw InputError("potential beta must be >= 0");
  if (default_score < 0.0 || default_score > 1.0)
    throw InputError("table potential scores must lie in [0, 1]");
  Potential p;
  p.pot_kind_ = PotentialKind::kTable;
  p.vocab_size_ = vocab_size;
  p.beta_ = beta;
  p.log_floor_ = log_floor;
  p.default_score_ = default_score;
  for (auto& [tokens, score] : entries) {
    if (score < 0.0 || score > 1.0)
      throw InputError("table potential scores must lie in [0, 1]");
    p.table_[p.encode(tokens)] = score;
  }
  return p;
}

Potential Potential::with_beta(double beta) const {
  if (beta < 0.0) throw InputError("potential beta must be >= 0");
  Potential p = *this;
  p.beta_ = beta;
  return p;
}

int64_t Potential::encode(TokenSpan gen) const {
  int64_t key = 0;
  for (int t : gen) {
    if (t < 0 || t >= vocab_size_) throw InputError("token id out of range");
    key = key * vocab_size_ + t;
  }
  return key;
}

double Potential::log_classifier(const Prompt& prompt, TokenSpan gen) const {
  check_complete(prompt, gen);
  if (pot_kind_ == PotentialKind::kLogistic) {
    double x = bias_;
    for (int t : gen) {
      if (t < 0 || t >= static_cast<int>(token_weights_.size()))
        throw InputError("token id out of range");
      x += token_weights_[t];
    }
    return std::max(log_sigmoid(x), log_floor_);
  }
  const auto it = table_.find(encode(gen));
  const double score = it != table_.end() ? it->second : default_score_;
  return score > 0.0 ? std::max(std::log(score), log_floor_) : log_floor_;
}

double Potential::classifier_prob(const Prompt& prompt, TokenSpan gen) const {
  return std::exp(log_classifier(prompt, gen));
}

double Potential::log_score(const Prompt& prompt, TokenSpan gen) const {
  if (beta_ == 0.0) {
    check_complete(prompt, gen);
    return 0.0;  // phi == 1 recovers the base model
  }
  return std::max(beta_ * log_classifier(prompt, gen), log_floor_);
}

double EffectivePotential::log_score(const Prompt& prompt,
                                     TokenSpan gen) const {
  const double base = base_->log_score(prompt, gen);
  if (cur_ == ref_) return base;
  // Difference first: identical models cancel exactly.
  const double ratio = ref_->sequence_logprob(prompt, gen) -
                       cur_->sequence_logprob(prompt, gen);
  return ratio + base;
}

double EffectivePotential::log_target_unnorm(const Prompt& prompt,
                                             TokenSpan gen) const {
  return ref_->sequence_logprob(prompt, gen) + base_->log_score(prompt, gen);
}

}  // namespace tsmc
