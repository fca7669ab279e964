#ifndef TSMC_POTENTIAL_HPP_
#define TSMC_POTENTIAL_HPP_

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "tsmc/model.hpp"
#include "tsmc/numerics.hpp"
#include "tsmc/sequence.hpp"

namespace tsmc {

// Log-domain scorer of complete sequences.
class SequenceScorer {
 public:
  virtual ~SequenceScorer() = default;
  virtual double log_score(const Prompt& prompt, TokenSpan gen) const = 0;
};

enum class PotentialKind { kLogistic, kTable };

// Sequence-level potential phi in (0, 1]. The logistic kind scores
// sigmoid(bias + sum_t weight[s_t]) raised to the temperature beta; the table
// kind maps explicit generated-token sequences to scores for micro-tests.
// Always evaluated in log domain and clamped at the log floor.
class Potential final : public SequenceScorer {
 public:
  static Potential logistic(std::vector<double> token_weights, double bias,
                            double beta, double log_floor = kDefaultLogFloor);
  static Potential table(int vocab_size,
                         std::vector<std::pair<std::vector<int>, double>> entries,
                         double default_score, double beta = 1.0,
                         double log_floor = kDefaultLogFloor);

  PotentialKind pot_kind() const { return pot_kind_; }
  double beta() const { return beta_; }
  double log_floor() const { return log_floor_; }
  // Same scorer at a different temperature.
  Potential with_beta(double beta) const;

  // beta * log p_cls(toxic | s), clamped at the log floor; <= 0.
  double log_score(const Prompt& prompt, TokenSpan gen) const override;

  // The raw beta = 1 classifier log-score (metric convention).
  double log_classifier(const Prompt& prompt, TokenSpan gen) const;
  double classifier_prob(const Prompt& prompt, TokenSpan gen) const;

  const std::vector<double>& token_weights() const { return token_weights_; }
  double bias() const { return bias_; }

 private:
  Potential() = default;

  PotentialKind pot_kind_ = PotentialKind::kLogistic;
  double beta_ = 1.0;
  double log_floor_ = kDefaultLogFloor;
  // Logistic:
  std::vector<double> token_weights_;
  double bias_ = 0.0;
  // Table (keyed by base-V encoding of the generated tokens):
  int vocab_size_ = 0;
  std::unordered_map<int64_t, double> table_;
  double default_score_ = 1.0;

  int64_t encode(TokenSpan gen) const;
};

// Generation-indexed effective potential
//   log phi_m(s) = log p0(s) + log phi(s) - log p_m(s),
// the correction that keeps the target invariant as the base model is
// refined. When the current model is the reference model this reduces to the
// base potential exactly.
class EffectivePotential final : public SequenceScorer {
 public:
  EffectivePotential(const Potential& base, const AutoregressiveModel& reference,
                     const AutoregressiveModel& current)
      : base_(&base), ref_(&reference), cur_(&current) {}

  double log_score(const Prompt& prompt, TokenSpan gen) const override;

  // log p0(s) + log phi(s): the unnormalized target, identical across
  // generations.
  double log_target_unnorm(const Prompt& prompt, TokenSpan gen) const;

  const Potential& base() const { return *base_; }
  const AutoregressiveModel& reference() const { return *ref_; }
  const AutoregressiveModel& current() const { return *cur_; }

 private:
  const Potential* base_;
  const AutoregressiveModel* ref_;
  const AutoregressiveModel* cur_;
};

}  // namespace tsmc

#endif  // TSMC_POTENTIAL_HPP_
