#ifndef TSMC_ORACLE_HPP_
#define TSMC_ORACLE_HPP_

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "tsmc/model.hpp"
#include "tsmc/potential.hpp"
#include "tsmc/rng.hpp"
#include "tsmc/sequence.hpp"
#include "tsmc/twist.hpp"

namespace tsmc {

// Largest number of complete sequences the enumeration oracles will touch.
inline constexpr int64_t kEnumerationGuard = int64_t{1} << 22;

// Exact target distribution on a small instance: full leaf table of
// log sigma_tilde = log p + log phi, the normalizer, and per-step marginals.
// Prefixes of length t are indexed base-V, most recent token last.
struct ExactDistribution {
  Vocab vocab;
  Prompt prompt;
  double log_z = 0.0;
  std::vector<double> leaf_log_sigma_tilde;             // V^T entries
  std::vector<std::vector<double>> log_sigma_marginal;  // [t][idx], normalized

  int64_t leaf_count() const {
    return static_cast<int64_t>(leaf_log_sigma_tilde.size());
  }
  int64_t encode(TokenSpan gen) const;
  void decode(int64_t idx, int length, std::vector<int>& gen) const;

  // Normalized log sigma of a complete sequence.
  double log_sigma(TokenSpan gen) const;
  double sigma(TokenSpan gen) const;

  // Normalized marginal sigma(s_{1:t}).
  double log_marginal(TokenSpan prefix) const;

  // E_sigma[f] over complete sequences, f given as leaf values.
  double expectation(std::span<const double> leaf_values) const;
};

// Exhaustive summation of p * phi; throws CapacityError past the guard.
ExactDistribution enumerate_target(const AutoregressiveModel& model,
                                   const SequenceScorer& pot,
                                   const Prompt& prompt);

// D_KL(sigma || q) where q is the product of twist-induced step proposals
// (phi-induced at the final step) under the given model.
double exact_kl_target_vs_proposal(const ExactDistribution& exact,
                                   const AutoregressiveModel& model,
                                   const Twist& twist,
                                   const SequenceScorer& pot);

// sum_t D_KL(sigma(s_{1:t}) || pi_t(s_{1:t})) with pi_t proportional to
// p(s_{1:t}) psi(s_{1:t}) under the given model and twist.
double exact_ctl_loss(const ExactDistribution& exact,
                      const AutoregressiveModel& model, const Twist& twist);

// E_sigma of the raw classifier score (the toxicity-analog of the target).
double exact_expected_classifier(const ExactDistribution& exact,
                                 const Potential& pot);

struct RejectionResult {
  std::vector<std::vector<int>> samples;
  int64_t attempts = 0;
  double acceptance_ratio = 0.0;
};

// Draws candidates from the model and accepts with probability phi; accepted
// samples are exact draws from sigma. Throws StarvationError past the cap.
RejectionResult rejection_sample(const AutoregressiveModel& model,
                                 const SequenceScorer& pot,
                                 const Prompt& prompt, int64_t n_accepts,
                                 RngStream rng,
                                 int64_t attempt_cap = 100000000);

// Sorted golden-file dump: one row per complete sequence.
void dump_sigma_csv(const ExactDistribution& exact, std::ostream& os);

}  // namespace tsmc

#endif  // TSMC_ORACLE_HPP_
