#ifndef TSMC_METRICS_HPP_
#define TSMC_METRICS_HPP_

#include <cstdint>
#include <optional>
#include <vector>

#include "tsmc/model.hpp"
#include "tsmc/oracle.hpp"
#include "tsmc/potential.hpp"
#include "tsmc/rng.hpp"
#include "tsmc/sequence.hpp"
#include "tsmc/smc.hpp"
#include "tsmc/twist.hpp"

namespace tsmc {

// Mean raw classifier score (the beta = 1 convention, independent of the
// experiment's beta). Errors on an empty sample.
double toxicity_analog(const Potential& pot, const Prompt& prompt,
                       std::span<const std::vector<int>> seqs);

// Mean pairwise cosine similarity between bigram-count profiles of the
// generated tokens. Requires >= 2 sequences and horizon >= 2.
double pairwise_similarity(int vocab_size, const Prompt& prompt,
                           std::span<const std::vector<int>> seqs);

// Cosine between two individual sequences' bigram profiles.
double bigram_cosine(int vocab_size, TokenSpan a, TokenSpan b);

struct KlEstimate {
  double value = 0.0;
  double std_error = 0.0;
  int n_samples = 0;
};

// Self-normalized importance estimate of D_KL(sigma || q) from proposal
// draws: sum_k w_hat_k log w_k - log mean w, with a block standard error.
KlEstimate estimate_kl_target_vs_proposal(const AutoregressiveModel& model,
                                          const EffectivePotential& pot,
                                          const Twist& twist,
                                          const Prompt& prompt, int n_samples,
                                          RngStream rng, int blocks = 10,
                                          int threads = 1);

struct EfficiencyCell {
  int generation = 0;
  int num_particles = 0;
  double mean_toxicity = 0.0;
  double std_error = 0.0;
  int repeats = 0;
};

// One (model, twist, final potential) triple per generation.
struct GenerationHandle {
  int generation = 0;
  const AutoregressiveModel* model = nullptr;
  const Twist* twist = nullptr;
  const SequenceScorer* final_pot = nullptr;
};

// For each generation and each K, `repeats` independent TSMC runs; reports
// the mean and standard error of the per-run toxicity-analog.
std::vector<EfficiencyCell> particle_efficiency_curve(
    std::span<const GenerationHandle> generations, const Prompt& prompt,
    const Potential& scorer, std::span<const int> k_grid, int repeats,
    const SmcConfig& smc_base, RngStream rng, int threads = 1);

// Fixed-width histogram of scores over [0, 1].
std::vector<int64_t> score_histogram(std::span<const double> scores, int bins);

struct MetricsSnapshot {
  std::optional<double> mean_toxicity;
  std::optional<double> mean_similarity;
  std::optional<double> exact_kl;
  std::optional<double> estimated_kl;
  std::optional<double> estimated_kl_se;
  std::optional<double> log_z_estimate_mean;
  std::optional<double> log_z_estimate_std;
  std::optional<double> exact_log_z;
  std::optional<double> acceptance_ratio;
  std::optional<double> exact_target_toxicity;
  std::optional<double> exact_ctl_loss_value;
};

std::string metrics_to_json(const MetricsSnapshot& snapshot);

}  // namespace tsmc

#endif  // TSMC_METRICS_HPP_
