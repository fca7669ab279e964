#ifndef TSMC_CTL_HPP_
#define TSMC_CTL_HPP_

#include <cstdint>
#include <optional>
#include <vector>

#include "tsmc/model.hpp"
#include "tsmc/optimizer.hpp"
#include "tsmc/potential.hpp"
#include "tsmc/rng.hpp"
#include "tsmc/sequence.hpp"
#include "tsmc/twist.hpp"

namespace tsmc {

struct CtlConfig {
  int positive_particles = 512;  // K_pos
  int negative_particles = 512;  // K_neg
  int steps = 2000;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  int generation = 0;
  // Positives from full SMC with resampling (uniform weights) instead of
  // i.i.d. proposal draws with explicit weights.
  bool resampled_positives = false;
  int trace_every = 50;
  int threads = 1;
  double degeneracy_log_floor = -500.0;
};

// K full-length trajectories with per-step prefix weights. weights are
// column-normalized per t (each column sums to 1); a positive batch repeats
// its per-sequence weight down every column. Twist activations at each
// (sequence, step) are cached when the sampling twist is a TwistNetwork so
// gradient accumulation can skip the forward pass.
struct WeightedPrefixBatch {
  Prompt prompt;
  int num_sequences = 0;
  int horizon = 0;
  std::vector<int> tokens;           // [k * T + t]
  std::vector<double> log_target;    // per sequence
  std::vector<double> log_proposal;  // per sequence
  std::vector<double> weights;       // [(t-1) * K + k], normalized per t

  // Cached twist evaluations at the parent prefix of step t.
  int hidden_width = 0;
  int active_width = 0;
  std::vector<double> twist_hidden;     // [k][t-1][hidden]
  std::vector<int> twist_active;        // [k][t-1][active]
  std::vector<double> log_twist_token;  // [k * T + t-1]: log psi(s_{1:t})

  TokenSpan sequence(int k) const {
    return TokenSpan(tokens).subspan(
        static_cast<std::size_t>(k) * static_cast<std::size_t>(horizon),
        static_cast<std::size_t>(horizon));
  }
  double weight(int t, int k) const {
    return weights[static_cast<std::size_t>(t - 1) * num_sequences + k];
  }
  bool has_cache() const { return hidden_width > 0; }

  // ESS of column t in [1, K].
  double ess(int t) const;
};

// i.i.d. full-sequence draws from the twist-induced proposal (phi-induced at
// the final step, phi the generation's effective potential), weighted by
// sigma_tilde / q and self-normalized. Throws DegeneracyError when every
// weight collapses to the floor.
WeightedPrefixBatch positive_batch(const AutoregressiveModel& model,
                                   const Twist& twist,
                                   const EffectivePotential& pot,
                                   const Prompt& prompt, int k_pos,
                                   RngStream rng, int threads = 1,
                                   double degeneracy_log_floor = -500.0);

// Positives from tsmc_sample finals with uniform weights (flag path).
WeightedPrefixBatch positive_batch_resampled(const AutoregressiveModel& model,
                                             const Twist& twist,
                                             const EffectivePotential& pot,
                                             const Prompt& prompt, int k_pos,
                                             RngStream rng);

// Shared trajectory set from the psi-induced proposal at every step; column t
// carries the self-normalized product of incremental weights up to t, an SIS
// approximation of pi_t.
WeightedPrefixBatch negative_batch(const AutoregressiveModel& model,
                                   const Twist& twist, const Prompt& prompt,
                                   int k_neg, RngStream rng, int threads = 1,
                                   double degeneracy_log_floor = -500.0);

// Ascent direction (the negative loss gradient):
//   sum_t { sum_k w_pos[t,k] grad log psi(pos_{1:t})
//         - sum_k w_neg[t,k] grad log psi(neg_{1:t}) }.
void ctl_gradient(const TwistNetwork& twist, const WeightedPrefixBatch& pos,
                  const WeightedPrefixBatch& neg, std::span<double> grad,
                  int threads = 1);

struct CtlTraceRow {
  int step = 0;
  double ess_pos = 0.0;
  double ess_neg_mean = 0.0;
  double proxy_loss = 0.0;
  double grad_norm = 0.0;
};

// Gradient ascent on the contrastive estimator with fresh batches each step.
// `twist` carries the architecture and the initial (or warm-start) weights.
TwistNetwork train_twist(const AutoregressiveModel& model,
                         const EffectivePotential& pot, const Prompt& prompt,
                         TwistNetwork twist, const CtlConfig& config,
                         RngStream rng,
                         std::vector<CtlTraceRow>* trace = nullptr);

std::string ctl_trace_to_jsonl(const std::vector<CtlTraceRow>& trace);

}  // namespace tsmc

#endif  // TSMC_CTL_HPP_
