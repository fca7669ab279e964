#ifndef TSMC_SMC_HPP_
#define TSMC_SMC_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "tsmc/model.hpp"
#include "tsmc/potential.hpp"
#include "tsmc/rng.hpp"
#include "tsmc/sequence.hpp"
#include "tsmc/twist.hpp"

namespace tsmc {

enum class ResampleScheme { kMultinomial, kSystematic };
enum class ResampleTrigger { kEveryStep, kEssThreshold };

ResampleScheme resample_scheme_from_string(const std::string& s);
std::string to_string(ResampleScheme s);
ResampleTrigger resample_trigger_from_string(const std::string& s);
std::string to_string(ResampleTrigger t);

struct SmcConfig {
  int num_particles = 1;
  ResampleScheme scheme = ResampleScheme::kMultinomial;
  ResampleTrigger trigger = ResampleTrigger::kEveryStep;
  double ess_threshold = 0.5;  // resample when ESS < threshold * K
  bool record_trace = false;
  // All K weights at or below this level is a degenerate particle system.
  double degeneracy_log_floor = -500.0;
};

// Next-token distribution of the twist-induced proposal q(v) proportional to
// p(v | prefix) * psi(prefix + v), with its log-normalizer
// log sum_v p(v | prefix) psi(prefix + v).
struct StepProposal {
  std::vector<double> log_q;  // normalized log-probabilities
  double log_normalizer;
};

StepProposal propose_next(const AutoregressiveModel& model, const Twist& twist,
                          const Prompt& prompt, TokenSpan gen);

// Final-step proposal q(v) proportional to p(v | prefix) * phi(prefix + v);
// gen must have length horizon - 1.
StepProposal propose_final(const AutoregressiveModel& model,
                           const SequenceScorer& pot, const Prompt& prompt,
                           TokenSpan gen);

// Dispatches to propose_final at the last position, propose_next otherwise.
StepProposal propose_step(const AutoregressiveModel& model, const Twist& twist,
                          const SequenceScorer& pot, const Prompt& prompt,
                          TokenSpan gen);

// Incremental weight of the step extending `parent` (length t-1):
//   t < T : log sum_v p(v|parent) psi(parent+v) - log psi(parent)
//   t = T : log sum_v p(v|parent) phi(parent+v) - log psi(parent)
// with psi(empty) = 1. Depends only on the parent, not the sampled token.
double incremental_log_weight(const AutoregressiveModel& model,
                              const Twist& twist, const SequenceScorer& pot,
                              const Prompt& prompt, TokenSpan parent);

// Same but with the psi-formula at every step (used when targeting the
// twisted intermediate distributions themselves, e.g. CTL negatives).
double incremental_log_weight_psi(const AutoregressiveModel& model,
                                  const Twist& twist, const Prompt& prompt,
                                  TokenSpan parent);

// K particles of equal length with log-domain weights and ancestry.
struct ParticleSystem {
  Prompt prompt;
  int step = 0;  // tokens generated so far
  std::vector<std::vector<int>> particles;
  std::vector<double> log_acc;   // accumulated log-weights since last resample
  std::vector<double> log_incr;  // incremental weights of the latest step
  std::vector<double> log_psi;   // log psi of each particle's current prefix
  std::vector<std::vector<int>> ancestry;  // ancestor indices per resample
  double log_partition = 0.0;

  int num_particles() const { return static_cast<int>(particles.size()); }

  static ParticleSystem init(const Prompt& prompt, int num_particles);
};

// Draws K ancestor indices from the normalized weights. Multinomial draws
// i.i.d. (uniform(step, i)); systematic uses a single uniform(step, 0).
std::vector<int> resample_indices(std::span<const double> log_weights,
                                  ResampleScheme scheme, RngStream rng,
                                  uint64_t step);

// Reassigns particles by ancestry and resets accumulated weights to uniform.
// Throws DegeneracyError when every weight sits at or below the config floor.
ParticleSystem resample(const ParticleSystem& ps, const SmcConfig& config,
                        RngStream rng);

struct SmcStepStats {
  int t = 0;
  double ess = 0.0;
  double log_z_increment = 0.0;
  int unique_ancestors = 0;
  bool resampled = false;
};

struct SmcResult {
  std::vector<std::vector<int>> sequences;  // K final particles
  double log_partition = 0.0;
  std::vector<SmcStepStats> trace;
};

// Extending / Reweighting / Resampling for t = 1..T. The final step extends
// with the phi-induced proposal (phi may be an effective potential), so
// incremental weights stay token-independent throughout. The log-partition
// estimate accumulates log sum_k What_{t-1}^k exp(w_t^k), which reduces to
// log((1/K) sum exp w_t) when resampling every step.
SmcResult tsmc_sample(const AutoregressiveModel& model, const Twist& twist,
                      const SequenceScorer& pot, const Prompt& prompt,
                      const SmcConfig& config, RngStream rng);

// JSON-lines rendering of a trace (one object per step).
std::string trace_to_jsonl(const SmcResult& result);

}  // namespace tsmc

#endif  // TSMC_SMC_HPP_
