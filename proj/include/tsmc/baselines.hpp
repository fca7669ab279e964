#ifndef TSMC_BASELINES_HPP_
#define TSMC_BASELINES_HPP_

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tsmc/model.hpp"
#include "tsmc/optimizer.hpp"
#include "tsmc/potential.hpp"
#include "tsmc/rng.hpp"
#include "tsmc/sequence.hpp"

namespace tsmc {

enum class BaselineKind { kDpo, kGrpo };

BaselineKind baseline_kind_from_string(const std::string& s);
std::string to_string(BaselineKind kind);

struct PreferencePair {
  std::vector<int> positive;
  std::vector<int> negative;
  double reward_positive = 0.0;
  double reward_negative = 0.0;
};

using RewardFn = std::function<double(const Prompt&, TokenSpan)>;

// N reference-model samples sorted by reward; rank-i of the top half pairs
// with rank-i of the bottom half, floor(N/2) pairs (ties broken by draw
// index for determinism).
std::vector<PreferencePair> build_preference_batch(
    const AutoregressiveModel& reference, const RewardFn& reward,
    const Prompt& prompt, int n, RngStream rng);

// Trainable policy with its frozen reference and regularization strength.
struct PolicyTrainState {
  std::unique_ptr<NeuralModel> policy;
  std::unique_ptr<NeuralModel> reference;
  double beta = 0.1;

  PolicyTrainState(const NeuralModel& ref, double beta_reg);
};

// L_DPO = -mean log sigmoid(beta * margin); grad += dL/dtheta. Returns the
// loss (log 2 per pair at theta == reference).
double dpo_loss_and_grad(const PolicyTrainState& state,
                         std::span<const PreferencePair> pairs,
                         const Prompt& prompt, std::span<double> grad);

// GRPO with explicit advantages (callers normally use grpo_loss_and_grad).
// The ratio term is pi_theta / stop_grad(pi_theta): value 1, gradient
// -A * grad log pi_theta per token; the regularizer is r - log r - 1 with
// r = pi_ref / pi_theta.
double grpo_loss_and_grad_with_advantages(
    const PolicyTrainState& state, std::span<const std::vector<int>> batch,
    std::span<const double> advantages, const Prompt& prompt,
    std::span<double> grad);

// Normalizes rewards to advantages (mean 0, std 1, population std); throws
// InputError on zero reward spread.
double grpo_loss_and_grad(const PolicyTrainState& state,
                          std::span<const std::vector<int>> batch,
                          std::span<const double> rewards, const Prompt& prompt,
                          std::span<double> grad);

std::vector<double> normalized_advantages(std::span<const double> rewards);

struct BaselineConfig {
  BaselineKind kind = BaselineKind::kDpo;
  int steps = 1000;
  int batch = 256;
  double learning_rate = 1e-3;
  double beta = 0.1;  // beta_DPO or beta_GRPO
  OptimizerKind optimizer = OptimizerKind::kAdam;
  int trace_every = 10;
};

struct BaselineTraceRow {
  int step = 0;
  double mean_reward = 0.0;
  double kl_to_reference = 0.0;  // Monte-Carlo estimate from policy samples
};

// Fine-tunes a copy of `reference` against reward log phi. GRPO steps with a
// degenerate (zero reward spread) batch are skipped.
std::unique_ptr<NeuralModel> train_baseline(
    const NeuralModel& reference, const Potential& pot, const Prompt& prompt,
    const BaselineConfig& config, RngStream rng,
    std::vector<BaselineTraceRow>* trace = nullptr);

std::string baseline_trace_to_jsonl(const std::vector<BaselineTraceRow>& trace);

}  // namespace tsmc

#endif  // TSMC_BASELINES_HPP_
