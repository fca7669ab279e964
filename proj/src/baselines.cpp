#include "tsmc/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "tsmc/errors.hpp"
#include "tsmc/numerics.hpp"

namespace tsmc {

BaselineKind baseline_kind_from_string(const std::string& s) {
  if (s == "dpo") return BaselineKind::kDpo;
  if (s == "grpo") return BaselineKind::kGrpo;
  throw ConfigError("unknown baseline kind: " + s);
}

std::string to_string(BaselineKind kind) {
  return kind == BaselineKind::kDpo ? "dpo" : "grpo";
}

std::vector<PreferencePair> build_preference_batch(
    const AutoregressiveModel& reference, const RewardFn& reward,
    const Prompt& prompt, int n, RngStream rng) {
  if (n < 2) throw InputError("preference batch needs n >= 2");
  std::vector<std::vector<int>> samples(static_cast<std::size_t>(n));
  std::vector<double> rewards(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    samples[static_cast<std::size_t>(i)] =
        reference.sample_sequence(prompt, rng.sub(static_cast<uint64_t>(i)));
    rewards[static_cast<std::size_t>(i)] =
        reward(prompt, samples[static_cast<std::size_t>(i)]);
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&rewards](int a, int b) {
    return rewards[static_cast<std::size_t>(a)] >
           rewards[static_cast<std::size_t>(b)];
  });

  const int pairs = n / 2;
  std::vector<PreferencePair> out;
  out.reserve(static_cast<std::size_t>(pairs));
  for (int i = 0; i < pairs; ++i) {
    const int top = order[static_cast<std::size_t>(i)];
    const int bottom = order[static_cast<std::size_t>(n - pairs + i)];
    PreferencePair p;
    p.positive = samples[static_cast<std::size_t>(top)];
    p.negative = samples[static_cast<std::size_t>(bottom)];
    p.reward_positive = rewards[static_cast<std::size_t>(top)];
    p.reward_negative = rewards[static_cast<std::size_t>(bottom)];
    out.push_back(std::move(p));
  }
  return out;
}

PolicyTrainState::PolicyTrainState(const NeuralModel& ref, double beta_reg)
    : beta(beta_reg) {
  auto cloned = ref.clone();
  policy.reset(static_cast<NeuralModel*>(cloned.release()));
  auto cloned_ref = ref.clone();
  reference.reset(static_cast<NeuralModel*>(cloned_ref.release()));
}

double dpo_loss_and_grad(const PolicyTrainState& state,
                         std::span<const PreferencePair> pairs,
                         const Prompt& prompt, std::span<double> grad) {
  if (pairs.empty()) throw InputError("dpo: empty pair set");
  const NeuralModel& policy = *state.policy;
  const NeuralModel& ref = *state.reference;
  const double beta = state.beta;
  const double inv = 1.0 / static_cast<double>(pairs.size());

  double loss = 0.0;
  for (const auto& pair : pairs) {
    const double margin =
        (policy.sequence_logprob(prompt, pair.positive) -
         ref.sequence_logprob(prompt, pair.positive)) -
        (policy.sequence_logprob(prompt, pair.negative) -
         ref.sequence_logprob(prompt, pair.negative));
    loss += -log_sigmoid(beta * margin) * inv;
    // d(-log sigmoid(beta m))/dm = -beta * sigmoid(-beta m).
    const double dmargin = -beta * sigmoid(-beta * margin) * inv;
    for (int t = 0; t < prompt.horizon; ++t) {
      policy.accumulate_grad_logprob(prompt,
                                     TokenSpan(pair.positive).first(
                                         static_cast<std::size_t>(t)),
                                     pair.positive[static_cast<std::size_t>(t)],
                                     dmargin, grad);
      policy.accumulate_grad_logprob(prompt,
                                     TokenSpan(pair.negative).first(
                                         static_cast<std::size_t>(t)),
                                     pair.negative[static_cast<std::size_t>(t)],
                                     -dmargin, grad);
    }
  }
  return loss;
}

std::vector<double> normalized_advantages(std::span<const double> rewards) {
  const int n = static_cast<int>(rewards.size());
  if (n < 2) throw InputError("grpo: batch must hold at least 2 sequences");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= n;
  if (var <= 0.0)
    throw InputError("grpo: zero reward spread (degenerate batch)");
  const double std_dev = std::sqrt(var);
  std::vector<double> adv(rewards.size());
  for (int i = 0; i < n; ++i)
    adv[static_cast<std::size_t>(i)] =
        (rewards[static_cast<std::size_t>(i)] - mean) / std_dev;
  return adv;
}

double grpo_loss_and_grad_with_advantages(
    const PolicyTrainState& state, std::span<const std::vector<int>> batch,
    std::span<const double> advantages, const Prompt& prompt,
    std::span<double> grad) {
  if (batch.empty()) throw InputError("grpo: empty batch");
  if (batch.size() != advantages.size())
    throw InputError("grpo: batch/advantage size mismatch");
  const NeuralModel& policy = *state.policy;
  const NeuralModel& ref = *state.reference;
  const double beta = state.beta;
  const int T = prompt.horizon;
  const double inv = 1.0 / (static_cast<double>(batch.size()) * T);

  std::vector<double> lp_theta(static_cast<std::size_t>(policy.vocab().size));
  std::vector<double> lp_ref(static_cast<std::size_t>(policy.vocab().size));
  double loss = 0.0;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& gen = batch[n];
    check_complete(prompt, gen);
    const double adv = advantages[n];
    for (int t = 0; t < T; ++t) {
      const TokenSpan prefix = TokenSpan(gen).first(static_cast<std::size_t>(t));
      const int tok = gen[static_cast<std::size_t>(t)];
      policy.next_token_logprobs(prompt, prefix, lp_theta);
      ref.next_token_logprobs(prompt, prefix, lp_ref);
      const double log_ratio_ref =
          lp_ref[static_cast<std::size_t>(tok)] -
          lp_theta[static_cast<std::size_t>(tok)];
      const double ratio_ref = std::exp(log_ratio_ref);
      // Ratio term: value -adv (pi/sg(pi) == 1), gradient -adv * grad log pi.
      loss += inv * (-adv + beta * (ratio_ref - log_ratio_ref - 1.0));
      const double coeff = inv * (-adv + beta * (1.0 - ratio_ref));
      policy.accumulate_grad_logprob(prompt, prefix, tok, coeff, grad);
    }
  }
  return loss;
}

double grpo_loss_and_grad(const PolicyTrainState& state,
                          std::span<const std::vector<int>> batch,
                          std::span<const double> rewards, const Prompt& prompt,
                          std::span<double> grad) {
  const auto adv = normalized_advantages(rewards);
  return grpo_loss_and_grad_with_advantages(state, batch, adv, prompt, grad);
}

std::unique_ptr<NeuralModel> train_baseline(
    const NeuralModel& reference, const Potential& pot, const Prompt& prompt,
    const BaselineConfig& config, RngStream rng,
    std::vector<BaselineTraceRow>* trace) {
  PolicyTrainState state(reference, config.beta);
  Optimizer opt(config.optimizer, state.policy->param_count(),
                config.learning_rate);
  std::vector<double> grad(state.policy->param_count());
  const RewardFn reward = [&pot](const Prompt& p, TokenSpan gen) {
    return pot.log_score(p, gen);
  };

  for (int step = 0; step < config.steps; ++step) {
    const RngStream step_rng = rng.sub("step", static_cast<uint64_t>(step));
    std::fill(grad.begin(), grad.end(), 0.0);
    double mean_reward = 0.0;
    bool skip_update = false;

    if (config.kind == BaselineKind::kDpo) {
      const auto pairs = build_preference_batch(reference, reward, prompt,
                                                config.batch,
                                                step_rng.sub("batch"));
      for (const auto& p : pairs)
        mean_reward += 0.5 * (p.reward_positive + p.reward_negative);
      mean_reward /= static_cast<double>(pairs.size());
      dpo_loss_and_grad(state, pairs, prompt, grad);
    } else {
      std::vector<std::vector<int>> batch(
          static_cast<std::size_t>(config.batch));
      std::vector<double> rewards(static_cast<std::size_t>(config.batch));
      const RngStream batch_rng = step_rng.sub("batch");
      for (int i = 0; i < config.batch; ++i) {
        batch[static_cast<std::size_t>(i)] = state.policy->sample_sequence(
            prompt, batch_rng.sub(static_cast<uint64_t>(i)));
        rewards[static_cast<std::size_t>(i)] =
            reward(prompt, batch[static_cast<std::size_t>(i)]);
        mean_reward += rewards[static_cast<std::size_t>(i)];
      }
      mean_reward /= static_cast<double>(config.batch);
      try {
        grpo_loss_and_grad(state, batch, rewards, prompt, grad);
      } catch (const InputError&) {
        skip_update = true;  // zero reward spread: no learning signal
      }
    }

    if (trace != nullptr &&
        (step % config.trace_every == 0 || step + 1 == config.steps)) {
      BaselineTraceRow row;
      row.step = step;
      row.mean_reward = mean_reward;
      const RngStream probe = step_rng.sub("kl_probe");
      const int probes = 16;
      double kl = 0.0;
      for (int i = 0; i < probes; ++i) {
        const auto gen = state.policy->sample_sequence(
            prompt, probe.sub(static_cast<uint64_t>(i)));
        kl += state.policy->sequence_logprob(prompt, gen) -
              state.reference->sequence_logprob(prompt, gen);
      }
      row.kl_to_reference = kl / probes;
      trace->push_back(row);
    }

    if (!skip_update) opt.update(state.policy->params(), grad);
  }
  return std::move(state.policy);
}

std::string baseline_trace_to_jsonl(
    const std::vector<BaselineTraceRow>& trace) {
  std::ostringstream os;
  char buf[64];
  for (const auto& row : trace) {
    os << "{\"step\":" << row.step << ",\"mean_reward\":";
    std::snprintf(buf, sizeof(buf), "%.12g", row.mean_reward);
    os << buf << ",\"kl_to_reference\":";
    std::snprintf(buf, sizeof(buf), "%.12g", row.kl_to_reference);
    os << buf << "}\n";
  }
  return os.str();
}

}  // namespace tsmc
