#include "tsmc/ctl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "tsmc/errors.hpp"
#include "tsmc/numerics.hpp"
#include "tsmc/parallel.hpp"
#include "tsmc/smc.hpp"

namespace tsmc {

namespace {

constexpr int64_t kTrajChunk = 32;

// Column-normalizes raw per-(t, k) log-weights in place; throws when a column
// has no weight above the floor.
void normalize_columns(std::vector<double>& w, int num_seq, int horizon,
                       double degeneracy_log_floor) {
  for (int t = 0; t < horizon; ++t) {
    std::span<double> col(w.data() + static_cast<std::size_t>(t) * num_seq,
                          static_cast<std::size_t>(num_seq));
    double max_w = kNegInf;
    for (double x : col) max_w = std::max(max_w, x);
    if (!(max_w > degeneracy_log_floor)) {
      std::ostringstream msg;
      msg << "batch degenerate at t=" << t + 1 << ": max log-weight " << max_w;
      throw DegeneracyError(msg.str());
    }
    const double lz = logsumexp(col);
    for (double& x : col) x = std::exp(x - lz);
  }
}

struct BatchLayout {
  WeightedPrefixBatch batch;
  const TwistNetwork* net = nullptr;

  BatchLayout(const Prompt& prompt, const Twist& twist, int k) {
    batch.prompt = prompt;
    batch.num_sequences = k;
    batch.horizon = prompt.horizon;
    batch.tokens.assign(
        static_cast<std::size_t>(k) * static_cast<std::size_t>(prompt.horizon),
        0);
    batch.log_target.assign(static_cast<std::size_t>(k), 0.0);
    batch.log_proposal.assign(static_cast<std::size_t>(k), 0.0);
    batch.log_twist_token.assign(batch.tokens.size(), 0.0);
    net = dynamic_cast<const TwistNetwork*>(&twist);
    if (net != nullptr) {
      batch.hidden_width = net->hidden();
      batch.active_width = net->active_count();
      batch.twist_hidden.assign(
          batch.tokens.size() * static_cast<std::size_t>(batch.hidden_width),
          0.0);
      batch.twist_active.assign(
          batch.tokens.size() * static_cast<std::size_t>(batch.active_width),
          0);
    }
  }

  std::span<double> hidden_slot(int k, int t) {
    return {batch.twist_hidden.data() +
                (static_cast<std::size_t>(k) * batch.horizon + t) *
                    batch.hidden_width,
            static_cast<std::size_t>(batch.hidden_width)};
  }
  std::span<int> active_slot(int k, int t) {
    return {batch.twist_active.data() +
                (static_cast<std::size_t>(k) * batch.horizon + t) *
                    batch.active_width,
            static_cast<std::size_t>(batch.active_width)};
  }

  // Twist values over all candidate tokens at the parent prefix of step t+1,
  // caching activations when the twist is a network.
  void eval_twist(const Twist& twist, TokenSpan gen, int k, int t,
                  std::span<double> lt) {
    if (net != nullptr) {
      net->log_twist_all_cached(batch.prompt, gen, lt, hidden_slot(k, t),
                                active_slot(k, t));
    } else {
      twist.log_twist_all(batch.prompt, gen, lt);
    }
  }
};

}  // namespace

double WeightedPrefixBatch::ess(int t) const {
  std::span<const double> col(
      weights.data() + static_cast<std::size_t>(t - 1) * num_sequences,
      static_cast<std::size_t>(num_sequences));
  double s1 = 0.0, s2 = 0.0;
  for (double w : col) {
    s1 += w;
    s2 += w * w;
  }
  return s2 > 0.0 ? s1 * s1 / s2 : 0.0;
}

WeightedPrefixBatch positive_batch(const AutoregressiveModel& model,
                                   const Twist& twist,
                                   const EffectivePotential& pot,
                                   const Prompt& prompt, int k_pos,
                                   RngStream rng, int threads,
                                   double degeneracy_log_floor) {
  if (k_pos < 1) throw InputError("positive batch size must be >= 1");
  const int T = prompt.horizon;
  const int v = model.vocab().size;
  BatchLayout layout(prompt, twist, k_pos);
  auto& batch = layout.batch;

  parallel_for(
      k_pos, threads,
      [&](int64_t k) {
        const RngStream traj = rng.sub(static_cast<uint64_t>(k));
        std::vector<int> gen;
        gen.reserve(static_cast<std::size_t>(T));
        std::vector<double> lp(static_cast<std::size_t>(v));
        std::vector<double> psi(static_cast<std::size_t>(v));
        std::vector<double> s(static_cast<std::size_t>(v));
        std::vector<int> full;
        double log_q = 0.0;
        for (int t = 0; t < T; ++t) {
          model.next_token_logprobs(prompt, gen, lp);
          // The twist at the parent is evaluated (and cached) at every step:
          // the final step proposes with phi but the gradient's t = T terms
          // still need psi(s_{1:T}).
          layout.eval_twist(twist, gen, static_cast<int>(k), t, psi);
          if (t == T - 1) {
            full.assign(gen.begin(), gen.end());
            full.push_back(0);
            for (int tok = 0; tok < v; ++tok) {
              full.back() = tok;
              s[static_cast<std::size_t>(tok)] =
                  lp[static_cast<std::size_t>(tok)] +
                  pot.log_score(prompt, full);
            }
          } else {
            for (int tok = 0; tok < v; ++tok)
              s[static_cast<std::size_t>(tok)] =
                  lp[static_cast<std::size_t>(tok)] +
                  psi[static_cast<std::size_t>(tok)];
          }
          const double lz = logsumexp(s);
          const double u = traj.uniform(static_cast<uint64_t>(t));
          double cum = 0.0;
          int tok = v - 1;
          for (int cand = 0; cand < v; ++cand) {
            cum += std::exp(s[static_cast<std::size_t>(cand)] - lz);
            if (u < cum) {
              tok = cand;
              break;
            }
          }
          log_q += s[static_cast<std::size_t>(tok)] - lz;
          batch.tokens[static_cast<std::size_t>(k) * T + t] = tok;
          batch.log_twist_token[static_cast<std::size_t>(k) * T + t] =
              psi[static_cast<std::size_t>(tok)];
          gen.push_back(tok);
        }
        batch.log_proposal[static_cast<std::size_t>(k)] = log_q;
        batch.log_target[static_cast<std::size_t>(k)] =
            pot.log_target_unnorm(prompt, gen);
      });

  // Self-normalized weights, identical down every column.
  std::vector<double> raw(static_cast<std::size_t>(k_pos));
  for (int k = 0; k < k_pos; ++k)
    raw[static_cast<std::size_t>(k)] =
        batch.log_target[static_cast<std::size_t>(k)] -
        batch.log_proposal[static_cast<std::size_t>(k)];
  batch.weights.resize(static_cast<std::size_t>(T) * k_pos);
  for (int t = 0; t < T; ++t)
    std::copy(raw.begin(), raw.end(),
              batch.weights.begin() + static_cast<std::size_t>(t) * k_pos);
  normalize_columns(batch.weights, k_pos, T, degeneracy_log_floor);
  return batch;
}

WeightedPrefixBatch positive_batch_resampled(const AutoregressiveModel& model,
                                             const Twist& twist,
                                             const EffectivePotential& pot,
                                             const Prompt& prompt, int k_pos,
                                             RngStream rng) {
  SmcConfig smc_config;
  smc_config.num_particles = k_pos;
  const SmcResult res =
      tsmc_sample(model, twist, pot, prompt, smc_config, rng);
  const int T = prompt.horizon;
  const int v = model.vocab().size;
  BatchLayout layout(prompt, twist, k_pos);
  auto& batch = layout.batch;
  for (int k = 0; k < k_pos; ++k) {
    const auto& gen = res.sequences[static_cast<std::size_t>(k)];
    std::copy(gen.begin(), gen.end(),
              batch.tokens.begin() + static_cast<std::size_t>(k) * T);
    batch.log_target[static_cast<std::size_t>(k)] =
        pot.log_target_unnorm(prompt, gen);
    batch.log_proposal[static_cast<std::size_t>(k)] = 0.0;
    std::vector<double> lt(static_cast<std::size_t>(v));
    for (int t = 0; t < T; ++t) {
      layout.eval_twist(twist, TokenSpan(gen).first(static_cast<std::size_t>(t)),
                        k, t, lt);
      batch.log_twist_token[static_cast<std::size_t>(k) * T + t] =
          lt[static_cast<std::size_t>(gen[static_cast<std::size_t>(t)])];
    }
  }
  batch.weights.assign(static_cast<std::size_t>(T) * k_pos,
                       1.0 / static_cast<double>(k_pos));
  return batch;
}

WeightedPrefixBatch negative_batch(const AutoregressiveModel& model,
                                   const Twist& twist, const Prompt& prompt,
                                   int k_neg, RngStream rng, int threads,
                                   double degeneracy_log_floor) {
  if (k_neg < 1) throw InputError("negative batch size must be >= 1");
  const int T = prompt.horizon;
  const int v = model.vocab().size;
  BatchLayout layout(prompt, twist, k_neg);
  auto& batch = layout.batch;
  batch.weights.resize(static_cast<std::size_t>(T) * k_neg);

  parallel_for(
      k_neg, threads,
      [&](int64_t k) {
        const RngStream traj = rng.sub(static_cast<uint64_t>(k));
        std::vector<int> gen;
        gen.reserve(static_cast<std::size_t>(T));
        std::vector<double> lp(static_cast<std::size_t>(v));
        std::vector<double> lt(static_cast<std::size_t>(v));
        std::vector<double> s(static_cast<std::size_t>(v));
        double log_q = 0.0;
        double cum_weight = 0.0;  // sum of incremental log-weights
        double log_psi_prefix = 0.0;
        for (int t = 0; t < T; ++t) {
          model.next_token_logprobs(prompt, gen, lp);
          layout.eval_twist(twist, gen, static_cast<int>(k), t, lt);
          for (int tok = 0; tok < v; ++tok)
            s[static_cast<std::size_t>(tok)] =
                lp[static_cast<std::size_t>(tok)] +
                lt[static_cast<std::size_t>(tok)];
          const double lz = logsumexp(s);
          cum_weight += lz - log_psi_prefix;
          batch.weights[static_cast<std::size_t>(t) * k_neg +
                        static_cast<std::size_t>(k)] = cum_weight;

          const double u = traj.uniform(static_cast<uint64_t>(t));
          double cdf = 0.0;
          int tok = v - 1;
          for (int cand = 0; cand < v; ++cand) {
            cdf += std::exp(s[static_cast<std::size_t>(cand)] - lz);
            if (u < cdf) {
              tok = cand;
              break;
            }
          }
          log_q += s[static_cast<std::size_t>(tok)] - lz;
          log_psi_prefix = lt[static_cast<std::size_t>(tok)];
          batch.tokens[static_cast<std::size_t>(k) * T + t] = tok;
          batch.log_twist_token[static_cast<std::size_t>(k) * T + t] =
              log_psi_prefix;
          gen.push_back(tok);
        }
        batch.log_proposal[static_cast<std::size_t>(k)] = log_q;
        batch.log_target[static_cast<std::size_t>(k)] = cum_weight;
      });

  normalize_columns(batch.weights, k_neg, T, degeneracy_log_floor);
  return batch;
}

void ctl_gradient(const TwistNetwork& twist, const WeightedPrefixBatch& pos,
                  const WeightedPrefixBatch& neg, std::span<double> grad,
                  int threads) {
  if (pos.horizon != neg.horizon ||
      pos.prompt.tokens != neg.prompt.tokens)
    throw InputError("ctl_gradient: batches must share prompt and horizon");
  for (const auto* batch : {&pos, &neg})
    if (batch->has_cache() && (batch->hidden_width != twist.hidden() ||
                               batch->active_width != twist.active_count()))
      throw InputError(
          "ctl_gradient: batch activations come from a different network");
  std::fill(grad.begin(), grad.end(), 0.0);
  const int T = pos.horizon;

  auto accumulate_traj = [&twist, T](const WeightedPrefixBatch& batch,
                                     double sign, int64_t k,
                                     std::span<double> out) {
    const TokenSpan gen = batch.sequence(static_cast<int>(k));
    for (int t = 1; t <= T; ++t) {
      const double w = sign * batch.weight(t, static_cast<int>(k));
      if (w == 0.0) continue;
      const int tok = gen[static_cast<std::size_t>(t - 1)];
      if (batch.has_cache()) {
        const std::size_t base = static_cast<std::size_t>(k) * T + (t - 1);
        twist.accumulate_grad_cached(
            {batch.twist_active.data() + base * batch.active_width,
             static_cast<std::size_t>(batch.active_width)},
            {batch.twist_hidden.data() + base * batch.hidden_width,
             static_cast<std::size_t>(batch.hidden_width)},
            tok, w, out);
      } else {
        twist.accumulate_grad_log_twist(
            batch.prompt, gen.first(static_cast<std::size_t>(t - 1)), tok, w,
            out);
      }
    }
  };

  const int64_t n_pos = pos.num_sequences;
  const int64_t n_neg = neg.num_sequences;
  const int64_t chunks_pos = num_chunks(n_pos, kTrajChunk);
  const int64_t chunks_neg = num_chunks(n_neg, kTrajChunk);
  std::vector<std::vector<double>> partial(
      static_cast<std::size_t>(chunks_pos + chunks_neg),
      std::vector<double>(grad.size(), 0.0));

  parallel_for_chunks(
      n_pos, threads, kTrajChunk, [&](int64_t c, int64_t begin, int64_t end) {
        auto& buf = partial[static_cast<std::size_t>(c)];
        for (int64_t k = begin; k < end; ++k)
          accumulate_traj(pos, +1.0, k, buf);
      });
  parallel_for_chunks(
      n_neg, threads, kTrajChunk, [&](int64_t c, int64_t begin, int64_t end) {
        auto& buf = partial[static_cast<std::size_t>(chunks_pos + c)];
        for (int64_t k = begin; k < end; ++k)
          accumulate_traj(neg, -1.0, k, buf);
      });
  for (const auto& buf : partial)
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += buf[i];
}

TwistNetwork train_twist(const AutoregressiveModel& model,
                         const EffectivePotential& pot, const Prompt& prompt,
                         TwistNetwork twist, const CtlConfig& config,
                         RngStream rng, std::vector<CtlTraceRow>* trace) {
  if (config.steps < 1) throw InputError("ctl step budget must be >= 1");
  Optimizer opt(config.optimizer, twist.param_count(), config.learning_rate);
  std::vector<double> ascent(twist.param_count());
  std::vector<double> descent(twist.param_count());

  for (int step = 0; step < config.steps; ++step) {
    const RngStream step_rng = rng.sub("step", static_cast<uint64_t>(step));
    WeightedPrefixBatch pos =
        config.resampled_positives
            ? positive_batch_resampled(model, twist, pot, prompt,
                                       config.positive_particles,
                                       step_rng.sub("pos"))
            : positive_batch(model, twist, pot, prompt,
                             config.positive_particles, step_rng.sub("pos"),
                             config.threads, config.degeneracy_log_floor);
    WeightedPrefixBatch neg = negative_batch(
        model, twist, prompt, config.negative_particles, step_rng.sub("neg"),
        config.threads, config.degeneracy_log_floor);
    ctl_gradient(twist, pos, neg, ascent, config.threads);

    if (trace != nullptr &&
        (step % config.trace_every == 0 || step + 1 == config.steps)) {
      CtlTraceRow row;
      row.step = step;
      row.ess_pos = pos.ess(1);
      double mean_ess = 0.0;
      for (int t = 1; t <= prompt.horizon; ++t) mean_ess += neg.ess(t);
      row.ess_neg_mean = mean_ess / prompt.horizon;
      double proxy = 0.0;
      for (int t = 1; t <= prompt.horizon; ++t) {
        double p_mean = 0.0, n_mean = 0.0;
        for (int k = 0; k < pos.num_sequences; ++k)
          p_mean += pos.weight(t, k) *
                    pos.log_twist_token[static_cast<std::size_t>(k) *
                                            prompt.horizon +
                                        (t - 1)];
        for (int k = 0; k < neg.num_sequences; ++k)
          n_mean += neg.weight(t, k) *
                    neg.log_twist_token[static_cast<std::size_t>(k) *
                                            prompt.horizon +
                                        (t - 1)];
        proxy += p_mean - n_mean;
      }
      row.proxy_loss = proxy;
      double norm = 0.0;
      for (double g : ascent) norm += g * g;
      row.grad_norm = std::sqrt(norm);
      trace->push_back(row);
    }

    for (std::size_t i = 0; i < ascent.size(); ++i) descent[i] = -ascent[i];
    opt.update(twist.params(), descent);
  }
  return twist;
}

std::string ctl_trace_to_jsonl(const std::vector<CtlTraceRow>& trace) {
  std::ostringstream os;
  char buf[64];
  for (const auto& row : trace) {
    os << "{\"step\":" << row.step << ",\"ess_pos\":";
    std::snprintf(buf, sizeof(buf), "%.12g", row.ess_pos);
    os << buf << ",\"ess_neg_mean\":";
    std::snprintf(buf, sizeof(buf), "%.12g", row.ess_neg_mean);
    os << buf << ",\"proxy_loss\":";
    std::snprintf(buf, sizeof(buf), "%.12g", row.proxy_loss);
    os << buf << ",\"grad_norm\":";
    std::snprintf(buf, sizeof(buf), "%.12g", row.grad_norm);
    os << buf << "}\n";
  }
  return os.str();
}

}  // namespace tsmc
