#include "tsmc/oracle.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "tsmc/errors.hpp"
#include "tsmc/numerics.hpp"
#include "tsmc/smc.hpp"

namespace tsmc {

namespace {

int64_t checked_leaf_count(int vocab_size, int horizon) {
  int64_t n = 1;
  for (int t = 0; t < horizon; ++t) {
    n *= vocab_size;
    if (n > kEnumerationGuard)
      throw CapacityError("enumeration guard exceeded: vocab^T > 2^22");
  }
  return n;
}

}  // namespace

int64_t ExactDistribution::encode(TokenSpan gen) const {
  int64_t idx = 0;
  for (int tok : gen) {
    if (tok < 0 || tok >= vocab.size) throw InputError("token id out of range");
    idx = idx * vocab.size + tok;
  }
  return idx;
}

void ExactDistribution::decode(int64_t idx, int length,
                               std::vector<int>& gen) const {
  gen.assign(static_cast<std::size_t>(length), 0);
  for (int t = length - 1; t >= 0; --t) {
    gen[static_cast<std::size_t>(t)] = static_cast<int>(idx % vocab.size);
    idx /= vocab.size;
  }
}

double ExactDistribution::log_sigma(TokenSpan gen) const {
  check_complete(prompt, gen);
  return leaf_log_sigma_tilde[static_cast<std::size_t>(encode(gen))] - log_z;
}

double ExactDistribution::sigma(TokenSpan gen) const {
  return std::exp(log_sigma(gen));
}

double ExactDistribution::log_marginal(TokenSpan prefix) const {
  const int t = static_cast<int>(prefix.size());
  if (t < 1 || t > prompt.horizon) throw InputError("bad marginal length");
  return log_sigma_marginal[static_cast<std::size_t>(t)]
                           [static_cast<std::size_t>(encode(prefix))];
}

double ExactDistribution::expectation(std::span<const double> leaf_values) const {
  if (static_cast<int64_t>(leaf_values.size()) != leaf_count())
    throw InputError("leaf value vector size mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < leaf_count(); ++i)
    acc += std::exp(leaf_log_sigma_tilde[static_cast<std::size_t>(i)] - log_z) *
           leaf_values[static_cast<std::size_t>(i)];
  return acc;
}

ExactDistribution enumerate_target(const AutoregressiveModel& model,
                                   const SequenceScorer& pot,
                                   const Prompt& prompt) {
  const int v = model.vocab().size;
  const int T = prompt.horizon;
  const int64_t leaves = checked_leaf_count(v, T);

  ExactDistribution out;
  out.vocab = model.vocab();
  out.prompt = prompt;

  // Forward pass: log p(s_{1:t}) level by level.
  std::vector<double> prev(1, 0.0);
  std::vector<double> lp(static_cast<std::size_t>(v));
  std::vector<int> gen;
  for (int t = 0; t < T; ++t) {
    std::vector<double> cur(prev.size() * static_cast<std::size_t>(v));
    gen.assign(static_cast<std::size_t>(t), 0);
    for (int64_t parent = 0; parent < static_cast<int64_t>(prev.size());
         ++parent) {
      int64_t rem = parent;
      for (int i = t - 1; i >= 0; --i) {
        gen[static_cast<std::size_t>(i)] = static_cast<int>(rem % v);
        rem /= v;
      }
      model.next_token_logprobs(prompt, gen, lp);
      for (int tok = 0; tok < v; ++tok)
        cur[static_cast<std::size_t>(parent * v + tok)] =
            prev[static_cast<std::size_t>(parent)] +
            lp[static_cast<std::size_t>(tok)];
    }
    prev = std::move(cur);
  }

  // Leaves: log sigma_tilde = log p + log phi.
  out.leaf_log_sigma_tilde.resize(static_cast<std::size_t>(leaves));
  gen.assign(static_cast<std::size_t>(T), 0);
  for (int64_t idx = 0; idx < leaves; ++idx) {
    int64_t rem = idx;
    for (int t = T - 1; t >= 0; --t) {
      gen[static_cast<std::size_t>(t)] = static_cast<int>(rem % v);
      rem /= v;
    }
    out.leaf_log_sigma_tilde[static_cast<std::size_t>(idx)] =
        prev[static_cast<std::size_t>(idx)] + pot.log_score(prompt, gen);
  }

  // Bottom-up unnormalized marginals, then normalize by log Z.
  out.log_sigma_marginal.assign(static_cast<std::size_t>(T) + 1, {});
  out.log_sigma_marginal[static_cast<std::size_t>(T)] =
      out.leaf_log_sigma_tilde;
  for (int t = T - 1; t >= 0; --t) {
    const auto& child = out.log_sigma_marginal[static_cast<std::size_t>(t) + 1];
    auto& level = out.log_sigma_marginal[static_cast<std::size_t>(t)];
    level.resize(child.size() / static_cast<std::size_t>(v));
    for (int64_t i = 0; i < static_cast<int64_t>(level.size()); ++i)
      level[static_cast<std::size_t>(i)] = logsumexp(
          {child.data() + i * v, static_cast<std::size_t>(v)});
  }
  out.log_z = out.log_sigma_marginal[0][0];
  for (auto& level : out.log_sigma_marginal)
    for (auto& x : level) x -= out.log_z;
  return out;
}

double exact_kl_target_vs_proposal(const ExactDistribution& exact,
                                   const AutoregressiveModel& model,
                                   const Twist& twist,
                                   const SequenceScorer& pot) {
  const int v = exact.vocab.size;
  const int T = exact.prompt.horizon;
  checked_leaf_count(v, T);

  std::vector<double> prev(1, 0.0);  // log q(s_{1:t})
  std::vector<int> gen;
  for (int t = 0; t < T; ++t) {
    std::vector<double> cur(prev.size() * static_cast<std::size_t>(v));
    gen.assign(static_cast<std::size_t>(t), 0);
    for (int64_t parent = 0; parent < static_cast<int64_t>(prev.size());
         ++parent) {
      int64_t rem = parent;
      for (int i = t - 1; i >= 0; --i) {
        gen[static_cast<std::size_t>(i)] = static_cast<int>(rem % v);
        rem /= v;
      }
      const StepProposal prop =
          propose_step(model, twist, pot, exact.prompt, gen);
      for (int tok = 0; tok < v; ++tok)
        cur[static_cast<std::size_t>(parent * v + tok)] =
            prev[static_cast<std::size_t>(parent)] +
            prop.log_q[static_cast<std::size_t>(tok)];
    }
    prev = std::move(cur);
  }

  double kl = 0.0;
  for (int64_t i = 0; i < exact.leaf_count(); ++i) {
    const double ls =
        exact.leaf_log_sigma_tilde[static_cast<std::size_t>(i)] - exact.log_z;
    const double p = std::exp(ls);
    if (p > 0.0) kl += p * (ls - prev[static_cast<std::size_t>(i)]);
  }
  return kl;
}

double exact_ctl_loss(const ExactDistribution& exact,
                      const AutoregressiveModel& model, const Twist& twist) {
  const int v = exact.vocab.size;
  const int T = exact.prompt.horizon;
  checked_leaf_count(v, T);

  double loss = 0.0;
  std::vector<double> prev_logp(1, 0.0);  // log p(s_{1:t}) under `model`
  std::vector<double> lp(static_cast<std::size_t>(v));
  std::vector<double> lt(static_cast<std::size_t>(v));
  std::vector<int> gen;
  for (int t = 1; t <= T; ++t) {
    std::vector<double> logp(prev_logp.size() * static_cast<std::size_t>(v));
    std::vector<double> log_pi_tilde(logp.size());
    gen.assign(static_cast<std::size_t>(t) - 1, 0);
    for (int64_t parent = 0; parent < static_cast<int64_t>(prev_logp.size());
         ++parent) {
      int64_t rem = parent;
      for (int i = t - 2; i >= 0; --i) {
        gen[static_cast<std::size_t>(i)] = static_cast<int>(rem % v);
        rem /= v;
      }
      model.next_token_logprobs(exact.prompt, gen, lp);
      twist.log_twist_all(exact.prompt, gen, lt);
      for (int tok = 0; tok < v; ++tok) {
        const std::size_t c = static_cast<std::size_t>(parent * v + tok);
        logp[c] = prev_logp[static_cast<std::size_t>(parent)] +
                  lp[static_cast<std::size_t>(tok)];
        log_pi_tilde[c] = logp[c] + lt[static_cast<std::size_t>(tok)];
      }
    }
    const double log_z_pi = logsumexp(log_pi_tilde);
    const auto& sig = exact.log_sigma_marginal[static_cast<std::size_t>(t)];
    double kl_t = 0.0;
    for (int64_t i = 0; i < static_cast<int64_t>(sig.size()); ++i) {
      const double p = std::exp(sig[static_cast<std::size_t>(i)]);
      if (p > 0.0)
        kl_t += p * (sig[static_cast<std::size_t>(i)] -
                     (log_pi_tilde[static_cast<std::size_t>(i)] - log_z_pi));
    }
    loss += kl_t;
    prev_logp = std::move(logp);
  }
  return loss;
}

double exact_expected_classifier(const ExactDistribution& exact,
                                 const Potential& pot) {
  std::vector<int> gen;
  double acc = 0.0;
  for (int64_t i = 0; i < exact.leaf_count(); ++i) {
    exact.decode(i, exact.prompt.horizon, gen);
    acc += std::exp(exact.leaf_log_sigma_tilde[static_cast<std::size_t>(i)] -
                    exact.log_z) *
           pot.classifier_prob(exact.prompt, gen);
  }
  return acc;
}

RejectionResult rejection_sample(const AutoregressiveModel& model,
                                 const SequenceScorer& pot,
                                 const Prompt& prompt, int64_t n_accepts,
                                 RngStream rng, int64_t attempt_cap) {
  if (n_accepts < 1) throw InputError("n_accepts must be >= 1");
  const RngStream cand = rng.sub("candidate");
  const RngStream acc = rng.sub("accept");
  RejectionResult out;
  out.samples.reserve(static_cast<std::size_t>(n_accepts));
  int64_t attempt = 0;
  while (static_cast<int64_t>(out.samples.size()) < n_accepts) {
    if (attempt >= attempt_cap) {
      std::ostringstream msg;
      msg << "rejection sampling starved: " << out.samples.size() << "/"
          << n_accepts << " accepts after " << attempt << " attempts";
      throw StarvationError(msg.str());
    }
    auto gen = model.sample_sequence(
        prompt, cand.sub(static_cast<uint64_t>(attempt)));
    const double log_phi = pot.log_score(prompt, gen);
    const double u = acc.uniform(static_cast<uint64_t>(attempt));
    ++attempt;
    if (u < std::exp(log_phi)) out.samples.push_back(std::move(gen));
  }
  out.attempts = attempt;
  out.acceptance_ratio =
      static_cast<double>(out.samples.size()) / static_cast<double>(attempt);
  return out;
}

void dump_sigma_csv(const ExactDistribution& exact, std::ostream& os) {
  os << "tokens,log_sigma_tilde,sigma\n";
  std::vector<int> gen;
  char buf[40];
  for (int64_t i = 0; i < exact.leaf_count(); ++i) {
    exact.decode(i, exact.prompt.horizon, gen);
    for (std::size_t t = 0; t < gen.size(); ++t) {
      if (t) os << ' ';
      os << exact.vocab.name(gen[t]);
    }
    std::snprintf(buf, sizeof(buf), "%.12g",
                  exact.leaf_log_sigma_tilde[static_cast<std::size_t>(i)]);
    os << ',' << buf;
    std::snprintf(buf, sizeof(buf), "%.12g",
                  std::exp(exact.leaf_log_sigma_tilde[static_cast<std::size_t>(i)] -
                           exact.log_z));
    os << ',' << buf << '\n';
  }
}

}  // namespace tsmc
