#include "tsmc/smc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "tsmc/errors.hpp"
#include "tsmc/numerics.hpp"

namespace tsmc {

ResampleScheme resample_scheme_from_string(const std::string& s) {
  if (s == "multinomial") return ResampleScheme::kMultinomial;
  if (s == "systematic") return ResampleScheme::kSystematic;
  throw ConfigError("unknown resampling scheme: " + s);
}

std::string to_string(ResampleScheme s) {
  return s == ResampleScheme::kMultinomial ? "multinomial" : "systematic";
}

ResampleTrigger resample_trigger_from_string(const std::string& s) {
  if (s == "every_step") return ResampleTrigger::kEveryStep;
  if (s == "ess_threshold") return ResampleTrigger::kEssThreshold;
  throw ConfigError("unknown resampling trigger: " + s);
}

std::string to_string(ResampleTrigger t) {
  return t == ResampleTrigger::kEveryStep ? "every_step" : "ess_threshold";
}

StepProposal propose_next(const AutoregressiveModel& model, const Twist& twist,
                          const Prompt& prompt, TokenSpan gen) {
  const int v = model.vocab().size;
  StepProposal out;
  out.log_q.resize(static_cast<std::size_t>(v));
  std::vector<double> lt(static_cast<std::size_t>(v));
  model.next_token_logprobs(prompt, gen, out.log_q);
  twist.log_twist_all(prompt, gen, lt);
  for (int i = 0; i < v; ++i) out.log_q[static_cast<std::size_t>(i)] += lt[static_cast<std::size_t>(i)];
  out.log_normalizer = logsumexp(out.log_q);
  for (auto& q : out.log_q) q -= out.log_normalizer;
  return out;
}

StepProposal propose_final(const AutoregressiveModel& model,
                           const SequenceScorer& pot, const Prompt& prompt,
                           TokenSpan gen) {
  if (static_cast<int>(gen.size()) != prompt.horizon - 1)
    throw InputError("final-step proposal requires a length T-1 prefix");
  const int v = model.vocab().size;
  StepProposal out;
  out.log_q.resize(static_cast<std::size_t>(v));
  model.next_token_logprobs(prompt, gen, out.log_q);
  std::vector<int> full(gen.begin(), gen.end());
  full.push_back(0);
  for (int tok = 0; tok < v; ++tok) {
    full.back() = tok;
    out.log_q[static_cast<std::size_t>(tok)] += pot.log_score(prompt, full);
  }
  out.log_normalizer = logsumexp(out.log_q);
  for (auto& q : out.log_q) q -= out.log_normalizer;
  return out;
}

StepProposal propose_step(const AutoregressiveModel& model, const Twist& twist,
                          const SequenceScorer& pot, const Prompt& prompt,
                          TokenSpan gen) {
  if (static_cast<int>(gen.size()) == prompt.horizon - 1)
    return propose_final(model, pot, prompt, gen);
  return propose_next(model, twist, prompt, gen);
}

double incremental_log_weight(const AutoregressiveModel& model,
                              const Twist& twist, const SequenceScorer& pot,
                              const Prompt& prompt, TokenSpan parent) {
  const StepProposal prop = propose_step(model, twist, pot, prompt, parent);
  return prop.log_normalizer - twist.log_prefix_value(prompt, parent);
}

double incremental_log_weight_psi(const AutoregressiveModel& model,
                                  const Twist& twist, const Prompt& prompt,
                                  TokenSpan parent) {
  const StepProposal prop = propose_next(model, twist, prompt, parent);
  return prop.log_normalizer - twist.log_prefix_value(prompt, parent);
}

ParticleSystem ParticleSystem::init(const Prompt& prompt, int num_particles) {
  if (num_particles < 1) throw InputError("particle count must be >= 1");
  ParticleSystem ps;
  ps.prompt = prompt;
  ps.particles.assign(static_cast<std::size_t>(num_particles), {});
  ps.log_acc.assign(static_cast<std::size_t>(num_particles), 0.0);
  ps.log_incr.assign(static_cast<std::size_t>(num_particles), 0.0);
  ps.log_psi.assign(static_cast<std::size_t>(num_particles), 0.0);
  return ps;
}

std::vector<int> resample_indices(std::span<const double> log_weights,
                                  ResampleScheme scheme, RngStream rng,
                                  uint64_t step) {
  const int k = static_cast<int>(log_weights.size());
  const double lz = logsumexp(log_weights);
  if (!(lz > kNegInf))
    throw DegeneracyError("resample: no finite particle weight");
  std::vector<double> cdf(static_cast<std::size_t>(k));
  double cum = 0.0;
  for (int i = 0; i < k; ++i) {
    cum += std::exp(log_weights[static_cast<std::size_t>(i)] - lz);
    cdf[static_cast<std::size_t>(i)] = cum;
  }
  cdf.back() = 1.0;

  auto pick = [&cdf](double u) {
    return static_cast<int>(std::upper_bound(cdf.begin(), cdf.end(), u) -
                            cdf.begin());
  };

  std::vector<int> ancestors(static_cast<std::size_t>(k));
  if (scheme == ResampleScheme::kMultinomial) {
    for (int i = 0; i < k; ++i)
      ancestors[static_cast<std::size_t>(i)] =
          std::min(k - 1, pick(rng.uniform(step, static_cast<uint64_t>(i))));
  } else {
    const double u = rng.uniform(step, 0);
    for (int i = 0; i < k; ++i)
      ancestors[static_cast<std::size_t>(i)] = std::min(
          k - 1, pick((static_cast<double>(i) + u) / static_cast<double>(k)));
  }
  return ancestors;
}

namespace {

void check_degeneracy(const ParticleSystem& ps, const SmcConfig& config) {
  double max_w = kNegInf;
  for (double w : ps.log_acc) max_w = std::max(max_w, w);
  if (!(max_w > config.degeneracy_log_floor)) {
    std::ostringstream msg;
    msg << "degenerate particle system at step " << ps.step << ": max log-weight "
        << max_w << " <= floor " << config.degeneracy_log_floor << " (K="
        << ps.num_particles() << ")";
    throw DegeneracyError(msg.str());
  }
}

}  // namespace

ParticleSystem resample(const ParticleSystem& ps, const SmcConfig& config,
                        RngStream rng) {
  check_degeneracy(ps, config);
  const auto ancestors =
      resample_indices(ps.log_acc, config.scheme, rng,
                       static_cast<uint64_t>(ps.step));
  ParticleSystem out = ps;
  for (int i = 0; i < ps.num_particles(); ++i) {
    const int a = ancestors[static_cast<std::size_t>(i)];
    out.particles[static_cast<std::size_t>(i)] =
        ps.particles[static_cast<std::size_t>(a)];
    out.log_psi[static_cast<std::size_t>(i)] =
        ps.log_psi[static_cast<std::size_t>(a)];
    out.log_acc[static_cast<std::size_t>(i)] = 0.0;
  }
  out.ancestry.push_back(ancestors);
  return out;
}

SmcResult tsmc_sample(const AutoregressiveModel& model, const Twist& twist,
                      const SequenceScorer& pot, const Prompt& prompt,
                      const SmcConfig& config, RngStream rng) {
  const int k = config.num_particles;
  const int T = prompt.horizon;
  ParticleSystem ps = ParticleSystem::init(prompt, k);
  const RngStream extend_rng = rng.sub("extend");
  const RngStream resample_rng = rng.sub("resample");

  SmcResult result;
  std::vector<double> prev_norm(static_cast<std::size_t>(k), 0.0);

  for (int t = 1; t <= T; ++t) {
    // Normalized accumulated weights before this step's increments (uniform
    // right after a resample); used by the partition estimator.
    {
      const double lz = logsumexp(ps.log_acc);
      for (int i = 0; i < k; ++i)
        prev_norm[static_cast<std::size_t>(i)] =
            ps.log_acc[static_cast<std::size_t>(i)] - lz;
    }

    // Extending + Reweighting. The weight uses only the parent prefix; the
    // proposal normalizer is shared between both.
    for (int i = 0; i < k; ++i) {
      auto& gen = ps.particles[static_cast<std::size_t>(i)];
      const StepProposal prop = propose_step(model, twist, pot, prompt, gen);
      const double w =
          prop.log_normalizer - ps.log_psi[static_cast<std::size_t>(i)];
      ps.log_incr[static_cast<std::size_t>(i)] = w;
      ps.log_acc[static_cast<std::size_t>(i)] += w;

      const double u = extend_rng.uniform(static_cast<uint64_t>(t),
                                          static_cast<uint64_t>(i));
      double cum = 0.0;
      int tok = model.vocab().size - 1;
      for (int v = 0; v < model.vocab().size; ++v) {
        cum += std::exp(prop.log_q[static_cast<std::size_t>(v)]);
        if (u < cum) {
          tok = v;
          break;
        }
      }
      gen.push_back(tok);
      if (t < T) {
        // log psi of the new prefix; at t = T the prefix is complete and the
        // twist is no longer consulted.
        std::vector<double> lt(static_cast<std::size_t>(model.vocab().size));
        twist.log_twist_all(prompt, TokenSpan(gen).first(gen.size() - 1), lt);
        ps.log_psi[static_cast<std::size_t>(i)] =
            lt[static_cast<std::size_t>(tok)];
      }
    }
    ps.step = t;

    // Partition increment: log sum_k What_{t-1}^k exp(w_t^k).
    double log_z_increment;
    {
      std::vector<double> terms(static_cast<std::size_t>(k));
      for (int i = 0; i < k; ++i)
        terms[static_cast<std::size_t>(i)] =
            prev_norm[static_cast<std::size_t>(i)] +
            ps.log_incr[static_cast<std::size_t>(i)];
      log_z_increment = logsumexp(terms);
      ps.log_partition += log_z_increment;
    }

    const double ess = effective_sample_size(ps.log_acc);
    const bool want_resample =
        config.trigger == ResampleTrigger::kEveryStep ||
        ess < config.ess_threshold * static_cast<double>(k);

    SmcStepStats stats;
    stats.t = t;
    stats.ess = ess;
    stats.log_z_increment = log_z_increment;
    stats.resampled = want_resample;
    stats.unique_ancestors = k;

    if (want_resample) {
      ps = resample(ps, config, resample_rng);
      std::set<int> uniq(ps.ancestry.back().begin(), ps.ancestry.back().end());
      stats.unique_ancestors = static_cast<int>(uniq.size());
    } else {
      check_degeneracy(ps, config);
    }
    if (config.record_trace) result.trace.push_back(stats);
  }

  result.sequences = std::move(ps.particles);
  result.log_partition = ps.log_partition;
  return result;
}

std::string trace_to_jsonl(const SmcResult& result) {
  std::ostringstream os;
  char buf[64];
  for (const auto& s : result.trace) {
    os << "{\"t\":" << s.t << ",\"ess\":";
    std::snprintf(buf, sizeof(buf), "%.12g", s.ess);
    os << buf << ",\"log_z\":";
    std::snprintf(buf, sizeof(buf), "%.12g", s.log_z_increment);
    os << buf << ",\"unique_ancestors\":" << s.unique_ancestors
       << ",\"resampled\":" << (s.resampled ? "true" : "false") << "}\n";
  }
  return os.str();
}

}  // namespace tsmc
