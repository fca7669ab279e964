#include "tsmc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "tsmc/ctl.hpp"
#include "tsmc/errors.hpp"
#include "tsmc/numerics.hpp"
#include "tsmc/parallel.hpp"

namespace tsmc {

double toxicity_analog(const Potential& pot, const Prompt& prompt,
                       std::span<const std::vector<int>> seqs) {
  if (seqs.empty()) throw InputError("toxicity_analog: no sequences");
  double acc = 0.0;
  for (const auto& gen : seqs) acc += pot.classifier_prob(prompt, gen);
  return acc / static_cast<double>(seqs.size());
}

namespace {

std::vector<double> bigram_counts(int vocab_size, TokenSpan gen) {
  if (gen.size() < 2)
    throw InputError("similarity requires horizon >= 2 (no bigrams)");
  std::vector<double> counts(
      static_cast<std::size_t>(vocab_size) * vocab_size, 0.0);
  for (std::size_t t = 0; t + 1 < gen.size(); ++t) {
    const int a = gen[t], b = gen[t + 1];
    if (a < 0 || a >= vocab_size || b < 0 || b >= vocab_size)
      throw InputError("token id out of range");
    counts[static_cast<std::size_t>(a) * vocab_size + b] += 1.0;
  }
  return counts;
}

double cosine(std::span<const double> x, std::span<const double> y) {
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  if (nx == 0.0 || ny == 0.0) return 0.0;
  return dot / (std::sqrt(nx) * std::sqrt(ny));
}

}  // namespace

double bigram_cosine(int vocab_size, TokenSpan a, TokenSpan b) {
  return cosine(bigram_counts(vocab_size, a), bigram_counts(vocab_size, b));
}

double pairwise_similarity(int vocab_size, const Prompt& prompt,
                           std::span<const std::vector<int>> seqs) {
  (void)prompt;
  if (seqs.size() < 2)
    throw InputError("pairwise_similarity: need at least 2 sequences");
  std::vector<std::vector<double>> profiles;
  profiles.reserve(seqs.size());
  for (const auto& gen : seqs)
    profiles.push_back(bigram_counts(vocab_size, gen));
  double acc = 0.0;
  int64_t pairs = 0;
  for (std::size_t i = 0; i < profiles.size(); ++i)
    for (std::size_t j = i + 1; j < profiles.size(); ++j) {
      acc += cosine(profiles[i], profiles[j]);
      ++pairs;
    }
  return acc / static_cast<double>(pairs);
}

KlEstimate estimate_kl_target_vs_proposal(const AutoregressiveModel& model,
                                          const EffectivePotential& pot,
                                          const Twist& twist,
                                          const Prompt& prompt, int n_samples,
                                          RngStream rng, int blocks,
                                          int threads) {
  if (n_samples < 2) throw InputError("kl estimate needs >= 2 samples");
  const WeightedPrefixBatch batch =
      positive_batch(model, twist, pot, prompt, n_samples, rng, threads);

  auto block_estimate = [&batch](int begin, int end) {
    std::vector<double> logw(static_cast<std::size_t>(end - begin));
    for (int k = begin; k < end; ++k)
      logw[static_cast<std::size_t>(k - begin)] =
          batch.log_target[static_cast<std::size_t>(k)] -
          batch.log_proposal[static_cast<std::size_t>(k)];
    const double lz = logsumexp(logw);
    const double log_mean = lz - std::log(static_cast<double>(logw.size()));
    double acc = 0.0;
    for (double lw : logw) acc += std::exp(lw - lz) * lw;
    return acc - log_mean;
  };

  KlEstimate out;
  out.n_samples = n_samples;
  out.value = block_estimate(0, n_samples);

  blocks = std::max(2, std::min(blocks, n_samples));
  std::vector<double> block_values(static_cast<std::size_t>(blocks));
  for (int b = 0; b < blocks; ++b) {
    const int begin = static_cast<int>(
        static_cast<int64_t>(b) * n_samples / blocks);
    const int end = static_cast<int>(
        static_cast<int64_t>(b + 1) * n_samples / blocks);
    block_values[static_cast<std::size_t>(b)] = block_estimate(begin, end);
  }
  double mean = 0.0;
  for (double v : block_values) mean += v;
  mean /= blocks;
  double var = 0.0;
  for (double v : block_values) var += (v - mean) * (v - mean);
  var /= (blocks - 1);
  out.std_error = std::sqrt(var / blocks);
  return out;
}

std::vector<EfficiencyCell> particle_efficiency_curve(
    std::span<const GenerationHandle> generations, const Prompt& prompt,
    const Potential& scorer, std::span<const int> k_grid, int repeats,
    const SmcConfig& smc_base, RngStream rng, int threads) {
  if (repeats < 2) throw InputError("particle efficiency needs >= 2 repeats");
  std::vector<EfficiencyCell> out;
  for (const auto& gh : generations) {
    for (int k : k_grid) {
      SmcConfig config = smc_base;
      config.num_particles = k;
      std::vector<double> per_run(static_cast<std::size_t>(repeats));
      const RngStream cell_rng =
          rng.sub("gen", static_cast<uint64_t>(gh.generation))
              .sub("k", static_cast<uint64_t>(k));
      parallel_for(repeats, threads, [&](int64_t r) {
        const SmcResult res =
            tsmc_sample(*gh.model, *gh.twist, *gh.final_pot, prompt, config,
                        cell_rng.sub(static_cast<uint64_t>(r)));
        per_run[static_cast<std::size_t>(r)] =
            toxicity_analog(scorer, prompt, res.sequences);
      });
      EfficiencyCell cell;
      cell.generation = gh.generation;
      cell.num_particles = k;
      cell.repeats = repeats;
      double mean = 0.0;
      for (double v : per_run) mean += v;
      mean /= repeats;
      double var = 0.0;
      for (double v : per_run) var += (v - mean) * (v - mean);
      var /= (repeats - 1);
      cell.mean_toxicity = mean;
      cell.std_error = std::sqrt(var / repeats);
      out.push_back(cell);
    }
  }
  return out;
}

std::vector<int64_t> score_histogram(std::span<const double> scores,
                                     int bins) {
  if (bins < 1) throw InputError("histogram needs >= 1 bin");
  std::vector<int64_t> counts(static_cast<std::size_t>(bins), 0);
  for (double s : scores) {
    int b = static_cast<int>(s * bins);
    b = std::clamp(b, 0, bins - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  return counts;
}

std::string metrics_to_json(const MetricsSnapshot& snapshot) {
  std::ostringstream os;
  os << "{";
  bool first = true;
  char buf[64];
  auto field = [&](const char* name, const std::optional<double>& v) {
    if (!v.has_value()) return;
    if (!first) os << ",";
    first = false;
    std::snprintf(buf, sizeof(buf), "%.12g", *v);
    os << "\"" << name << "\":" << buf;
  };
  field("mean_toxicity", snapshot.mean_toxicity);
  field("mean_similarity", snapshot.mean_similarity);
  field("exact_kl", snapshot.exact_kl);
  field("estimated_kl", snapshot.estimated_kl);
  field("estimated_kl_se", snapshot.estimated_kl_se);
  field("log_z_estimate_mean", snapshot.log_z_estimate_mean);
  field("log_z_estimate_std", snapshot.log_z_estimate_std);
  field("exact_log_z", snapshot.exact_log_z);
  field("acceptance_ratio", snapshot.acceptance_ratio);
  field("exact_target_toxicity", snapshot.exact_target_toxicity);
  field("exact_ctl_loss", snapshot.exact_ctl_loss_value);
  os << "}";
  return os.str();
}

}  // namespace tsmc
