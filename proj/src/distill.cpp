#include "tsmc/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tsmc/errors.hpp"
#include "tsmc/numerics.hpp"
#include "tsmc/oracle.hpp"
#include "tsmc/parallel.hpp"

namespace fs = std::filesystem;

namespace tsmc {

std::vector<Sequence> generate_dataset(const AutoregressiveModel& model,
                                       const Twist& twist,
                                       const SequenceScorer& final_pot,
                                       const Prompt& prompt, int k,
                                       int n_sequences,
                                       const SmcConfig& smc_base,
                                       RngStream rng, int threads) {
  if (n_sequences < 1) throw InputError("dataset size must be >= 1");
  const int runs = (n_sequences + k - 1) / k;
  SmcConfig config = smc_base;
  config.num_particles = k;
  std::vector<std::vector<std::vector<int>>> slots(
      static_cast<std::size_t>(runs));
  parallel_for(runs, threads, [&](int64_t r) {
    slots[static_cast<std::size_t>(r)] =
        tsmc_sample(model, twist, final_pot, prompt, config,
                    rng.sub(static_cast<uint64_t>(r)))
            .sequences;
  });
  std::vector<Sequence> out;
  out.reserve(static_cast<std::size_t>(runs) * static_cast<std::size_t>(k));
  for (auto& run : slots)
    for (auto& gen : run) out.push_back(Sequence{prompt, std::move(gen)});
  return out;
}

namespace {

TwistNetwork fresh_twist(const Vocab& vocab, const Prompt& prompt,
                         const DistillConfig& config, RngStream init_rng) {
  return TwistNetwork(vocab, config.twist_window, prompt.horizon,
                      config.twist_hidden, init_rng);
}

DatasetSummary summarize_dataset(const std::vector<Sequence>& dataset,
                                 const Potential& phi) {
  DatasetSummary s;
  s.size = static_cast<int>(dataset.size());
  for (const auto& seq : dataset) {
    s.mean_log_potential += phi.log_score(seq.prompt, seq.generated);
    s.mean_toxicity += phi.classifier_prob(seq.prompt, seq.generated);
  }
  s.mean_log_potential /= static_cast<double>(dataset.size());
  s.mean_toxicity /= static_cast<double>(dataset.size());
  return s;
}

void write_dataset_jsonl(const fs::path& path,
                         const std::vector<Sequence>& dataset,
                         const Potential& phi) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path.string());
  char buf[64];
  for (const auto& seq : dataset) {
    os << "{\"tokens\":[";
    for (std::size_t t = 0; t < seq.generated.size(); ++t) {
      if (t) os << ',';
      os << seq.generated[t];
    }
    std::snprintf(buf, sizeof(buf), "%.12g",
                  phi.log_score(seq.prompt, seq.generated));
    os << "],\"log_potential\":" << buf;
    std::snprintf(buf, sizeof(buf), "%.12g",
                  phi.classifier_prob(seq.prompt, seq.generated));
    os << ",\"toxicity\":" << buf << "}\n";
  }
}

void save_generation(const std::string& out_dir, const GenerationRecord& rec,
                     const std::vector<Sequence>* dataset,
                     const Potential& phi) {
  if (out_dir.empty()) return;
  const fs::path dir =
      fs::path(out_dir) / ("gen_" + std::to_string(rec.generation));
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "model.txt");
    rec.model->save(os);
  }
  {
    std::ofstream os(dir / "twist.txt");
    rec.twist->save(os);
  }
  if (dataset != nullptr) write_dataset_jsonl(dir / "dataset.jsonl", *dataset, phi);
  if (!rec.ctl_trace.empty()) {
    std::ofstream os(dir / "ctl_trace.jsonl");
    os << ctl_trace_to_jsonl(rec.ctl_trace);
  }
  {
    std::ofstream os(dir / "metrics.json");
    os << metrics_to_json(rec.metrics) << '\n';
  }
}

bool generation_on_disk(const std::string& out_dir, int m) {
  if (out_dir.empty()) return false;
  const fs::path dir = fs::path(out_dir) / ("gen_" + std::to_string(m));
  return fs::exists(dir / "model.txt") && fs::exists(dir / "twist.txt");
}

GenerationRecord load_generation(const std::string& out_dir, int m) {
  const fs::path dir = fs::path(out_dir) / ("gen_" + std::to_string(m));
  GenerationRecord rec;
  rec.generation = m;
  {
    std::ifstream is(dir / "model.txt");
    if (!is) throw InputError("cannot read " + (dir / "model.txt").string());
    rec.model = AutoregressiveModel::load(is);
  }
  {
    std::ifstream is(dir / "twist.txt");
    if (!is) throw InputError("cannot read " + (dir / "twist.txt").string());
    rec.twist = std::make_unique<TwistNetwork>(TwistNetwork::load(is));
  }
  return rec;
}

}  // namespace

MetricsSnapshot evaluate_generation(const AutoregressiveModel& p0,
                                    const Potential& phi,
                                    const AutoregressiveModel& model,
                                    const TwistNetwork& twist,
                                    const Prompt& prompt,
                                    const DistillConfig& config,
                                    const ExactDistribution* exact,
                                    RngStream rng) {
  MetricsSnapshot out;
  const EffectivePotential eff(phi, p0, model);

  // TSMC samples at the test particle count.
  const int runs =
      (config.eval_sequences + config.k_test - 1) / config.k_test;
  SmcConfig smc = config.smc;
  smc.num_particles = config.k_test;
  std::vector<std::vector<std::vector<int>>> slots(
      static_cast<std::size_t>(runs));
  std::vector<double> log_z(static_cast<std::size_t>(runs));
  const RngStream smc_rng = rng.sub("smc");
  parallel_for(runs, config.threads, [&](int64_t r) {
    SmcResult res = tsmc_sample(model, twist, eff, prompt, smc,
                                smc_rng.sub(static_cast<uint64_t>(r)));
    log_z[static_cast<std::size_t>(r)] = res.log_partition;
    slots[static_cast<std::size_t>(r)] = std::move(res.sequences);
  });
  std::vector<std::vector<int>> samples;
  samples.reserve(static_cast<std::size_t>(runs * config.k_test));
  for (auto& run : slots)
    for (auto& gen : run) samples.push_back(std::move(gen));

  out.mean_toxicity = toxicity_analog(phi, prompt, samples);
  if (prompt.horizon >= 2 && samples.size() >= 2) {
    const std::size_t n_sim = std::min<std::size_t>(
        samples.size(), static_cast<std::size_t>(config.similarity_sample));
    std::vector<std::vector<int>> head(samples.begin(),
                                       samples.begin() + n_sim);
    out.mean_similarity =
        pairwise_similarity(p0.vocab().size, prompt, head);
  }
  {
    double mean = 0.0;
    for (double z : log_z) mean += z;
    mean /= static_cast<double>(log_z.size());
    double var = 0.0;
    for (double z : log_z) var += (z - mean) * (z - mean);
    var = log_z.size() > 1 ? var / static_cast<double>(log_z.size() - 1) : 0.0;
    out.log_z_estimate_mean = mean;
    out.log_z_estimate_std = std::sqrt(var);
  }

  const KlEstimate kl = estimate_kl_target_vs_proposal(
      model, eff, twist, prompt, config.kl_samples, rng.sub("kl"),
      /*blocks=*/10, config.threads);
  out.estimated_kl = kl.value;
  out.estimated_kl_se = kl.std_error;

  if (exact != nullptr) {
    out.exact_log_z = exact->log_z;
    out.exact_kl = exact_kl_target_vs_proposal(*exact, model, twist, eff);
    out.exact_target_toxicity = exact_expected_classifier(*exact, phi);
    out.exact_ctl_loss_value = exact_ctl_loss(*exact, model, twist);
  }
  return out;
}

GenerationRecord self_distill_step(const AutoregressiveModel& p0,
                                   const Potential& phi,
                                   const GenerationRecord& prev,
                                   const Prompt& prompt,
                                   const DistillConfig& config,
                                   const ExactDistribution* exact,
                                   RngStream rng,
                                   std::vector<Sequence>* dataset_out) {
  GenerationRecord rec;
  rec.generation = prev.generation + 1;

  // Phase 1: distill the previous generation's TSMC output.
  const EffectivePotential prev_pot(phi, p0, *prev.model);
  std::vector<Sequence> dataset = generate_dataset(
      *prev.model, *prev.twist, prev_pot, prompt, config.k_train,
      config.dataset_size, config.smc, rng.sub("dataset"), config.threads);
  FitConfig fit = config.fit;
  fit.vocab = p0.vocab();
  fit.threads = config.threads;
  rec.model = fit_mle(dataset, fit, rng.sub("fit"));
  rec.model->set_generation(rec.generation);
  rec.dataset_summary = summarize_dataset(dataset, phi);

  // Phase 2: modified CTL against the new effective potential.
  const EffectivePotential eff(phi, p0, *rec.model);
  TwistNetwork init =
      config.warm_start_twist
          ? *prev.twist
          : fresh_twist(p0.vocab(), prompt, config,
                        rng.sub("twist-init"));
  CtlConfig ctl = config.ctl;
  ctl.generation = rec.generation;
  ctl.threads = config.threads;
  rec.twist = std::make_unique<TwistNetwork>(
      train_twist(*rec.model, eff, prompt, std::move(init), ctl,
                  rng.sub("ctl"), &rec.ctl_trace));
  rec.twist->set_generation(rec.generation);

  rec.metrics = evaluate_generation(p0, phi, *rec.model, *rec.twist, prompt,
                                    config, exact, rng.sub("metrics"));
  if (dataset_out != nullptr) *dataset_out = std::move(dataset);
  return rec;
}

std::vector<GenerationRecord> run_pipeline(const AutoregressiveModel& p0,
                                           const Potential& phi,
                                           const Prompt& prompt,
                                           const DistillConfig& config,
                                           RngStream rng,
                                           const std::string& out_dir) {
  if (config.generations < 0) throw InputError("generations must be >= 0");
  const ExactDistribution* exact = nullptr;
  ExactDistribution exact_storage;
  if (config.exact_metrics) {
    try {
      exact_storage = enumerate_target(p0, phi, prompt);
      exact = &exact_storage;
    } catch (const CapacityError&) {
      exact = nullptr;  // instance too large; skip enumeration metrics
    }
  }

  std::vector<GenerationRecord> records;
  for (int m = 0; m <= config.generations; ++m) {
    const RngStream gen_rng = rng.sub("gen", static_cast<uint64_t>(m));
    if (generation_on_disk(out_dir, m)) {
      GenerationRecord rec = load_generation(out_dir, m);
      rec.metrics =
          evaluate_generation(p0, phi, *rec.model, *rec.twist, prompt, config,
                              exact, gen_rng.sub("metrics"));
      save_generation(out_dir, rec, nullptr, phi);
      records.push_back(std::move(rec));
      continue;
    }
    if (m == 0) {
      GenerationRecord rec;
      rec.generation = 0;
      rec.model = p0.clone();
      rec.model->set_generation(0);
      const EffectivePotential eff(phi, p0, *rec.model);
      CtlConfig ctl = config.ctl;
      ctl.generation = 0;
      ctl.threads = config.threads;
      rec.twist = std::make_unique<TwistNetwork>(train_twist(
          *rec.model, eff, prompt,
          fresh_twist(p0.vocab(), prompt, config, gen_rng.sub("twist-init")),
          ctl, gen_rng.sub("ctl"), &rec.ctl_trace));
      rec.twist->set_generation(0);
      rec.metrics = evaluate_generation(p0, phi, *rec.model, *rec.twist,
                                        prompt, config, exact,
                                        gen_rng.sub("metrics"));
      save_generation(out_dir, rec, nullptr, phi);
      records.push_back(std::move(rec));
      continue;
    }
    std::vector<Sequence> dataset;
    GenerationRecord rec =
        self_distill_step(p0, phi, records.back(), prompt, config, exact,
                          gen_rng, &dataset);
    save_generation(out_dir, rec, &dataset, phi);
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace tsmc
