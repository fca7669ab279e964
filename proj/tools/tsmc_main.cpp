// Experiment runner: oracle / train / baselines / eval / sample subcommands
// over a single JSON experiment config. All randomness flows from one master
// seed through named sub-streams, so any subcommand is reproducible and
// thread-count invariant.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tsmc/baselines.hpp"
#include "tsmc/config.hpp"
#include "tsmc/ctl.hpp"
#include "tsmc/distill.hpp"
#include "tsmc/errors.hpp"
#include "tsmc/metrics.hpp"
#include "tsmc/oracle.hpp"
#include "tsmc/smc.hpp"
#include "tsmc/textio.hpp"

namespace fs = std::filesystem;
using tsmc::ExperimentConfig;
using tsmc::RngStream;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
};

ExperimentConfig load_config(const CommonArgs& args) {
  ExperimentConfig config = ExperimentConfig::load_file(args.config_path);
  if (!args.out_dir.empty()) config.output_dir = args.out_dir;
  if (args.seed_set) config.seed = args.seed;
  if (args.threads > 0) config.threads = args.threads;
  config.validate();
  fs::create_directories(config.output_dir);
  return config;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Experiment config (JSON)")
      ->required();
  cmd->add_option("--out", args.out_dir, "Output directory override");
  cmd->add_option("--seed", args.seed, "Master seed override")
      ->each([&args](const std::string&) { args.seed_set = true; });
  cmd->add_option("--threads", args.threads,
                  "Worker thread cap (never affects results)");
}

std::string csv_cell(double v) { return tsmc::format_sig(v); }

// The embedded config drops run-environment fields so reruns into different
// directories stay byte-identical.
nlohmann::ordered_json embeddable_config(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  c.output_dir = "";
  c.threads = 1;
  return nlohmann::ordered_json::parse(c.serialize());
}

// ---------------------------------------------------------------------------
// oracle: rejection sampling and enumeration across the beta sweep.

int cmd_oracle(const ExperimentConfig& config) {
  const RngStream rng = RngStream(config.seed).sub("oracle");
  auto p0 = config.make_base_model(RngStream(config.seed).sub("model-init"));

  std::ostringstream summary;
  summary << "beta,acceptance_ratio,accepts,attempts,exact_z,exact_log_z,"
             "mean_toxicity,exact_mean_toxicity,mean_similarity\n";
  std::ostringstream hist;
  hist << "beta,bin_lo,bin_hi,count\n";

  for (std::size_t bi = 0; bi < config.potential.betas.size(); ++bi) {
    const double beta = config.potential.betas[bi];
    const tsmc::Potential pot = config.make_potential_with_beta(beta);

    bool have_exact = false;
    double exact_z = 0.0, exact_log_z = 0.0, exact_tox = 0.0;
    try {
      const tsmc::ExactDistribution exact =
          tsmc::enumerate_target(*p0, pot, config.prompt);
      exact_log_z = exact.log_z;
      exact_z = std::exp(exact.log_z);
      exact_tox = tsmc::exact_expected_classifier(exact, pot);
      have_exact = true;
    } catch (const tsmc::CapacityError&) {
    }

    const tsmc::RejectionResult rej = tsmc::rejection_sample(
        *p0, pot, config.prompt, config.oracle.rejection_accepts,
        rng.sub("beta", bi), config.oracle.attempt_cap);

    std::vector<double> scores(rej.samples.size());
    for (std::size_t i = 0; i < rej.samples.size(); ++i)
      scores[i] = pot.classifier_prob(config.prompt, rej.samples[i]);
    double mean_tox = 0.0;
    for (double s : scores) mean_tox += s;
    mean_tox /= static_cast<double>(scores.size());

    double similarity = -1.0;
    if (config.prompt.horizon >= 2 && rej.samples.size() >= 2) {
      const std::size_t n = std::min<std::size_t>(
          rej.samples.size(),
          static_cast<std::size_t>(config.oracle.similarity_sample));
      std::vector<std::vector<int>> head(rej.samples.begin(),
                                         rej.samples.begin() + n);
      similarity =
          tsmc::pairwise_similarity(config.vocab.size, config.prompt, head);
    }

    summary << csv_cell(beta) << ',' << csv_cell(rej.acceptance_ratio) << ','
            << rej.samples.size() << ',' << rej.attempts << ',';
    if (have_exact)
      summary << csv_cell(exact_z) << ',' << csv_cell(exact_log_z);
    else
      summary << ',';
    summary << ',' << csv_cell(mean_tox) << ','
            << (have_exact ? csv_cell(exact_tox) : std::string()) << ','
            << (similarity >= 0.0 ? csv_cell(similarity) : std::string())
            << '\n';

    const auto counts =
        tsmc::score_histogram(scores, config.oracle.histogram_bins);
    for (int b = 0; b < config.oracle.histogram_bins; ++b) {
      const double lo =
          static_cast<double>(b) / config.oracle.histogram_bins;
      const double hi =
          static_cast<double>(b + 1) / config.oracle.histogram_bins;
      hist << csv_cell(beta) << ',' << csv_cell(lo) << ',' << csv_cell(hi)
           << ',' << counts[static_cast<std::size_t>(b)] << '\n';
    }
  }

  tsmc::write_text_file(
      (fs::path(config.output_dir) / "oracle_summary.csv").string(),
      summary.str());
  tsmc::write_text_file(
      (fs::path(config.output_dir) / "toxicity_hist.csv").string(),
      hist.str());
  return 0;
}

// ---------------------------------------------------------------------------
// train: the self-distillation pipeline.

int cmd_train(const ExperimentConfig& config) {
  auto p0 = config.make_base_model(RngStream(config.seed).sub("model-init"));
  const tsmc::Potential phi = config.make_potential();
  const tsmc::DistillConfig dconfig = config.make_distill_config();
  const auto records =
      tsmc::run_pipeline(*p0, phi, config.prompt, dconfig,
                         RngStream(config.seed).sub("pipeline"),
                         config.output_dir);

  nlohmann::ordered_json pipeline;
  pipeline["config"] = embeddable_config(config);
  pipeline["generations"] = nlohmann::ordered_json::array();
  std::ostringstream kl_csv;
  kl_csv << "generation,exact_kl,estimated_kl,estimated_kl_se\n";
  for (const auto& rec : records) {
    nlohmann::ordered_json g;
    g["generation"] = rec.generation;
    g["dataset"] = {{"size", rec.dataset_summary.size},
                    {"mean_log_potential",
                     rec.dataset_summary.mean_log_potential},
                    {"mean_toxicity", rec.dataset_summary.mean_toxicity}};
    g["metrics"] = nlohmann::ordered_json::parse(metrics_to_json(rec.metrics));
    pipeline["generations"].push_back(g);

    kl_csv << rec.generation << ','
           << (rec.metrics.exact_kl ? csv_cell(*rec.metrics.exact_kl)
                                    : std::string())
           << ','
           << (rec.metrics.estimated_kl ? csv_cell(*rec.metrics.estimated_kl)
                                        : std::string())
           << ','
           << (rec.metrics.estimated_kl_se
                   ? csv_cell(*rec.metrics.estimated_kl_se)
                   : std::string())
           << '\n';
  }
  tsmc::write_text_file(
      (fs::path(config.output_dir) / "pipeline.json").string(),
      pipeline.dump(2) + "\n");
  tsmc::write_text_file(
      (fs::path(config.output_dir) / "kl_per_generation.csv").string(),
      kl_csv.str());
  return 0;
}

// ---------------------------------------------------------------------------
// Artifact loading shared by eval/sample/baselines.

struct LoadedGeneration {
  int generation = 0;
  std::unique_ptr<tsmc::AutoregressiveModel> model;
  std::unique_ptr<tsmc::TwistNetwork> twist;
};

std::vector<LoadedGeneration> load_artifacts(const std::string& dir) {
  std::vector<LoadedGeneration> out;
  for (int m = 0;; ++m) {
    const fs::path gen_dir = fs::path(dir) / ("gen_" + std::to_string(m));
    if (!fs::exists(gen_dir / "model.txt") ||
        !fs::exists(gen_dir / "twist.txt"))
      break;
    LoadedGeneration g;
    g.generation = m;
    std::ifstream ms((gen_dir / "model.txt").string());
    g.model = tsmc::AutoregressiveModel::load(ms);
    std::ifstream ts((gen_dir / "twist.txt").string());
    g.twist =
        std::make_unique<tsmc::TwistNetwork>(tsmc::TwistNetwork::load(ts));
    out.push_back(std::move(g));
  }
  return out;
}

// ---------------------------------------------------------------------------
// baselines: DPO and GRPO against the same target.

int cmd_baselines(const ExperimentConfig& config) {
  const RngStream rng = RngStream(config.seed).sub("baselines");
  auto p0 = config.make_base_model(RngStream(config.seed).sub("model-init"));
  const tsmc::Potential phi = config.make_potential();

  // The baselines fine-tune a neural policy; a tabular base model is first
  // distilled into a neural stand-in on its own samples.
  std::unique_ptr<tsmc::NeuralModel> reference;
  if (p0->kind() == tsmc::ModelKind::kNeural) {
    auto clone = p0->clone();
    reference.reset(static_cast<tsmc::NeuralModel*>(clone.release()));
  } else {
    std::vector<tsmc::Sequence> pretrain;
    const RngStream ps = rng.sub("pretrain");
    pretrain.reserve(
        static_cast<std::size_t>(config.baselines.pretrain_sequences));
    for (int i = 0; i < config.baselines.pretrain_sequences; ++i)
      pretrain.push_back(tsmc::Sequence{
          config.prompt,
          p0->sample_sequence(config.prompt,
                              ps.sub(static_cast<uint64_t>(i)))});
    tsmc::FitConfig fit;
    fit.kind = tsmc::ModelKind::kNeural;
    fit.vocab = config.vocab;
    fit.order = config.base_model.order;
    fit.hidden = config.baselines.hidden;
    fit.steps = config.baselines.pretrain_steps;
    fit.threads = config.threads;
    auto fitted = tsmc::fit_mle(pretrain, fit, rng.sub("pretrain-fit"));
    reference.reset(static_cast<tsmc::NeuralModel*>(fitted.release()));
  }

  int eval_counter = 0;
  auto eval_points = [&](const tsmc::AutoregressiveModel& m) {
    std::vector<std::vector<int>> samples;
    const RngStream es =
        rng.sub("eval").sub(static_cast<uint64_t>(eval_counter++));
    samples.reserve(static_cast<std::size_t>(config.eval.eval_sequences));
    for (int i = 0; i < config.eval.eval_sequences; ++i)
      samples.push_back(
          m.sample_sequence(config.prompt, es.sub(static_cast<uint64_t>(i))));
    const double tox = tsmc::toxicity_analog(phi, config.prompt, samples);
    double sim = -1.0;
    if (config.prompt.horizon >= 2) {
      const std::size_t n = std::min<std::size_t>(
          samples.size(),
          static_cast<std::size_t>(config.eval.similarity_sample));
      std::vector<std::vector<int>> head(samples.begin(),
                                         samples.begin() + n);
      sim = tsmc::pairwise_similarity(config.vocab.size, config.prompt, head);
    }
    return std::pair<double, double>(sim, tox);
  };

  std::ostringstream csv;
  csv << "method,mean_similarity,mean_toxicity\n";
  {
    const auto [sim, tox] = eval_points(*p0);
    csv << "base," << (sim >= 0 ? csv_cell(sim) : std::string()) << ','
        << csv_cell(tox) << '\n';
  }
  try {
    const tsmc::ExactDistribution exact =
        tsmc::enumerate_target(*p0, phi, config.prompt);
    const double tox = tsmc::exact_expected_classifier(exact, phi);
    // Target similarity from exact samples when rejection is affordable.
    std::string sim_cell;
    try {
      const auto rej = tsmc::rejection_sample(
          *p0, phi, config.prompt,
          std::min<int64_t>(config.eval.similarity_sample, 200),
          rng.sub("target-sample"), /*attempt_cap=*/2000000);
      if (config.prompt.horizon >= 2)
        sim_cell = csv_cell(tsmc::pairwise_similarity(
            config.vocab.size, config.prompt, rej.samples));
    } catch (const tsmc::StarvationError&) {
    }
    csv << "target," << sim_cell << ',' << csv_cell(tox) << '\n';
  } catch (const tsmc::CapacityError&) {
  }

  // TSMC generations, when train artifacts exist in the output directory.
  const auto artifacts = load_artifacts(config.output_dir);
  for (const auto& g : artifacts) {
    const tsmc::EffectivePotential eff(phi, *p0, *g.model);
    tsmc::SmcConfig smc = config.make_smc_config(config.smc.particles_test);
    const int runs = (config.eval.eval_sequences + config.smc.particles_test -
                      1) /
                     config.smc.particles_test;
    std::vector<std::vector<int>> samples;
    const RngStream ts =
        rng.sub("tsmc-eval").sub(static_cast<uint64_t>(g.generation));
    for (int r = 0; r < runs; ++r) {
      auto res = tsmc::tsmc_sample(*g.model, *g.twist, eff, config.prompt,
                                   smc, ts.sub(static_cast<uint64_t>(r)));
      for (auto& s : res.sequences) samples.push_back(std::move(s));
    }
    const double tox = tsmc::toxicity_analog(phi, config.prompt, samples);
    std::string sim_cell;
    if (config.prompt.horizon >= 2) {
      const std::size_t n = std::min<std::size_t>(
          samples.size(),
          static_cast<std::size_t>(config.eval.similarity_sample));
      std::vector<std::vector<int>> head(samples.begin(),
                                         samples.begin() + n);
      sim_cell = csv_cell(tsmc::pairwise_similarity(config.vocab.size,
                                                    config.prompt, head));
    }
    csv << "tsmc_gen_" << g.generation << ',' << sim_cell << ','
        << csv_cell(tox) << '\n';
  }

  for (const tsmc::BaselineKind kind :
       {tsmc::BaselineKind::kDpo, tsmc::BaselineKind::kGrpo}) {
    tsmc::BaselineConfig bconfig;
    bconfig.kind = kind;
    bconfig.steps = config.baselines.steps;
    bconfig.batch = config.baselines.batch;
    bconfig.learning_rate = config.baselines.learning_rate;
    bconfig.beta = kind == tsmc::BaselineKind::kDpo
                       ? config.baselines.dpo_beta
                       : config.baselines.grpo_beta;
    bconfig.optimizer = config.baselines.optimizer;
    bconfig.trace_every = config.baselines.trace_every;
    std::vector<tsmc::BaselineTraceRow> trace;
    auto tuned =
        tsmc::train_baseline(*reference, phi, config.prompt, bconfig,
                             rng.sub(tsmc::to_string(kind)), &trace);
    tuned->set_generation(0);
    const std::string name = "baseline_" + tsmc::to_string(kind);
    {
      std::ofstream os(
          (fs::path(config.output_dir) / (name + "_model.txt")).string());
      tuned->save(os);
    }
    tsmc::write_text_file(
        (fs::path(config.output_dir) / (name + "_trace.jsonl")).string(),
        tsmc::baseline_trace_to_jsonl(trace));
    const auto [sim, tox] = eval_points(*tuned);
    csv << tsmc::to_string(kind) << ','
        << (sim >= 0 ? csv_cell(sim) : std::string()) << ',' << csv_cell(tox)
        << '\n';
  }

  tsmc::write_text_file(
      (fs::path(config.output_dir) / "similarity_toxicity.csv").string(),
      csv.str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval: particle efficiency and KL against stored artifacts.

int cmd_eval(const ExperimentConfig& config) {
  const auto artifacts = load_artifacts(config.output_dir);
  if (artifacts.empty())
    throw tsmc::InputError(
        "no gen_*/model.txt artifacts under --out; run `train` first");
  auto p0 = config.make_base_model(RngStream(config.seed).sub("model-init"));
  const tsmc::Potential phi = config.make_potential();
  const RngStream rng = RngStream(config.seed).sub("eval");

  std::vector<tsmc::EffectivePotential> pots;
  pots.reserve(artifacts.size());
  for (const auto& g : artifacts) pots.emplace_back(phi, *p0, *g.model);
  std::vector<tsmc::GenerationHandle> handles;
  for (std::size_t i = 0; i < artifacts.size(); ++i)
    handles.push_back({artifacts[i].generation, artifacts[i].model.get(),
                       artifacts[i].twist.get(), &pots[i]});

  bool have_exact = false;
  double exact_tox = 0.0;
  tsmc::ExactDistribution exact;
  try {
    exact = tsmc::enumerate_target(*p0, phi, config.prompt);
    exact_tox = tsmc::exact_expected_classifier(exact, phi);
    have_exact = true;
  } catch (const tsmc::CapacityError&) {
  }

  const auto cells = tsmc::particle_efficiency_curve(
      handles, config.prompt, phi, config.eval.k_grid, config.eval.repeats,
      config.make_smc_config(1), rng.sub("efficiency"), config.threads);
  std::ostringstream eff_csv;
  eff_csv << "generation,num_particles,mean_toxicity,std_error,repeats,"
             "exact_target_toxicity\n";
  for (const auto& cell : cells)
    eff_csv << cell.generation << ',' << cell.num_particles << ','
            << csv_cell(cell.mean_toxicity) << ',' << csv_cell(cell.std_error)
            << ',' << cell.repeats << ','
            << (have_exact ? csv_cell(exact_tox) : std::string()) << '\n';
  tsmc::write_text_file(
      (fs::path(config.output_dir) / "particle_efficiency.csv").string(),
      eff_csv.str());

  std::ostringstream kl_csv;
  kl_csv << "generation,exact_kl,estimated_kl,estimated_kl_se\n";
  for (std::size_t i = 0; i < handles.size(); ++i) {
    const auto& g = artifacts[i];
    const tsmc::KlEstimate est = tsmc::estimate_kl_target_vs_proposal(
        *g.model, pots[i], *g.twist, config.prompt, config.eval.kl_samples,
        rng.sub("kl").sub(static_cast<uint64_t>(g.generation)), 10,
        config.threads);
    std::string exact_cell;
    if (have_exact)
      exact_cell = csv_cell(tsmc::exact_kl_target_vs_proposal(
          exact, *g.model, *g.twist, pots[i]));
    kl_csv << g.generation << ',' << exact_cell << ',' << csv_cell(est.value)
           << ',' << csv_cell(est.std_error) << '\n';
  }
  tsmc::write_text_file(
      (fs::path(config.output_dir) / "kl_per_generation.csv").string(),
      kl_csv.str());
  return 0;
}

// ---------------------------------------------------------------------------
// sample: ad-hoc TSMC draws to stdout.

int cmd_sample(const ExperimentConfig& config, int generation, int particles,
               int runs, bool trace) {
  auto p0 = config.make_base_model(RngStream(config.seed).sub("model-init"));
  const tsmc::Potential phi = config.make_potential();

  std::unique_ptr<tsmc::AutoregressiveModel> model = p0->clone();
  std::unique_ptr<tsmc::TwistNetwork> twist;
  if (generation >= 0) {
    auto artifacts = load_artifacts(config.output_dir);
    bool found = false;
    for (auto& g : artifacts) {
      if (g.generation == generation) {
        model = std::move(g.model);
        twist = std::move(g.twist);
        found = true;
        break;
      }
    }
    if (!found)
      throw tsmc::InputError("generation " + std::to_string(generation) +
                             " not found under --out");
  } else {
    // Fresh zero-initialized twist: the proposal starts at the base model.
    twist = std::make_unique<tsmc::TwistNetwork>(
        config.make_twist(RngStream(config.seed).sub("twist-init")));
  }

  const tsmc::EffectivePotential eff(phi, *p0, *model);
  tsmc::SmcConfig smc = config.make_smc_config(
      particles > 0 ? particles : config.smc.particles_test);
  smc.record_trace = trace;
  const RngStream rng = RngStream(config.seed).sub("sample");
  for (int r = 0; r < runs; ++r) {
    const auto res = tsmc::tsmc_sample(*model, *twist, eff, config.prompt,
                                       smc, rng.sub(static_cast<uint64_t>(r)));
    if (trace) std::cout << tsmc::trace_to_jsonl(res);
    for (const auto& gen : res.sequences) {
      for (std::size_t t = 0; t < gen.size(); ++t) {
        if (t) std::cout << ' ';
        std::cout << config.vocab.name(gen[t]);
      }
      std::cout << "\tlog_phi="
                << tsmc::format_sig(phi.log_score(config.prompt, gen))
                << "\ttoxicity="
                << tsmc::format_sig(phi.classifier_prob(config.prompt, gen))
                << '\n';
    }
    std::cout << "# run=" << r
              << " log_partition=" << tsmc::format_sig(res.log_partition)
              << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Twisted SMC engine for constrained sequence generation"};
  app.require_subcommand(1);

  CommonArgs oracle_args, train_args, baselines_args, eval_args, sample_args;
  int sample_generation = -1, sample_particles = 0, sample_runs = 1;
  bool sample_trace = false;

  CLI::App* oracle = app.add_subcommand(
      "oracle", "Exact enumeration + rejection sampling across the beta sweep");
  add_common(oracle, oracle_args);
  CLI::App* train = app.add_subcommand(
      "train", "Run the self-distillation pipeline for M generations");
  add_common(train, train_args);
  CLI::App* baselines =
      app.add_subcommand("baselines", "Train DPO and GRPO baselines");
  add_common(baselines, baselines_args);
  CLI::App* eval_cmd = app.add_subcommand(
      "eval", "Particle-efficiency and KL evaluation of stored artifacts");
  add_common(eval_cmd, eval_args);
  CLI::App* sample = app.add_subcommand("sample", "Ad-hoc TSMC draws");
  add_common(sample, sample_args);
  sample->add_option("--gen", sample_generation,
                     "Generation artifacts to sample from (default: base)");
  sample->add_option("--particles", sample_particles, "Particle count");
  sample->add_option("--runs", sample_runs, "Independent TSMC runs");
  sample->add_flag("--trace", sample_trace,
                   "Emit the per-step SMC trace as JSON-lines");

  CLI11_PARSE(app, argc, argv);

  try {
    if (oracle->parsed()) return cmd_oracle(load_config(oracle_args));
    if (train->parsed()) return cmd_train(load_config(train_args));
    if (baselines->parsed()) return cmd_baselines(load_config(baselines_args));
    if (eval_cmd->parsed()) return cmd_eval(load_config(eval_args));
    if (sample->parsed())
      return cmd_sample(load_config(sample_args), sample_generation,
                        sample_particles, sample_runs, sample_trace);
  } catch (const tsmc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const tsmc::CapacityError& e) {
    std::cerr << "capacity error: " << e.what() << '\n';
    return 3;
  } catch (const tsmc::DegeneracyError& e) {
    std::cerr << "degeneracy error: " << e.what() << '\n';
    return 3;
  } catch (const tsmc::StarvationError& e) {
    std::cerr << "starvation error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
