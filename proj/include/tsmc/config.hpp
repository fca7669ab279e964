#ifndef TSMC_CONFIG_HPP_
#define TSMC_CONFIG_HPP_

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tsmc/baselines.hpp"
#include "tsmc/distill.hpp"
#include "tsmc/model.hpp"
#include "tsmc/potential.hpp"
#include "tsmc/sequence.hpp"
#include "tsmc/smc.hpp"

namespace tsmc {

// Experiment configuration, parsed from JSON with explicit keys. Unknown keys
// are errors; every cross-reference (e.g. token names used in the potential)
// must resolve. serialize() followed by parse() is an exact identity.
struct ExperimentConfig {
  uint64_t seed = 0;
  int threads = 1;
  std::string output_dir = "out";

  Vocab vocab;
  Prompt prompt;

  struct BaseModel {
    ModelKind kind = ModelKind::kTabular;
    int order = 2;
    double smoothing = 1.0;
    int hidden = 64;
    std::string init = "uniform";  // "uniform" | "unigram"
    std::vector<double> unigram;
  } base_model;

  struct PotentialSpec {
    PotentialKind kind = PotentialKind::kLogistic;
    std::vector<double> weights;  // by token id (resolved from names)
    double bias = 0.0;
    double beta = 1.0;
    std::vector<double> betas = {0.0, 1.0, 10.0};  // oracle sweep
    std::vector<std::pair<std::vector<int>, double>> table;
    double default_score = 1.0;
    double log_floor = kDefaultLogFloor;
  } potential;

  struct TwistSpec {
    int hidden = 64;
    int window = 2;
  } twist;

  struct SmcSpec {
    int particles_train = 100;
    int particles_test = 50;
    ResampleScheme scheme = ResampleScheme::kMultinomial;
    ResampleTrigger trigger = ResampleTrigger::kEveryStep;
    double ess_threshold = 0.5;
  } smc;

  struct CtlSpec {
    int steps = 2000;
    int positive_particles = 512;
    int negative_particles = 512;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::kAdam;
    bool resampled_positives = false;
    int trace_every = 50;
  } ctl;

  struct DistillSpec {
    int generations = 2;
    int dataset_size = 10000;
    bool warm_start_twist = true;
    int mle_steps = 2000;  // neural distillation fits
    int mle_batch = 256;
  } distill;

  struct BaselineSpec {
    int steps = 1000;
    int batch = 256;
    double learning_rate = 1e-3;
    double dpo_beta = 0.1;
    double grpo_beta = 0.04;
    OptimizerKind optimizer = OptimizerKind::kAdam;
    int trace_every = 10;
    // Neural stand-in for a tabular base model, fit on its samples.
    int pretrain_sequences = 20000;
    int pretrain_steps = 2000;
    int hidden = 64;
  } baselines;

  struct OracleSpec {
    int64_t rejection_accepts = 100000;
    int64_t attempt_cap = 100000000;
    int histogram_bins = 20;
    int similarity_sample = 128;
  } oracle;

  struct EvalSpec {
    std::vector<int> k_grid = {4, 16, 64, 256};
    int repeats = 50;
    int eval_sequences = 500;
    int kl_samples = 10000;
    int similarity_sample = 128;
  } eval;

  static ExperimentConfig parse(const std::string& json_text);
  static ExperimentConfig load_file(const std::string& path);
  std::string serialize() const;
  void validate() const;

  // Factories binding the config to module types.
  std::unique_ptr<AutoregressiveModel> make_base_model(RngStream rng) const;
  Potential make_potential() const;
  Potential make_potential_with_beta(double beta) const;
  TwistNetwork make_twist(RngStream init_rng) const;
  SmcConfig make_smc_config(int num_particles) const;
  CtlConfig make_ctl_config() const;
  DistillConfig make_distill_config() const;
  FitConfig make_fit_config() const;
};

}  // namespace tsmc

#endif  // TSMC_CONFIG_HPP_
