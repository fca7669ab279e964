#ifndef TSMC_DISTILL_HPP_
#define TSMC_DISTILL_HPP_

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tsmc/ctl.hpp"
#include "tsmc/metrics.hpp"
#include "tsmc/model.hpp"
#include "tsmc/potential.hpp"
#include "tsmc/rng.hpp"
#include "tsmc/sequence.hpp"
#include "tsmc/smc.hpp"
#include "tsmc/twist.hpp"

namespace tsmc {

struct DistillConfig {
  int generations = 2;  // M
  int dataset_size = 10000;
  int k_train = 100;  // particles while generating distillation data
  int k_test = 50;    // particles during evaluation
  bool warm_start_twist = true;
  int twist_hidden = 64;
  int twist_window = 2;
  FitConfig fit;  // distillation model fit
  CtlConfig ctl;
  SmcConfig smc;
  // Evaluation knobs.
  int eval_sequences = 500;
  int kl_samples = 10000;
  int similarity_sample = 128;
  bool exact_metrics = true;  // enumeration-based metrics when enumerable
  int threads = 1;
};

struct DatasetSummary {
  int size = 0;
  double mean_log_potential = 0.0;
  double mean_toxicity = 0.0;
};

struct GenerationRecord {
  int generation = 0;
  std::unique_ptr<AutoregressiveModel> model;
  std::unique_ptr<TwistNetwork> twist;
  DatasetSummary dataset_summary;
  MetricsSnapshot metrics;
  std::vector<CtlTraceRow> ctl_trace;  // empty for loaded generations
};

// Final particles of ceil(n_sequences / K) independent TSMC runs (run r uses
// rng.sub(r)); at least n_sequences sequences.
std::vector<Sequence> generate_dataset(const AutoregressiveModel& model,
                                       const Twist& twist,
                                       const SequenceScorer& final_pot,
                                       const Prompt& prompt, int k,
                                       int n_sequences,
                                       const SmcConfig& smc_base,
                                       RngStream rng, int threads = 1);

// Metric snapshot for a (model, twist) pair against the invariant target
// sigma defined by (p0, phi). `exact` may be null when not enumerable.
MetricsSnapshot evaluate_generation(const AutoregressiveModel& p0,
                                    const Potential& phi,
                                    const AutoregressiveModel& model,
                                    const TwistNetwork& twist,
                                    const Prompt& prompt,
                                    const DistillConfig& config,
                                    const ExactDistribution* exact,
                                    RngStream rng);

// One outer-loop iteration: TSMC dataset from the previous generation,
// maximum-likelihood distillation, modified CTL against the new effective
// potential, metrics.
GenerationRecord self_distill_step(const AutoregressiveModel& p0,
                                   const Potential& phi,
                                   const GenerationRecord& prev,
                                   const Prompt& prompt,
                                   const DistillConfig& config,
                                   const ExactDistribution* exact,
                                   RngStream rng,
                                   std::vector<Sequence>* dataset_out = nullptr);

// Full pipeline: generation 0 is plain CTL on p0; generations 1..M refit the
// base model on their predecessor's TSMC output. When `out_dir` is non-empty,
// gen_<m>/{model.txt, twist.txt, dataset.jsonl, metrics.json} are persisted
// and complete generations found there are loaded instead of retrained
// (metrics are recomputed deterministically).
std::vector<GenerationRecord> run_pipeline(const AutoregressiveModel& p0,
                                           const Potential& phi,
                                           const Prompt& prompt,
                                           const DistillConfig& config,
                                           RngStream rng,
                                           const std::string& out_dir = "");

}  // namespace tsmc

#endif  // TSMC_DISTILL_HPP_
