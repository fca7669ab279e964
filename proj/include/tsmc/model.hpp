#ifndef TSMC_MODEL_HPP_
#define TSMC_MODEL_HPP_

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tsmc/mlp.hpp"
#include "tsmc/numerics.hpp"
#include "tsmc/optimizer.hpp"
#include "tsmc/rng.hpp"
#include "tsmc/sequence.hpp"

namespace tsmc {

enum class ModelKind { kTabular, kNeural };

ModelKind model_kind_from_string(const std::string& s);
std::string to_string(ModelKind kind);

// Autoregressive next-token model over a fixed vocabulary. `order` is the
// number of preceding tokens in the conditioning context (so a classic bigram
// model has order 1); contexts shorter than `order` are left-padded with a
// dedicated pad symbol. Models are immutable after construction/fitting and
// safe to evaluate from many threads.
class AutoregressiveModel {
 public:
  virtual ~AutoregressiveModel() = default;

  const Vocab& vocab() const { return vocab_; }
  int order() const { return order_; }
  int generation() const { return generation_; }
  void set_generation(int m) { generation_ = m; }
  double log_floor() const { return log_floor_; }

  virtual ModelKind kind() const = 0;
  virtual std::unique_ptr<AutoregressiveModel> clone() const = 0;

  // out has vocab().size entries; exp(out) sums to 1 within 1e-9.
  virtual void next_token_logprobs(const Prompt& prompt, TokenSpan gen,
                                   std::span<double> out) const = 0;

  // Sum of per-step log-probabilities of a complete sequence.
  double sequence_logprob(const Prompt& prompt, TokenSpan gen) const;

  // CDF inversion of the next-token distribution at u in [0,1).
  int sample_token(const Prompt& prompt, TokenSpan gen, double u) const;

  // Ancestral sampling; draw t uses stream.uniform(t).
  std::vector<int> sample_sequence(const Prompt& prompt,
                                   RngStream stream) const;

  virtual void save(std::ostream& os) const = 0;
  static std::unique_ptr<AutoregressiveModel> load(std::istream& is);

  // Encodes the last `order` tokens of prompt+gen as a base-(V+1) index,
  // oldest token first, pad = V.
  int64_t context_index(const Prompt& prompt, TokenSpan gen) const;

 protected:
  AutoregressiveModel(Vocab vocab, int order, double log_floor);

  Vocab vocab_;
  int order_;
  int generation_ = 0;
  double log_floor_ = kDefaultLogFloor;
};

// Conditional log-probability table over all padded contexts.
class TabularModel final : public AutoregressiveModel {
 public:
  // Uniform next-token distribution for every context.
  static std::unique_ptr<TabularModel> uniform(const Vocab& vocab, int order,
                                               double log_floor = kDefaultLogFloor);
  // Same explicit next-token distribution for every context.
  static std::unique_ptr<TabularModel> from_unigram(
      const Vocab& vocab, int order, std::span<const double> probs,
      double log_floor = kDefaultLogFloor);

  ModelKind kind() const override { return ModelKind::kTabular; }
  std::unique_ptr<AutoregressiveModel> clone() const override;

  void next_token_logprobs(const Prompt& prompt, TokenSpan gen,
                           std::span<double> out) const override;

  // Overrides the row for one context; `context` holds the `order` preceding
  // tokens, oldest first, with -1 for pad positions.
  void set_conditional(std::span<const int> context,
                       std::span<const double> probs);

  int64_t context_count() const { return context_count_; }
  std::span<const double> table() const { return table_; }

  void save(std::ostream& os) const override;

  friend class AutoregressiveModel;

 private:
  TabularModel(Vocab vocab, int order, double log_floor);
  void set_row(int64_t ctx, std::span<const double> probs);

  int64_t context_count_ = 0;
  std::vector<double> table_;  // context-major: [ctx * V + v] log-probs
};

// One-hidden-layer MLP over a one-hot window of the last `order` tokens plus
// a one-hot of the current position; log-softmax output head.
class NeuralModel final : public AutoregressiveModel {
 public:
  NeuralModel(const Vocab& vocab, int order, int horizon, int hidden,
              RngStream init_stream, double log_floor = kDefaultLogFloor);

  ModelKind kind() const override { return ModelKind::kNeural; }
  std::unique_ptr<AutoregressiveModel> clone() const override;

  void next_token_logprobs(const Prompt& prompt, TokenSpan gen,
                           std::span<double> out) const override;

  int horizon() const { return horizon_; }
  int hidden() const { return mlp_.hidden_dim(); }
  std::span<double> params() { return mlp_.params(); }
  std::span<const double> params() const { return mlp_.params(); }
  std::size_t param_count() const { return mlp_.param_count(); }

  // grad += coeff * d log p(token | context) / dparams.
  void accumulate_grad_logprob(const Prompt& prompt, TokenSpan gen, int token,
                               double coeff, std::span<double> grad) const;

  // Active feature indices for a prefix (window one-hots plus position).
  void active_features(const Prompt& prompt, TokenSpan gen,
                       std::span<int> active) const;
  int feature_count() const { return mlp_.in_dim(); }
  int active_count() const { return order_ + 1; }

  void save(std::ostream& os) const override;

  friend class AutoregressiveModel;

 private:
  int horizon_;
  Mlp mlp_;
};

struct FitConfig {
  ModelKind kind = ModelKind::kTabular;
  Vocab vocab;  // vocab.size == 0 infers the size from the dataset
  int order = 2;
  double smoothing = 1.0;  // tabular add-alpha
  double log_floor = kDefaultLogFloor;
  // Neural:
  int hidden = 64;
  int steps = 2000;
  int batch = 256;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  int threads = 1;
};

// Maximum-likelihood fit. Tabular models are fit in closed form with add-alpha
// smoothing (unobserved contexts fall back to uniform); neural models by
// first-order optimization for config.steps minibatch steps.
std::unique_ptr<AutoregressiveModel> fit_mle(const std::vector<Sequence>& dataset,
                                             const FitConfig& config,
                                             RngStream rng);

// Mean per-sequence log-likelihood of a dataset under a model.
double dataset_avg_loglik(const AutoregressiveModel& model,
                          const std::vector<Sequence>& dataset);

}  // namespace tsmc

#endif  // TSMC_MODEL_HPP_
