#ifndef TSMC_TWIST_HPP_
#define TSMC_TWIST_HPP_

#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "tsmc/mlp.hpp"
#include "tsmc/model.hpp"
#include "tsmc/potential.hpp"
#include "tsmc/sequence.hpp"

namespace tsmc {

// Per-prefix twist factor psi. log_twist_all evaluates log psi(prefix + v)
// jointly for every candidate next token v, which is what the twist-induced
// proposal consumes. Implementations are pure functions of their parameters
// and the prefix.
class Twist {
 public:
  virtual ~Twist() = default;

  // Number of entries log_twist_all writes (the vocab size).
  virtual int width() const = 0;

  // out[v] = log psi(prefix + v); prefix length must be < horizon.
  virtual void log_twist_all(const Prompt& prompt, TokenSpan gen,
                             std::span<double> out) const = 0;

  // log psi of a non-empty prefix (the empty prefix is defined as psi = 1).
  double log_prefix_value(const Prompt& prompt, TokenSpan gen) const;
};

// psi == exp(level), default level 0 (psi == 1).
class ConstantTwist final : public Twist {
 public:
  explicit ConstantTwist(int vocab_size, double log_value = 0.0)
      : vocab_size_(vocab_size), log_value_(log_value) {}
  int width() const override { return vocab_size_; }
  void log_twist_all(const Prompt& prompt, TokenSpan gen,
                     std::span<double> out) const override;

 private:
  int vocab_size_;
  double log_value_;
};

// Learned twist: MLP over a one-hot window of the last `window` tokens plus a
// one-hot of the position, one output per candidate next token.
class TwistNetwork final : public Twist {
 public:
  TwistNetwork(const Vocab& vocab, int window, int horizon, int hidden,
               RngStream init_stream);

  int width() const override { return vocab_.size; }
  void log_twist_all(const Prompt& prompt, TokenSpan gen,
                     std::span<double> out) const override;

  // Variant that also exposes the hidden activations and active features so
  // gradient accumulation can skip the repeated forward pass.
  void log_twist_all_cached(const Prompt& prompt, TokenSpan gen,
                            std::span<double> out, std::span<double> hidden,
                            std::span<int> active) const;

  // grad += coeff * d log psi(prefix + token) / dtheta.
  void accumulate_grad_log_twist(const Prompt& prompt, TokenSpan gen,
                                 int token, double coeff,
                                 std::span<double> grad) const;
  // Same, reusing cached activations from log_twist_all_cached.
  void accumulate_grad_cached(std::span<const int> active,
                              std::span<const double> hidden, int token,
                              double coeff, std::span<double> grad) const;

  const Vocab& vocab() const { return vocab_; }
  int window() const { return window_; }
  int horizon() const { return horizon_; }
  int hidden() const { return mlp_.hidden_dim(); }
  int active_count() const { return window_ + 1; }
  int generation() const { return generation_; }
  void set_generation(int m) { generation_ = m; }

  std::span<double> params() { return mlp_.params(); }
  std::span<const double> params() const { return mlp_.params(); }
  std::size_t param_count() const { return mlp_.param_count(); }

  void save(std::ostream& os) const;
  static TwistNetwork load(std::istream& is);

 private:
  void active_features(const Prompt& prompt, TokenSpan gen,
                       std::span<int> active) const;

  Vocab vocab_;
  int window_;
  int horizon_;
  int generation_ = 0;
  Mlp mlp_;
};

// Exact expected-future-potential table:
//   psi*(s_{1:t})   = sum_{s_{t+1:T}} p(s_{t+1:T} | s_{1:t}) phi(s_{1:T}),
//   psi*(s_{1:T})   = phi(s_{1:T}),
// stored per level t = 0..T with base-V prefix indexing. Level 0 holds
// E[phi] = Z_sigma.
struct OptimalTwistTable {
  int vocab_size = 0;
  int horizon = 0;
  std::vector<std::vector<double>> log_levels;  // [t][prefix_index]

  double log_value(TokenSpan gen) const;
};

// Enumerates all continuations; guarded at vocab^T <= 2^22.
OptimalTwistTable optimal_twist_table(const AutoregressiveModel& model,
                                      const SequenceScorer& pot,
                                      const Prompt& prompt);

// Adapter exposing an OptimalTwistTable as a Twist.
class TableTwist final : public Twist {
 public:
  explicit TableTwist(OptimalTwistTable table) : table_(std::move(table)) {}
  int width() const override { return table_.vocab_size; }
  void log_twist_all(const Prompt& prompt, TokenSpan gen,
                     std::span<double> out) const override;
  const OptimalTwistTable& table() const { return table_; }

 private:
  OptimalTwistTable table_;
};

}  // namespace tsmc

#endif  // TSMC_TWIST_HPP_
