#include "tsmc/twist.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "tsmc/errors.hpp"
#include "tsmc/numerics.hpp"

namespace tsmc {

double Twist::log_prefix_value(const Prompt& prompt, TokenSpan gen) const {
  if (gen.empty()) return 0.0;  // psi(s_{1:0}) := 1
  std::vector<double> out(static_cast<std::size_t>(width()));
  log_twist_all(prompt, gen.subspan(0, gen.size() - 1), out);
  return out[gen.back()];
}

void ConstantTwist::log_twist_all(const Prompt& prompt, TokenSpan gen,
                                  std::span<double> out) const {
  (void)prompt;
  (void)gen;
  std::fill(out.begin(), out.end(), log_value_);
}

// ---------------------------------------------------------------------------
// TwistNetwork

TwistNetwork::TwistNetwork(const Vocab& vocab, int window, int horizon,
                           int hidden, RngStream init_stream)
    : vocab_(vocab), window_(window), horizon_(horizon) {
  vocab_.validate();
  if (window_ < 1) throw InputError("twist window must be >= 1");
  if (horizon_ < 1) throw InputError("horizon must be >= 1");
  mlp_ = Mlp(window_ * (vocab_.size + 1) + horizon_, hidden, vocab_.size);
  mlp_.init(init_stream);
}

void TwistNetwork::active_features(const Prompt& prompt, TokenSpan gen,
                                   std::span<int> active) const {
  const int v = vocab_.size;
  const int64_t np = static_cast<int64_t>(prompt.tokens.size());
  const int64_t total = np + static_cast<int64_t>(gen.size());
  for (int i = 0; i < window_; ++i) {
    const int64_t pos = total - window_ + i;
    int tok;
    if (pos < 0) {
      tok = v;
    } else {
      tok = pos < np ? prompt.tokens[static_cast<std::size_t>(pos)]
                     : gen[static_cast<std::size_t>(pos - np)];
      if (tok < 0 || tok >= v) throw InputError("token id out of range");
    }
    active[i] = i * (v + 1) + tok;
  }
  const int t = static_cast<int>(gen.size());
  if (t >= horizon_) throw InputError("prefix length must be < horizon");
  active[window_] = window_ * (v + 1) + t;
}

void TwistNetwork::log_twist_all(const Prompt& prompt, TokenSpan gen,
                                 std::span<double> out) const {
  std::vector<int> active(active_count());
  std::vector<double> hidden(mlp_.hidden_dim());
  active_features(prompt, gen, active);
  mlp_.forward(active, hidden, out);
}

void TwistNetwork::log_twist_all_cached(const Prompt& prompt, TokenSpan gen,
                                        std::span<double> out,
                                        std::span<double> hidden,
                                        std::span<int> active) const {
  active_features(prompt, gen, active);
  mlp_.forward(active, hidden, out);
}

void TwistNetwork::accumulate_grad_log_twist(const Prompt& prompt,
                                             TokenSpan gen, int token,
                                             double coeff,
                                             std::span<double> grad) const {
  if (coeff == 0.0) return;
  if (token < 0 || token >= vocab_.size)
    throw InputError("token id out of range");
  std::vector<int> active(active_count());
  std::vector<double> hidden(mlp_.hidden_dim());
  std::vector<double> out(vocab_.size);
  active_features(prompt, gen, active);
  mlp_.forward(active, hidden, out);
  mlp_.backward_component(active, hidden, token, coeff, grad);
}

void TwistNetwork::accumulate_grad_cached(std::span<const int> active,
                                          std::span<const double> hidden,
                                          int token, double coeff,
                                          std::span<double> grad) const {
  mlp_.backward_component(active, hidden, token, coeff, grad);
}

void TwistNetwork::save(std::ostream& os) const {
  os << "tsmc-twist v1\n";
  os << "vocab " << vocab_.size;
  for (const auto& n : vocab_.names) os << ' ' << n;
  os << '\n';
  os << "window " << window_ << '\n';
  os << "horizon " << horizon_ << '\n';
  os << "hidden " << mlp_.hidden_dim() << '\n';
  os << "generation " << generation_ << '\n';
  os << "params " << mlp_.param_count() << '\n';
  char buf[40];
  for (double v : mlp_.params()) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << buf << '\n';
  }
}

TwistNetwork TwistNetwork::load(std::istream& is) {
  auto expect = [&is](const std::string& key) {
    std::string line;
    if (!std::getline(is, line))
      throw InputError("twist file truncated before '" + key + "'");
    if (line.rfind(key + " ", 0) != 0)
      throw InputError("twist file: expected '" + key + "'");
    return line.substr(key.size() + 1);
  };
  std::string header;
  if (!std::getline(is, header) || header != "tsmc-twist v1")
    throw InputError("unrecognized twist file header");
  std::istringstream vs(expect("vocab"));
  Vocab vocab;
  vs >> vocab.size;
  std::string name;
  while (vs >> name) vocab.names.push_back(name);
  const int window = std::stoi(expect("window"));
  const int horizon = std::stoi(expect("horizon"));
  const int hidden = std::stoi(expect("hidden"));
  const int generation = std::stoi(expect("generation"));
  const std::size_t n = std::stoull(expect("params"));
  TwistNetwork tw(vocab, window, horizon, hidden, RngStream(0));
  if (n != tw.param_count())
    throw InputError("twist file: parameter count mismatch");
  std::string line;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(is, line)) throw InputError("twist file truncated");
    tw.params()[i] = std::strtod(line.c_str(), nullptr);
  }
  tw.set_generation(generation);
  return tw;
}

// ---------------------------------------------------------------------------
// Optimal twist table

double OptimalTwistTable::log_value(TokenSpan gen) const {
  const int t = static_cast<int>(gen.size());
  if (t > horizon) throw InputError("prefix longer than horizon");
  int64_t idx = 0;
  for (int tok : gen) {
    if (tok < 0 || tok >= vocab_size) throw InputError("token id out of range");
    idx = idx * vocab_size + tok;
  }
  return log_levels[static_cast<std::size_t>(t)][static_cast<std::size_t>(idx)];
}

OptimalTwistTable optimal_twist_table(const AutoregressiveModel& model,
                                      const SequenceScorer& pot,
                                      const Prompt& prompt) {
  const int v = model.vocab().size;
  const int T = prompt.horizon;
  double leaves = 1.0;
  for (int t = 0; t < T; ++t) {
    leaves *= v;
    if (leaves > static_cast<double>(int64_t{1} << 22))
      throw CapacityError("optimal twist table: vocab^T exceeds 2^22");
  }

  OptimalTwistTable table;
  table.vocab_size = v;
  table.horizon = T;
  table.log_levels.resize(static_cast<std::size_t>(T) + 1);
  for (int t = 0; t <= T; ++t) {
    int64_t n = 1;
    for (int i = 0; i < t; ++i) n *= v;
    table.log_levels[static_cast<std::size_t>(t)].assign(
        static_cast<std::size_t>(n), 0.0);
  }

  // Leaf level: log phi of each complete sequence.
  {
    std::vector<int> gen(static_cast<std::size_t>(T), 0);
    auto& leaf = table.log_levels[static_cast<std::size_t>(T)];
    for (int64_t idx = 0; idx < static_cast<int64_t>(leaf.size()); ++idx) {
      int64_t rem = idx;
      for (int t = T - 1; t >= 0; --t) {
        gen[static_cast<std::size_t>(t)] = static_cast<int>(rem % v);
        rem /= v;
      }
      leaf[static_cast<std::size_t>(idx)] = pot.log_score(prompt, gen);
    }
  }

  // Backward recursion: psi*(s_{1:t}) = sum_v p(v | s_{1:t}) psi*(s_{1:t}v).
  std::vector<double> lp(static_cast<std::size_t>(v));
  std::vector<double> terms(static_cast<std::size_t>(v));
  std::vector<int> gen;
  for (int t = T - 1; t >= 0; --t) {
    auto& level = table.log_levels[static_cast<std::size_t>(t)];
    const auto& next = table.log_levels[static_cast<std::size_t>(t) + 1];
    gen.assign(static_cast<std::size_t>(t), 0);
    for (int64_t idx = 0; idx < static_cast<int64_t>(level.size()); ++idx) {
      int64_t rem = idx;
      for (int i = t - 1; i >= 0; --i) {
        gen[static_cast<std::size_t>(i)] = static_cast<int>(rem % v);
        rem /= v;
      }
      model.next_token_logprobs(prompt, gen, lp);
      for (int tok = 0; tok < v; ++tok)
        terms[static_cast<std::size_t>(tok)] =
            lp[static_cast<std::size_t>(tok)] +
            next[static_cast<std::size_t>(idx * v + tok)];
      level[static_cast<std::size_t>(idx)] = logsumexp(terms);
    }
  }
  return table;
}

void TableTwist::log_twist_all(const Prompt& prompt, TokenSpan gen,
                               std::span<double> out) const {
  (void)prompt;
  const int v = table_.vocab_size;
  const int t = static_cast<int>(gen.size());
  if (t + 1 > table_.horizon)
    throw InputError("prefix length must be < horizon");
  int64_t idx = 0;
  for (int tok : gen) idx = idx * v + tok;
  const auto& next = table_.log_levels[static_cast<std::size_t>(t) + 1];
  for (int tok = 0; tok < v; ++tok)
    out[static_cast<std::size_t>(tok)] =
        next[static_cast<std::size_t>(idx * v + tok)];
}

}  // namespace tsmc
