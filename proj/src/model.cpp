#include "tsmc/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "tsmc/errors.hpp"
#include "tsmc/parallel.hpp"

namespace tsmc {

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "tabular") return ModelKind::kTabular;
  if (s == "neural") return ModelKind::kNeural;
  throw ConfigError("unknown model kind: " + s);
}

std::string to_string(ModelKind kind) {
  return kind == ModelKind::kTabular ? "tabular" : "neural";
}

namespace {

void write_double(std::ostream& os, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf << '\n';
}

void write_vocab(std::ostream& os, const Vocab& vocab) {
  os << "vocab " << vocab.size;
  for (const auto& n : vocab.names) os << ' ' << n;
  os << '\n';
}

int64_t ipow(int64_t base, int exp) {
  int64_t r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

}  // namespace

AutoregressiveModel::AutoregressiveModel(Vocab vocab, int order,
                                         double log_floor)
    : vocab_(std::move(vocab)), order_(order), log_floor_(log_floor) {
  vocab_.validate();
  if (order_ < 1) throw InputError("model order must be >= 1");
}

int64_t AutoregressiveModel::context_index(const Prompt& prompt,
                                           TokenSpan gen) const {
  const int v = vocab_.size;
  const int64_t np = static_cast<int64_t>(prompt.tokens.size());
  const int64_t ng = static_cast<int64_t>(gen.size());
  const int64_t total = np + ng;
  int64_t idx = 0;
  for (int i = order_; i >= 1; --i) {
    const int64_t pos = total - i;
    int tok;
    if (pos < 0) {
      tok = v;  // pad
    } else {
      tok = pos < np ? prompt.tokens[static_cast<std::size_t>(pos)]
                     : gen[static_cast<std::size_t>(pos - np)];
      if (tok < 0 || tok >= v) throw InputError("token id out of range");
    }
    idx = idx * (v + 1) + tok;
  }
  return idx;
}

double AutoregressiveModel::sequence_logprob(const Prompt& prompt,
                                             TokenSpan gen) const {
  check_complete(prompt, gen);
  check_tokens_in_range(gen, vocab_.size);
  std::vector<double> lp(vocab_.size);
  double total = 0.0;
  for (int t = 0; t < prompt.horizon; ++t) {
    next_token_logprobs(prompt, gen.subspan(0, t), lp);
    total += lp[gen[t]];
  }
  return total;
}

int AutoregressiveModel::sample_token(const Prompt& prompt, TokenSpan gen,
                                      double u) const {
  std::vector<double> lp(vocab_.size);
  next_token_logprobs(prompt, gen, lp);
  double cum = 0.0;
  for (int v = 0; v < vocab_.size; ++v) {
    cum += std::exp(lp[v]);
    if (u < cum) return v;
  }
  return vocab_.size - 1;
}

std::vector<int> AutoregressiveModel::sample_sequence(const Prompt& prompt,
                                                      RngStream stream) const {
  std::vector<int> gen;
  gen.reserve(prompt.horizon);
  for (int t = 0; t < prompt.horizon; ++t)
    gen.push_back(sample_token(prompt, gen, stream.uniform(t)));
  return gen;
}

// ---------------------------------------------------------------------------
// TabularModel

TabularModel::TabularModel(Vocab vocab, int order, double log_floor)
    : AutoregressiveModel(std::move(vocab), order, log_floor) {
  context_count_ = ipow(vocab_.size + 1, order_);
  if (context_count_ * vocab_.size > (int64_t{1} << 28))
    throw CapacityError("tabular context table too large");
  table_.assign(static_cast<std::size_t>(context_count_ * vocab_.size), 0.0);
}

std::unique_ptr<TabularModel> TabularModel::uniform(const Vocab& vocab,
                                                    int order,
                                                    double log_floor) {
  auto m = std::unique_ptr<TabularModel>(
      new TabularModel(vocab, order, log_floor));
  const double lp = -std::log(static_cast<double>(vocab.size));
  std::fill(m->table_.begin(), m->table_.end(), lp);
  return m;
}

std::unique_ptr<TabularModel> TabularModel::from_unigram(
    const Vocab& vocab, int order, std::span<const double> probs,
    double log_floor) {
  if (static_cast<int>(probs.size()) != vocab.size)
    throw InputError("unigram probability vector size mismatch");
  auto m = std::unique_ptr<TabularModel>(
      new TabularModel(vocab, order, log_floor));
  for (int64_t c = 0; c < m->context_count_; ++c) m->set_row(c, probs);
  return m;
}

void TabularModel::set_row(int64_t ctx, std::span<const double> probs) {
  double sum = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw InputError("negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw InputError("conditional probabilities must sum to 1");
  for (int v = 0; v < vocab_.size; ++v) {
    const double p = probs[v];
    table_[static_cast<std::size_t>(ctx * vocab_.size + v)] =
        p > 0.0 ? std::max(std::log(p), log_floor_) : log_floor_;
  }
}

void TabularModel::set_conditional(std::span<const int> context,
                                   std::span<const double> probs) {
  if (static_cast<int>(context.size()) != order_)
    throw InputError("context length must equal model order");
  int64_t idx = 0;
  for (int tok : context) {
    if (tok == -1) tok = vocab_.size;
    if (tok < 0 || tok > vocab_.size) throw InputError("bad context token");
    idx = idx * (vocab_.size + 1) + tok;
  }
  set_row(idx, probs);
}

void TabularModel::next_token_logprobs(const Prompt& prompt, TokenSpan gen,
                                       std::span<double> out) const {
  if (static_cast<int>(gen.size()) >= prompt.horizon)
    throw InputError("prefix length must be < horizon");
  const int64_t ctx = context_index(prompt, gen);
  const double* row = table_.data() + ctx * vocab_.size;
  std::copy(row, row + vocab_.size, out.begin());
}

std::unique_ptr<AutoregressiveModel> TabularModel::clone() const {
  return std::unique_ptr<AutoregressiveModel>(new TabularModel(*this));
}

void TabularModel::save(std::ostream& os) const {
  os << "tsmc-model v1\n";
  os << "kind tabular\n";
  write_vocab(os, vocab_);
  os << "order " << order_ << '\n';
  os << "generation " << generation_ << '\n';
  os << "log_floor ";
  write_double(os, log_floor_);
  os << "params " << table_.size() << '\n';
  for (double v : table_) write_double(os, v);
}

// ---------------------------------------------------------------------------
// NeuralModel

NeuralModel::NeuralModel(const Vocab& vocab, int order, int horizon,
                         int hidden, RngStream init_stream, double log_floor)
    : AutoregressiveModel(vocab, order, log_floor), horizon_(horizon) {
  if (horizon_ < 1) throw InputError("horizon must be >= 1");
  mlp_ = Mlp(order * (vocab_.size + 1) + horizon_, hidden, vocab_.size);
  mlp_.init(init_stream);
}

void NeuralModel::active_features(const Prompt& prompt, TokenSpan gen,
                                  std::span<int> active) const {
  const int v = vocab_.size;
  const int64_t np = static_cast<int64_t>(prompt.tokens.size());
  const int64_t total = np + static_cast<int64_t>(gen.size());
  for (int i = 0; i < order_; ++i) {
    const int64_t pos = total - order_ + i;
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
  active[order_] = order_ * (v + 1) + t;
}

void NeuralModel::next_token_logprobs(const Prompt& prompt, TokenSpan gen,
                                      std::span<double> out) const {
  std::vector<int> active(active_count());
  std::vector<double> hidden(mlp_.hidden_dim());
  active_features(prompt, gen, active);
  mlp_.forward(active, hidden, out);
  const double lz = logsumexp({out.data(), out.size()});
  for (auto& o : out) o -= lz;
}

void NeuralModel::accumulate_grad_logprob(const Prompt& prompt, TokenSpan gen,
                                          int token, double coeff,
                                          std::span<double> grad) const {
  if (token < 0 || token >= vocab_.size)
    throw InputError("token id out of range");
  std::vector<int> active(active_count());
  std::vector<double> hidden(mlp_.hidden_dim());
  std::vector<double> logits(vocab_.size);
  active_features(prompt, gen, active);
  mlp_.forward(active, hidden, logits);
  const double lz = logsumexp({logits.data(), logits.size()});
  // d log softmax(token) / d logits = e_token - softmax.
  std::vector<double> dout(vocab_.size);
  for (int v = 0; v < vocab_.size; ++v)
    dout[v] = -coeff * std::exp(logits[v] - lz);
  dout[token] += coeff;
  mlp_.backward(active, hidden, dout, grad);
}

std::unique_ptr<AutoregressiveModel> NeuralModel::clone() const {
  return std::unique_ptr<AutoregressiveModel>(new NeuralModel(*this));
}

void NeuralModel::save(std::ostream& os) const {
  os << "tsmc-model v1\n";
  os << "kind neural\n";
  write_vocab(os, vocab_);
  os << "order " << order_ << '\n';
  os << "generation " << generation_ << '\n';
  os << "log_floor ";
  write_double(os, log_floor_);
  os << "horizon " << horizon_ << '\n';
  os << "hidden " << mlp_.hidden_dim() << '\n';
  os << "params " << mlp_.param_count() << '\n';
  for (double v : mlp_.params()) write_double(os, v);
}

// ---------------------------------------------------------------------------
// Load

namespace {

std::string expect_key(std::istream& is, const std::string& key) {
  std::string line;
  if (!std::getline(is, line))
    throw InputError("model file truncated before '" + key + "'");
  if (line.rfind(key + " ", 0) != 0 && line != key)
    throw InputError("model file: expected '" + key + "', got '" + line + "'");
  return line.size() > key.size() ? line.substr(key.size() + 1) : "";
}

Vocab parse_vocab(const std::string& rest) {
  std::istringstream ss(rest);
  Vocab vocab;
  if (!(ss >> vocab.size)) throw InputError("model file: bad vocab line");
  std::string name;
  while (ss >> name) vocab.names.push_back(name);
  if (!vocab.names.empty() &&
      static_cast<int>(vocab.names.size()) != vocab.size)
    throw InputError("model file: vocab name count mismatch");
  return vocab;
}

std::vector<double> parse_params(std::istream& is, std::size_t n) {
  std::vector<double> out;
  out.reserve(n);
  std::string line;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(is, line)) throw InputError("model file truncated");
    out.push_back(std::strtod(line.c_str(), nullptr));
  }
  return out;
}

}  // namespace

std::unique_ptr<AutoregressiveModel> AutoregressiveModel::load(
    std::istream& is) {
  std::string header;
  if (!std::getline(is, header) || header != "tsmc-model v1")
    throw InputError("unrecognized model file header");
  const ModelKind kind = model_kind_from_string(expect_key(is, "kind"));
  const Vocab vocab = parse_vocab(expect_key(is, "vocab"));
  const int order = std::stoi(expect_key(is, "order"));
  const int generation = std::stoi(expect_key(is, "generation"));
  const double log_floor = std::strtod(expect_key(is, "log_floor").c_str(), nullptr);

  if (kind == ModelKind::kTabular) {
    const std::size_t n = std::stoull(expect_key(is, "params"));
    auto m = std::unique_ptr<TabularModel>(
        new TabularModel(vocab, order, log_floor));
    if (n != m->table_.size())
      throw InputError("model file: parameter count mismatch");
    m->table_ = parse_params(is, n);
    m->set_generation(generation);
    return m;
  }
  const int horizon = std::stoi(expect_key(is, "horizon"));
  const int hidden = std::stoi(expect_key(is, "hidden"));
  const std::size_t n = std::stoull(expect_key(is, "params"));
  auto m = std::make_unique<NeuralModel>(vocab, order, horizon, hidden,
                                         RngStream(0), log_floor);
  if (n != m->param_count())
    throw InputError("model file: parameter count mismatch");
  auto params = parse_params(is, n);
  std::copy(params.begin(), params.end(), m->params().begin());
  m->set_generation(generation);
  return m;
}

// ---------------------------------------------------------------------------
// fit_mle

namespace {

void validate_dataset(const std::vector<Sequence>& dataset) {
  if (dataset.empty()) throw InputError("fit_mle: empty dataset");
  const Prompt& p0 = dataset.front().prompt;
  for (const auto& seq : dataset) {
    if (seq.prompt.horizon != p0.horizon || seq.prompt.tokens != p0.tokens)
      throw InputError("fit_mle: all sequences must share prompt and horizon");
    check_complete(seq.prompt, seq.generated);
  }
}

Vocab fit_vocab(const std::vector<Sequence>& dataset,
                const FitConfig& config) {
  if (config.vocab.size >= 2) return config.vocab;
  int vmax = 2;
  for (const auto& seq : dataset) {
    for (int t : seq.generated) vmax = std::max(vmax, t + 1);
    for (int t : seq.prompt.tokens) vmax = std::max(vmax, t + 1);
  }
  return Vocab{vmax, {}};
}

std::unique_ptr<AutoregressiveModel> fit_tabular(
    const std::vector<Sequence>& dataset, const FitConfig& config) {
  const Vocab v = fit_vocab(dataset, config);
  auto model = TabularModel::uniform(v, config.order, config.log_floor);

  std::vector<int64_t> counts(
      static_cast<std::size_t>(model->context_count() * v.size), 0);
  for (const auto& seq : dataset) {
    for (int t = 0; t < seq.prompt.horizon; ++t) {
      const int64_t ctx = model->context_index(
          seq.prompt, TokenSpan(seq.generated).subspan(0, t));
      ++counts[static_cast<std::size_t>(ctx * v.size + seq.generated[t])];
    }
  }
  const double alpha = config.smoothing;
  std::vector<double> probs(v.size);
  for (int64_t c = 0; c < model->context_count(); ++c) {
    int64_t total = 0;
    for (int t = 0; t < v.size; ++t)
      total += counts[static_cast<std::size_t>(c * v.size + t)];
    if (total == 0 && alpha == 0.0) continue;  // unobserved: stay uniform
    const double denom = static_cast<double>(total) + alpha * v.size;
    for (int t = 0; t < v.size; ++t)
      probs[t] =
          (static_cast<double>(counts[static_cast<std::size_t>(c * v.size + t)]) +
           alpha) /
          denom;
    int64_t digits[32];
    int64_t rem = c;
    for (int i = 0; i < config.order; ++i) {
      digits[i] = rem % (v.size + 1);
      rem /= v.size + 1;
    }
    std::vector<int> ctx(config.order);
    for (int i = 0; i < config.order; ++i) {
      int64_t d = digits[config.order - 1 - i];
      ctx[i] = d == v.size ? -1 : static_cast<int>(d);
    }
    model->set_conditional(ctx, probs);
  }
  return model;
}

std::unique_ptr<AutoregressiveModel> fit_neural(
    const std::vector<Sequence>& dataset, const FitConfig& config,
    RngStream rng) {
  const Prompt& prompt = dataset.front().prompt;
  const Vocab vocab = fit_vocab(dataset, config);
  auto model = std::make_unique<NeuralModel>(vocab, config.order,
                                             prompt.horizon, config.hidden,
                                             rng.sub("init"), config.log_floor);
  Optimizer opt(config.optimizer, model->param_count(), config.learning_rate);
  const RngStream batch_stream = rng.sub("batch");
  const int batch = std::min<int>(config.batch,
                                  static_cast<int>(dataset.size()));
  const int64_t chunk = 16;

  std::vector<double> grad(model->param_count());
  const int64_t chunks = num_chunks(batch, chunk);
  std::vector<std::vector<double>> partial(
      static_cast<std::size_t>(chunks),
      std::vector<double>(model->param_count()));

  for (int step = 0; step < config.steps; ++step) {
    for (auto& buf : partial) std::fill(buf.begin(), buf.end(), 0.0);
    const double scale =
        -1.0 / (static_cast<double>(batch) * prompt.horizon);
    parallel_for_chunks(batch, config.threads, chunk,
                        [&](int64_t c, int64_t begin, int64_t end) {
                          auto& buf = partial[static_cast<std::size_t>(c)];
                          for (int64_t i = begin; i < end; ++i) {
                            const uint64_t pick = batch_stream.bits(
                                static_cast<uint64_t>(step), static_cast<uint64_t>(i));
                            const auto& seq = dataset[pick % dataset.size()];
                            for (int t = 0; t < prompt.horizon; ++t)
                              model->accumulate_grad_logprob(
                                  seq.prompt,
                                  TokenSpan(seq.generated).subspan(0, t),
                                  seq.generated[t], scale, buf);
                          }
                        });
    std::fill(grad.begin(), grad.end(), 0.0);
    for (const auto& buf : partial)
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += buf[i];
    opt.update(model->params(), grad);
  }
  return model;
}

}  // namespace

std::unique_ptr<AutoregressiveModel> fit_mle(const std::vector<Sequence>& dataset,
                                             const FitConfig& config,
                                             RngStream rng) {
  validate_dataset(dataset);
  if (config.kind == ModelKind::kTabular) return fit_tabular(dataset, config);
  return fit_neural(dataset, config, rng);
}

double dataset_avg_loglik(const AutoregressiveModel& model,
                          const std::vector<Sequence>& dataset) {
  if (dataset.empty()) throw InputError("empty dataset");
  double total = 0.0;
  for (const auto& seq : dataset)
    total += model.sequence_logprob(seq.prompt, seq.generated);
  return total / static_cast<double>(dataset.size());
}

}  // namespace tsmc
