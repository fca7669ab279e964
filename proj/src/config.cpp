#include "tsmc/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tsmc/errors.hpp"

namespace tsmc {

using json = nlohmann::ordered_json;

namespace {

void check_keys(const json& obj, const std::string& where,
                const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& item : obj.items())
    if (allowed.find(item.key()) == allowed.end())
      throw ConfigError("unknown key '" + item.key() + "' in " + where);
}

template <typename T>
void get_to(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) obj.at(key).get_to(out);
}

std::vector<double> parse_weights(const json& w, const Vocab& vocab) {
  std::vector<double> out(static_cast<std::size_t>(vocab.size), 0.0);
  if (w.is_array()) {
    if (w.empty()) return {};  // unset: callers default to zero weights
    if (static_cast<int>(w.size()) != vocab.size)
      throw ConfigError("potential.weights array must have one entry per token");
    for (int i = 0; i < vocab.size; ++i)
      out[static_cast<std::size_t>(i)] = w.at(static_cast<std::size_t>(i)).get<double>();
    return out;
  }
  if (!w.is_object())
    throw ConfigError("potential.weights must be an array or a name-keyed object");
  double def = 0.0;
  bool has_default = false;
  for (const auto& item : w.items()) {
    if (item.key() == "default") {
      def = item.value().get<double>();
      has_default = true;
    }
  }
  if (has_default) std::fill(out.begin(), out.end(), def);
  for (const auto& item : w.items()) {
    if (item.key() == "default") continue;
    const int id = vocab.id_of(item.key());  // throws on unknown names
    out[static_cast<std::size_t>(id)] = item.value().get<double>();
  }
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config JSON parse error: ") + e.what());
  }
  check_keys(root, "config",
             {"seed", "threads", "output_dir", "vocab", "prompt", "base_model",
              "potential", "twist", "smc", "ctl", "distill", "baselines",
              "oracle", "eval"});
  if (!root.contains("vocab") || !root.contains("prompt"))
    throw ConfigError("config requires 'vocab' and 'prompt'");

  ExperimentConfig c;
  get_to(root, "seed", c.seed);
  get_to(root, "threads", c.threads);
  get_to(root, "output_dir", c.output_dir);

  {
    const json& v = root.at("vocab");
    check_keys(v, "vocab", {"size", "names"});
    get_to(v, "size", c.vocab.size);
    get_to(v, "names", c.vocab.names);
  }
  {
    const json& p = root.at("prompt");
    check_keys(p, "prompt", {"tokens", "horizon"});
    get_to(p, "tokens", c.prompt.tokens);
    get_to(p, "horizon", c.prompt.horizon);
  }
  if (root.contains("base_model")) {
    const json& b = root.at("base_model");
    check_keys(b, "base_model",
               {"kind", "order", "smoothing", "hidden", "init", "unigram"});
    if (b.contains("kind"))
      c.base_model.kind = model_kind_from_string(b.at("kind").get<std::string>());
    get_to(b, "order", c.base_model.order);
    get_to(b, "smoothing", c.base_model.smoothing);
    get_to(b, "hidden", c.base_model.hidden);
    get_to(b, "init", c.base_model.init);
    get_to(b, "unigram", c.base_model.unigram);
  }
  if (root.contains("potential")) {
    const json& p = root.at("potential");
    check_keys(p, "potential",
               {"kind", "weights", "bias", "beta", "betas", "table",
                "default_score", "log_floor"});
    if (p.contains("kind")) {
      const auto kind = p.at("kind").get<std::string>();
      if (kind == "logistic")
        c.potential.kind = PotentialKind::kLogistic;
      else if (kind == "table")
        c.potential.kind = PotentialKind::kTable;
      else
        throw ConfigError("unknown potential kind: " + kind);
    }
    if (p.contains("weights"))
      c.potential.weights = parse_weights(p.at("weights"), c.vocab);
    get_to(p, "bias", c.potential.bias);
    get_to(p, "beta", c.potential.beta);
    get_to(p, "betas", c.potential.betas);
    get_to(p, "default_score", c.potential.default_score);
    get_to(p, "log_floor", c.potential.log_floor);
    if (p.contains("table")) {
      for (const auto& row : p.at("table")) {
        check_keys(row, "potential.table entry", {"tokens", "score"});
        c.potential.table.emplace_back(
            row.at("tokens").get<std::vector<int>>(),
            row.at("score").get<double>());
      }
    }
  }
  if (root.contains("twist")) {
    const json& t = root.at("twist");
    check_keys(t, "twist", {"hidden", "window"});
    get_to(t, "hidden", c.twist.hidden);
    get_to(t, "window", c.twist.window);
  }
  if (root.contains("smc")) {
    const json& s = root.at("smc");
    check_keys(s, "smc",
               {"particles_train", "particles_test", "scheme", "trigger",
                "ess_threshold"});
    get_to(s, "particles_train", c.smc.particles_train);
    get_to(s, "particles_test", c.smc.particles_test);
    if (s.contains("scheme"))
      c.smc.scheme = resample_scheme_from_string(s.at("scheme").get<std::string>());
    if (s.contains("trigger"))
      c.smc.trigger =
          resample_trigger_from_string(s.at("trigger").get<std::string>());
    get_to(s, "ess_threshold", c.smc.ess_threshold);
  }
  if (root.contains("ctl")) {
    const json& t = root.at("ctl");
    check_keys(t, "ctl",
               {"steps", "positive_particles", "negative_particles",
                "learning_rate", "optimizer", "resampled_positives",
                "trace_every"});
    get_to(t, "steps", c.ctl.steps);
    get_to(t, "positive_particles", c.ctl.positive_particles);
    get_to(t, "negative_particles", c.ctl.negative_particles);
    get_to(t, "learning_rate", c.ctl.learning_rate);
    if (t.contains("optimizer"))
      c.ctl.optimizer =
          optimizer_kind_from_string(t.at("optimizer").get<std::string>());
    get_to(t, "resampled_positives", c.ctl.resampled_positives);
    get_to(t, "trace_every", c.ctl.trace_every);
  }
  if (root.contains("distill")) {
    const json& d = root.at("distill");
    check_keys(d, "distill",
               {"generations", "dataset_size", "warm_start_twist", "mle_steps",
                "mle_batch"});
    get_to(d, "generations", c.distill.generations);
    get_to(d, "dataset_size", c.distill.dataset_size);
    get_to(d, "warm_start_twist", c.distill.warm_start_twist);
    get_to(d, "mle_steps", c.distill.mle_steps);
    get_to(d, "mle_batch", c.distill.mle_batch);
  }
  if (root.contains("baselines")) {
    const json& b = root.at("baselines");
    check_keys(b, "baselines",
               {"steps", "batch", "learning_rate", "dpo_beta", "grpo_beta",
                "optimizer", "trace_every", "pretrain_sequences",
                "pretrain_steps", "hidden"});
    get_to(b, "steps", c.baselines.steps);
    get_to(b, "batch", c.baselines.batch);
    get_to(b, "learning_rate", c.baselines.learning_rate);
    get_to(b, "dpo_beta", c.baselines.dpo_beta);
    get_to(b, "grpo_beta", c.baselines.grpo_beta);
    if (b.contains("optimizer"))
      c.baselines.optimizer =
          optimizer_kind_from_string(b.at("optimizer").get<std::string>());
    get_to(b, "trace_every", c.baselines.trace_every);
    get_to(b, "pretrain_sequences", c.baselines.pretrain_sequences);
    get_to(b, "pretrain_steps", c.baselines.pretrain_steps);
    get_to(b, "hidden", c.baselines.hidden);
  }
  if (root.contains("oracle")) {
    const json& o = root.at("oracle");
    check_keys(o, "oracle",
               {"rejection_accepts", "attempt_cap", "histogram_bins",
                "similarity_sample"});
    get_to(o, "rejection_accepts", c.oracle.rejection_accepts);
    get_to(o, "attempt_cap", c.oracle.attempt_cap);
    get_to(o, "histogram_bins", c.oracle.histogram_bins);
    get_to(o, "similarity_sample", c.oracle.similarity_sample);
  }
  if (root.contains("eval")) {
    const json& e = root.at("eval");
    check_keys(e, "eval",
               {"k_grid", "repeats", "eval_sequences", "kl_samples",
                "similarity_sample"});
    get_to(e, "k_grid", c.eval.k_grid);
    get_to(e, "repeats", c.eval.repeats);
    get_to(e, "eval_sequences", c.eval.eval_sequences);
    get_to(e, "kl_samples", c.eval.kl_samples);
    get_to(e, "similarity_sample", c.eval.similarity_sample);
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

std::string ExperimentConfig::serialize() const {
  json root;
  root["seed"] = seed;
  root["threads"] = threads;
  root["output_dir"] = output_dir;
  root["vocab"] = {{"size", vocab.size}, {"names", vocab.names}};
  root["prompt"] = {{"tokens", prompt.tokens}, {"horizon", prompt.horizon}};
  root["base_model"] = {{"kind", to_string(base_model.kind)},
                        {"order", base_model.order},
                        {"smoothing", base_model.smoothing},
                        {"hidden", base_model.hidden},
                        {"init", base_model.init},
                        {"unigram", base_model.unigram}};
  json table = json::array();
  for (const auto& [tokens, score] : potential.table)
    table.push_back({{"tokens", tokens}, {"score", score}});
  root["potential"] = {
      {"kind", potential.kind == PotentialKind::kLogistic ? "logistic" : "table"},
      {"weights", potential.weights},
      {"bias", potential.bias},
      {"beta", potential.beta},
      {"betas", potential.betas},
      {"table", table},
      {"default_score", potential.default_score},
      {"log_floor", potential.log_floor}};
  root["twist"] = {{"hidden", twist.hidden}, {"window", twist.window}};
  root["smc"] = {{"particles_train", smc.particles_train},
                 {"particles_test", smc.particles_test},
                 {"scheme", to_string(smc.scheme)},
                 {"trigger", to_string(smc.trigger)},
                 {"ess_threshold", smc.ess_threshold}};
  root["ctl"] = {{"steps", ctl.steps},
                 {"positive_particles", ctl.positive_particles},
                 {"negative_particles", ctl.negative_particles},
                 {"learning_rate", ctl.learning_rate},
                 {"optimizer", to_string(ctl.optimizer)},
                 {"resampled_positives", ctl.resampled_positives},
                 {"trace_every", ctl.trace_every}};
  root["distill"] = {{"generations", distill.generations},
                     {"dataset_size", distill.dataset_size},
                     {"warm_start_twist", distill.warm_start_twist},
                     {"mle_steps", distill.mle_steps},
                     {"mle_batch", distill.mle_batch}};
  root["baselines"] = {{"steps", baselines.steps},
                       {"batch", baselines.batch},
                       {"learning_rate", baselines.learning_rate},
                       {"dpo_beta", baselines.dpo_beta},
                       {"grpo_beta", baselines.grpo_beta},
                       {"optimizer", to_string(baselines.optimizer)},
                       {"trace_every", baselines.trace_every},
                       {"pretrain_sequences", baselines.pretrain_sequences},
                       {"pretrain_steps", baselines.pretrain_steps},
                       {"hidden", baselines.hidden}};
  root["oracle"] = {{"rejection_accepts", oracle.rejection_accepts},
                    {"attempt_cap", oracle.attempt_cap},
                    {"histogram_bins", oracle.histogram_bins},
                    {"similarity_sample", oracle.similarity_sample}};
  root["eval"] = {{"k_grid", eval.k_grid},
                  {"repeats", eval.repeats},
                  {"eval_sequences", eval.eval_sequences},
                  {"kl_samples", eval.kl_samples},
                  {"similarity_sample", eval.similarity_sample}};
  return root.dump(2) + "\n";
}

void ExperimentConfig::validate() const {
  vocab.validate();
  prompt.validate(vocab);
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (base_model.order < 1) throw ConfigError("base_model.order must be >= 1");
  if (base_model.init != "uniform" && base_model.init != "unigram")
    throw ConfigError("base_model.init must be 'uniform' or 'unigram'");
  if (base_model.init == "unigram") {
    if (base_model.kind != ModelKind::kTabular)
      throw ConfigError("unigram init requires a tabular base model");
    if (static_cast<int>(base_model.unigram.size()) != vocab.size)
      throw ConfigError("base_model.unigram needs one probability per token");
  }
  if (potential.kind == PotentialKind::kLogistic &&
      !potential.weights.empty() &&
      static_cast<int>(potential.weights.size()) != vocab.size)
    throw ConfigError("potential.weights size must match vocab size");
  for (const auto& [tokens, score] : potential.table) {
    if (static_cast<int>(tokens.size()) != prompt.horizon)
      throw ConfigError("potential.table entries must have horizon tokens");
    for (int t : tokens)
      if (t < 0 || t >= vocab.size)
        throw ConfigError("potential.table token id out of range");
    if (score < 0.0 || score > 1.0)
      throw ConfigError("potential.table scores must lie in [0, 1]");
  }
  if (potential.beta < 0.0) throw ConfigError("potential.beta must be >= 0");
  for (double b : potential.betas)
    if (b < 0.0) throw ConfigError("potential.betas entries must be >= 0");
  if (eval.k_grid.empty()) throw ConfigError("eval.k_grid must be non-empty");
  for (int k : eval.k_grid)
    if (k < 1) throw ConfigError("eval.k_grid entries must be >= 1");
  if (ctl.steps < 1) throw ConfigError("ctl.steps must be >= 1");
  if (ctl.learning_rate <= 0.0)
    throw ConfigError("ctl.learning_rate must be > 0");
  if (distill.generations < 0)
    throw ConfigError("distill.generations must be >= 0");
}

std::unique_ptr<AutoregressiveModel> ExperimentConfig::make_base_model(
    RngStream rng) const {
  if (base_model.kind == ModelKind::kTabular) {
    if (base_model.init == "unigram")
      return TabularModel::from_unigram(vocab, base_model.order,
                                        base_model.unigram,
                                        potential.log_floor);
    return TabularModel::uniform(vocab, base_model.order, potential.log_floor);
  }
  return std::make_unique<NeuralModel>(vocab, base_model.order, prompt.horizon,
                                       base_model.hidden, rng,
                                       potential.log_floor);
}

Potential ExperimentConfig::make_potential() const {
  return make_potential_with_beta(potential.beta);
}

Potential ExperimentConfig::make_potential_with_beta(double beta) const {
  if (potential.kind == PotentialKind::kLogistic) {
    std::vector<double> w = potential.weights;
    if (w.empty()) w.assign(static_cast<std::size_t>(vocab.size), 0.0);
    return Potential::logistic(std::move(w), potential.bias, beta,
                               potential.log_floor);
  }
  return Potential::table(vocab.size, potential.table, potential.default_score,
                          beta, potential.log_floor);
}

TwistNetwork ExperimentConfig::make_twist(RngStream init_rng) const {
  return TwistNetwork(vocab, twist.window, prompt.horizon, twist.hidden,
                      init_rng);
}

SmcConfig ExperimentConfig::make_smc_config(int num_particles) const {
  SmcConfig out;
  out.num_particles = num_particles;
  out.scheme = smc.scheme;
  out.trigger = smc.trigger;
  out.ess_threshold = smc.ess_threshold;
  return out;
}

CtlConfig ExperimentConfig::make_ctl_config() const {
  CtlConfig out;
  out.steps = ctl.steps;
  out.positive_particles = ctl.positive_particles;
  out.negative_particles = ctl.negative_particles;
  out.learning_rate = ctl.learning_rate;
  out.optimizer = ctl.optimizer;
  out.resampled_positives = ctl.resampled_positives;
  out.trace_every = ctl.trace_every;
  out.threads = threads;
  return out;
}

FitConfig ExperimentConfig::make_fit_config() const {
  FitConfig fit;
  fit.kind = base_model.kind;
  fit.vocab = vocab;
  fit.order = base_model.order;
  fit.smoothing = base_model.smoothing;
  fit.hidden = base_model.hidden;
  fit.steps = distill.mle_steps;
  fit.batch = distill.mle_batch;
  fit.log_floor = potential.log_floor;
  fit.threads = threads;
  return fit;
}

DistillConfig ExperimentConfig::make_distill_config() const {
  DistillConfig out;
  out.generations = distill.generations;
  out.dataset_size = distill.dataset_size;
  out.k_train = smc.particles_train;
  out.k_test = smc.particles_test;
  out.warm_start_twist = distill.warm_start_twist;
  out.twist_hidden = twist.hidden;
  out.twist_window = twist.window;
  out.fit = make_fit_config();
  out.ctl = make_ctl_config();
  out.smc = make_smc_config(smc.particles_train);
  out.eval_sequences = eval.eval_sequences;
  out.kl_samples = eval.kl_samples;
  out.similarity_sample = eval.similarity_sample;
  out.threads = threads;
  return out;
}

}  // namespace tsmc
