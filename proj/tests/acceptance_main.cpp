// Acceptance suite: one criterion per command-line argument, one PASS/FAIL
// line per criterion. Exit status is the number of failed criteria.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "test_util.hpp"
#include "tsmc/baselines.hpp"
#include "tsmc/ctl.hpp"
#include "tsmc/distill.hpp"
#include "tsmc/metrics.hpp"
#include "tsmc/model.hpp"
#include "tsmc/numerics.hpp"
#include "tsmc/oracle.hpp"
#include "tsmc/potential.hpp"
#include "tsmc/smc.hpp"
#include "tsmc/textio.hpp"
#include "tsmc/twist.hpp"

namespace fs = std::filesystem;
using namespace tsmc;
using tsmc::test::ToyTarget;

namespace {

struct Check {
  bool ok = true;
  std::ostringstream detail;

  void expect(bool cond, const std::string& what) {
    ok = ok && cond;
    detail << "    [" << (cond ? "ok" : "FAIL") << "] " << what << "\n";
  }
};

// ---------------------------------------------------------------------------
// Sparse-reward reference target (vocab 6, T = 8): base model rarely emits
// the high-weight token, the tempered potential concentrates on sequences
// with several of them. Rejection acceptance sits well under 1%.

struct SparseTarget {
  Vocab vocab{6, {"a", "b", "c", "d", "e", "t"}};
  Prompt prompt{{}, 8};
  std::unique_ptr<AutoregressiveModel> model;
  Potential pot;

  SparseTarget()
      : model(TabularModel::from_unigram(
            vocab, 2,
            std::vector<double>{0.188, 0.188, 0.188, 0.188, 0.188, 0.06})),
        pot(Potential::logistic({-0.5, -0.5, -0.5, -0.5, -0.5, 1.0}, 0.0,
                                5.0)) {}
};

DistillConfig sparse_pipeline_config() {
  DistillConfig config;
  config.generations = 2;
  config.dataset_size = 10000;
  config.k_train = 100;
  config.k_test = 50;
  config.warm_start_twist = false;
  config.twist_hidden = 64;
  config.twist_window = 2;
  config.fit.kind = ModelKind::kTabular;
  config.fit.order = 2;
  config.fit.smoothing = 1.0;
  config.ctl.steps = 2000;
  config.ctl.positive_particles = 1024;
  config.ctl.negative_particles = 512;
  config.ctl.learning_rate = 1e-3;
  config.eval_sequences = 500;
  config.kl_samples = 10000;
  config.threads = static_cast<int>(
      std::max(1u, std::thread::hardware_concurrency()));
  config.ctl.threads = config.threads;
  config.fit.threads = config.threads;
  return config;
}

// Criteria 6 and 7 share one pipeline run.
const std::vector<GenerationRecord>& sparse_records() {
  static SparseTarget target;
  static std::vector<GenerationRecord> records = run_pipeline(
      *target.model, target.pot, target.prompt, sparse_pipeline_config(),
      RngStream(2024).sub("pipeline"));
  return records;
}

SparseTarget& sparse_target() {
  static SparseTarget target;
  return target;
}

// ---------------------------------------------------------------------------

bool criterion_1() {
  Check c;
  ToyTarget toy;
  const ExactDistribution exact =
      enumerate_target(*toy.model, toy.pot, toy.prompt);
  c.expect(std::abs(std::exp(exact.log_z) - 0.4375) <= 1e-12,
           "enumerate_target Z = 0.4375 within 1e-12");
  std::vector<int> bb = {1, 1};
  c.expect(std::abs(exact.sigma(bb) - 4.0 / 7.0) <= 1e-12,
           "sigma('bb') = 4/7 within 1e-12");

  const RejectionResult rej =
      rejection_sample(*toy.model, toy.pot, toy.prompt, 100000, RngStream(31));
  const auto freq = tsmc::test::empirical_leaf_distribution(rej.samples, 2, 2);
  std::vector<double> sigma(4);
  std::vector<int> gen(2);
  for (int i = 0; i < 4; ++i) {
    exact.decode(i, 2, gen);
    sigma[static_cast<std::size_t>(i)] = exact.sigma(gen);
  }
  const double tv = tsmc::test::total_variation(freq, sigma);
  c.expect(tv <= 0.01, "rejection TV to sigma = " + format_sig(tv) +
                           " <= 0.01 at 1e5 accepts");
  const double z = 0.4375;
  const double se =
      std::sqrt(z * (1.0 - z) / static_cast<double>(rej.attempts));
  c.expect(std::abs(rej.acceptance_ratio - z) <= 3.0 * se,
           "acceptance ratio " + format_sig(rej.acceptance_ratio) +
               " within 3 SE of 0.4375");
  std::cout << c.detail.str();
  return c.ok;
}

bool criterion_2() {
  Check c;
  ToyTarget toy;
  const ExactDistribution exact =
      enumerate_target(*toy.model, toy.pot, toy.prompt);
  TableTwist psi(optimal_twist_table(*toy.model, toy.pot, toy.prompt));

  // Incremental weights across every possible parent at every step.
  double max_var = 0.0;
  for (int t = 1; t <= toy.prompt.horizon; ++t) {
    std::vector<double> weights;
    const int64_t parents = t == 1 ? 1 : (int64_t{1} << (t - 1));
    for (int64_t idx = 0; idx < parents; ++idx) {
      std::vector<int> parent(static_cast<std::size_t>(t - 1));
      int64_t rem = idx;
      for (int i = t - 2; i >= 0; --i) {
        parent[static_cast<std::size_t>(i)] = static_cast<int>(rem % 2);
        rem /= 2;
      }
      weights.push_back(
          incremental_log_weight(*toy.model, psi, toy.pot, toy.prompt, parent));
    }
    double mean = 0.0;
    for (double w : weights) mean += w;
    mean /= static_cast<double>(weights.size());
    double var = 0.0;
    for (double w : weights) var += (w - mean) * (w - mean);
    var /= static_cast<double>(weights.size());
    max_var = std::max(max_var, var);
  }
  c.expect(max_var <= 1e-10, "incremental-weight variance " +
                                 format_sig(max_var) + " <= 1e-10");

  const double kl = exact_kl_target_vs_proposal(exact, *toy.model, psi, toy.pot);
  c.expect(kl <= 1e-10, "KL(sigma||q) = " + format_sig(kl) + " <= 1e-10");

  SmcConfig smc;
  smc.num_particles = 1;
  const int runs = 100000;
  std::vector<std::vector<int>> samples;
  samples.reserve(runs);
  RngStream rng(32);
  for (int r = 0; r < runs; ++r)
    samples.push_back(tsmc_sample(*toy.model, psi, toy.pot, toy.prompt, smc,
                                  rng.sub(static_cast<uint64_t>(r)))
                          .sequences[0]);
  const auto freq = tsmc::test::empirical_leaf_distribution(samples, 2, 2);
  std::vector<double> sigma(4);
  std::vector<int> gen(2);
  for (int i = 0; i < 4; ++i) {
    exact.decode(i, 2, gen);
    sigma[static_cast<std::size_t>(i)] = exact.sigma(gen);
  }
  const double tv = tsmc::test::total_variation(freq, sigma);
  c.expect(tv <= 0.01, "K=1 TSMC TV to sigma = " + format_sig(tv) +
                           " <= 0.01 over 1e5 runs");
  std::cout << c.detail.str();
  return c.ok;
}

bool criterion_3() {
  Check c;
  ToyTarget toy;
  ConstantTwist psi(2);
  const double z_exact = 0.4375;
  RngStream rng(33);
  for (int k : {1, 4, 16}) {
    SmcConfig smc;
    smc.num_particles = k;
    const int runs = 10000;
    double mean = 0.0, m2 = 0.0;
    for (int r = 0; r < runs; ++r) {
      const double z = std::exp(
          tsmc_sample(*toy.model, psi, toy.pot, toy.prompt, smc,
                      rng.sub("k", static_cast<uint64_t>(k))
                          .sub(static_cast<uint64_t>(r)))
              .log_partition);
      const double delta = z - mean;
      mean += delta / (r + 1);
      m2 += delta * (z - mean);
    }
    const double se = std::sqrt(m2 / (runs - 1) / runs);
    c.expect(std::abs(mean - z_exact) <= 3.0 * se,
             "K=" + std::to_string(k) + ": mean Z-hat = " + format_sig(mean) +
                 " within 3 SE (" + format_sig(se) + ") of 0.4375");
  }
  std::cout << c.detail.str();
  return c.ok;
}

bool criterion_4() {
  Check c;
  // Twist gradient.
  {
    Vocab vocab{3, {}};
    TwistNetwork tw(vocab, 2, 4, 10, RngStream(41));
    RngStream noise(42);
    for (std::size_t i = 0; i < tw.param_count(); ++i)
      tw.params()[i] += noise.uniform_range(i, -0.4, 0.4);
    Prompt prompt{{1}, 4};
    std::vector<int> gen = {2, 0};
    std::vector<double> grad(tw.param_count(), 0.0);
    tw.accumulate_grad_log_twist(prompt, gen, 1, 1.0, grad);
    auto value = [&]() {
      std::vector<double> out(3);
      tw.log_twist_all(prompt, gen, out);
      return out[1];
    };
    const double err = tsmc::test::finite_diff_max_rel_err(
        tw.params(), grad, value, 100, RngStream(43));
    c.expect(err <= 1e-4, "twist gradient max rel err " + format_sig(err));
  }
  // Neural-LM MLE gradient.
  {
    Vocab vocab{3, {}};
    Prompt prompt{{}, 3};
    NeuralModel m(vocab, 2, 3, 10, RngStream(44));
    RngStream noise(45);
    for (std::size_t i = 0; i < m.param_count(); ++i)
      m.params()[i] += noise.uniform_range(i, -0.4, 0.4);
    std::vector<Sequence> data;
    RngStream rng(46);
    for (int i = 0; i < 6; ++i)
      data.push_back(Sequence{
          prompt, m.sample_sequence(prompt, rng.sub(static_cast<uint64_t>(i)))});
    std::vector<double> grad(m.param_count(), 0.0);
    for (const auto& seq : data)
      for (int t = 0; t < prompt.horizon; ++t)
        m.accumulate_grad_logprob(
            seq.prompt, TokenSpan(seq.generated).first(static_cast<std::size_t>(t)),
            seq.generated[static_cast<std::size_t>(t)],
            -1.0 / static_cast<double>(data.size()), grad);
    auto nll = [&]() {
      double acc = 0.0;
      for (const auto& seq : data)
        acc -= m.sequence_logprob(seq.prompt, seq.generated);
      return acc / static_cast<double>(data.size());
    };
    const double err = tsmc::test::finite_diff_max_rel_err(
        m.params(), grad, nll, 100, RngStream(47));
    c.expect(err <= 1e-4, "neural MLE gradient max rel err " + format_sig(err));
  }
  // DPO gradient.
  {
    Vocab vocab{3, {}};
    Prompt prompt{{}, 3};
    NeuralModel ref(vocab, 1, 3, 8, RngStream(48));
    RngStream noise(49);
    for (std::size_t i = 0; i < ref.param_count(); ++i)
      ref.params()[i] += noise.uniform_range(i, -0.3, 0.3);
    PolicyTrainState state(ref, 0.3);
    RngStream noise2(50);
    for (std::size_t i = 0; i < state.policy->param_count(); ++i)
      state.policy->params()[i] += noise2.uniform_range(i, -0.2, 0.2);
    RewardFn reward = [](const Prompt&, TokenSpan gen) {
      return static_cast<double>(gen[0]) - 0.3 * gen[1];
    };
    const auto pairs =
        build_preference_batch(ref, reward, prompt, 10, RngStream(51));
    std::vector<double> grad(state.policy->param_count(), 0.0);
    dpo_loss_and_grad(state, pairs, prompt, grad);
    auto loss = [&]() {
      std::vector<double> scratch(state.policy->param_count(), 0.0);
      return dpo_loss_and_grad(state, pairs, prompt, scratch);
    };
    const double err = tsmc::test::finite_diff_max_rel_err(
        state.policy->params(), grad, loss, 100, RngStream(52));
    c.expect(err <= 1e-4, "DPO gradient max rel err " + format_sig(err));
  }
  // GRPO gradient on the stop-gradient surrogate.
  {
    Vocab vocab{3, {}};
    Prompt prompt{{}, 2};
    NeuralModel ref(vocab, 1, 2, 8, RngStream(53));
    PolicyTrainState state(ref, 0.2);
    RngStream noise(54);
    for (std::size_t i = 0; i < state.policy->param_count(); ++i)
      state.policy->params()[i] += noise.uniform_range(i, -0.25, 0.25);
    std::vector<std::vector<int>> batch;
    RngStream rng(55);
    for (int i = 0; i < 8; ++i)
      batch.push_back(state.policy->sample_sequence(
          prompt, rng.sub(static_cast<uint64_t>(i))));
    std::vector<double> rewards(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
      rewards[i] = static_cast<double>(batch[i][0]) - 0.4 * batch[i][1];
    const auto advantages = normalized_advantages(rewards);
    std::vector<double> grad(state.policy->param_count(), 0.0);
    grpo_loss_and_grad_with_advantages(state, batch, advantages, prompt, grad);

    std::vector<std::vector<double>> frozen;
    {
      std::vector<double> lp(3);
      for (const auto& gen : batch) {
        std::vector<double> row;
        for (int t = 0; t < prompt.horizon; ++t) {
          state.policy->next_token_logprobs(
              prompt, TokenSpan(gen).first(static_cast<std::size_t>(t)), lp);
          row.push_back(
              std::exp(lp[static_cast<std::size_t>(gen[static_cast<std::size_t>(t)])]));
        }
        frozen.push_back(row);
      }
    }
    auto surrogate = [&]() {
      const double inv =
          1.0 / (static_cast<double>(batch.size()) * prompt.horizon);
      std::vector<double> lp_t(3), lp_r(3);
      double acc = 0.0;
      for (std::size_t n = 0; n < batch.size(); ++n) {
        const auto& gen = batch[n];
        for (int t = 0; t < prompt.horizon; ++t) {
          const TokenSpan prefix =
              TokenSpan(gen).first(static_cast<std::size_t>(t));
          const int tok = gen[static_cast<std::size_t>(t)];
          state.policy->next_token_logprobs(prompt, prefix, lp_t);
          state.reference->next_token_logprobs(prompt, prefix, lp_r);
          const double p_theta = std::exp(lp_t[static_cast<std::size_t>(tok)]);
          const double log_ratio = lp_r[static_cast<std::size_t>(tok)] -
                                   lp_t[static_cast<std::size_t>(tok)];
          acc += inv * (-(p_theta / frozen[n][static_cast<std::size_t>(t)]) *
                            advantages[n] +
                        state.beta * (std::exp(log_ratio) - log_ratio - 1.0));
        }
      }
      return acc;
    };
    const double err = tsmc::test::finite_diff_max_rel_err(
        state.policy->params(), grad, surrogate, 100, RngStream(56));
    c.expect(err <= 1e-4, "GRPO gradient max rel err " + format_sig(err));
  }
  std::cout << c.detail.str();
  return c.ok;
}

bool criterion_5() {
  Check c;
  ToyTarget toy;
  const ExactDistribution exact =
      enumerate_target(*toy.model, toy.pot, toy.prompt);
  ConstantTwist ones(2);
  const double loss_untwisted = exact_ctl_loss(exact, *toy.model, ones);
  const double kl_untwisted =
      exact_kl_target_vs_proposal(exact, *toy.model, ones, toy.pot);

  EffectivePotential eff(toy.pot, *toy.model, *toy.model);
  CtlConfig config;
  config.steps = 2000;
  config.positive_particles = 128;
  config.negative_particles = 128;
  config.learning_rate = 1e-2;
  TwistNetwork init(toy.vocab, 2, 2, 16, RngStream(57));
  const TwistNetwork trained =
      train_twist(*toy.model, eff, toy.prompt, std::move(init), config,
                  RngStream(58));
  const double loss_trained = exact_ctl_loss(exact, *toy.model, trained);
  const double kl_trained =
      exact_kl_target_vs_proposal(exact, *toy.model, trained, toy.pot);
  c.expect(loss_trained < 0.25 * loss_untwisted,
           "exact CTL loss " + format_sig(loss_trained) + " < 25% of " +
               format_sig(loss_untwisted));
  c.expect(kl_trained < 0.25 * kl_untwisted,
           "exact KL " + format_sig(kl_trained) + " < 25% of " +
               format_sig(kl_untwisted));
  std::cout << c.detail.str();
  return c.ok;
}

bool criterion_6() {
  Check c;
  SparseTarget& target = sparse_target();
  const ExactDistribution exact =
      enumerate_target(*target.model, target.pot, target.prompt);
  c.expect(std::exp(exact.log_z) < 0.01,
           "rejection acceptance (= Z) " + format_sig(std::exp(exact.log_z)) +
               " < 1%");

  const auto& records = sparse_records();
  c.expect(records.size() == 3, "pipeline produced generations 0..2");

  std::vector<double> kls;
  for (const auto& rec : records) {
    c.expect(rec.metrics.exact_kl.has_value(),
             "generation " + std::to_string(rec.generation) + " has exact KL");
    kls.push_back(rec.metrics.exact_kl.value_or(1e9));
  }
  for (std::size_t m = 1; m < kls.size(); ++m)
    c.expect(kls[m] <= kls[m - 1] + 0.05,
             "KL m=" + std::to_string(m) + " (" + format_sig(kls[m]) +
                 ") <= KL m=" + std::to_string(m - 1) + " (" +
                 format_sig(kls[m - 1]) + ") + 0.05");

  // Mean toxicity of K = 16 TSMC samples per generation.
  const double target_tox = exact_expected_classifier(exact, target.pot);
  std::vector<double> tox(records.size());
  SmcConfig smc;
  smc.num_particles = 16;
  const int repeats = 300;
  RngStream rng(61);
  for (std::size_t m = 0; m < records.size(); ++m) {
    const EffectivePotential eff(target.pot, *target.model,
                                 *records[m].model);
    double acc = 0.0;
    int n = 0;
    const RngStream ms = rng.sub(static_cast<uint64_t>(m));
    for (int r = 0; r < repeats; ++r) {
      const auto res =
          tsmc_sample(*records[m].model, *records[m].twist, eff,
                      target.prompt, smc, ms.sub(static_cast<uint64_t>(r)));
      for (const auto& gen : res.sequences) {
        acc += target.pot.classifier_prob(target.prompt, gen);
        ++n;
      }
    }
    tox[m] = acc / n;
  }
  for (std::size_t m = 1; m < tox.size(); ++m)
    c.expect(tox[m] >= tox[m - 1] - 0.01,
             "toxicity m=" + std::to_string(m) + " (" + format_sig(tox[m]) +
                 ") >= m=" + std::to_string(m - 1) + " (" +
                 format_sig(tox[m - 1]) + ") - 0.01");
  const double gap_closed =
      (tox.back() - tox.front()) / (target_tox - tox.front());
  c.expect(gap_closed >= 0.9,
           "gap closed at m=2: " + format_sig(gap_closed) + " >= 0.9 (tox " +
               format_sig(tox.front()) + " -> " + format_sig(tox.back()) +
               ", target " + format_sig(target_tox) + ")");
  std::cout << c.detail.str();
  return c.ok;
}

bool criterion_7() {
  Check c;
  SparseTarget& target = sparse_target();
  const auto& records = sparse_records();

  std::vector<EffectivePotential> pots;
  pots.reserve(records.size());
  for (const auto& rec : records)
    pots.emplace_back(target.pot, *target.model, *rec.model);
  std::vector<GenerationHandle> handles;
  for (std::size_t m = 0; m < records.size(); ++m)
    handles.push_back({records[m].generation, records[m].model.get(),
                       records[m].twist.get(), &pots[m]});

  const std::vector<int> k_grid = {4, 16, 64, 256};
  SmcConfig smc_base;
  const auto cells = particle_efficiency_curve(
      handles, target.prompt, target.pot, k_grid, 150, smc_base,
      RngStream(62), sparse_pipeline_config().threads);

  auto cell = [&](int m, int k) -> const EfficiencyCell& {
    for (const auto& cl : cells)
      if (cl.generation == m && cl.num_particles == k) return cl;
    throw std::runtime_error("missing cell");
  };
  for (int m = 0; m <= 2; ++m) {
    for (std::size_t i = 1; i < k_grid.size(); ++i) {
      const auto& lo = cell(m, k_grid[i - 1]);
      const auto& hi = cell(m, k_grid[i]);
      const double allowance =
          3.0 * std::sqrt(lo.std_error * lo.std_error +
                          hi.std_error * hi.std_error);
      c.expect(hi.mean_toxicity >= lo.mean_toxicity - allowance,
               "m=" + std::to_string(m) + ": tox(K=" +
                   std::to_string(k_grid[i]) + ") = " +
                   format_sig(hi.mean_toxicity) + " >= tox(K=" +
                   std::to_string(k_grid[i - 1]) + ") = " +
                   format_sig(lo.mean_toxicity) + " - 3 SE");
    }
  }
  const auto& refined = cell(2, 4);
  const auto& baseline = cell(0, 64);
  const double allowance =
      3.0 * std::sqrt(refined.std_error * refined.std_error +
                      baseline.std_error * baseline.std_error);
  c.expect(refined.mean_toxicity >= baseline.mean_toxicity - allowance,
           "m=2/K=4 (" + format_sig(refined.mean_toxicity) +
               ") meets m=0/K=64 (" + format_sig(baseline.mean_toxicity) +
               ") within 3 SE");
  std::cout << c.detail.str();
  return c.ok;
}

bool criterion_8() {
  Check c;
  // Target invariance across a small but genuine pipeline.
  {
    ToyTarget toy;
    DistillConfig config;
    config.generations = 2;
    config.dataset_size = 2000;
    config.k_train = 50;
    config.k_test = 25;
    config.twist_hidden = 16;
    config.fit.order = 1;
    config.ctl.steps = 200;
    config.ctl.positive_particles = 64;
    config.ctl.negative_particles = 64;
    config.ctl.learning_rate = 1e-2;
    config.eval_sequences = 50;
    config.kl_samples = 500;
    const auto records = run_pipeline(*toy.model, toy.pot, toy.prompt, config,
                                      RngStream(63));
    double worst = 0.0;
    for (const auto& rec : records) {
      const EffectivePotential eff(toy.pot, *toy.model, *rec.model);
      for (int idx = 0; idx < 4; ++idx) {
        std::vector<int> seq = {idx / 2, idx % 2};
        const double lhs = rec.model->sequence_logprob(toy.prompt, seq) +
                           eff.log_score(toy.prompt, seq);
        const double rhs = toy.model->sequence_logprob(toy.prompt, seq) +
                           toy.pot.log_score(toy.prompt, seq);
        worst = std::max(worst, std::abs(lhs - rhs));
      }
    }
    c.expect(worst <= 1e-10, "target invariance worst error " +
                                 format_sig(worst) + " <= 1e-10");
  }
  // Weight telescoping.
  {
    Vocab vocab{3, {}};
    Prompt prompt{{2}, 4};
    std::vector<double> probs = {0.5, 0.25, 0.25};
    auto model = TabularModel::from_unigram(vocab, 2, probs);
    Potential pot = Potential::logistic({0.4, -1.0, 1.2}, -0.3, 4.0);
    TwistNetwork tw(vocab, 2, 4, 8, RngStream(64));
    RngStream noise(65);
    for (std::size_t i = 0; i < tw.param_count(); ++i)
      tw.params()[i] += noise.uniform_range(i, -0.7, 0.7);
    double worst = 0.0;
    RngStream rng(66);
    for (int trial = 0; trial < 200; ++trial) {
      const RngStream s = rng.sub(static_cast<uint64_t>(trial));
      std::vector<int> gen;
      double sum_w = 0.0, sum_q = 0.0, log_psi = 0.0;
      for (int t = 0; t < 4; ++t) {
        const StepProposal prop = propose_step(*model, tw, pot, prompt, gen);
        sum_w += prop.log_normalizer - log_psi;
        const double u = s.uniform(static_cast<uint64_t>(t));
        double cum = 0.0;
        int tok = 2;
        for (int v = 0; v < 3; ++v) {
          cum += std::exp(prop.log_q[static_cast<std::size_t>(v)]);
          if (u < cum) {
            tok = v;
            break;
          }
        }
        sum_q += prop.log_q[static_cast<std::size_t>(tok)];
        gen.push_back(tok);
        if (t < 3) log_psi = tw.log_prefix_value(prompt, gen);
      }
      const double target = model->sequence_logprob(prompt, gen) +
                            pot.log_score(prompt, gen);
      worst = std::max(worst, std::abs(sum_w + sum_q - target));
    }
    c.expect(worst <= 1e-9, "weight telescoping worst error " +
                                format_sig(worst) + " <= 1e-9");
  }
  // DPO loss at initialization.
  {
    Vocab vocab{2, {}};
    NeuralModel ref(vocab, 1, 2, 8, RngStream(67));
    RngStream noise(68);
    for (std::size_t i = 0; i < ref.param_count(); ++i)
      ref.params()[i] += noise.uniform_range(i, -0.3, 0.3);
    Prompt prompt{{}, 2};
    RewardFn reward = [](const Prompt&, TokenSpan gen) {
      return static_cast<double>(gen[0] + gen[1]);
    };
    const auto pairs =
        build_preference_batch(ref, reward, prompt, 20, RngStream(69));
    PolicyTrainState state(ref, 0.4);
    std::vector<double> grad(state.policy->param_count(), 0.0);
    const double loss = dpo_loss_and_grad(state, pairs, prompt, grad);
    c.expect(std::abs(loss - std::log(2.0)) <= 1e-12,
             "DPO loss at init = " + format_sig(loss) + " = log 2");
  }
  // GRPO advantage normalization.
  {
    RngStream rng(70);
    double worst_mean = 0.0, worst_std = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const int n = 2 + static_cast<int>(rng.bits(trial) % 30);
      std::vector<double> rewards(static_cast<std::size_t>(n));
      const RngStream s = rng.sub(static_cast<uint64_t>(trial));
      for (int i = 0; i < n; ++i)
        rewards[static_cast<std::size_t>(i)] = s.uniform_range(i, -3.0, 3.0);
      const auto adv = normalized_advantages(rewards);
      double mean = 0.0, var = 0.0;
      for (double a : adv) mean += a;
      mean /= n;
      for (double a : adv) var += (a - mean) * (a - mean);
      var /= n;
      worst_mean = std::max(worst_mean, std::abs(mean));
      worst_std = std::max(worst_std, std::abs(std::sqrt(var) - 1.0));
    }
    c.expect(worst_mean <= 1e-9 && worst_std <= 1e-9,
             "GRPO advantages mean 0 / std 1 within 1e-9");
  }
  std::cout << c.detail.str();
  return c.ok;
}

// ---------------------------------------------------------------------------
// Criterion 9: byte-identical CLI outputs across reruns and thread counts.

bool criterion_9() {
  Check c;
  const fs::path base = fs::temp_directory_path() / "tsmc_acceptance_cli";
  fs::remove_all(base);
  fs::create_directories(base);
  const fs::path cfg = base / "config.json";
  write_text_file(cfg.string(), R"({
  "seed": 99,
  "vocab": {"size": 2, "names": ["a", "b"]},
  "prompt": {"tokens": [], "horizon": 2},
  "base_model": {"kind": "tabular", "order": 1, "smoothing": 1.0},
  "potential": {"kind": "table",
                "table": [{"tokens": [1, 1], "score": 1.0}],
                "default_score": 0.25, "betas": [0.0, 1.0]},
  "twist": {"hidden": 8, "window": 2},
  "smc": {"particles_train": 20, "particles_test": 10},
  "ctl": {"steps": 40, "positive_particles": 32, "negative_particles": 32},
  "distill": {"generations": 1, "dataset_size": 200},
  "baselines": {"steps": 30, "batch": 16, "pretrain_sequences": 500,
                "pretrain_steps": 100, "hidden": 8},
  "oracle": {"rejection_accepts": 1000},
  "eval": {"k_grid": [2, 4], "repeats": 10, "eval_sequences": 40,
           "kl_samples": 400}
})");

  auto run = [&](const std::string& sub, const fs::path& out, int threads,
                 const std::string& extra = "") {
    const std::string stdout_file = (out.string() + ".stdout");
    const std::string cmd = std::string(TSMC_CLI_BIN) + " " + sub +
                            " --config " + cfg.string() + " --out " +
                            out.string() + " --threads " +
                            std::to_string(threads) + " " + extra + " > " +
                            stdout_file + " 2> /dev/null";
    return std::system(cmd.c_str()) == 0;
  };

  auto compare_trees = [&](const fs::path& a, const fs::path& b,
                           const std::string& what) {
    bool same = true;
    std::vector<fs::path> rel;
    for (const auto& entry : fs::recursive_directory_iterator(a))
      if (entry.is_regular_file())
        rel.push_back(fs::relative(entry.path(), a));
    for (const auto& r : rel) {
      if (!fs::exists(b / r)) {
        same = false;
        break;
      }
      if (read_text_file((a / r).string()) !=
          read_text_file((b / r).string())) {
        same = false;
        c.detail << "      differs: " << r.string() << "\n";
        break;
      }
    }
    c.expect(same, what);
  };

  const std::vector<std::string> subs = {"oracle", "train", "baselines",
                                         "eval", "sample"};
  for (const std::string& sub : subs) {
    const fs::path o1 = base / (sub + "_r1");
    const fs::path o2 = base / (sub + "_r2");
    const fs::path o8 = base / (sub + "_t8");
    std::string extra;
    if (sub == "sample") extra = "--runs 3 --particles 8";
    // eval and baselines read train artifacts; seed them identically.
    if (sub == "eval" || sub == "baselines") {
      for (const auto& o : {o1, o2, o8})
        if (!run("train", o, 1)) {
          c.expect(false, sub + ": train prerequisite failed");
          continue;
        }
    }
    bool ok1 = run(sub, o1, 1, extra);
    bool ok2 = run(sub, o2, 1, extra);
    bool ok8 = run(sub, o8, 8, extra);
    c.expect(ok1 && ok2 && ok8, sub + ": all runs exited 0");
    if (!(ok1 && ok2 && ok8)) continue;
    compare_trees(o1, o2, sub + ": rerun byte-identical");
    compare_trees(o1, o8, sub + ": threads 1 vs 8 byte-identical");
    const std::string s1 = read_text_file(o1.string() + ".stdout");
    const std::string s2 = read_text_file(o2.string() + ".stdout");
    const std::string s8 = read_text_file(o8.string() + ".stdout");
    c.expect(s1 == s2 && s1 == s8, sub + ": stdout byte-identical");
  }
  fs::remove_all(base);
  std::cout << c.detail.str();
  return c.ok;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> criteria;
  for (int i = 1; i < argc; ++i) criteria.push_back(std::atoi(argv[i]));
  if (criteria.empty()) criteria = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  int failures = 0;
  for (int n : criteria) {
    bool ok = false;
    try {
      switch (n) {
        case 1: ok = criterion_1(); break;
        case 2: ok = criterion_2(); break;
        case 3: ok = criterion_3(); break;
        case 4: ok = criterion_4(); break;
        case 5: ok = criterion_5(); break;
        case 6: ok = criterion_6(); break;
        case 7: ok = criterion_7(); break;
        case 8: ok = criterion_8(); break;
        case 9: ok = criterion_9(); break;
        default:
          std::cerr << "unknown criterion " << n << "\n";
          return 64;
      }
    } catch (const std::exception& e) {
      std::cout << "    [FAIL] exception: " << e.what() << "\n";
      ok = false;
    }
    std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << n << "\n";
    if (!ok) ++failures;
  }
  return failures;
}
