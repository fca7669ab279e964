#include <doctest.h>

#include <cmath>
#include <map>

#include "test_util.hpp"
#include "tsmc/errors.hpp"
#include "tsmc/numerics.hpp"
#include "tsmc/oracle.hpp"
#include "tsmc/smc.hpp"

using namespace tsmc;
using tsmc::test::ToyTarget;

TEST_SUITE("smc") {

TEST_CASE("constant twist: proposal equals the base model") {
  ToyTarget toy;
  ConstantTwist psi(2, 0.7);  // any constant cancels
  const StepProposal prop = propose_next(*toy.model, psi, toy.prompt, {});
  CHECK(std::exp(prop.log_q[0]) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::exp(prop.log_q[1]) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("optimal twist proposal: q(b) = 0.625 / 0.875 = 5/7") {
  ToyTarget toy;
  TableTwist psi(optimal_twist_table(*toy.model, toy.pot, toy.prompt));
  const StepProposal prop = propose_next(*toy.model, psi, toy.prompt, {});
  CHECK(std::exp(prop.log_q[1]) == doctest::Approx(5.0 / 7.0).epsilon(1e-12));
  CHECK(prop.log_normalizer ==
        doctest::Approx(std::log(0.4375)).epsilon(1e-12));
}

TEST_CASE("proposal normalization on random inputs") {
  RngStream rng(61);
  Vocab vocab{4, {}};
  Prompt prompt{{}, 5};
  std::vector<double> probs = {0.4, 0.3, 0.2, 0.1};
  auto model = TabularModel::from_unigram(vocab, 2, probs);
  TwistNetwork tw(vocab, 2, 5, 8, RngStream(62));
  for (std::size_t i = 0; i < tw.param_count(); ++i)
    tw.params()[i] += rng.uniform_range(i, -0.8, 0.8);
  for (int trial = 0; trial < 1000; ++trial) {
    const RngStream s = rng.sub(static_cast<uint64_t>(trial));
    const int len = static_cast<int>(s.bits(0) % 4);
    std::vector<int> gen(static_cast<std::size_t>(len));
    for (int t = 0; t < len; ++t)
      gen[static_cast<std::size_t>(t)] = static_cast<int>(s.bits(1 + t) % 4);
    const StepProposal prop = propose_next(*model, tw, prompt, gen);
    double total = 0.0;
    for (double lq : prop.log_q) total += std::exp(lq);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("incremental weights: constant twist telescopes to zero") {
  ToyTarget toy;
  ConstantTwist psi(2);
  // t = 1 < T: weight is log sum_v p psi - log psi(empty) = 0.
  CHECK(incremental_log_weight_psi(*toy.model, psi, toy.prompt, {}) ==
        doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("final-step weight from parent b is log 0.625") {
  ToyTarget toy;
  ConstantTwist psi(2);
  std::vector<int> parent_b = {1};
  CHECK(incremental_log_weight(*toy.model, psi, toy.pot, toy.prompt, parent_b) ==
        doctest::Approx(std::log(0.625)).epsilon(1e-12));
  std::vector<int> parent_a = {0};
  CHECK(incremental_log_weight(*toy.model, psi, toy.pot, toy.prompt, parent_a) ==
        doctest::Approx(std::log(0.25)).epsilon(1e-12));
}

TEST_CASE("optimal twist: weights constant across parents, product = log Z") {
  ToyTarget toy;
  TableTwist psi(optimal_twist_table(*toy.model, toy.pot, toy.prompt));
  const double w1 =
      incremental_log_weight(*toy.model, psi, toy.pot, toy.prompt, {});
  std::vector<int> pa = {0}, pb = {1};
  const double w2a =
      incremental_log_weight(*toy.model, psi, toy.pot, toy.prompt, pa);
  const double w2b =
      incremental_log_weight(*toy.model, psi, toy.pot, toy.prompt, pb);
  CHECK(w2a == doctest::Approx(w2b).epsilon(1e-12));
  CHECK(w1 + w2a == doctest::Approx(std::log(0.4375)).epsilon(1e-10));
}

TEST_CASE("multinomial resampling moments on uniform weights") {
  const int k = 8;
  std::vector<double> logw(k, -1.0);
  std::vector<int64_t> counts(k, 0);
  const int trials = 10000;
  RngStream rng(71);
  for (int trial = 0; trial < trials; ++trial) {
    const auto idx = resample_indices(logw, ResampleScheme::kMultinomial,
                                      rng.sub(static_cast<uint64_t>(trial)), 1);
    for (int a : idx) ++counts[static_cast<std::size_t>(a)];
  }
  // Each index expects k*trials/k = trials offspring; binomial sd.
  const double expected = static_cast<double>(trials);
  const double sd = std::sqrt(static_cast<double>(trials * k) * (1.0 / k) *
                              (1.0 - 1.0 / k));
  for (int64_t c : counts)
    CHECK(std::abs(static_cast<double>(c) - expected) <= 3.0 * sd);
}

TEST_CASE("point-mass weights copy a single ancestor") {
  std::vector<double> logw = {-900.0, 0.0, -900.0, -900.0};
  const auto idx =
      resample_indices(logw, ResampleScheme::kMultinomial, RngStream(3), 0);
  for (int a : idx) CHECK(a == 1);
}

TEST_CASE("systematic resampling on uniform weights is a no-op permutation") {
  const int k = 16;
  std::vector<double> logw(k, 0.0);
  const auto idx =
      resample_indices(logw, ResampleScheme::kSystematic, RngStream(5), 2);
  std::vector<int> sorted = idx;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < k; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("untwisted unit-potential TSMC samples the base model") {
  ToyTarget toy;
  ConstantTwist psi(2);
  Potential unit = toy.pot.with_beta(0.0);
  SmcConfig config;
  config.num_particles = 64;
  std::vector<double> freq(4, 0.0);
  double log_z_mean = 0.0;
  const int runs = 400;
  RngStream rng(81);
  int total = 0;
  for (int r = 0; r < runs; ++r) {
    const SmcResult res = tsmc_sample(*toy.model, psi, unit, toy.prompt,
                                      config, rng.sub(static_cast<uint64_t>(r)));
    log_z_mean += res.log_partition;
    for (const auto& gen : res.sequences) {
      freq[static_cast<std::size_t>(tsmc::test::encode_base_v(gen, 2))] += 1.0;
      ++total;
    }
  }
  log_z_mean /= runs;
  for (auto& f : freq) f /= total;
  for (double f : freq) CHECK(f == doctest::Approx(0.25).epsilon(0.05));
  CHECK(log_z_mean == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("optimal twist, K = 1: exact sampling of sigma over 1e5 runs") {
  ToyTarget toy;
  TableTwist psi(optimal_twist_table(*toy.model, toy.pot, toy.prompt));
  SmcConfig config;
  config.num_particles = 1;
  const int runs = 100000;
  std::vector<std::vector<int>> samples;
  samples.reserve(runs);
  RngStream rng(83);
  for (int r = 0; r < runs; ++r)
    samples.push_back(tsmc_sample(*toy.model, psi, toy.pot, toy.prompt, config,
                                  rng.sub(static_cast<uint64_t>(r)))
                          .sequences[0]);
  const auto freq = tsmc::test::empirical_leaf_distribution(samples, 2, 2);
  const std::vector<double> exact = {1.0 / 7, 1.0 / 7, 1.0 / 7, 4.0 / 7};
  CHECK(tsmc::test::total_variation(freq, exact) <= 0.01);
}

TEST_CASE("log-partition estimate: K = 1000 untwisted mean near log Z") {
  ToyTarget toy;
  ConstantTwist psi(2);
  SmcConfig config;
  config.num_particles = 1000;
  const int runs = 200;
  double mean = 0.0;
  RngStream rng(85);
  for (int r = 0; r < runs; ++r)
    mean += tsmc_sample(*toy.model, psi, toy.pot, toy.prompt, config,
                        rng.sub(static_cast<uint64_t>(r)))
                .log_partition;
  mean /= runs;
  CHECK(mean == doctest::Approx(std::log(0.4375)).epsilon(0.02));
}

TEST_CASE("weight telescoping: increments + proposal logprobs = log p + log phi") {
  Vocab vocab{3, {}};
  Prompt prompt{{2}, 4};
  std::vector<double> probs = {0.5, 0.25, 0.25};
  auto model = TabularModel::from_unigram(vocab, 2, probs);
  Potential pot = Potential::logistic({0.4, -1.0, 1.2}, -0.3, 4.0);
  TwistNetwork tw(vocab, 2, 4, 8, RngStream(91));
  RngStream noise(92);
  for (std::size_t i = 0; i < tw.param_count(); ++i)
    tw.params()[i] += noise.uniform_range(i, -0.7, 0.7);

  RngStream rng(93);
  for (int trial = 0; trial < 100; ++trial) {
    const RngStream s = rng.sub(static_cast<uint64_t>(trial));
    std::vector<int> gen;
    double sum_w = 0.0, sum_q = 0.0;
    double log_psi_prefix = 0.0;
    for (int t = 0; t < 4; ++t) {
      const StepProposal prop = propose_step(*model, tw, pot, prompt, gen);
      sum_w += prop.log_normalizer - log_psi_prefix;
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
      if (t < 3) log_psi_prefix = tw.log_prefix_value(prompt, gen);
    }
    const double target = model->sequence_logprob(prompt, gen) +
                          pot.log_score(prompt, gen);
    CHECK(sum_w + sum_q == doctest::Approx(target).epsilon(1e-9));
  }
}

TEST_CASE("ess trigger mode resamples only below threshold") {
  ToyTarget toy;
  ConstantTwist psi(2);
  SmcConfig config;
  config.num_particles = 32;
  config.trigger = ResampleTrigger::kEssThreshold;
  config.ess_threshold = 0.5;
  config.record_trace = true;
  const SmcResult res =
      tsmc_sample(*toy.model, psi, toy.pot, toy.prompt, config, RngStream(7));
  REQUIRE(res.trace.size() == 2);
  // Untwisted t=1 weights are all zero: ESS = K, no resampling.
  CHECK(res.trace[0].resampled == false);
  CHECK(res.trace[0].ess == doctest::Approx(32.0).epsilon(1e-9));
}

TEST_CASE("degenerate particle system raises DegeneracyError") {
  ToyTarget toy;
  ConstantTwist psi(2);
  SmcConfig config;
  config.num_particles = 4;
  config.degeneracy_log_floor = 10.0;  // impossible bar: all weights below
  CHECK_THROWS_AS(tsmc_sample(*toy.model, psi, toy.pot, toy.prompt, config,
                              RngStream(1)),
                  DegeneracyError);
}

TEST_CASE("resample resets accumulated weights and records ancestry") {
  ToyTarget toy;
  ParticleSystem ps = ParticleSystem::init(toy.prompt, 4);
  ps.step = 1;
  ps.particles = {{0}, {1}, {0}, {1}};
  ps.log_acc = {-900.0, 0.0, -900.0, -900.0};
  SmcConfig config;
  const ParticleSystem out = resample(ps, config, RngStream(2));
  REQUIRE(out.ancestry.size() == 1);
  for (int a : out.ancestry[0]) CHECK(a == 1);
  for (double w : out.log_acc) CHECK(w == 0.0);
  for (const auto& p : out.particles) CHECK(p == std::vector<int>{1});
}

TEST_CASE("trace serializes one JSON object per step") {
  ToyTarget toy;
  ConstantTwist psi(2);
  SmcConfig config;
  config.num_particles = 4;
  config.record_trace = true;
  const SmcResult res =
      tsmc_sample(*toy.model, psi, toy.pot, toy.prompt, config, RngStream(3));
  REQUIRE(res.trace.size() == 2);
  const std::string jsonl = trace_to_jsonl(res);
  CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 2);
  CHECK(jsonl.find("\"t\":1") != std::string::npos);
  CHECK(jsonl.find("\"ess\":") != std::string::npos);
  CHECK(jsonl.find("\"unique_ancestors\":") != std::string::npos);
}

TEST_CASE("tsmc_sample is reproducible for a fixed seed") {
  ToyTarget toy;
  TableTwist psi(optimal_twist_table(*toy.model, toy.pot, toy.prompt));
  SmcConfig config;
  config.num_particles = 16;
  const SmcResult a =
      tsmc_sample(*toy.model, psi, toy.pot, toy.prompt, config, RngStream(55));
  const SmcResult b =
      tsmc_sample(*toy.model, psi, toy.pot, toy.prompt, config, RngStream(55));
  CHECK(a.sequences == b.sequences);
  CHECK(a.log_partition == b.log_partition);
}

}  // TEST_SUITE
