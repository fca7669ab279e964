#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "tsmc/numerics.hpp"
#include "tsmc/potential.hpp"

using namespace tsmc;

TEST_SUITE("potential") {

TEST_CASE("beta = 0 recovers the base model (phi == 1)") {
  Potential pot = Potential::logistic({-2.0, 2.0}, 0.0, 0.0);
  Prompt prompt{{}, 2};
  std::vector<int> seq = {0, 1};
  CHECK(pot.log_score(prompt, seq) == 0.0);
}

TEST_CASE("logistic scorer examples") {
  // w = {a: -2, b: +2}, bias 0, seq "bb": x = 4.
  Potential pot = Potential::logistic({-2.0, 2.0}, 0.0, 1.0);
  Prompt prompt{{}, 2};
  std::vector<int> bb = {1, 1};
  CHECK(pot.log_score(prompt, bb) ==
        doctest::Approx(std::log(1.0 / (1.0 + std::exp(-4.0)))).epsilon(1e-12));
  CHECK(pot.log_score(prompt, bb) == doctest::Approx(-0.01814992791780978));

  Potential pot10 = pot.with_beta(10.0);
  CHECK(pot10.log_score(prompt, bb) ==
        doctest::Approx(-0.1814992791780978).epsilon(1e-12));
}

TEST_CASE("monotone temperature: log_score non-increasing in beta") {
  Potential base = Potential::logistic({-1.0, 0.5, -0.3}, 0.2, 1.0);
  Prompt prompt{{}, 3};
  std::vector<int> seq = {0, 2, 1};
  double prev = base.with_beta(0.0).log_score(prompt, seq);
  for (double beta : {0.5, 1.0, 2.0, 5.0, 10.0, 50.0}) {
    const double cur = base.with_beta(beta).log_score(prompt, seq);
    CHECK(cur <= prev + 1e-15);
    prev = cur;
  }
}

TEST_CASE("boundedness: score in (0, 1] for random sequences") {
  RngStream rng(77);
  Potential pot = Potential::logistic({0.8, -1.2, 2.0, -0.4}, -0.5, 10.0);
  Prompt prompt{{}, 6};
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<int> seq(6);
    for (int t = 0; t < 6; ++t)
      seq[static_cast<std::size_t>(t)] =
          static_cast<int>(rng.bits(static_cast<uint64_t>(trial) * 8 + t) % 4);
    const double ls = pot.log_score(prompt, seq);
    CHECK(ls <= 0.0);
    CHECK(ls >= kDefaultLogFloor);
    CHECK(std::exp(ls) > 0.0);
  }
}

TEST_CASE("table potential scores the toy target") {
  tsmc::test::ToyTarget toy;
  std::vector<int> bb = {1, 1}, ab = {0, 1};
  CHECK(toy.pot.log_score(toy.prompt, bb) == doctest::Approx(0.0));
  CHECK(toy.pot.log_score(toy.prompt, ab) ==
        doctest::Approx(std::log(0.25)).epsilon(1e-14));
}

TEST_CASE("effective potential: identity at m = 0") {
  tsmc::test::ToyTarget toy;
  // Same object: pointer short-circuit.
  EffectivePotential eff_same(toy.pot, *toy.model, *toy.model);
  // Distinct but equal clone: ratio cancels exactly.
  auto clone = toy.model->clone();
  EffectivePotential eff_clone(toy.pot, *toy.model, *clone);
  RngStream rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<int> seq = {static_cast<int>(rng.bits(trial * 2) % 2),
                            static_cast<int>(rng.bits(trial * 2 + 1) % 2)};
    const double base = toy.pot.log_score(toy.prompt, seq);
    CHECK(eff_same.log_score(toy.prompt, seq) == base);
    CHECK(eff_clone.log_score(toy.prompt, seq) == base);
  }
}

TEST_CASE("effective potential: doubled probability shifts by -log 2") {
  Vocab vocab{2, {}};
  Prompt prompt{{}, 1};
  std::vector<double> half = {0.5, 0.5};
  std::vector<double> shifted = {0.25, 0.75};  // doubles nothing; see below
  auto p0 = TabularModel::from_unigram(vocab, 1, half);
  // p_m("a") = 0.25 = p0("a")/2, so phi_m("a") = phi("a") + log 2.
  auto pm = TabularModel::from_unigram(vocab, 1, shifted);
  Potential phi = Potential::logistic({0.3, -0.2}, 0.1, 1.0);
  EffectivePotential eff(phi, *p0, *pm);
  std::vector<int> a = {0};
  CHECK(eff.log_score(prompt, a) ==
        doctest::Approx(phi.log_score(prompt, a) + std::log(2.0))
            .epsilon(1e-12));
  std::vector<int> b = {1};
  // p_m("b") = 1.5 * p0("b").
  CHECK(eff.log_score(prompt, b) ==
        doctest::Approx(phi.log_score(prompt, b) - std::log(1.5))
            .epsilon(1e-12));
}

TEST_CASE("target invariance over a full vocab-2 T=4 enumeration") {
  Vocab vocab{2, {}};
  Prompt prompt{{}, 4};
  std::vector<double> base_probs = {0.35, 0.65};
  std::vector<double> cur_probs = {0.55, 0.45};
  auto p0 = TabularModel::from_unigram(vocab, 1, base_probs);
  auto pm = TabularModel::from_unigram(vocab, 1, cur_probs);
  Potential phi = Potential::logistic({-0.7, 1.1}, 0.0, 3.0);
  EffectivePotential eff(phi, *p0, *pm);
  for (int idx = 0; idx < 16; ++idx) {
    std::vector<int> seq(4);
    int rem = idx;
    for (int t = 3; t >= 0; --t) {
      seq[static_cast<std::size_t>(t)] = rem % 2;
      rem /= 2;
    }
    const double lhs = pm->sequence_logprob(prompt, seq) +
                       eff.log_score(prompt, seq);
    const double rhs = p0->sequence_logprob(prompt, seq) +
                       phi.log_score(prompt, seq);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
}

}  // TEST_SUITE
