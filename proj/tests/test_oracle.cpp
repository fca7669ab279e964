#include <doctest.h>

#include <cmath>
#include <sstream>

#include "test_util.hpp"
#include "tsmc/errors.hpp"
#include "tsmc/numerics.hpp"
#include "tsmc/oracle.hpp"

using namespace tsmc;
using tsmc::test::ToyTarget;

TEST_SUITE("oracle") {

TEST_CASE("toy target enumeration: Z, sigma and marginals by hand") {
  ToyTarget toy;
  const ExactDistribution exact =
      enumerate_target(*toy.model, toy.pot, toy.prompt);
  CHECK(std::exp(exact.log_z) == doctest::Approx(0.4375).epsilon(1e-12));
  std::vector<int> bb = {1, 1};
  CHECK(exact.sigma(bb) == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
  std::vector<int> b = {1};
  CHECK(std::exp(exact.log_marginal(b)) ==
        doctest::Approx(5.0 / 7.0).epsilon(1e-12));
  // Cross-check with a direct four-term loop through sequence_logprob.
  double z = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      std::vector<int> seq = {i, j};
      z += std::exp(toy.model->sequence_logprob(toy.prompt, seq) +
                    toy.pot.log_score(toy.prompt, seq));
    }
  CHECK(std::exp(exact.log_z) == doctest::Approx(z).epsilon(1e-12));
}

TEST_CASE("beta = 0: sigma equals the model's product measure") {
  Vocab vocab{3, {}};
  Prompt prompt{{}, 3};
  std::vector<double> probs = {0.5, 0.2, 0.3};
  auto model = TabularModel::from_unigram(vocab, 1, probs);
  Potential pot = Potential::logistic({1.0, 0.0, -1.0}, 0.5, 0.0);
  const ExactDistribution exact = enumerate_target(*model, pot, prompt);
  CHECK(exact.log_z == doctest::Approx(0.0).epsilon(1e-12));
  std::vector<int> gen(3);
  for (int idx = 0; idx < 27; ++idx) {
    exact.decode(idx, 3, gen);
    CHECK(exact.log_sigma(gen) ==
          doctest::Approx(model->sequence_logprob(prompt, gen))
              .epsilon(1e-12));
  }
}

TEST_CASE("marginal consistency: sigma_t sums its children") {
  ToyTarget toy;
  const ExactDistribution exact =
      enumerate_target(*toy.model, toy.pot, toy.prompt);
  for (int s1 = 0; s1 < 2; ++s1) {
    std::vector<int> prefix = {s1};
    double children = 0.0;
    for (int s2 = 0; s2 < 2; ++s2) {
      std::vector<int> full = {s1, s2};
      children += exact.sigma(full);
    }
    CHECK(std::exp(exact.log_marginal(prefix)) ==
          doctest::Approx(children).epsilon(1e-12));
  }
}

TEST_CASE("exact KL: zero at the oracle twist, zero untwisted at beta=0") {
  ToyTarget toy;
  const ExactDistribution exact =
      enumerate_target(*toy.model, toy.pot, toy.prompt);
  TableTwist psi(optimal_twist_table(*toy.model, toy.pot, toy.prompt));
  CHECK(exact_kl_target_vs_proposal(exact, *toy.model, psi, toy.pot) <=
        1e-10);

  Potential unit = toy.pot.with_beta(0.0);
  const ExactDistribution exact0 =
      enumerate_target(*toy.model, unit, toy.prompt);
  ConstantTwist ones(2);
  CHECK(exact_kl_target_vs_proposal(exact0, *toy.model, ones, unit) <= 1e-12);
}

TEST_CASE("exact KL: untwisted value on the toy target matches closed form") {
  // With psi == 1 the proposal is exact given s1, so the KL reduces to the
  // first-step term: KL(sigma_1 || q_1) with sigma_1 = (2/7, 5/7) and
  // q_1 = (1/2, 1/2).
  ToyTarget toy;
  const ExactDistribution exact =
      enumerate_target(*toy.model, toy.pot, toy.prompt);
  ConstantTwist ones(2);
  const double expected = (2.0 / 7.0) * std::log((2.0 / 7.0) / 0.5) +
                          (5.0 / 7.0) * std::log((5.0 / 7.0) / 0.5);
  CHECK(exact_kl_target_vs_proposal(exact, *toy.model, ones, toy.pot) ==
        doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected > 0.0);
}

TEST_CASE("rejection sampling: beta = 0 accepts everything") {
  ToyTarget toy;
  Potential unit = toy.pot.with_beta(0.0);
  const RejectionResult res =
      rejection_sample(*toy.model, unit, toy.prompt, 1000, RngStream(5));
  CHECK(res.acceptance_ratio == 1.0);
  CHECK(res.attempts == 1000);
}

TEST_CASE("rejection sampling matches sigma within TV 0.01 at 1e5 accepts") {
  ToyTarget toy;
  const ExactDistribution exact =
      enumerate_target(*toy.model, toy.pot, toy.prompt);
  const RejectionResult res =
      rejection_sample(*toy.model, toy.pot, toy.prompt, 100000, RngStream(7));
  const auto freq = tsmc::test::empirical_leaf_distribution(res.samples, 2, 2);
  std::vector<double> sigma(4);
  std::vector<int> gen(2);
  for (int i = 0; i < 4; ++i) {
    exact.decode(i, 2, gen);
    sigma[static_cast<std::size_t>(i)] = exact.sigma(gen);
  }
  CHECK(tsmc::test::total_variation(freq, sigma) <= 0.01);

  // Acceptance ratio concentrates on Z (binomial 3-sigma band).
  const double z = 0.4375;
  const double se = std::sqrt(z * (1.0 - z) / static_cast<double>(res.attempts));
  CHECK(std::abs(res.acceptance_ratio - z) <= 3.0 * se);
}

TEST_CASE("rejection sampling starves past the attempt cap") {
  ToyTarget toy;
  // Potential with tiny scores: acceptance ~ exp(-20).
  Potential hard = Potential::logistic({-10.0, -10.0}, 0.0, 1.0);
  CHECK_THROWS_AS(rejection_sample(*toy.model, hard, toy.prompt, 100,
                                   RngStream(9), /*attempt_cap=*/2000),
                  StarvationError);
}

TEST_CASE("exact CTL loss: zero at the oracle twist, positive untwisted") {
  ToyTarget toy;
  const ExactDistribution exact =
      enumerate_target(*toy.model, toy.pot, toy.prompt);
  TableTwist psi(optimal_twist_table(*toy.model, toy.pot, toy.prompt));
  CHECK(exact_ctl_loss(exact, *toy.model, psi) <= 1e-10);

  ConstantTwist ones(2);
  // Hand value: KL(sigma_1 || p_1) + KL(sigma_2 || p_2).
  const double kl1 = (2.0 / 7.0) * std::log((2.0 / 7.0) / 0.5) +
                     (5.0 / 7.0) * std::log((5.0 / 7.0) / 0.5);
  const double kl2 = 3.0 * (1.0 / 7.0) * std::log((1.0 / 7.0) / 0.25) +
                     (4.0 / 7.0) * std::log((4.0 / 7.0) / 0.25);
  CHECK(exact_ctl_loss(exact, *toy.model, ones) ==
        doctest::Approx(kl1 + kl2).epsilon(1e-12));
}

TEST_CASE("expected classifier score under sigma") {
  // Uniform base, logistic potential over vocab 2, T = 2; direct 4-term sum.
  Vocab vocab{2, {}};
  Prompt prompt{{}, 2};
  auto model = TabularModel::uniform(vocab, 1);
  Potential pot = Potential::logistic({-1.0, 1.5}, 0.0, 3.0);
  const ExactDistribution exact = enumerate_target(*model, pot, prompt);
  double expected = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      std::vector<int> seq = {i, j};
      expected += exact.sigma(seq) * pot.classifier_prob(prompt, seq);
    }
  CHECK(exact_expected_classifier(exact, pot) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("capacity guard throws on oversized instances") {
  Vocab vocab{16, {}};
  Prompt prompt{{}, 8};  // 16^8 = 2^32 > 2^22
  auto model = TabularModel::uniform(vocab, 1);
  Potential pot = Potential::logistic(std::vector<double>(16, 0.0), 0.0, 1.0);
  CHECK_THROWS_AS(enumerate_target(*model, pot, prompt), CapacityError);
}

TEST_CASE("sigma dump is sorted and stable") {
  ToyTarget toy;
  const ExactDistribution exact =
      enumerate_target(*toy.model, toy.pot, toy.prompt);
  std::ostringstream os;
  dump_sigma_csv(exact, os);
  const std::string expected =
      "tokens,log_sigma_tilde,sigma\n"
      "a a,-2.77258872224,0.142857142857\n"
      "a b,-2.77258872224,0.142857142857\n"
      "b a,-2.77258872224,0.142857142857\n"
      "b b,-1.38629436112,0.571428571429\n";
  CHECK(os.str() == expected);
}

}  // TEST_SUITE
