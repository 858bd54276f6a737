#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hierdet/rng.hpp"
#include "hierdet/sparsemax.hpp"
#include "testutil.hpp"

using namespace hierdet;

namespace {

ObjectnessTarget make_target(const std::vector<int>& positives, int q) {
  ObjectnessTarget t;
  t.positive_set = positives;
  t.q.assign(q, 0.0);
  for (int i : positives) t.q[i] = 1.0 / positives.size();
  return t;
}

}  // namespace

TEST_CASE("uniform logits project to the uniform distribution") {
  SparseProjection p = sparsemax({0.0, 0.0, 0.0, 0.0});
  for (double v : p.probabilities) CHECK(v == doctest::Approx(0.25));
  CHECK(p.support.size() == 4);
}

TEST_CASE("a large margin forces a one-hot projection") {
  SparseProjection p = sparsemax({10.0, 0.0, 0.0});
  CHECK(p.probabilities[0] == doctest::Approx(1.0));
  CHECK(p.probabilities[1] == 0.0);
  CHECK(p.support == std::vector<int>{0});
}

TEST_CASE("worked projection with a dropped coordinate") {
  SparseProjection p = sparsemax({1.0, 0.9, -1.0});
  CHECK(p.probabilities[0] == doctest::Approx(0.55).epsilon(1e-12));
  CHECK(p.probabilities[1] == doctest::Approx(0.45).epsilon(1e-12));
  CHECK(p.probabilities[2] == 0.0);
  CHECK(p.tau == doctest::Approx(0.45).epsilon(1e-12));
  CHECK(p.support == std::vector<int>{0, 1});
}

TEST_CASE("input validation") {
  CHECK_THROWS_AS(sparsemax({}), std::invalid_argument);
  CHECK_THROWS_AS(sparsemax({1.0, std::numeric_limits<double>::infinity()}),
                  std::invalid_argument);
  CHECK_THROWS_AS(sparsemax({std::nan("")}), std::invalid_argument);
}

TEST_CASE("projection matches the bisection oracle on random vectors") {
  Rng rng(411);
  for (int trial = 0; trial < 200; ++trial) {
    int q = rng.uniform_int(2, 64);
    std::vector<double> z = testutil::random_vector(rng, q, 2.0);
    SparseProjection mine = sparsemax(z);
    std::vector<double> oracle = testutil::simplex_project_bisect(z);
    for (int i = 0; i < q; ++i)
      CHECK(std::fabs(mine.probabilities[i] - oracle[i]) < 1e-9);
    double sum = 0.0;
    for (double v : mine.probabilities) sum += v;
    CHECK(std::fabs(sum - 1.0) < 1e-12);
    for (int i : mine.support)
      CHECK(mine.probabilities[i] == doctest::Approx(z[i] - mine.tau));
  }
}

TEST_CASE("scaling up the logits never grows the support") {
  Rng rng(927);
  for (int trial = 0; trial < 100; ++trial) {
    int q = rng.uniform_int(2, 16);
    std::vector<double> z = testutil::random_vector(rng, q);
    double t = rng.uniform(1.0, 5.0);
    std::vector<double> scaled = z;
    for (double& v : scaled) v *= t;
    CHECK(sparsemax(scaled).support.size() <= sparsemax(z).support.size());
  }
}

TEST_CASE("softmax has full support, sparsemax keeps only top logits") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    int q = rng.uniform_int(3, 12);
    std::vector<double> z = testutil::random_vector(rng, q);
    std::vector<double> s = softmax(z);
    for (double v : s) CHECK(v > 0.0);

    SparseProjection p = sparsemax(z);
    // Support must be the |S| largest logits.
    double min_in = std::numeric_limits<double>::infinity();
    for (int i : p.support) min_in = std::min(min_in, z[i]);
    for (int i = 0; i < q; ++i)
      if (std::find(p.support.begin(), p.support.end(), i) == p.support.end())
        CHECK(z[i] <= min_in);
  }
}

TEST_CASE("loss at its minimum is exactly zero") {
  CHECK(*sparsemax_loss({1.0, 0.0, 0.0}, make_target({0}, 3)) ==
        doctest::Approx(0.0).epsilon(1e-15));
  CHECK(*sparsemax_loss({0.0, 0.0}, make_target({0, 1}, 2)) ==
        doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("worked loss value away from the minimum") {
  CHECK(*sparsemax_loss({0.0, 0.0}, make_target({0}, 2)) ==
        doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("loss is nonnegative and zero iff projection hits the target") {
  Rng rng(88);
  for (int trial = 0; trial < 200; ++trial) {
    int q = rng.uniform_int(2, 10);
    std::vector<double> z = testutil::random_vector(rng, q);
    ObjectnessTarget t = make_target({rng.uniform_int(0, q - 1)}, q);
    double loss = *sparsemax_loss(z, t);
    CHECK(loss >= 0.0);
  }
}

TEST_CASE("degenerate target short-circuits the loss") {
  ObjectnessTarget empty;
  empty.q.assign(3, 0.0);
  CHECK_FALSE(sparsemax_loss({1.0, 2.0, 3.0}, empty).has_value());
  CHECK_FALSE(sparsemax_loss_grad({1.0, 2.0, 3.0}, empty).has_value());
  CHECK_FALSE(softmax_kl_loss({1.0, 2.0, 3.0}, empty).has_value());
}

TEST_CASE("gradient equals projection minus target") {
  std::vector<double> g = *sparsemax_loss_grad({0.0, 0.0}, make_target({0}, 2));
  CHECK(g[0] == doctest::Approx(-0.5));
  CHECK(g[1] == doctest::Approx(0.5));

  // Stationary at the target.
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    int q = rng.uniform_int(2, 8);
    std::vector<double> z = testutil::random_vector(rng, q);
    SparseProjection p = sparsemax(z);
    ObjectnessTarget t;
    t.q = p.probabilities;
    t.positive_set = p.support;
    std::vector<double> grad = *sparsemax_loss_grad(z, t);
    for (double v : grad) CHECK(std::fabs(v) < 1e-12);
  }
}

TEST_CASE("gradients match central finite differences") {
  Rng rng(314);
  for (int trial = 0; trial < 60; ++trial) {
    int q = rng.uniform_int(2, 10);
    std::vector<double> z = testutil::random_vector(rng, q);
    std::vector<int> pos;
    for (int i = 0; i < q; ++i)
      if (rng.uniform() < 0.5) pos.push_back(i);
    if (pos.empty()) pos.push_back(0);
    ObjectnessTarget t = make_target(pos, q);

    std::vector<double> grad = *sparsemax_loss_grad(z, t);
    double grad_sum = 0.0;
    for (int i = 0; i < q; ++i) {
      grad_sum += grad[i];
      double fd = testutil::central_diff(
          [&] { return *sparsemax_loss(z, t); }, z[i]);
      CHECK(testutil::rel_err(grad[i], fd) < 1e-5);
    }
    CHECK(std::fabs(grad_sum) < 1e-9);

    auto [kl, kl_grad] = *softmax_kl_loss(z, t);
    (void)kl;
    double kl_sum = 0.0;
    for (int i = 0; i < q; ++i) {
      kl_sum += kl_grad[i];
      double fd = testutil::central_diff(
          [&] { return softmax_kl_loss(z, t)->first; }, z[i]);
      CHECK(testutil::rel_err(kl_grad[i], fd) < 1e-5);
    }
    CHECK(std::fabs(kl_sum) < 1e-9);
  }
}

TEST_CASE("loss is convex in the logits") {
  Rng rng(999);
  for (int trial = 0; trial < 200; ++trial) {
    int q = rng.uniform_int(2, 12);
    std::vector<double> z1 = testutil::random_vector(rng, q);
    std::vector<double> z2 = testutil::random_vector(rng, q);
    double lambda = rng.uniform(0.05, 0.95);
    ObjectnessTarget t = make_target({rng.uniform_int(0, q - 1)}, q);
    std::vector<double> mix(q);
    for (int i = 0; i < q; ++i) mix[i] = lambda * z1[i] + (1 - lambda) * z2[i];
    CHECK(*sparsemax_loss(mix, t) <=
          lambda * *sparsemax_loss(z1, t) +
              (1 - lambda) * *sparsemax_loss(z2, t) + 1e-9);
  }
}

TEST_CASE("softmax KL examples") {
  // Identical distributions give zero loss.
  std::vector<double> z = {0.3, -1.2, 0.7};
  ObjectnessTarget t;
  t.q = softmax(z);
  t.positive_set = {0, 1, 2};
  CHECK(softmax_kl_loss(z, t)->first == doctest::Approx(0.0).epsilon(1e-12));

  CHECK(softmax_kl_loss({0.0, 0.0}, make_target({0}, 2))->first ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}
