#include <doctest.h>

#include <cmath>

#include "rsa/metrics.hpp"
#include "rsa/mock.hpp"
#include "test_util.hpp"

using namespace rsa;

namespace {

Population pop_of(std::vector<double> rewards, int step = 1) {
  Population p;
  p.step = step;
  for (double r : rewards) {
    Trajectory t;
    t.reward = r;
    t.step = step;
    t.text = "r=" + std::to_string(r);
    p.members.push_back(t);
  }
  return p;
}

}  // namespace

TEST_CASE("pass@1 and pass@N") {
  const Population p = pop_of({0, 0, 1, 0});
  CHECK(pass_at_1(p) == 0.25);
  CHECK(pass_at_n(p) == 1.0);
  CHECK(pass_at_n(pop_of({0, 0})) == 0.0);
  CHECK(pass_at_1(pop_of({1, 1, 1})) == 1.0);
  CHECK_THROWS_AS(pass_at_1(Population{}), std::logic_error);
  Population unscored = pop_of({1});
  unscored.members[0].reward.reset();
  CHECK_THROWS_AS(pass_at_1(unscored), std::logic_error);
  CHECK_THROWS_AS(pass_at_n(unscored), std::logic_error);
}

TEST_CASE("diversity") {
  const std::vector<std::vector<double>> same{{1, 0, 0}, {1, 0, 0}, {1, 0, 0}};
  CHECK(diversity(same) == 0.0);
  const std::vector<std::vector<double>> ortho{{1, 0}, {0, 1}};
  CHECK(diversity(ortho) == 1.0);
  // Three unit vectors 60 degrees apart in pairs: 1 - cos(60) = 0.5.
  const double h = std::sqrt(3.0) / 2.0;
  const std::vector<std::vector<double>> tri{{1, 0, 0}, {0.5, h, 0}, {0.5, h / 3.0, std::sqrt(2.0 / 3.0)}};
  CHECK(diversity(tri) == doctest::Approx(0.5).epsilon(1e-12));
  const std::vector<std::vector<double>> one{{1, 0}};
  CHECK_THROWS_AS(diversity(one), std::domain_error);
  const std::vector<std::vector<double>> ragged{{1, 0}, {1}};
  CHECK_THROWS_AS(diversity(ragged), std::invalid_argument);
}

TEST_CASE("step metrics with embeddings") {
  std::vector<Population> pops{pop_of({0, 1}, 1), pop_of({1, 1}, 2)};
  pops[1].members[1].text = pops[1].members[0].text;
  MockClient embedder(std::make_shared<MockWorld>(MockWorldConfig{}));
  const auto m = step_metrics(std::span<const Population>(pops), &embedder);
  REQUIRE(m.size() == 2);
  CHECK(m[0].gap == 0.5);
  CHECK(m[0].budget_used == 2);
  CHECK(m[1].budget_used == 4);
  REQUIRE(m[0].diversity);
  CHECK(*m[0].diversity > 0.0);
  CHECK(*m[1].diversity == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_FALSE(step_metrics(std::span<const Population>(pops))[0].diversity);
}

TEST_CASE("budget accounting") {
  RunState s;
  s.config.n = 4;
  s.config.t = 3;
  s.populations = {pop_of({0, 0, 0, 0}, 1), pop_of({0, 0, 0, 0}, 2), pop_of({0, 0, 0, 0}, 3)};
  s.budget_used = 12;
  auto r = budget_report(s, 12);
  CHECK(r.generations == 12);
  CHECK(r.per_step == std::vector<std::int64_t>{4, 4, 4});
  CHECK_FALSE(r.partial);
  CHECK_THROWS_AS(budget_report(s, 11), AccountingError);
  s.budget_used = 13;
  CHECK_THROWS_AS(budget_report(s), AccountingError);

  s.populations.pop_back();
  s.budget_used = 8;
  s.aborted = true;
  r = budget_report(s);
  CHECK(r.partial);
  CHECK(r.generations == 8);
}

TEST_CASE("dataset curve averages tasks per seed, then seeds") {
  auto step = [](double p1, double pn) { return StepMetrics{1, p1, pn, pn - p1, std::nullopt, 4}; };
  const std::vector<RunSeries> series{
      {0, "a", {step(0.25, 1.0)}},
      {0, "b", {step(0.75, 1.0)}},
      {1, "a", {step(1.0, 1.0)}},
      {1, "b", {step(0.0, 0.0)}},
  };
  const auto c = dataset_curve(series);
  REQUIRE(c.size() == 1);
  // Seed means: 0.5 and 0.5 for pass@1; 1.0 and 0.5 for pass@N.
  CHECK(c[0].pass_at_1 == 0.5);
  CHECK(c[0].pass_at_1_std == 0.0);
  CHECK(c[0].pass_at_n == 0.75);
  CHECK(c[0].pass_at_n_std == doctest::Approx(std::sqrt(0.125)));
  CHECK(c[0].gap == doctest::Approx(0.25));
  CHECK(c[0].seeds == 2);
  CHECK(c[0].tasks == 2);
}

TEST_CASE("mean and sample standard deviation") {
  const std::vector<double> xs{1, 2, 3, 4};
  CHECK(mean(xs) == 2.5);
  CHECK(sample_std(xs) == doctest::Approx(std::sqrt(5.0 / 3.0)));
  const std::vector<double> one{3};
  CHECK(sample_std(one) == 0.0);
}
