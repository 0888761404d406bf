#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "misspec/error.hpp"
#include "misspec/tilting.hpp"
#include "support.hpp"

#if MISSPEC_HAVE_EIGEN
#include <Eigen/Dense>
#endif

using namespace misspec;
using testing_support::random_measure;

namespace {

const double kLn3 = std::log(3.0);

DiscreteMeasure two_point() {
  auto mu = DiscreteMeasure::uniform(2);
  mu.set_attribute("s", {0.0, 1.0});
  return mu;
}

}  // namespace

TEST_CASE("measure construction") {
  CHECK_THROWS_AS(DiscreteMeasure(std::vector<double>{}), std::invalid_argument);
  CHECK_THROWS_AS(DiscreteMeasure(std::vector<double>{0.5, 0.6}), std::invalid_argument);
  CHECK_THROWS_AS(DiscreteMeasure(std::vector<double>{-0.5, 1.5}), std::invalid_argument);
  CHECK_NOTHROW(DiscreteMeasure(std::vector<double>{0.5, 0.5 + 1e-12}));
  auto mu = DiscreteMeasure::from_masses({1, 3});
  CHECK(mu.weights()[1] == 0.75);
  CHECK_THROWS_AS(mu.set_attribute("x", {1.0}), std::invalid_argument);
  CHECK_THROWS_AS(mu.attribute("missing"), std::invalid_argument);
}

TEST_CASE("measure CSV round trip") {
  RandomStream rng(1);
  const auto mu = random_measure(6, rng);
  std::stringstream io;
  write_measure_csv(io, mu);
  const auto back = read_measure_csv(io);
  CHECK(back.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(back.weights()[i] == doctest::Approx(mu.weights()[i]).epsilon(1e-15));
    CHECK(back.attribute("s")[i] == mu.attribute("s")[i]);
  }
  std::istringstream bad("mass,s\n1,2\n");
  CHECK_THROWS_AS(read_measure_csv(bad), SchemaError);
  std::istringstream ragged("weight,s\n1,2,3\n");
  CHECK_THROWS_AS(read_measure_csv(ragged), SchemaError);
}

TEST_CASE("log partition") {
  const auto mu = two_point();
  const auto s = mu.attribute("s");
  CHECK(log_partition(mu, s, 0.0) == 0.0);
  CHECK(log_partition(mu, s, kLn3) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  auto c = DiscreteMeasure::uniform(3);
  const std::vector<double> constant(3, 2.5);
  CHECK(log_partition(c, constant, 1.7) == doctest::Approx(1.7 * 2.5).epsilon(1e-14));
  CHECK(std::isfinite(log_partition(mu, s, 1e4)));
  CHECK(log_partition(mu, s, 1e4) == doctest::Approx(1e4 - std::log(2.0)));
}

TEST_CASE("tilted weights") {
  const auto mu = two_point();
  const auto s = mu.attribute("s");
  const auto q0 = tilted_weights(mu, s, 0.0);
  CHECK(q0[0] == 0.5);
  const auto q = tilted_weights(mu, s, kLn3);
  CHECK(q[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(q[1] == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(tilted_weights(mu, s, 50.0)[1] >= 1 - 1e-9);
  const auto st = tilt_state(mu, s, kLn3);
  CHECK(st.mean_s == doctest::Approx(0.75));
  CHECK(st.var_s == doctest::Approx(0.1875));
}

TEST_CASE("tilt expectation and derivative") {
  const auto mu = two_point();
  const auto s = mu.attribute("s");
  const std::vector<double> ones(2, 1.0);
  CHECK(tilt_expectation(mu, s, ones, 0.9) == doctest::Approx(1.0));
  CHECK(tilt_expectation(mu, s, s, kLn3) == doctest::Approx(0.75));
  CHECK(tilt_derivative(mu, s, ones, 0.3) == doctest::Approx(0.0));
  CHECK(tilt_derivative(mu, s, s, 0.0) == doctest::Approx(0.25));

  RandomStream rng(2);
  const auto r = random_measure(20, rng);
  const auto rs = r.attribute("s");
  const auto h = r.attribute("H");
  for (double lambda : {-1.0, 0.0, 0.5, 2.0}) {
    const double step = 1e-5;
    const double fd = (tilt_expectation(r, rs, h, lambda + step) - tilt_expectation(r, rs, h, lambda - step)) / (2 * step);
    CHECK(tilt_derivative(r, rs, h, lambda) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("tilt KL") {
  const auto mu = two_point();
  const auto s = mu.attribute("s");
  const auto k0 = kl_tilt(mu, s, 0.0);
  CHECK(k0.forward == 0.0);
  CHECK(k0.reverse == 0.0);
  const auto k = kl_tilt(mu, s, kLn3);
  CHECK(k.forward == doctest::Approx(0.130812035941137).epsilon(1e-12));
  const auto q = tilted_weights(mu, s, kLn3);
  CHECK(std::abs(k.forward - testing_support::kl_direct(q, mu.weights())) <= 1e-12);
  CHECK(std::abs(k.reverse - testing_support::kl_direct(mu.weights(), q)) <= 1e-12);
}

TEST_CASE("hard mass curve") {
  auto mu = DiscreteMeasure::uniform(4);
  const std::vector<double> s{0, 1, 0, 1};
  const std::vector<double> h{0, 0, 1, 1};
  const std::vector<double> grid{0.0, 1.0};
  const auto curve = hard_mass_curve(mu, s, h, grid);
  CHECK(curve[0].rho == doctest::Approx(0.5));
  CHECK(curve[0].drho == doctest::Approx(0.0));
  CHECK(curve[1].drho == doctest::Approx(0.0));
  CHECK(curve[0].dlog_rho.has_value());

  const std::vector<double> none{0, 0, 0, 0};
  CHECK_FALSE(hard_mass_curve(mu, s, none, grid)[0].dlog_rho.has_value());
  const std::vector<double> bad{0, 0.5, 0, 1};
  CHECK_THROWS_AS(hard_mass_curve(mu, s, bad, grid), std::invalid_argument);
}

TEST_CASE("I-projection") {
  const auto mu = two_point();
  const auto s = mu.attribute("s");
  CHECK(i_projection(mu, s, 0.5).lambda_star == 0.0);
  const auto p = i_projection(mu, s, 0.75);
  CHECK(p.lambda_star == doctest::Approx(kLn3).epsilon(1e-9));
  CHECK(i_projection(mu, s, 0.1).lambda_star == doctest::Approx(std::log(1.0 / 9.0)).epsilon(1e-8));
  CHECK_THROWS_AS(i_projection(mu, s, 1.0), InfeasibleMoment);
  CHECK_THROWS_AS(i_projection(mu, s, -0.2), InfeasibleMoment);

  RandomStream rng(3);
  const auto r = random_measure(5, rng);
  const auto rs = r.attribute("s");
  const double m = 0.5 * r.expectation(rs) + 0.5 * *std::max_element(rs.begin(), rs.end());
  const auto proj = i_projection(r, rs, m);
  const double best = kl_tilt(r, rs, proj.lambda_star).forward;
  for (int i = 0; i < 1000; ++i) {
    const auto q = testing_support::feasible_perturbation(r.weights(), rs, m, rng);
    REQUIRE(best <= testing_support::kl_direct(q, r.weights()) + 1e-9);
  }
}

TEST_CASE("vector tilting") {
  RandomStream rng(4);
  const auto mu = random_measure(12, rng);
  const auto s1 = mu.attribute("s");
  const auto s2 = mu.attribute("f");
  const std::vector<std::span<const double>> one{s1};
  const std::vector<double> theta1{0.7};
  CHECK(vector_tilt_gradient(mu, one, mu.attribute("H"), theta1)[0] ==
        doctest::Approx(tilt_derivative(mu, s1, mu.attribute("H"), 0.7)));
  CHECK(vector_log_partition(mu, one, theta1) == doctest::Approx(log_partition(mu, s1, 0.7)));

  // Product measure on a 2x2 grid: s1 and s2 are independent.
  auto grid = DiscreteMeasure::from_masses({0.3 * 0.6, 0.3 * 0.4, 0.7 * 0.6, 0.7 * 0.4});
  const std::vector<double> a{0, 0, 1, 1};
  const std::vector<double> b{0, 1, 0, 1};
  const std::vector<std::span<const double>> both{a, b};
  const std::vector<double> zero{0.0, 0.0};
  const auto g = vector_tilt_gradient(grid, both, a, zero);
  CHECK(g[0] == doctest::Approx(0.21));
  CHECK(g[1] == doctest::Approx(0.0));
  CHECK_THROWS_AS(vector_tilt_gradient(grid, both, a, theta1), std::invalid_argument);

  const std::vector<std::span<const double>> pair{s1, s2};
  const std::vector<double> theta{0.4, -0.3};
  const auto mean = vector_tilt_mean(mu, pair, theta);
  const auto hess = vector_tilt_hessian(mu, pair, theta);
  const double step = 1e-5;
  for (std::size_t j = 0; j < 2; ++j) {
    auto up = theta, down = theta;
    up[j] += step;
    down[j] -= step;
    const double fd = (vector_log_partition(mu, pair, up) - vector_log_partition(mu, pair, down)) / (2 * step);
    CHECK(mean[j] == doctest::Approx(fd).epsilon(1e-6));
    const auto mu_up = vector_tilt_mean(mu, pair, up);
    const auto mu_down = vector_tilt_mean(mu, pair, down);
    for (std::size_t k = 0; k < 2; ++k)
      CHECK(hess[k * 2 + j] == doctest::Approx((mu_up[k] - mu_down[k]) / (2 * step)).epsilon(1e-6));
  }
#if MISSPEC_HAVE_EIGEN
  Eigen::Map<const Eigen::Matrix2d> H(hess.data());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(H);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-12);
#endif
}

TEST_CASE("policy randomization derivative") {
  auto mu = DiscreteMeasure::uniform(3);
  const std::vector<double> constant(3, 1.0);
  const std::vector<double> r0{0.1, 0.5, 0.9};
  const std::vector<double> r1{0.7, 0.2, 0.4};
  const auto flat = policy_randomization_derivative(mu, r0, r1, constant, 0.5);
  CHECK(flat.paper_covariance == doctest::Approx(0.0));
  CHECK(policy_randomization_derivative(mu, r0, r0, std::vector<double>{1, -2, 3}, 0.5).analytic_fd == 0.0);

  RandomStream rng(5);
  const auto r = random_measure(10, rng);
  const auto a0 = testing_support::normals(10, rng);
  const auto a1 = testing_support::normals(10, rng);
  const auto d = policy_randomization_derivative(r, a0, a1, r.attribute("s"), 0.5);
  CHECK(d.analytic_fd == doctest::Approx(d.exact_derivative).epsilon(1e-6));
  MESSAGE("covariance form minus derivative: " << d.paper_covariance - d.exact_derivative);
}
