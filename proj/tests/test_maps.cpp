#include <doctest.h>

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "misspec/error.hpp"
#include "misspec/maps.hpp"
#include "support.hpp"

using namespace misspec;
using namespace misspec::maps;

TEST_CASE("shaped score assembly") {
  RandomStream rng(1);
  const auto mu = testing_support::exact_flagger_measure(0.1, 0.9, 0.1, 4, rng);
  ShapedScoreSpec identity;
  const auto t = shaped_score(identity, mu);
  for (std::size_t i = 0; i < mu.size(); ++i) CHECK(t[i] == mu.attribute("s")[i]);

  ShapedScoreSpec one;
  one.penalties.push_back({"hhat", 0.3});
  ShapedScoreSpec two = one;
  two.penalties[0].weight = 0.6;
  const auto t1 = shaped_score(one, mu);
  const auto t2 = shaped_score(two, mu);
  for (std::size_t i = 0; i < mu.size(); ++i)
    CHECK(t2[i] - t1[i] == doctest::Approx(-0.3 * mu.attribute("hhat")[i]));

  ShapedScoreSpec missing;
  missing.aux.push_back({"nope", 1.0});
  CHECK_THROWS_AS(shaped_score(missing, mu), std::invalid_argument);
  ShapedScoreSpec empty;
  empty.base_weight = 0.0;
  CHECK_THROWS_AS(shaped_score(empty, mu), std::invalid_argument);
}

TEST_CASE("shaping spec file") {
  std::istringstream in("# shaping\ns0 = g\nw0 = 2\naux_s = 0.5\nbeta_hhat = 0.25\n");
  const auto spec = read_shaping_spec(in, "spec.ini");
  CHECK(spec.base_attribute == "g");
  CHECK(spec.base_weight == 2.0);
  REQUIRE(spec.aux.size() == 1);
  CHECK(spec.aux[0].attribute == "s");
  REQUIRE(spec.penalties.size() == 1);
  CHECK(spec.penalties[0].weight == 0.25);

  std::istringstream bad("s0 = g\ngamma = 3\n");
  try {
    (void)read_shaping_spec(bad, "spec.ini");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("flagger covariance and beta star") {
  CHECK(flagger_covariance(0.3, 0.4, 0.4) == 0.0);
  CHECK(flagger_covariance(0.5, 1.0, 0.0) == doctest::Approx(0.25));
  CHECK(flagger_covariance(0.1, 0.9, 0.1) == doctest::Approx(0.072).epsilon(1e-14));
  CHECK(beta_star(0.0, 0.1, 0.9, 0.1) == 0.0);
  CHECK(beta_star(0.036, 0.1, 0.9, 0.1) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK_THROWS_AS(beta_star(0.01, 0.1, 0.3, 0.3), NoCancellation);
}

TEST_CASE("beta star cancels the first-order drift") {
  RandomStream rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    const double alpha = 0.05 + 0.4 * rng.uniform();
    const double tau = 0.5 + 0.5 * rng.uniform();
    const double phi = 0.4 * rng.uniform();
    const auto mu = testing_support::exact_flagger_measure(alpha, tau, phi, 5, rng);
    const double cov = mu.covariance(mu.attribute("H"), mu.attribute("g"));
    ShapedScoreSpec spec;
    spec.base_attribute = "g";
    spec.penalties.push_back({"hhat", beta_star(cov, alpha, tau, phi)});
    const auto t = shaped_score(spec, mu);
    CHECK(std::abs(drift_at_zero(mu, t, mu.attribute("H"))) <= 1e-10);
    const auto dec = drift_decomposition(spec, mu, mu.attribute("H"));
    CHECK(dec.total == doctest::Approx(dec.direct));
    CHECK(std::abs(dec.base + dec.penalties[0]) <= 1e-10);
  }
}

TEST_CASE("drift at zero") {
  RandomStream rng(3);
  const auto mu = testing_support::exact_flagger_measure(0.2, 0.8, 0.1, 3, rng);
  const auto h = mu.attribute("H");
  CHECK(drift_at_zero(mu, std::vector<double>(mu.size(), 4.0), h) == doctest::Approx(0.0));
  CHECK(drift_at_zero(mu, h, h) == doctest::Approx(0.2 * 0.8).epsilon(1e-12));
}

TEST_CASE("orthogonal projection shaping") {
  auto mu = DiscreteMeasure::uniform(4);
  const std::vector<double> h{0, 0, 1, 1};
  const std::vector<double> r{1, -1, 1, -1};
  const auto p = orthogonal_projection_shaping(mu, r, h);
  CHECK(p.beta == 0.0);
  for (std::size_t i = 0; i < 4; ++i) CHECK(p.t[i] == r[i]);
  const auto full = orthogonal_projection_shaping(mu, h, h);
  for (double v : full.t) CHECK(v == doctest::Approx(0.0));
  CHECK_THROWS_AS(orthogonal_projection_shaping(mu, r, std::vector<double>(4, 1.0)), std::invalid_argument);

  RandomStream rng(4);
  const auto m = testing_support::random_measure(50, rng);
  const auto rd = testing_support::normals(50, rng);
  const auto q = orthogonal_projection_shaping(m, rd, m.attribute("H"));
  CHECK(std::abs(m.covariance(m.attribute("H"), q.t)) <= 1e-10);
  CHECK(std::abs(m.variance(q.t) - q.preserved) <= 1e-10);
}

TEST_CASE("temperature KL for small lambda") {
  CHECK(temperature_kl_small(0.0, 3.0) == 0.0);
  CHECK(temperature_kl_small(0.01, 4.0) == doctest::Approx(0.0002).epsilon(1e-14));
  CHECK_THROWS_AS(temperature_kl_small(0.1, -1.0), std::invalid_argument);

  auto mu = DiscreteMeasure::from_masses({0.7, 0.2, 0.1});
  const std::vector<double> t{0.0, 1.0, 4.0};
  auto residual = [&](double lambda) {
    return std::abs(kl_tilt(mu, t, lambda).forward - temperature_kl_small(lambda, mu.variance(t)));
  };
  const double ratio = residual(1e-2) / residual(1e-3);
  CHECK(ratio >= 500.0);
  CHECK(ratio <= 2000.0);
}

TEST_CASE("drift beyond first order") {
  // H is independent of t: tilting never moves the hard mass.
  auto product = DiscreteMeasure::from_masses({0.3 * 0.8, 0.3 * 0.2, 0.7 * 0.8, 0.7 * 0.2});
  const std::vector<double> tp{0, 0, 1, 1};
  const std::vector<double> hp{0, 1, 0, 1};
  const std::vector<double> grid{0, 0.5, 1, 2};
  const auto rp = drift_limit_report(product, tp, hp, grid);
  CHECK(std::abs(rp.drift_at_zero) <= 1e-12);
  CHECK_FALSE(rp.first_order_only);

  // Zero covariance at the base but H sits on the tails of t.
  auto sym = DiscreteMeasure::from_masses({0.25, 0.5, 0.25});
  const std::vector<double> ts{-1, 0, 1};
  const std::vector<double> hs{1, 0, 1};
  const auto rs = drift_limit_report(sym, ts, hs, grid);
  CHECK(std::abs(rs.drift_at_zero) <= 1e-12);
  CHECK(rs.first_order_only);
  CHECK(rs.points[2].drift > 0.0);

  // Positive covariance keeps rho increasing; t = -H makes it decrease.
  auto base = DiscreteMeasure::uniform(4);
  const std::vector<double> h{0, 0, 1, 1};
  const std::vector<double> t{0.0, 0.0, 0.2, 0.2};
  CHECK(base.covariance(h, t) == doctest::Approx(0.05));
  const auto up = drift_limit_report(base, t, h, grid);
  CHECK(up.increasing_where_positive);
  for (const auto& p : up.points) CHECK(p.drift > 0.0);
  CHECK(up.points.back().rho > up.points.front().rho);

  const std::vector<double> neg{0, 0, -1, -1};
  const auto down = drift_limit_report(base, neg, h, grid);
  CHECK(down.decreasing_where_negative);
  for (std::size_t k = 1; k < down.points.size(); ++k) CHECK(down.points[k].rho < down.points[k - 1].rho);
}
