#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "misspec/random.hpp"
#include "misspec/tilting.hpp"

namespace testing_support {

// Flat Dirichlet weights from normalized exponentials.
inline std::vector<double> dirichlet(std::size_t n, misspec::RandomStream& rng) {
  std::vector<double> w(n);
  double total = 0.0;
  for (auto& v : w) {
    v = -std::log(1.0 - rng.uniform());
    total += v;
  }
  for (auto& v : w) v /= total;
  return w;
}

inline std::vector<double> normals(std::size_t n, misspec::RandomStream& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

// Random measure with a Gaussian score `s`, a 0/1 attribute `H` that takes
// both values, and a Gaussian attribute `f`.
inline misspec::DiscreteMeasure random_measure(std::size_t atoms, misspec::RandomStream& rng) {
  auto mu = misspec::DiscreteMeasure::from_masses(dirichlet(atoms, rng));
  mu.set_attribute("s", normals(atoms, rng));
  std::vector<double> h(atoms);
  for (auto& v : h) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
  h[0] = 1.0;
  h[1] = 0.0;
  mu.set_attribute("H", h);
  mu.set_attribute("f", normals(atoms, rng));
  return mu;
}

inline double kl_direct(std::span<const double> q, std::span<const double> w) {
  double kl = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i)
    if (q[i] > 0.0) kl += q[i] * std::log(q[i] / w[i]);
  return kl;
}

inline double mean_of(std::span<const double> q, std::span<const double> s) {
  double m = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) m += q[i] * s[i];
  return m;
}

// Random law with E[s] = m: the base weights perturbed by a Dirichlet draw,
// then mixed with a second draw from the other side of m so the moment holds.
inline std::vector<double> feasible_perturbation(std::span<const double> w, std::span<const double> s, double m,
                                                 misspec::RandomStream& rng) {
  auto draw = [&] {
    const auto d = dirichlet(w.size(), rng);
    const double mix = rng.uniform();
    std::vector<double> p(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) p[i] = mix * w[i] + (1.0 - mix) * d[i];
    return p;
  };
  const auto a = draw();
  auto b = draw();
  const double ma = mean_of(a, s) - m;
  double mb = mean_of(b, s) - m;
  if (ma * mb >= 0.0) {
    // Pull b toward the extreme atom on the other side of m until it brackets.
    const auto j = static_cast<std::size_t>(ma >= 0.0 ? std::min_element(s.begin(), s.end()) - s.begin()
                                                      : std::max_element(s.begin(), s.end()) - s.begin());
    const auto start = b;
    for (double keep = 0.5 * rng.uniform(); ma * mb >= 0.0; keep *= 0.5) {
      for (std::size_t i = 0; i < b.size(); ++i) b[i] = keep * start[i] + (i == j ? 1.0 - keep : 0.0);
      mb = mean_of(b, s) - m;
    }
  }
  const double t = mb / (mb - ma);
  std::vector<double> q(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) q[i] = t * a[i] + (1.0 - t) * b[i];
  return q;
}

}  // namespace testing_support

namespace testing_support {

// Atoms over (H, flag, k): Pr(H = 1) = alpha, flag ~ Ber(tau) on H = 1 and
// Ber(phi) on H = 0, independent of k given H. Weights are set analytically.
// Attributes: H, hhat, g (random per (H, k)), s (random per atom).
inline misspec::DiscreteMeasure exact_flagger_measure(double alpha, double tau, double phi, std::size_t k,
                                                      misspec::RandomStream& rng) {
  std::vector<double> w, h, hhat, g;
  for (int H = 0; H < 2; ++H) {
    const auto pk = dirichlet(k, rng);
    const auto gk = normals(k, rng);
    const double pH = H ? alpha : 1.0 - alpha;
    const double rate = H ? tau : phi;
    for (int f = 0; f < 2; ++f)
      for (std::size_t j = 0; j < k; ++j) {
        w.push_back(pH * (f ? rate : 1.0 - rate) * pk[j]);
        h.push_back(H);
        hhat.push_back(f);
        g.push_back(gk[j] + 0.8 * H);
      }
  }
  auto mu = misspec::DiscreteMeasure::from_masses(w);
  mu.set_attribute("H", h);
  mu.set_attribute("hhat", hhat);
  mu.set_attribute("g", g);
  mu.set_attribute("s", normals(w.size(), rng));
  return mu;
}

}  // namespace testing_support
