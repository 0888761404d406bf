#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

#include "misspec/parallel.hpp"
#include "misspec/stats.hpp"

namespace misspec {

namespace {
std::atomic<unsigned> g_workers{1};
}

void set_worker_count(unsigned jobs) { g_workers.store(jobs == 0 ? 1 : jobs); }
unsigned worker_count() { return g_workers.load(); }

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

}  // namespace misspec
