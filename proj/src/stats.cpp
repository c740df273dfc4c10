#include "capgov/stats.hpp"

#include <cmath>
#include <limits>

#include <boost/math/distributions/students_t.hpp>

namespace capgov {

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  m.n = static_cast<int>(xs.size());
  if (xs.empty()) return m;
  double sum = 0.0;
  for (double x : xs) sum += x;
  m.mean = sum / m.n;
  if (m.n > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / (m.n - 1));
  }
  return m;
}

PairedTestResult paired_t_test(const std::string& metric, const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired test needs matched samples");
  if (a.size() < 2) throw InsufficientSeeds("paired test needs at least two seeds");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  auto ms = mean_std(d);
  PairedTestResult r{metric, 0.0, 1.0, ms.n, ms.mean};
  if (ms.std == 0.0) {
    if (ms.mean == 0.0) return r;
    r.t = std::copysign(std::numeric_limits<double>::infinity(), ms.mean);
    r.p = 0.0;
    return r;
  }
  r.t = ms.mean / (ms.std / std::sqrt(static_cast<double>(ms.n)));
  boost::math::students_t dist(ms.n - 1);
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
  return r;
}

}  // namespace capgov
