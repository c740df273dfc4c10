#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace capgov {

struct PairedTestResult {
  std::string metric;
  double t = 0.0;
  double p = 1.0;
  int seeds = 0;
  double mean_diff = 0.0;
};

struct InsufficientSeeds : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Two-sided paired t-test on matched per-seed values; df = n - 1.
// Identical differences give t = 0, p = 1 when they are zero, and |t| = inf, p = 0 otherwise.
PairedTestResult paired_t_test(const std::string& metric, const std::vector<double>& a, const std::vector<double>& b);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
  int n = 0;
};

MeanStd mean_std(const std::vector<double>& xs);

}  // namespace capgov
