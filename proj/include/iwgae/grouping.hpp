#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <unordered_map>
#include <vector>

#include "iwgae/errors.hpp"
#include "iwgae/types.hpp"

namespace iwgae {

// Accuracy-group index (1-based) for a max-softmax confidence c: half-open
// intervals [(n-1)/M, n/M) with the final group closed at 1, so an exact
// boundary value goes to the upper group and no sample is double-assigned.
inline int group_of_confidence(double c, int M) {
  const int n = static_cast<int>(std::floor(c * M)) + 1;
  return std::min(std::max(n, 1), M);
}

// Per-record group indices, aligned with dataset order.
inline std::vector<int> assign_groups_vec(const Dataset& data, int M, double t) {
  if (M < 2) throw PipelineError("assign_groups: M must be >= 2");
  if (!(t > 0.0)) throw PipelineError("assign_groups: t must be positive");
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& r : data.records)
    out.push_back(group_of_confidence(softmax_max(r, t).confidence, M));
  return out;
}

inline std::unordered_map<std::string, int> assign_groups(const Dataset& data,
                                                          int M, double t) {
  const std::vector<int> vec = assign_groups_vec(data, M, t);
  std::unordered_map<std::string, int> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    out[data.records[i].sample_id] = vec[i];
  return out;
}

// Source grouping is always at t = 1; the temperature applies to the target
// side only.
struct GroupSpec {
  int M = 0;
  double t = 1.0;
  std::vector<int> source_groups;
  std::vector<int> target_groups;
};

inline GroupSpec make_group_spec(const Dataset& source, const Dataset& target,
                                 int M, double t) {
  GroupSpec spec;
  spec.M = M;
  spec.t = t;
  spec.source_groups = assign_groups_vec(source, M, 1.0);
  spec.target_groups = assign_groups_vec(target, M, t);
  return spec;
}

struct GroupVarianceDiagnostic {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

// Popoviciu-based sufficient condition for the group estimator to beat
// per-sample estimation: (1/4)(max b - min b)^2 <= ((N-1)/N) mean(b(1-b)).
inline GroupVarianceDiagnostic group_variance_diagnostic(
    std::span<const double> accuracies) {
  if (accuracies.empty())
    throw EmptyGroupError("group_variance_diagnostic: empty accuracy list");
  const double n = static_cast<double>(accuracies.size());
  double lo = accuracies[0], hi = accuracies[0], mean_var = 0.0;
  for (double b : accuracies) {
    lo = std::min(lo, b);
    hi = std::max(hi, b);
    mean_var += b * (1.0 - b);
  }
  mean_var /= n;
  GroupVarianceDiagnostic out;
  out.lhs = 0.25 * (hi - lo) * (hi - lo);
  out.rhs = (n - 1.0) / n * mean_var;
  out.holds = out.lhs <= out.rhs;
  return out;
}

}  // namespace iwgae
