#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "iwgae/errors.hpp"
#include "iwgae/log.hpp"
#include "iwgae/types.hpp"

namespace iwgae {

namespace detail {

// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
inline double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

inline double reg_inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  // The log prefactor is symmetric under (a, b, x) -> (b, a, 1-x).
  const double front = std::exp(std::lgamma(a + b) - std::lgamma(a) -
                                std::lgamma(b) + a * std::log(x) +
                                b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

// Binomial CDF P(X <= k) for X ~ Binom(m, theta), in incomplete-beta form.
inline double binom_cdf(long k, long m, double theta) {
  if (k < 0) return 0.0;
  if (k >= m) return 1.0;
  return reg_inc_beta(static_cast<double>(m - k), static_cast<double>(k + 1),
                      1.0 - theta);
}

}  // namespace detail

struct BinomialCI {
  double lower = 0.0;
  double upper = 1.0;
};

// Exact (Clopper-Pearson) one-sided bounds at level delta per side:
//   upper solves F(k; m, theta) = delta,       upper = 1 when k = m;
//   lower solves F(k-1; m, theta) = 1 - delta, lower = 0 when k = 0.
// Both roots are found by bisection on [0, 1]; the CDF is monotone in theta,
// so bisection cannot fail. 200 iterations, absolute tolerance 1e-10.
inline BinomialCI clopper_pearson(long k, long m, double delta) {
  if (m < 1) throw InvalidCountError("clopper_pearson: m must be >= 1");
  if (k < 0 || k > m)
    throw InvalidCountError("clopper_pearson: need 0 <= k <= m, got k=" +
                            std::to_string(k) + " m=" + std::to_string(m));
  if (!(delta > 0.0 && delta < 1.0))
    throw PipelineError("clopper_pearson: delta must be in (0, 1)");

  constexpr int kMaxIter = 200;
  constexpr double kTol = 1e-10;

  const auto bisect_cdf = [&](long kk, double target) {
    // F(kk; m, theta) decreases from 1 to 0 as theta goes 0 -> 1.
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < kMaxIter && (hi - lo) > kTol; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (detail::binom_cdf(kk, m, mid) > target)
        lo = mid;
      else
        hi = mid;
    }
    return 0.5 * (lo + hi);
  };

  BinomialCI ci;
  ci.upper = (k == m) ? 1.0 : bisect_cdf(k, delta);
  ci.lower = (k == 0) ? 0.0 : bisect_cdf(k - 1, 1.0 - delta);
  return ci;
}

struct IwInterval {
  double lower = 0.0;
  double upper = 0.0;
  long n_source = 0;
  long n_target = 0;
  bool degenerate = false;  // clipped interval was empty; midpoint singleton used
};

struct IwIntervals {
  std::vector<IwInterval> bins;
  double delta_bar = 0.0;  // effective per-side level actually used
  double G = 0.0;

  int size() const { return static_cast<int>(bins.size()); }
};

// CI of the binned IW w_j = pT_j / pS_j from bin occupancy counts:
//   lower = [lo_T - G]+ / (up_S + G),  upper = (up_T + G) / [lo_S - G]+ ,
// then intersected with [w_min, w_max]. A zero denominator means an
// unbounded raw upper and clips to w_max. An empty intersection degrades to
// the clamped midpoint of the raw interval (flagged `degenerate`).
inline IwInterval iw_interval(long n_S, long n_T, long N_S, long N_T,
                              const GaeConfig& cfg) {
  if (n_S > N_S || n_T > N_T)
    throw InvalidCountError("iw_interval: bin count exceeds dataset size");
  const double db = cfg.union_bound ? cfg.delta_bar / (2.0 * cfg.B) : cfg.delta_bar;
  const BinomialCI src = clopper_pearson(n_S, N_S, db);
  const BinomialCI tgt = clopper_pearson(n_T, N_T, db);

  const double num_lo = std::max(0.0, tgt.lower - cfg.G);
  const double den_lo = src.upper + cfg.G;
  double raw_lower = num_lo / den_lo;

  const double num_up = tgt.upper + cfg.G;
  const double den_up = std::max(0.0, src.lower - cfg.G);
  double raw_upper = den_up > 0.0 ? num_up / den_up
                                  : std::numeric_limits<double>::infinity();

  IwInterval out;
  out.n_source = n_S;
  out.n_target = n_T;
  out.lower = std::max(raw_lower, cfg.w_min);
  out.upper = std::min(raw_upper, cfg.w_max);
  if (out.lower > out.upper) {
    const double mid = std::isinf(raw_upper) ? raw_upper
                                             : 0.5 * (raw_lower + raw_upper);
    const double point = std::clamp(mid, cfg.w_min, cfg.w_max);
    out.lower = out.upper = point;
    out.degenerate = true;
    log::warn("iw_interval: empty interval after clipping (n_S=" +
              std::to_string(n_S) + ", n_T=" + std::to_string(n_T) +
              "); using midpoint singleton");
  }
  return out;
}

// Per-bin occupancy of a dataset under a partition.
inline std::vector<long> bin_counts(const BinPartition& partition,
                                    const Dataset& data,
                                    const std::vector<double>& scores) {
  std::vector<long> counts(partition.B, 0);
  for (std::size_t i = 0; i < data.size(); ++i)
    ++counts[partition.bin_of_score(scores[i])];
  return counts;
}

inline IwIntervals make_iw_intervals(const BinPartition& partition,
                                     const Dataset& source, const Dataset& target,
                                     const std::vector<double>& source_scores,
                                     const std::vector<double>& target_scores,
                                     const GaeConfig& cfg) {
  const std::vector<long> nS = bin_counts(partition, source, source_scores);
  const std::vector<long> nT = bin_counts(partition, target, target_scores);
  IwIntervals out;
  GaeConfig bin_cfg = cfg;
  bin_cfg.B = partition.B;  // union-bound correction uses the actual bin count
  out.delta_bar =
      cfg.union_bound ? cfg.delta_bar / (2.0 * partition.B) : cfg.delta_bar;
  out.G = cfg.G;
  out.bins.reserve(partition.B);
  for (int j = 0; j < partition.B; ++j)
    out.bins.push_back(iw_interval(nS[j], nT[j], static_cast<long>(source.size()),
                                   static_cast<long>(target.size()), bin_cfg));
  return out;
}

}  // namespace iwgae
