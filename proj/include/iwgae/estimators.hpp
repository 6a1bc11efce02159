#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iwgae/errors.hpp"
#include "iwgae/optimizer.hpp"
#include "iwgae/types.hpp"

namespace iwgae {

struct GroupAccuracyEstimate {
  int group = 0;
  double alpha_hat = 0.0;  // clipped to [0, 1]
  double raw = 0.0;
  bool skipped = true;
  long source_count = 0;
  long target_count = 0;
};

// Per-group target accuracy estimates from the solved weights; groups
// without a solution stay marked skipped.
inline std::vector<GroupAccuracyEstimate> group_estimates(
    const std::vector<GroupBinCounts>& counts,
    const std::map<int, GroupSolution>& solutions, int M) {
  std::vector<GroupAccuracyEstimate> out(M + 1);
  for (int g = 1; g <= M; ++g) {
    GroupAccuracyEstimate& e = out[g];
    e.group = g;
    e.source_count = counts[g].group_source;
    e.target_count = counts[g].group_target;
    const auto it = solutions.find(g);
    if (it == solutions.end()) continue;
    const AlphaTarget a = alpha_target(counts[g], it->second.w_source);
    e.alpha_hat = a.clipped;
    e.raw = a.raw;
    e.skipped = false;
  }
  return out;
}

struct CalibrationResult {
  std::vector<double> confidence;  // aligned with target records
  std::vector<uint8_t> fallback;   // 1 when the vanilla confidence was used
};

// Confidence per target sample: its group's estimated accuracy, or the
// vanilla max-softmax when the group was skipped.
inline CalibrationResult calibrate(const Dataset& target,
                                   const std::vector<int>& target_groups,
                                   const std::vector<GroupAccuracyEstimate>& estimates) {
  CalibrationResult out;
  out.confidence.reserve(target.size());
  out.fallback.reserve(target.size());
  long fallbacks = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const GroupAccuracyEstimate& e = estimates[target_groups[i]];
    if (e.skipped) {
      out.confidence.push_back(softmax_max(target.records[i]).confidence);
      out.fallback.push_back(1);
      ++fallbacks;
    } else {
      out.confidence.push_back(e.alpha_hat);
      out.fallback.push_back(0);
    }
  }
  if (fallbacks > 0)
    log::info("calibrate: " + std::to_string(fallbacks) +
              " samples fell back to vanilla confidence (skipped groups)");
  return out;
}

struct EceBin {
  long count = 0;
  double mean_confidence = 0.0;
  double mean_accuracy = 0.0;
};

struct CalibrationReport {
  double ece = 0.0;
  std::vector<EceBin> bins;
  std::string method;
};

// Expected calibration error over m equal-width confidence bins; empty bins
// contribute nothing.
inline CalibrationReport ece(std::span<const double> confidences,
                             std::span<const uint8_t> correct, int m) {
  if (confidences.size() != correct.size())
    throw LengthMismatchError("ece: confidence/correctness length mismatch");
  if (m < 1) throw PipelineError("ece: m must be >= 1");
  CalibrationReport rep;
  rep.bins.assign(m, {});
  std::vector<double> conf_sum(m, 0.0), acc_sum(m, 0.0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    int b = static_cast<int>(std::floor(c * m));
    b = std::clamp(b, 0, m - 1);
    ++rep.bins[b].count;
    conf_sum[b] += c;
    acc_sum[b] += correct[i] ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(confidences.size());
  for (int b = 0; b < m; ++b) {
    if (rep.bins[b].count == 0) continue;
    rep.bins[b].mean_confidence = conf_sum[b] / rep.bins[b].count;
    rep.bins[b].mean_accuracy = acc_sum[b] / rep.bins[b].count;
    rep.ece += rep.bins[b].count / n *
               std::fabs(rep.bins[b].mean_accuracy - rep.bins[b].mean_confidence);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Temperature-scaling baselines

enum class TempCriterion { nll, brier };

namespace detail {

inline double temp_criterion_value(const Dataset& data,
                                   std::span<const double> weights,
                                   TempCriterion crit, double t) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const PredictionRecord& r = data.records[i];
    const std::vector<double> p = softmax(r.logits, t);
    const int y = *r.label;
    double v;
    if (crit == TempCriterion::nll) {
      v = -std::log(std::max(p[y], 1e-300));
    } else {
      v = 0.0;
      for (int k = 0; k < data.K; ++k) {
        const double target = (k == y) ? 1.0 : 0.0;
        v += (p[k] - target) * (p[k] - target);
      }
    }
    total += (weights.empty() ? 1.0 : weights[i]) * v;
  }
  return total;
}

}  // namespace detail

// Scalar temperature minimizing the criterion over [0.05, 20] by
// golden-section search to an interval of 1e-4.
inline double fit_temperature(const Dataset& source_val,
                              std::span<const double> weights,
                              TempCriterion crit) {
  if (!source_val.fully_labeled())
    throw MissingLabelsError("fit_temperature: source validation must be labeled");
  if (!weights.empty() && weights.size() != source_val.size())
    throw LengthMismatchError("fit_temperature: weight length mismatch");
  const auto h = [&](double t) {
    return detail::temp_criterion_value(source_val, weights, crit, t);
  };
  double a = 0.05, b = 20.0;
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = h(c), fd = h(d);
  while (b - a > 1e-4) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = h(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = h(d);
    }
  }
  return 0.5 * (a + b);
}

inline std::vector<double> confidences_at_temperature(const Dataset& target,
                                                      double t) {
  std::vector<double> out;
  out.reserve(target.size());
  for (const auto& r : target.records) out.push_back(softmax_max(r, t).confidence);
  return out;
}

inline std::vector<double> baseline_vanilla(const Dataset& target) {
  return confidences_at_temperature(target, 1.0);
}

inline std::vector<double> baseline_ts(const Dataset& source_val,
                                       const Dataset& target) {
  return confidences_at_temperature(
      target, fit_temperature(source_val, {}, TempCriterion::nll));
}

inline std::vector<double> baseline_iwts(const Dataset& source_val,
                                         const Dataset& target,
                                         std::span<const double> weights) {
  return confidences_at_temperature(
      target, fit_temperature(source_val, weights, TempCriterion::nll));
}

inline std::vector<double> baseline_cpcs(const Dataset& source_val,
                                         const Dataset& target,
                                         std::span<const double> weights) {
  return confidences_at_temperature(
      target, fit_temperature(source_val, weights, TempCriterion::brier));
}

// Importance-weighted cross-validation score: one minus the IW-weighted
// classification error on labeled source validation data. Higher is better.
inline double baseline_iwcv(const Dataset& source_val,
                            std::span<const double> weights) {
  if (!source_val.fully_labeled())
    throw MissingLabelsError("baseline_iwcv: source validation must be labeled");
  if (weights.size() != source_val.size())
    throw LengthMismatchError("baseline_iwcv: weight length mismatch");
  double err = 0.0;
  for (std::size_t i = 0; i < source_val.size(); ++i)
    if (!is_correct(source_val.records[i])) err += weights[i];
  return 1.0 - err / static_cast<double>(source_val.size());
}

struct SelectionScore {
  std::string model_id;
  std::string method;
  double score = 0.0;
  bool ranked = false;
};

// Model-selection criterion: target-count-weighted mean of the per-group
// accuracy estimates over solved groups (the empirical expectation of the
// group confidence over the target validation set).
inline double selection_score(const std::vector<GroupAccuracyEstimate>& estimates,
                              bool weighted = true) {
  double num = 0.0, den = 0.0;
  for (const auto& e : estimates) {
    if (e.skipped) continue;
    const double w = weighted ? static_cast<double>(e.target_count) : 1.0;
    num += w * e.alpha_hat;
    den += w;
  }
  if (den == 0.0) throw NoEligibleGroupsError("selection_score: no solved groups");
  return num / den;
}

// ---------------------------------------------------------------------------
// Diagnostics

struct GroupDiagnostics {
  int group = 0;
  double eps_opt = 0.0;
  double ident_bias = 0.0;
  double src_err = 0.0;
  double tgt_err = 0.0;
  bool prop1 = false;
  bool eq5 = false;
  bool has_errors = false;  // true when true IWs were available
};

// Per-group diagnostic quantities against ground truth.
//   correctness: per target sample, either realized 0/1 correctness or the
//     true conditional correctness probability (set correctness_is_probability).
//   true_iw: per target sample, the true density ratio; enables the source
//     and target estimation errors plus both bound checks.
inline std::vector<GroupDiagnostics> diagnostics(
    const Dataset& target, const std::vector<int>& target_groups,
    const std::vector<int>& target_bins, std::span<const double> correctness,
    std::span<const double> true_iw, bool correctness_is_probability,
    const std::vector<GroupBinCounts>& counts,
    const std::map<int, GroupSolution>& solutions) {
  if (correctness.size() != target.size())
    throw LengthMismatchError("diagnostics: correctness length mismatch");
  if (!true_iw.empty() && true_iw.size() != target.size())
    throw LengthMismatchError("diagnostics: true_iw length mismatch");

  std::vector<GroupDiagnostics> out;
  for (const auto& [g, sol] : solutions) {
    const GroupBinCounts& c = counts[g];
    GroupDiagnostics d;
    d.group = g;
    d.eps_opt = sol.eps_opt;

    double acc_sum = 0.0;
    long n = 0;
    for (std::size_t i = 0; i < target.size(); ++i) {
      if (target_groups[i] != g) continue;
      acc_sum += correctness[i];
      ++n;
    }
    if (n == 0) continue;
    const double acc_true = acc_sum / n;

    // Var(1(Y = Yhat) | G_n) around the true group accuracy. With
    // probabilistic correctness the Bernoulli variance term is exact.
    double var = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
      if (target_groups[i] != g) continue;
      const double ci = correctness[i];
      var += (ci - acc_true) * (ci - acc_true);
      if (correctness_is_probability) var += ci * (1.0 - ci);
    }
    var /= n;

    const AlphaTarget est = alpha_target(c, sol.w_source);
    const double bias = std::fabs(acc_true - est.raw);
    double w_floor = sol.w_source[0];
    double w_cap = sol.w_source[0];
    for (double w : sol.w_source) {
      w_floor = std::min(w_floor, w);
      w_cap = std::max(w_cap, w);
    }
    for (double w : sol.w_target) {
      w_floor = std::min(w_floor, w);
      w_cap = std::max(w_cap, w);
    }
    const double ratio_ts = c.p_target() / c.p_source();
    d.ident_bias =
        0.5 * ratio_ts * (1.0 / (w_floor * w_floor) + bias * bias + var);

    if (!true_iw.empty()) {
      // Source group accuracy under the true and the solved weights; the
      // expectation runs over target samples, so the target-side weights
      // apply.
      double s_true = 0.0, s_est = 0.0;
      for (std::size_t i = 0; i < target.size(); ++i) {
        if (target_groups[i] != g) continue;
        s_true += correctness[i] / true_iw[i];
        s_est += correctness[i] / sol.w_target[target_bins[i]];
      }
      const double alpha_s_true = s_true / n * ratio_ts;
      const double alpha_s_est = s_est / n * ratio_ts;
      d.src_err = std::fabs(alpha_s_true - alpha_s_est);
      d.tgt_err = std::fabs(acc_true - est.raw);
      const double eps_stat =
          std::sqrt(std::log(2.0 / 0.05) / (2.0 * c.group_source));
      d.prop1 = d.src_err <= d.eps_opt + eps_stat + d.ident_bias;
      d.eq5 = d.tgt_err <= w_cap * d.src_err * ratio_ts * ratio_ts + 1e-12;
      d.has_errors = true;
    }
    out.push_back(d);
  }
  return out;
}

// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw LengthMismatchError("spearman: need two equal-length series");
  const auto ranks = [](std::span<const double> v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * (i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace iwgae
