#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "iwgae/ci.hpp"
#include "iwgae/errors.hpp"
#include "iwgae/grouping.hpp"
#include "iwgae/log.hpp"
#include "iwgae/parallel.hpp"
#include "iwgae/types.hpp"

namespace iwgae {

// Per-bin tallies of one accuracy group:
//   target_in_bin[i]         target samples of the group in bin i
//   correct_source_in_bin[i] correct source predictions of the group in bin i
//   source_in_bin[i]         all source samples of the group in bin i
struct GroupBinCounts {
  std::vector<long> target_in_bin;
  std::vector<long> correct_source_in_bin;
  std::vector<long> source_in_bin;
  long group_source = 0;
  long group_target = 0;
  long total_source = 0;
  long total_target = 0;

  int bins() const { return static_cast<int>(target_in_bin.size()); }
  double p_source() const {
    return static_cast<double>(group_source) / static_cast<double>(total_source);
  }
  double p_target() const {
    return static_cast<double>(group_target) / static_cast<double>(total_target);
  }
};

// Monte-Carlo source group accuracy: fraction of correct source predictions.
inline double alpha_mc(const GroupBinCounts& c) {
  if (c.group_source < 1) throw EmptyGroupError("alpha_mc: no source samples");
  long correct = 0;
  for (long b : c.correct_source_in_bin) correct += b;
  return static_cast<double>(correct) / static_cast<double>(c.group_source);
}

// IW-based source group accuracy with decoupled source/target weights:
//   (1/|G_T| sum_i a_i / wT_i) * (1/|G_S| sum_i b_i wS_i).
// Invariant under scaling both weight vectors by the same constant.
inline double alpha_iw_source(const GroupBinCounts& c,
                              std::span<const double> w_source,
                              std::span<const double> w_target) {
  if (c.group_source < 1 || c.group_target < 1)
    throw EmptyGroupError("alpha_iw_source: empty group");
  double ct = 0.0, cs = 0.0;
  for (int i = 0; i < c.bins(); ++i) {
    ct += static_cast<double>(c.target_in_bin[i]) / w_target[i];
    cs += static_cast<double>(c.correct_source_in_bin[i]) * w_source[i];
  }
  ct /= static_cast<double>(c.group_target);
  cs /= static_cast<double>(c.group_source);
  return ct * cs;
}

struct AlphaTarget {
  double raw = 0.0;      // may exceed 1 when the weights overshoot
  double clipped = 0.0;  // reported confidence
};

// Target group accuracy estimate from source correctness reweighted by the
// source-side binned weights. Estimates above 1 are clipped for reporting;
// the raw value is kept for diagnostics.
inline AlphaTarget alpha_target(const GroupBinCounts& c,
                                std::span<const double> w_source) {
  if (c.group_source < 1 || c.group_target < 1)
    throw EmptyGroupError("alpha_target: empty group");
  double acc = 0.0;
  for (int i = 0; i < c.bins(); ++i)
    acc += static_cast<double>(c.correct_source_in_bin[i]) * w_source[i];
  acc /= static_cast<double>(c.group_source);
  const double raw = acc * (c.p_source() / c.p_target());
  return {raw, std::clamp(raw, 0.0, 1.0)};
}

struct GroupSolution {
  std::vector<double> w_source;
  std::vector<double> w_target;
  double eps_opt = 0.0;   // squared residual of the two estimators
  bool feasible = false;  // probability constraints met within 1e-6
  double t = 1.0;         // target grouping temperature used
  bool fallback = false;  // midpoint returned because no feasible improvement
};

namespace detail {

// The per-group problem in normalized coefficients.
struct GroupProblem {
  int B = 0;
  std::vector<double> lo, hi;   // box per bin (CI intersected with [w_min, w_max])
  std::vector<double> ta;       // a_i / |G_T|
  std::vector<double> tb;       // b_i / |G_S|
  std::vector<double> ts;       // s_i / |G_S|
  double alpha = 0.0;           // Monte-Carlo source accuracy
  double r_ts = 0.0;            // P(target in group) / P(source in group)
  double r_st = 0.0;
  double delta_tol = 0.0;
  double delta_prob = 0.0;

  double ct(std::span<const double> wT) const {
    double v = 0.0;
    for (int i = 0; i < B; ++i) v += ta[i] / wT[i];
    return v;
  }
  double cs(std::span<const double> wS) const {
    double v = 0.0;
    for (int i = 0; i < B; ++i) v += tb[i] * wS[i];
    return v;
  }
  double es(std::span<const double> wS) const {
    double v = 0.0;
    for (int i = 0; i < B; ++i) v += ts[i] * wS[i];
    return v;
  }
  double objective(std::span<const double> wS, std::span<const double> wT) const {
    const double r = alpha - ct(wT) * cs(wS);
    return r * r;
  }
  // Probability constraints, met within `slack`.
  bool prob_ok(std::span<const double> wS, std::span<const double> wT,
               double slack) const {
    return std::fabs(es(wS) - r_ts) <= delta_prob + slack &&
           std::fabs(ct(wT) - r_st) <= delta_prob + slack;
  }
};

inline GroupProblem make_problem(const GroupBinCounts& c,
                                 const IwIntervals& intervals,
                                 const GaeConfig& cfg) {
  GroupProblem p;
  p.B = c.bins();
  p.lo.resize(p.B);
  p.hi.resize(p.B);
  p.ta.resize(p.B);
  p.tb.resize(p.B);
  p.ts.resize(p.B);
  for (int i = 0; i < p.B; ++i) {
    p.lo[i] = intervals.bins[i].lower;
    p.hi[i] = intervals.bins[i].upper;
    p.ta[i] = static_cast<double>(c.target_in_bin[i]) / c.group_target;
    p.tb[i] = static_cast<double>(c.correct_source_in_bin[i]) / c.group_source;
    p.ts[i] = static_cast<double>(c.source_in_bin[i]) / c.group_source;
  }
  p.alpha = alpha_mc(c);
  p.r_ts = c.p_target() / c.p_source();
  p.r_st = c.p_source() / c.p_target();
  p.delta_tol = cfg.delta_tol;
  p.delta_prob = cfg.delta_prob;
  return p;
}

// Augmented-Lagrangian state over the inequality constraints
//   g1 =  es - r_ts - dp <= 0        g2 = r_ts - es - dp <= 0
//   g3 =  ct - r_st - dp <= 0        g4 = r_st - ct - dp <= 0
//   h_i = (wT_i - wS_i)^2 - dt <= 0
// with multiplier terms (1/2rho)(max(0, lambda + rho g)^2 - lambda^2).
struct AlState {
  double lam[4] = {0, 0, 0, 0};
  std::vector<double> mu;  // coupling multipliers
  double rho = 10.0;
};

inline double al_value(const GroupProblem& p, const AlState& st,
                       std::span<const double> wS, std::span<const double> wT) {
  const double esv = p.es(wS);
  const double ctv = p.ct(wT);
  const double g[4] = {esv - p.r_ts - p.delta_prob, p.r_ts - esv - p.delta_prob,
                       ctv - p.r_st - p.delta_prob, p.r_st - ctv - p.delta_prob};
  double v = p.objective(wS, wT);
  for (int j = 0; j < 4; ++j) {
    const double m = std::max(0.0, st.lam[j] + st.rho * g[j]);
    v += (m * m - st.lam[j] * st.lam[j]) / (2.0 * st.rho);
  }
  for (int i = 0; i < p.B; ++i) {
    const double d = wT[i] - wS[i];
    const double hi = d * d - p.delta_tol;
    const double m = std::max(0.0, st.mu[i] + st.rho * hi);
    v += (m * m - st.mu[i] * st.mu[i]) / (2.0 * st.rho);
  }
  return v;
}

inline void al_gradient(const GroupProblem& p, const AlState& st,
                        std::span<const double> wS, std::span<const double> wT,
                        std::vector<double>& gS, std::vector<double>& gT) {
  const double ctv = p.ct(wT);
  const double csv = p.cs(wS);
  const double esv = p.es(wS);
  const double resid = p.alpha - ctv * csv;
  const double g[4] = {esv - p.r_ts - p.delta_prob, p.r_ts - esv - p.delta_prob,
                       ctv - p.r_st - p.delta_prob, p.r_st - ctv - p.delta_prob};
  double m[4];
  for (int j = 0; j < 4; ++j) m[j] = std::max(0.0, st.lam[j] + st.rho * g[j]);

  gS.assign(p.B, 0.0);
  gT.assign(p.B, 0.0);
  for (int i = 0; i < p.B; ++i) {
    const double inv2 = p.ta[i] / (wT[i] * wT[i]);
    gS[i] = -2.0 * resid * ctv * p.tb[i] + (m[0] - m[1]) * p.ts[i];
    gT[i] = 2.0 * resid * csv * inv2 + (m[2] - m[3]) * (-inv2);
    const double d = wT[i] - wS[i];
    const double mh = std::max(0.0, st.mu[i] + st.rho * (d * d - p.delta_tol));
    gS[i] += mh * (-2.0 * d);
    gT[i] += mh * (2.0 * d);
  }
}

// One projected-gradient pass over one block with Armijo backtracking.
// Returns the achieved decrease of the augmented Lagrangian.
inline double pgd_block(const GroupProblem& p, const AlState& st,
                        std::vector<double>& wS, std::vector<double>& wT,
                        bool source_block, double& step) {
  std::vector<double> gS, gT;
  al_gradient(p, st, wS, wT, gS, gT);
  std::vector<double>& x = source_block ? wS : wT;
  const std::vector<double>& g = source_block ? gS : gT;

  const double l0 = al_value(p, st, wS, wT);
  std::vector<double> trial(p.B);
  step = std::min(step * 2.0, 1e6);
  for (int bt = 0; bt < 60; ++bt) {
    double quad = 0.0, lin = 0.0;
    for (int i = 0; i < p.B; ++i) {
      trial[i] = std::clamp(x[i] - step * g[i], p.lo[i], p.hi[i]);
      const double dx = trial[i] - x[i];
      lin += g[i] * dx;
      quad += dx * dx;
    }
    if (quad == 0.0) return 0.0;
    std::vector<double> saved = x;
    x = trial;
    const double l1 = al_value(p, st, wS, wT);
    if (l1 <= l0 + lin + quad / (2.0 * step) + 1e-15) return l0 - l1;
    x = std::move(saved);
    step *= 0.5;
  }
  return 0.0;
}

struct Candidate {
  std::vector<double> wS, wT;
  double f = 0.0;
  bool valid = false;
};

// Clamp a trial point onto the exactly-feasible box + coupling set, then
// record it if it satisfies the probability constraints and does not lose to
// the midpoint objective.
inline void consider(const GroupProblem& p, double f_mid,
                     std::vector<double> wS, std::vector<double> wT,
                     Candidate& best) {
  const double reach = std::sqrt(std::max(p.delta_tol, 0.0));
  for (int i = 0; i < p.B; ++i) {
    wS[i] = std::clamp(wS[i], p.lo[i], p.hi[i]);
    wT[i] = std::clamp(wT[i], std::max(p.lo[i], wS[i] - reach),
                       std::min(p.hi[i], wS[i] + reach));
  }
  if (!p.prob_ok(wS, wT, 1e-6)) return;
  const double f = p.objective(wS, wT);
  if (f > f_mid) return;
  if (!best.valid || f < best.f) best = {std::move(wS), std::move(wT), f, true};
}

inline void run_al(const GroupProblem& p, double f_mid, double opt_tol,
                   std::vector<double> wS, std::vector<double> wT,
                   Candidate& best) {
  AlState st;
  st.mu.assign(p.B, 0.0);
  double prev_obj = p.objective(wS, wT);
  double prev_viol = std::numeric_limits<double>::infinity();
  double stepS = 1.0, stepT = 1.0;

  constexpr int kMaxOuter = 500;
  for (int outer = 0; outer < kMaxOuter; ++outer) {
    // Block-coordinate descent on the augmented Lagrangian.
    for (int inner = 0; inner < 40; ++inner) {
      const double d1 = pgd_block(p, st, wS, wT, true, stepS);
      const double d2 = pgd_block(p, st, wS, wT, false, stepT);
      if (d1 + d2 < 0.1 * opt_tol) break;
    }
    consider(p, f_mid, wS, wT, best);

    // Multiplier updates and constraint bookkeeping.
    const double esv = p.es(wS), ctv = p.ct(wT);
    const double g[4] = {esv - p.r_ts - p.delta_prob, p.r_ts - esv - p.delta_prob,
                         ctv - p.r_st - p.delta_prob,
                         p.r_st - ctv - p.delta_prob};
    double viol = 0.0;
    for (int j = 0; j < 4; ++j) {
      st.lam[j] = std::max(0.0, st.lam[j] + st.rho * g[j]);
      viol = std::max(viol, g[j]);
    }
    for (int i = 0; i < p.B; ++i) {
      const double d = wT[i] - wS[i];
      const double h = d * d - p.delta_tol;
      st.mu[i] = std::max(0.0, st.mu[i] + st.rho * h);
      viol = std::max(viol, h);
    }

    const double obj = p.objective(wS, wT);
    if (viol <= 1e-9 && std::fabs(prev_obj - obj) < opt_tol) break;
    if (viol > 0.25 * prev_viol && viol > 1e-9) st.rho = std::min(st.rho * 4.0, 1e9);
    prev_viol = std::max(viol, 0.0);
    prev_obj = obj;
  }
}

// Coarse scan of the coupled diagonal (wS = wT), used as an extra start for
// small B where it is affordable.
inline bool diagonal_scan(const GroupProblem& p, int per_dim,
                          std::vector<double>& out) {
  std::vector<int> idx(p.B, 0);
  std::vector<double> w(p.B);
  double best_f = std::numeric_limits<double>::infinity();
  bool best_feasible = false, found = false;
  while (true) {
    for (int i = 0; i < p.B; ++i) {
      const double frac =
          per_dim == 1 ? 0.5 : static_cast<double>(idx[i]) / (per_dim - 1);
      w[i] = p.lo[i] + frac * (p.hi[i] - p.lo[i]);
    }
    const bool ok = p.prob_ok(w, w, 1e-6);
    const double f = p.objective(w, w);
    // Feasible points dominate infeasible ones regardless of objective.
    if (!found || (ok && !best_feasible) ||
        (ok == best_feasible && f < best_f)) {
      best_f = f;
      best_feasible = ok;
      out = w;
      found = true;
    }
    int k = 0;
    while (k < p.B && ++idx[k] == per_dim) idx[k++] = 0;
    if (k == p.B) break;
  }
  return found;
}

}  // namespace detail

// Picks binned IWs inside their confidence intervals so the IW-based source
// accuracy estimator matches the Monte-Carlo one. Guarantees on the returned
// solution:
//   - box constraints hold exactly (projection),
//   - per-bin coupling (wT_i - wS_i)^2 <= delta_tol,
//   - probability constraints within 1e-6, otherwise the midpoint is
//     returned with feasible = false and fallback = true,
//   - eps_opt never exceeds the midpoint objective.
// The solver is block-coordinate projected gradient descent under an
// augmented Lagrangian, run from the midpoint plus a few deterministic
// auxiliary starts.
inline GroupSolution solve_group(const GroupBinCounts& counts,
                                 const IwIntervals& intervals,
                                 const GaeConfig& cfg) {
  if (counts.group_source < 1 || counts.group_target < 1)
    throw EmptyGroupError("solve_group: empty group");
  if (counts.bins() != intervals.size())
    throw LengthMismatchError("solve_group: counts/intervals bin mismatch");

  const detail::GroupProblem p = detail::make_problem(counts, intervals, cfg);
  std::vector<double> mid(p.B);
  for (int i = 0; i < p.B; ++i) mid[i] = 0.5 * (p.lo[i] + p.hi[i]);
  const double f_mid = p.objective(mid, mid);

  detail::Candidate best;
  detail::consider(p, f_mid, mid, mid, best);

  // Early out when the midpoint is already converged and feasible.
  if (!(best.valid && f_mid < cfg.opt_tol)) {
    std::vector<std::pair<std::vector<double>, std::vector<double>>> starts;
    starts.emplace_back(mid, mid);
    if (p.B <= 3) {
      std::vector<double> diag;
      const int per_dim = p.B == 1 ? 257 : (p.B == 2 ? 65 : 25);
      if (detail::diagonal_scan(p, per_dim, diag)) starts.emplace_back(diag, diag);
    }
    starts.emplace_back(p.hi, p.lo);  // consider() clamps coupling
    starts.emplace_back(p.lo, p.hi);
    for (auto& [s0, t0] : starts) {
      const double reach = std::sqrt(std::max(p.delta_tol, 0.0));
      for (int i = 0; i < p.B; ++i)
        t0[i] = std::clamp(t0[i], std::max(p.lo[i], s0[i] - reach),
                           std::min(p.hi[i], s0[i] + reach));
      detail::run_al(p, f_mid, cfg.opt_tol, s0, t0, best);
    }
  }

  GroupSolution out;
  if (best.valid) {
    out.w_source = std::move(best.wS);
    out.w_target = std::move(best.wT);
    out.eps_opt = best.f;
    out.feasible = true;
    out.fallback = false;
  } else {
    out.w_source = mid;
    out.w_target = mid;
    out.eps_opt = f_mid;
    out.feasible = false;
    out.fallback = true;
  }
  return out;
}

// The IW-Mid rule: weights pinned at interval midpoints, no optimization.
inline GroupSolution midpoint_solution(const GroupBinCounts& counts,
                                       const IwIntervals& intervals,
                                       const GaeConfig& cfg) {
  if (counts.group_source < 1 || counts.group_target < 1)
    throw EmptyGroupError("midpoint_solution: empty group");
  const detail::GroupProblem p = detail::make_problem(counts, intervals, cfg);
  std::vector<double> mid(p.B);
  for (int i = 0; i < p.B; ++i) mid[i] = 0.5 * (p.lo[i] + p.hi[i]);
  GroupSolution out;
  out.eps_opt = p.objective(mid, mid);
  out.feasible = p.prob_ok(mid, mid, 1e-6);
  out.w_source = mid;
  out.w_target = std::move(mid);
  out.fallback = false;
  return out;
}

// Tallies every group in one pass. `source_bins`/`target_bins` give each
// record's bin index; group vectors are 1-based group assignments.
inline std::vector<GroupBinCounts> count_all_groups(
    const Dataset& source, const Dataset& target, int B, int M,
    const std::vector<int>& source_bins, const std::vector<int>& target_bins,
    const std::vector<int>& source_groups, const std::vector<int>& target_groups,
    const std::vector<uint8_t>& source_correct) {
  std::vector<GroupBinCounts> out(M + 1);
  for (int g = 1; g <= M; ++g) {
    out[g].target_in_bin.assign(B, 0);
    out[g].correct_source_in_bin.assign(B, 0);
    out[g].source_in_bin.assign(B, 0);
    out[g].total_source = static_cast<long>(source.size());
    out[g].total_target = static_cast<long>(target.size());
  }
  for (std::size_t i = 0; i < source.size(); ++i) {
    GroupBinCounts& c = out[source_groups[i]];
    ++c.source_in_bin[source_bins[i]];
    ++c.group_source;
    if (source_correct[i]) ++c.correct_source_in_bin[source_bins[i]];
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    GroupBinCounts& c = out[target_groups[i]];
    ++c.target_in_bin[target_bins[i]];
    ++c.group_target;
  }
  return out;
}

enum class WeightMode { optimized, midpoint };

struct TemperatureSearch {
  double best_t = 1.0;
  double eps_sum = 0.0;
  std::map<int, GroupSolution> solutions;   // by group, at best_t
  std::vector<GroupBinCounts> counts;       // index 1..M, at best_t
  std::vector<int> source_groups;
  std::vector<int> target_groups;           // at best_t
  std::vector<std::pair<double, double>> eps_by_t;  // (t, eps sum) per grid entry
};

namespace detail {

inline std::vector<int> bins_from_assign(const BinPartition& partition,
                                         const Dataset& data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& r : data.records) {
    const auto it = partition.assign.find(r.sample_id);
    if (it == partition.assign.end())
      throw PipelineError("partition has no bin for sample '" + r.sample_id + "'");
    out.push_back(it->second);
  }
  return out;
}

}  // namespace detail

// Outer discrete temperature search. For each t in the (deduplicated) grid
// the target side is regrouped, every group passing the size thresholds is
// solved, and the t with the smallest total eps_opt wins; ties prefer
// |t - 1|, then the smaller t. Group solves are independent and may run on
// cfg.threads threads; results are reduced in fixed (t, group) order.
inline TemperatureSearch solve_all_groups(const Dataset& source,
                                          const Dataset& target,
                                          const BinPartition& partition,
                                          const IwIntervals& intervals,
                                          const GaeConfig& cfg,
                                          WeightMode mode = WeightMode::optimized) {
  if (source.records.empty() || target.records.empty())
    throw EmptyGroupError("solve_all_groups: empty dataset");

  std::vector<double> grid = cfg.temp_grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  const std::vector<int> src_bins = detail::bins_from_assign(partition, source);
  const std::vector<int> tgt_bins = detail::bins_from_assign(partition, target);
  const std::vector<int> src_groups = assign_groups_vec(source, cfg.M, 1.0);
  std::vector<uint8_t> src_correct;
  src_correct.reserve(source.size());
  for (const auto& r : source.records) {
    if (!r.label)
      throw MissingLabelsError("solve_all_groups: unlabeled source sample '" +
                               r.sample_id + "'");
    src_correct.push_back(is_correct(r) ? 1 : 0);
  }

  struct PerT {
    std::vector<int> tgt_groups;
    std::vector<GroupBinCounts> counts;
    std::vector<int> eligible;
    std::vector<GroupSolution> solved;  // aligned with eligible
  };
  std::vector<PerT> per_t(grid.size());
  struct Task {
    std::size_t t_idx;
    std::size_t slot;
    int group;
  };
  std::vector<Task> tasks;
  for (std::size_t ti = 0; ti < grid.size(); ++ti) {
    PerT& pt = per_t[ti];
    pt.tgt_groups = assign_groups_vec(target, cfg.M, grid[ti]);
    pt.counts = count_all_groups(source, target, partition.B, cfg.M, src_bins,
                                 tgt_bins, src_groups, pt.tgt_groups, src_correct);
    for (int g = 1; g <= cfg.M; ++g) {
      const GroupBinCounts& c = pt.counts[g];
      if (c.group_source >= cfg.min_group_count &&
          c.group_target >= cfg.min_group_count) {
        tasks.push_back({ti, pt.eligible.size(), g});
        pt.eligible.push_back(g);
      }
    }
    pt.solved.resize(pt.eligible.size());
  }

  parallel_for(tasks.size(), cfg.threads, [&](std::size_t k) {
    const Task& task = tasks[k];
    PerT& pt = per_t[task.t_idx];
    const GroupBinCounts& c = pt.counts[task.group];
    GroupSolution sol = mode == WeightMode::optimized
                            ? solve_group(c, intervals, cfg)
                            : midpoint_solution(c, intervals, cfg);
    sol.t = grid[task.t_idx];
    pt.solved[task.slot] = std::move(sol);
  });

  TemperatureSearch out;
  bool have_best = false;
  std::size_t best_idx = 0;
  double best_sum = 0.0;
  for (std::size_t ti = 0; ti < grid.size(); ++ti) {
    const PerT& pt = per_t[ti];
    if (pt.eligible.empty()) continue;
    double sum = 0.0;
    for (const GroupSolution& s : pt.solved) sum += s.eps_opt;
    out.eps_by_t.emplace_back(grid[ti], sum);
    const double dist = std::fabs(grid[ti] - 1.0);
    const double best_dist = std::fabs(grid[best_idx] - 1.0);
    if (!have_best || sum < best_sum ||
        (sum == best_sum &&
         (dist < best_dist || (dist == best_dist && grid[ti] < grid[best_idx])))) {
      have_best = true;
      best_idx = ti;
      best_sum = sum;
    }
  }
  if (!have_best)
    throw NoEligibleGroupsError("solve_all_groups: every group was skipped");

  PerT& bt = per_t[best_idx];
  out.best_t = grid[best_idx];
  out.eps_sum = best_sum;
  out.counts = std::move(bt.counts);
  out.source_groups = src_groups;
  out.target_groups = std::move(bt.tgt_groups);
  for (std::size_t k = 0; k < bt.eligible.size(); ++k)
    out.solutions.emplace(bt.eligible[k], std::move(bt.solved[k]));
  return out;
}

}  // namespace iwgae
