#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "iwgae/errors.hpp"
#include "iwgae/log.hpp"
#include "iwgae/rng.hpp"
#include "iwgae/types.hpp"

namespace iwgae {

// Linear logistic model separating source (d=0) from target (d=1) samples.
// Its IW score is what orders samples into bins; a constant factor on the
// score therefore never changes the binning, only the raw per-sample weights
// handed to the IW baselines.
struct DomainClassifier {
  std::vector<double> weights;
  double bias = 0.0;
  double class_prior_ratio = 1.0;  // N_T / N_S from the original datasets
  double l2_penalty = 1.0;

  int dim() const { return static_cast<int>(weights.size()); }

  double linear_term(std::span<const double> x) const {
    double z = bias;
    for (int j = 0; j < dim(); ++j) z += weights[j] * x[j];
    return z;
  }
};

// Density-ratio score: prior ratio times the posterior odds of target
// membership. The linear term is clamped to +-30 so the score is always
// finite; downstream use clips IWs to [w_min, w_max] anyway.
inline double iw_score(const DomainClassifier& clf, std::span<const double> x) {
  const double z = std::clamp(clf.linear_term(x), -30.0, 30.0);
  return clf.class_prior_ratio * std::exp(z);
}

namespace detail {

// Damped Newton on the L2-regularized logistic loss
//   sum_i [log(1 + e^{eta_i}) - y_i eta_i] + (l2/2) ||w||^2
// (bias unregularized). Runs until the gradient norm drops below 1e-6.
inline void fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         double l2, Eigen::VectorXd& w, double& b) {
  const long n = X.rows(), d = X.cols();
  w = Eigen::VectorXd::Zero(d);
  b = 0.0;
  constexpr int kMaxIter = 100;
  constexpr double kGradTol = 1e-6;

  const auto loss_at = [&](const Eigen::VectorXd& wv, double bv) {
    const Eigen::VectorXd eta = X * wv + Eigen::VectorXd::Constant(n, bv);
    double loss = 0.5 * l2 * wv.squaredNorm();
    for (long i = 0; i < n; ++i) {
      const double e = eta[i];
      // log(1 + exp(e)) without overflow
      loss += (e > 0.0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e))) -
              y[i] * e;
    }
    return loss;
  };

  double loss = loss_at(w, b);
  for (int it = 0; it < kMaxIter; ++it) {
    const Eigen::VectorXd eta = X * w + Eigen::VectorXd::Constant(n, b);
    Eigen::VectorXd p(n), r(n);
    for (long i = 0; i < n; ++i) {
      p[i] = 1.0 / (1.0 + std::exp(-eta[i]));
      r[i] = p[i] - y[i];
    }
    Eigen::VectorXd grad(d + 1);
    grad.head(d) = X.transpose() * r + l2 * w;
    grad[d] = r.sum();
    if (grad.norm() <= kGradTol) return;

    Eigen::VectorXd s(n);
    for (long i = 0; i < n; ++i) s[i] = std::max(p[i] * (1.0 - p[i]), 1e-12);
    Eigen::MatrixXd H(d + 1, d + 1);
    const Eigen::MatrixXd Xs = s.asDiagonal() * X;
    H.topLeftCorner(d, d) = X.transpose() * Xs;
    H.topLeftCorner(d, d).diagonal().array() += l2;
    H.topRightCorner(d, 1) = Xs.colwise().sum().transpose();
    H.bottomLeftCorner(1, d) = Xs.colwise().sum();
    H(d, d) = s.sum();

    const Eigen::VectorXd step = H.ldlt().solve(grad);
    // Accept within rounding noise of the loss; near the optimum the true
    // decrease of a full Newton step drops below the sum-loss resolution.
    const double slack = 1e-12 * (std::fabs(loss) + 1.0);
    double scale = 1.0;
    for (int half = 0; half < 40; ++half) {
      const Eigen::VectorXd w_new = w - scale * step.head(d);
      const double b_new = b - scale * step[d];
      const double loss_new = loss_at(w_new, b_new);
      if (loss_new <= loss + slack) {
        w = w_new;
        b = b_new;
        loss = loss_new;
        break;
      }
      scale *= 0.5;
    }
  }
  log::warn("fit_logistic: gradient tolerance not reached within iteration cap");
}

}  // namespace detail

// Fits the domain classifier on features. The smaller domain is resampled
// with replacement (seeded) so both domains contribute equally many rows.
inline DomainClassifier fit_domain_classifier(const Dataset& source,
                                              const Dataset& target,
                                              double l2_penalty,
                                              std::uint64_t seed) {
  if (!source.has_features() || !target.has_features())
    throw MissingFeaturesError("fit_domain_classifier: both datasets need features");
  if (source.d != target.d)
    throw DegenerateError("fit_domain_classifier: feature dims differ");
  const int d = source.d;
  if (d == 0) throw DegenerateError("fit_domain_classifier: d = 0");

  const long n_src = static_cast<long>(source.size());
  const long n_tgt = static_cast<long>(target.size());
  const long n_each = std::max(n_src, n_tgt);

  Rng rng(mix_seed(seed, 0x646f6d636cULL));
  const auto resample = [&](const Dataset& ds, long want) {
    std::vector<const PredictionRecord*> rows;
    rows.reserve(want);
    const long have = static_cast<long>(ds.size());
    if (have == want) {
      for (const auto& r : ds.records) rows.push_back(&r);
    } else {
      for (long i = 0; i < want; ++i)
        rows.push_back(&ds.records[rng.bounded(have)]);
    }
    return rows;
  };
  const auto src_rows = resample(source, n_each);
  const auto tgt_rows = resample(target, n_each);

  Eigen::MatrixXd X(2 * n_each, d);
  Eigen::VectorXd y(2 * n_each);
  for (long i = 0; i < n_each; ++i) {
    for (int j = 0; j < d; ++j) X(i, j) = src_rows[i]->features[j];
    y[i] = 0.0;
  }
  for (long i = 0; i < n_each; ++i) {
    for (int j = 0; j < d; ++j) X(n_each + i, j) = tgt_rows[i]->features[j];
    y[n_each + i] = 1.0;
  }

  Eigen::VectorXd w;
  double b = 0.0;
  detail::fit_logistic(X, y, l2_penalty, w, b);

  DomainClassifier clf;
  clf.weights.assign(w.data(), w.data() + d);
  clf.bias = b;
  clf.class_prior_ratio = static_cast<double>(n_tgt) / static_cast<double>(n_src);
  clf.l2_penalty = l2_penalty;
  return clf;
}

// IW scores for every record: the precomputed column when present, the
// fitted classifier otherwise.
inline std::vector<double> score_dataset(const Dataset& data,
                                         const DomainClassifier* clf) {
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& r : data.records) {
    if (r.iw_score)
      out.push_back(*r.iw_score);
    else if (clf)
      out.push_back(iw_score(*clf, r.features));
    else
      throw MissingFeaturesError("score_dataset: no iw_score column and no classifier");
  }
  return out;
}

// Quantile binning over the pooled score distribution. Duplicate or leading
// edges are merged, so the returned partition may have fewer than B bins
// (logged as a degenerate-bins warning); every bin holds at least one pooled
// sample.
inline BinPartition build_bins(const std::vector<double>& scores_source,
                               const std::vector<double>& scores_target, int B,
                               const std::vector<std::string>* source_ids = nullptr,
                               const std::vector<std::string>* target_ids = nullptr) {
  if (B < 2) throw PipelineError("build_bins: B must be >= 2");
  std::vector<double> pooled;
  pooled.reserve(scores_source.size() + scores_target.size());
  pooled.insert(pooled.end(), scores_source.begin(), scores_source.end());
  pooled.insert(pooled.end(), scores_target.begin(), scores_target.end());
  const long n = static_cast<long>(pooled.size());
  if (n < B) throw PipelineError("build_bins: fewer pooled samples than bins");
  std::sort(pooled.begin(), pooled.end());

  std::vector<double> edges;
  for (int k = 1; k < B; ++k) edges.push_back(pooled[(static_cast<long>(k) * n) / B]);
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  while (!edges.empty() && edges.front() <= pooled.front()) edges.erase(edges.begin());

  BinPartition part;
  part.edges = std::move(edges);
  part.B = static_cast<int>(part.edges.size()) + 1;
  if (part.B < B)
    log::warn("build_bins: degenerate bins, " + std::to_string(part.B) +
              " effective of " + std::to_string(B) + " requested");

  const auto add_assignments = [&](const std::vector<std::string>* ids,
                                   const std::vector<double>& scores) {
    if (!ids) return;
    for (std::size_t i = 0; i < ids->size(); ++i)
      part.assign[(*ids)[i]] = part.bin_of_score(scores[i]);
  };
  add_assignments(source_ids, scores_source);
  add_assignments(target_ids, scores_target);
  return part;
}

}  // namespace iwgae
