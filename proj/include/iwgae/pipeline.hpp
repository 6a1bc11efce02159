#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "iwgae/ci.hpp"
#include "iwgae/domain_classifier.hpp"
#include "iwgae/errors.hpp"
#include "iwgae/estimators.hpp"
#include "iwgae/grouping.hpp"
#include "iwgae/optimizer.hpp"
#include "iwgae/types.hpp"

namespace iwgae {

// End-to-end state of one IW-GAE (or IW-Mid) run over a labeled source
// validation set and an unlabeled target set.
struct Pipeline {
  std::optional<DomainClassifier> classifier;  // absent with precomputed scores
  std::vector<double> source_scores;
  std::vector<double> target_scores;
  BinPartition partition;
  IwIntervals intervals;
  TemperatureSearch search;
  std::vector<GroupAccuracyEstimate> estimates;  // index 1..M
  CalibrationResult calibration;

  std::vector<int> target_bins() const {
    std::vector<int> out;
    out.reserve(target_scores.size());
    for (double s : target_scores) out.push_back(partition.bin_of_score(s));
    return out;
  }
  // Per-sample IWs for the IW baselines: raw scores clipped to the IW box.
  std::vector<double> clipped_weights(const std::vector<double>& scores,
                                      const GaeConfig& cfg) const {
    std::vector<double> out;
    out.reserve(scores.size());
    for (double s : scores) out.push_back(std::clamp(s, cfg.w_min, cfg.w_max));
    return out;
  }
};

// IW scoring shared by every pipeline mode: the precomputed iw_score column
// when both sides carry one, a freshly fitted domain classifier otherwise.
struct ScoredPair {
  std::optional<DomainClassifier> classifier;
  std::vector<double> source_scores;
  std::vector<double> target_scores;
};

inline ScoredPair score_pair(const Dataset& source_val, const Dataset& target,
                             const GaeConfig& cfg) {
  ScoredPair s;
  if (source_val.has_iw_scores() && target.has_iw_scores()) {
    s.source_scores = score_dataset(source_val, nullptr);
    s.target_scores = score_dataset(target, nullptr);
  } else {
    if (!source_val.has_features() || !target.has_features())
      throw MissingFeaturesError(
          "pipeline: need features (or a precomputed iw_score column on both sides)");
    s.classifier =
        fit_domain_classifier(source_val, target, cfg.l2_penalty, cfg.seed);
    s.source_scores = score_dataset(source_val, &*s.classifier);
    s.target_scores = score_dataset(target, &*s.classifier);
  }
  return s;
}

// Builds bins and intervals from precomputed scores, runs the temperature
// search and per-group solves, and assigns confidences.
inline Pipeline run_pipeline_scored(const Dataset& source_val,
                                    const Dataset& target, const GaeConfig& cfg,
                                    WeightMode mode, ScoredPair scored) {
  cfg.validate();
  source_val.validate();
  target.validate();
  if (!source_val.fully_labeled())
    throw MissingLabelsError("pipeline: source validation must be labeled");

  Pipeline p;
  p.classifier = std::move(scored.classifier);
  p.source_scores = std::move(scored.source_scores);
  p.target_scores = std::move(scored.target_scores);

  std::vector<std::string> src_ids, tgt_ids;
  src_ids.reserve(source_val.size());
  tgt_ids.reserve(target.size());
  for (const auto& r : source_val.records) src_ids.push_back(r.sample_id);
  for (const auto& r : target.records) tgt_ids.push_back(r.sample_id);
  p.partition =
      build_bins(p.source_scores, p.target_scores, cfg.B, &src_ids, &tgt_ids);
  p.intervals = make_iw_intervals(p.partition, source_val, target,
                                  p.source_scores, p.target_scores, cfg);
  p.search = solve_all_groups(source_val, target, p.partition, p.intervals, cfg, mode);
  p.estimates = group_estimates(p.search.counts, p.search.solutions, cfg.M);
  p.calibration = calibrate(target, p.search.target_groups, p.estimates);
  return p;
}

inline Pipeline run_pipeline(const Dataset& source_val, const Dataset& target,
                             const GaeConfig& cfg,
                             WeightMode mode = WeightMode::optimized) {
  return run_pipeline_scored(source_val, target, cfg, mode,
                             score_pair(source_val, target, cfg));
}

}  // namespace iwgae
