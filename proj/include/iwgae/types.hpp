#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "iwgae/errors.hpp"

namespace iwgae {

enum class Domain { source, target };
enum class Split { train, validation, test };

inline const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }
inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    default: return "test";
  }
}

// One sample's model outputs. `features` is the representation the domain
// classifier operates on; it may be empty when a precomputed iw_score is
// carried instead.
struct PredictionRecord {
  std::string sample_id;
  Domain domain = Domain::source;
  Split split = Split::test;
  std::optional<int> label;
  std::vector<double> logits;
  std::vector<double> features;
  std::optional<double> iw_score;
};

struct Dataset {
  std::vector<PredictionRecord> records;
  int K = 0;  // class count
  int d = 0;  // feature dimension, 0 if absent

  std::size_t size() const { return records.size(); }
  bool has_features() const { return d > 0; }
  bool has_iw_scores() const {
    return !records.empty() && records.front().iw_score.has_value();
  }
  bool fully_labeled() const {
    return std::all_of(records.begin(), records.end(),
                       [](const PredictionRecord& r) { return r.label.has_value(); });
  }

  // Enforces: nonempty, homogeneous K and d, finite logits, labels in [0, K).
  void validate() const {
    if (records.empty()) throw SchemaError("dataset is empty");
    if (K < 2) throw SchemaError("dataset needs K >= 2 classes");
    for (const auto& r : records) {
      if (static_cast<int>(r.logits.size()) != K)
        throw SchemaError("record '" + r.sample_id + "': logit count != K");
      for (double v : r.logits)
        if (!std::isfinite(v))
          throw SchemaError("record '" + r.sample_id + "': non-finite logit");
      if (static_cast<int>(r.features.size()) != d)
        throw SchemaError("record '" + r.sample_id + "': feature dim != d");
      if (r.label && (*r.label < 0 || *r.label >= K))
        throw SchemaError("record '" + r.sample_id + "': label out of [0, K)");
    }
  }
};

// Piecewise partition of the IW-score axis. `edges` are strictly increasing
// thresholds; bin(x) counts edges <= score(x), so bin i covers
// [edges[i-1], edges[i]).
struct BinPartition {
  int B = 0;
  std::vector<double> edges;
  std::unordered_map<std::string, int> assign;

  int bin_of_score(double score) const {
    return static_cast<int>(std::upper_bound(edges.begin(), edges.end(), score) -
                            edges.begin());
  }
};

struct GaeConfig {
  int B = 10;                  // IW bins
  int M = 10;                  // accuracy groups
  double delta_bar = 0.05;     // CI level per side per bin
  double G = 1e-3;             // within-bin density variation constant
  double w_max = 6.0;          // IW cap
  double w_min = 1.0 / 6.0;    // IW floor
  double delta_tol = 0.1;      // source/target weight coupling slack
  double delta_prob = 0.3;     // probability constraint slack
  std::vector<double> temp_grid = {0.85, 0.90, 0.95, 1.00, 1.05, 1.10};
  double opt_tol = 1e-8;       // solver convergence tolerance
  int ece_bins = 15;
  std::uint64_t seed = 0;
  int min_group_count = 5;     // groups below this (either domain) are skipped
  double l2_penalty = 1.0;     // domain classifier regularization
  bool union_bound = false;    // divide delta_bar by 2B before CI lookups
  int threads = 1;

  void validate() const {
    if (B < 2) throw SchemaError("config: B must be >= 2");
    if (M < 2) throw SchemaError("config: M must be >= 2");
    if (!(delta_bar > 0.0 && delta_bar < 1.0))
      throw SchemaError("config: delta_bar must be in (0, 1)");
    if (!(G >= 0.0)) throw SchemaError("config: G must be >= 0");
    if (!(w_min > 0.0 && w_min < w_max))
      throw SchemaError("config: need 0 < w_min < w_max");
    if (temp_grid.empty()) throw SchemaError("config: temp_grid must be nonempty");
    for (double t : temp_grid)
      if (!(t > 0.0)) throw SchemaError("config: temperatures must be positive");
    if (!(delta_tol >= 0.0 && delta_prob >= 0.0))
      throw SchemaError("config: slacks must be >= 0");
    if (!(opt_tol > 0.0)) throw SchemaError("config: opt_tol must be positive");
    if (ece_bins < 1) throw SchemaError("config: ece_bins must be >= 1");
    if (min_group_count < 1) throw SchemaError("config: min_group_count must be >= 1");
    if (threads < 1) throw SchemaError("config: threads must be >= 1");
  }
};

// Numerically stable softmax of logits / t.
inline std::vector<double> softmax(std::span<const double> logits, double t = 1.0) {
  std::vector<double> out(logits.size());
  const double hi = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp((logits[k] - hi) / t);
    z += out[k];
  }
  for (double& v : out) v /= z;
  return out;
}

// Lowest index wins ties, so predictions are order-independent.
inline int predicted_class(std::span<const double> logits) {
  int arg = 0;
  for (std::size_t k = 1; k < logits.size(); ++k)
    if (logits[k] > logits[arg]) arg = static_cast<int>(k);
  return arg;
}

struct SoftmaxMax {
  double confidence = 0.0;
  int predicted_class = 0;
};

// Max softmax at temperature t. The argmax is taken on raw logits: the
// temperature rescales confidence, never the prediction.
inline SoftmaxMax softmax_max(const PredictionRecord& record, double t = 1.0) {
  if (!(t > 0.0)) throw PipelineError("softmax_max: temperature must be positive");
  const int arg = predicted_class(record.logits);
  const std::vector<double> probs = softmax(record.logits, t);
  return {probs[arg], arg};
}

inline bool is_correct(const PredictionRecord& r) {
  return r.label && *r.label == predicted_class(r.logits);
}

}  // namespace iwgae
