#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "iwgae/errors.hpp"
#include "iwgae/rng.hpp"
#include "iwgae/types.hpp"

namespace iwgae {

// Covariate-shifted classification problem with a closed-form density ratio:
// x ~ N(mu_domain, sigma^2 I), labels from a conditional shared by both
// domains (no concept shift), logits from a fixed linear classifier.
struct SyntheticSpec {
  int d = 2;
  int K = 4;
  std::vector<double> mu_source;          // size d
  std::vector<double> mu_target;          // size d
  double sigma = 1.0;
  std::vector<std::vector<double>> class_centers;  // K x d
  double noise = 0.1;                     // label-flip (uniform mixing) rate
  std::vector<std::vector<double>> classifier_w;   // K x d logit weights
  std::vector<double> classifier_b;                // size K
  long n_source = 1000;
  long n_target = 1000;
  std::uint64_t seed = 0;

  void validate() const {
    if (d < 1 || K < 2) throw PipelineError("synthetic: need d >= 1, K >= 2");
    if (!(sigma > 0.0)) throw PipelineError("synthetic: sigma must be positive");
    if (!(noise >= 0.0 && noise < 0.5))
      throw PipelineError("synthetic: noise must be in [0, 0.5)");
    const auto check_dim = [&](const std::vector<double>& v, const char* name) {
      if (static_cast<int>(v.size()) != d)
        throw PipelineError(std::string("synthetic: bad dimension for ") + name);
    };
    check_dim(mu_source, "mu_source");
    check_dim(mu_target, "mu_target");
    if (static_cast<int>(class_centers.size()) != K ||
        static_cast<int>(classifier_w.size()) != K ||
        static_cast<int>(classifier_b.size()) != K)
      throw PipelineError("synthetic: class arrays must have K entries");
    for (const auto& c : class_centers) check_dim(c, "class_centers");
    for (const auto& w : classifier_w) check_dim(w, "classifier_w");
    if (n_source < 1 || n_target < 1)
      throw PipelineError("synthetic: need at least one sample per domain");
  }
};

// Deterministic default geometry: source at the origin, target shifted along
// the first axis, class centers on a seeded sphere, classifier equal to the
// Bayes-aligned linear map scaled by `logit_scale` (1 = matched sharpness,
// larger = overconfident).
inline SyntheticSpec make_synthetic_spec(int d, int K, double shift, double sigma,
                                         double noise, long n_source, long n_target,
                                         std::uint64_t seed,
                                         double logit_scale = 1.0,
                                         double center_radius = 2.0) {
  SyntheticSpec spec;
  spec.d = d;
  spec.K = K;
  spec.sigma = sigma;
  spec.noise = noise;
  spec.n_source = n_source;
  spec.n_target = n_target;
  spec.seed = seed;
  spec.mu_source.assign(d, 0.0);
  spec.mu_target.assign(d, 0.0);
  spec.mu_target[0] = shift;

  Rng rng(mix_seed(seed, 0x67656f6dULL));
  spec.class_centers.resize(K);
  for (int k = 0; k < K; ++k) {
    std::vector<double> c(d);
    double norm = 0.0;
    for (int j = 0; j < d; ++j) {
      c[j] = rng.normal();
      norm += c[j] * c[j];
    }
    norm = std::sqrt(norm);
    // Centers straddle the shift axis so both domains see every class.
    for (int j = 0; j < d; ++j) c[j] = c[j] / norm * center_radius;
    c[0] += shift / 2.0;
    spec.class_centers[k] = std::move(c);
  }

  // Softmax over -||x - c_k||^2 is linear in x up to a shared term, so the
  // matched classifier has weights 2 c_k and bias -||c_k||^2.
  spec.classifier_w.resize(K);
  spec.classifier_b.resize(K);
  for (int k = 0; k < K; ++k) {
    spec.classifier_w[k].resize(d);
    double sq = 0.0;
    for (int j = 0; j < d; ++j) {
      spec.classifier_w[k][j] = 2.0 * spec.class_centers[k][j] * logit_scale;
      sq += spec.class_centers[k][j] * spec.class_centers[k][j];
    }
    spec.classifier_b[k] = -sq * logit_scale;
  }
  return spec;
}

// Ground-truth handle: everything downstream tests need to score the
// generated data (or fresh draws) exactly.
class SyntheticTruth {
 public:
  explicit SyntheticTruth(SyntheticSpec spec) : spec_(std::move(spec)) {}

  const SyntheticSpec& spec() const { return spec_; }

  // True density ratio p_T(x) / p_S(x) for shared isotropic covariance.
  double true_iw(std::span<const double> x) const {
    double ds = 0.0, dt = 0.0;
    for (int j = 0; j < spec_.d; ++j) {
      const double a = x[j] - spec_.mu_source[j];
      const double b = x[j] - spec_.mu_target[j];
      ds += a * a;
      dt += b * b;
    }
    return std::exp((ds - dt) / (2.0 * spec_.sigma * spec_.sigma));
  }

  // p(y = k | x): softmax over negative squared center distances, mixed with
  // uniform at the noise rate. Identical for both domains by construction.
  std::vector<double> conditional(std::span<const double> x) const {
    std::vector<double> logit(spec_.K);
    for (int k = 0; k < spec_.K; ++k) {
      double sq = 0.0;
      for (int j = 0; j < spec_.d; ++j) {
        const double diff = x[j] - spec_.class_centers[k][j];
        sq += diff * diff;
      }
      logit[k] = -sq;
    }
    std::vector<double> p = softmax(logit);
    for (double& v : p)
      v = (1.0 - spec_.noise) * v + spec_.noise / spec_.K;
    return p;
  }

  std::vector<double> model_logits(std::span<const double> x) const {
    std::vector<double> out(spec_.K);
    for (int k = 0; k < spec_.K; ++k) {
      double z = spec_.classifier_b[k];
      for (int j = 0; j < spec_.d; ++j) z += spec_.classifier_w[k][j] * x[j];
      out[k] = z;
    }
    return out;
  }

  // P(Y = model prediction | x), the exact per-sample correctness probability.
  double correct_prob(std::span<const double> x) const {
    const std::vector<double> logits = model_logits(x);
    return conditional(x)[predicted_class(logits)];
  }

  std::vector<double> draw_x(Domain domain, Rng& rng) const {
    const std::vector<double>& mu =
        domain == Domain::source ? spec_.mu_source : spec_.mu_target;
    std::vector<double> x(spec_.d);
    for (int j = 0; j < spec_.d; ++j) x[j] = rng.normal(mu[j], spec_.sigma);
    return x;
  }

 private:
  SyntheticSpec spec_;
};

struct SyntheticData {
  Dataset source;          // labeled, split = validation
  Dataset target;          // labels hidden, split = test
  std::vector<int> hidden_labels;     // realized labels of the target records
  std::vector<double> target_true_iw;
  std::vector<double> target_correct_prob;
  SyntheticTruth truth;
};

// Draws both domains from one seeded stream. The label sampler depends only
// on x, never on the domain tag.
inline SyntheticData generate(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticTruth truth(spec);
  Rng rng(mix_seed(spec.seed, 0x73796e7468ULL));

  const auto make_record = [&](Domain domain, long index) {
    PredictionRecord r;
    r.sample_id = std::string(domain == Domain::source ? "S" : "T") +
                  std::to_string(index);
    r.domain = domain;
    r.split = domain == Domain::source ? Split::validation : Split::test;
    r.features = truth.draw_x(domain, rng);
    r.logits = truth.model_logits(r.features);
    const std::vector<double> p = truth.conditional(r.features);
    r.label = rng.categorical(p);
    return r;
  };

  SyntheticData out{Dataset{}, Dataset{}, {}, {}, {}, truth};
  out.source.K = spec.K;
  out.source.d = spec.d;
  out.target.K = spec.K;
  out.target.d = spec.d;
  for (long i = 0; i < spec.n_source; ++i)
    out.source.records.push_back(make_record(Domain::source, i));
  for (long i = 0; i < spec.n_target; ++i) {
    PredictionRecord r = make_record(Domain::target, i);
    out.hidden_labels.push_back(*r.label);
    out.target_true_iw.push_back(truth.true_iw(r.features));
    out.target_correct_prob.push_back(truth.correct_prob(r.features));
    r.label.reset();
    out.target.records.push_back(std::move(r));
  }
  out.source.validate();
  out.target.validate();
  return out;
}

// Mean true correctness probability over a set of target record indices.
inline double oracle_group_accuracy(const SyntheticData& data,
                                    std::span<const std::size_t> indices) {
  if (indices.empty())
    throw EmptyGroupError("oracle_group_accuracy: empty sample set");
  double sum = 0.0;
  for (std::size_t i : indices) sum += data.target_correct_prob[i];
  return sum / static_cast<double>(indices.size());
}

}  // namespace iwgae
