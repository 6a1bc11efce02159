// Command-line front end: ingestion -> pipeline -> CSV reports.
//
// Subcommands: synth, calibrate, select, evaluate, diagnose.
// Exit codes: 0 success, 2 schema/validation error, 3 pipeline failure.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "iwgae/csv.hpp"
#include "iwgae/errors.hpp"
#include "iwgae/estimators.hpp"
#include "iwgae/io.hpp"
#include "iwgae/log.hpp"
#include "iwgae/manifest.hpp"
#include "iwgae/pipeline.hpp"
#include "iwgae/synthetic.hpp"
#include "iwgae/version.hpp"

namespace fs = std::filesystem;
using namespace iwgae;

namespace {

// Config resolution: defaults, then --config file values, then explicit CLI
// flags (flags win).
struct ConfigCli {
  std::string config_path;
  GaeConfig staged;
  std::string temp_grid_csv;
  CLI::Option* opts[14] = {};
  CLI::Option* temp_opt = nullptr;
  CLI::Option* union_opt = nullptr;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value config file");
    int i = 0;
    opts[i++] = cmd->add_option("--B", staged.B, "IW bins");
    opts[i++] = cmd->add_option("--M", staged.M, "accuracy groups");
    opts[i++] = cmd->add_option("--delta_bar", staged.delta_bar, "CI level per side");
    opts[i++] = cmd->add_option("--G", staged.G, "density variation constant");
    opts[i++] = cmd->add_option("--w_max", staged.w_max, "IW cap");
    opts[i++] = cmd->add_option("--w_min", staged.w_min, "IW floor");
    opts[i++] = cmd->add_option("--delta_tol", staged.delta_tol, "coupling slack");
    opts[i++] = cmd->add_option("--delta_prob", staged.delta_prob,
                                "probability constraint slack");
    opts[i++] = cmd->add_option("--opt_tol", staged.opt_tol, "solver tolerance");
    opts[i++] = cmd->add_option("--ece_bins", staged.ece_bins, "ECE bins");
    opts[i++] = cmd->add_option("--seed", staged.seed, "RNG seed");
    opts[i++] = cmd->add_option("--min_group_count", staged.min_group_count,
                                "skip groups smaller than this");
    opts[i++] = cmd->add_option("--l2_penalty", staged.l2_penalty,
                                "domain classifier L2 penalty");
    opts[i++] = cmd->add_option("--threads", staged.threads, "worker threads");
    temp_opt = cmd->add_option("--temp_grid", temp_grid_csv,
                               "comma-separated temperature grid");
    union_opt = cmd->add_flag("--union-bound", staged.union_bound,
                              "apply the union-bound CI correction");
  }

  GaeConfig resolve() const {
    GaeConfig cfg;
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    const auto apply = [&](int idx, auto member) {
      if (opts[idx]->count()) cfg.*member = staged.*member;
    };
    apply(0, &GaeConfig::B);
    apply(1, &GaeConfig::M);
    apply(2, &GaeConfig::delta_bar);
    apply(3, &GaeConfig::G);
    apply(4, &GaeConfig::w_max);
    apply(5, &GaeConfig::w_min);
    apply(6, &GaeConfig::delta_tol);
    apply(7, &GaeConfig::delta_prob);
    apply(8, &GaeConfig::opt_tol);
    apply(9, &GaeConfig::ece_bins);
    apply(10, &GaeConfig::seed);
    apply(11, &GaeConfig::min_group_count);
    apply(12, &GaeConfig::l2_penalty);
    apply(13, &GaeConfig::threads);
    if (temp_opt->count()) {
      std::vector<double> grid;
      std::size_t start = 0;
      while (start <= temp_grid_csv.size()) {
        std::size_t pos = temp_grid_csv.find(',', start);
        if (pos == std::string::npos) pos = temp_grid_csv.size();
        grid.push_back(std::stod(temp_grid_csv.substr(start, pos - start)));
        start = pos + 1;
      }
      cfg.temp_grid = std::move(grid);
    }
    if (union_opt->count()) cfg.union_bound = true;
    cfg.validate();
    return cfg;
  }
};

std::set<std::string> parse_methods(const std::string& value,
                                    const std::vector<std::string>& known) {
  std::set<std::string> out;
  if (value.empty()) {
    out.insert(known.begin(), known.end());
    return out;
  }
  const auto canon = [&](std::string item) -> std::string {
    for (char& c : item) c = static_cast<char>(std::tolower(c));
    for (const std::string& k : known) {
      std::string lk = k;
      for (char& c : lk) c = static_cast<char>(std::tolower(c));
      if (lk == item) return k;
    }
    throw SchemaError("unknown method '" + item + "'");
  };
  std::size_t start = 0;
  while (start <= value.size()) {
    std::size_t pos = value.find(',', start);
    if (pos == std::string::npos) pos = value.size();
    out.insert(canon(value.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

void require_domain(const Dataset& ds, Domain d, const std::string& path) {
  for (const auto& r : ds.records)
    if (r.domain != d)
      throw SchemaError(path + ": expected only " + std::string(to_string(d)) +
                        " records, found '" + r.sample_id + "'");
}

Dataset load_side(const std::string& pred_path, const std::string& feat_path,
                  Domain domain) {
  Dataset ds = load_predictions(pred_path);
  require_domain(ds, domain, pred_path);
  if (!feat_path.empty()) load_features(ds, feat_path);
  return ds;
}

std::string join_args(int argc, char** argv) {
  std::string out;
  for (int i = 0; i < argc; ++i) {
    if (i) out += ' ';
    out += argv[i];
  }
  return out;
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
  }
};

void write_confidence_rows(csv::Writer& w, const std::string& method,
                           const Dataset& target,
                           const std::vector<double>& conf,
                           const std::vector<uint8_t>* fallback) {
  for (std::size_t i = 0; i < target.size(); ++i)
    w.row({target.records[i].sample_id, method, csv::format_double(conf[i]),
           fallback && (*fallback)[i] ? "1" : "0"});
}

void write_reliability_rows(csv::Writer& w, const std::string& method,
                            const std::vector<double>& conf,
                            const std::vector<uint8_t>* correct, int m) {
  if (correct) {
    const CalibrationReport rep = ece(conf, *correct, m);
    for (int b = 0; b < m; ++b)
      w.row({method, std::to_string(b + 1), std::to_string(rep.bins[b].count),
             csv::format_double(rep.bins[b].mean_confidence),
             csv::format_double(rep.bins[b].mean_accuracy)});
    return;
  }
  // Unlabeled target: bin occupancy and mean confidence only.
  std::vector<long> count(m, 0);
  std::vector<double> sum(m, 0.0);
  for (double c : conf) {
    const int b = std::clamp(static_cast<int>(std::floor(c * m)), 0, m - 1);
    ++count[b];
    sum[b] += c;
  }
  for (int b = 0; b < m; ++b)
    w.row({method, std::to_string(b + 1), std::to_string(count[b]),
           csv::format_double(count[b] ? sum[b] / count[b] : 0.0), ""});
}

// ---------------------------------------------------------------------------

int cmd_synth(const GaeConfig& cfg, const std::string& out_dir, int d, int K,
              double shift, double sigma, double noise, long n_source,
              long n_target, double logit_scale, double plant_temperature,
              const std::string& command) {
  Timer timer;
  RunManifest manifest;
  manifest.command = command;
  manifest.config = cfg;
  manifest.seed = cfg.seed;
  manifest.started_at = iso_timestamp_now();

  SyntheticSpec spec = make_synthetic_spec(d, K, shift, sigma, noise, n_source,
                                           n_target, cfg.seed, logit_scale);
  SyntheticData data = generate(spec);
  if (plant_temperature != 1.0) {
    // Emulates a target-side confidence scale mismatch: dividing logits by t
    // leaves predictions (and hence the truth table) unchanged.
    for (auto& r : data.target.records)
      for (double& v : r.logits) v /= plant_temperature;
  }

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  save_predictions(data.source, (dir / "source_val.csv").string());
  save_predictions(data.target, (dir / "target.csv").string());
  Dataset labeled = data.target;
  for (std::size_t i = 0; i < labeled.size(); ++i)
    labeled.records[i].label = data.hidden_labels[i];
  save_predictions(labeled, (dir / "target_labeled.csv").string());
  save_features(data.source, (dir / "source_val_features.csv").string());
  save_features(data.target, (dir / "target_features.csv").string());
  std::vector<std::string> ids;
  ids.reserve(data.target.size());
  for (const auto& r : data.target.records) ids.push_back(r.sample_id);
  save_truth((dir / "truth.csv").string(), ids, data.target_true_iw,
             data.target_correct_prob);

  manifest.wall_seconds = timer.seconds();
  write_manifest(manifest, dir);
  std::cout << "synth: wrote " << data.source.size() << " source / "
            << data.target.size() << " target samples to " << out_dir << "\n";
  return 0;
}

int cmd_calibrate(const GaeConfig& cfg, const std::string& source_path,
                  const std::string& target_path, const std::string& source_feat,
                  const std::string& target_feat, const std::string& methods_csv,
                  const std::string& out_dir, const std::string& command) {
  Timer timer;
  const std::vector<std::string> known = {"IW-GAE", "IW-Mid", "Vanilla",
                                          "TS",     "IW-TS",  "CPCS"};
  const std::set<std::string> methods = parse_methods(methods_csv, known);

  RunManifest manifest;
  manifest.command = command;
  manifest.config = cfg;
  manifest.seed = cfg.seed;
  manifest.started_at = iso_timestamp_now();
  manifest.hash_input(source_path);
  manifest.hash_input(target_path);
  if (!source_feat.empty()) manifest.hash_input(source_feat);
  if (!target_feat.empty()) manifest.hash_input(target_feat);

  Dataset source = load_side(source_path, source_feat, Domain::source);
  Dataset target = load_side(target_path, target_feat, Domain::target);
  if (!source.fully_labeled())
    throw MissingLabelsError(source_path + ": source validation must be labeled");

  const bool need_scores = methods.count("IW-GAE") || methods.count("IW-Mid") ||
                           methods.count("IW-TS") || methods.count("CPCS");
  std::optional<ScoredPair> scored;
  if (need_scores) scored = score_pair(source, target, cfg);

  // method -> (confidences, fallback flags or nullptr)
  std::vector<std::pair<std::string, std::pair<std::vector<double>,
                                               std::optional<std::vector<uint8_t>>>>>
      results;
  std::optional<Pipeline> gae;
  if (methods.count("IW-GAE")) {
    gae = run_pipeline_scored(source, target, cfg, WeightMode::optimized, *scored);
    results.push_back({"IW-GAE", {gae->calibration.confidence,
                                  std::vector<uint8_t>(gae->calibration.fallback)}});
  }
  if (methods.count("IW-Mid")) {
    Pipeline mid =
        run_pipeline_scored(source, target, cfg, WeightMode::midpoint, *scored);
    results.push_back({"IW-Mid", {mid.calibration.confidence,
                                  std::vector<uint8_t>(mid.calibration.fallback)}});
  }
  if (methods.count("Vanilla"))
    results.push_back({"Vanilla", {baseline_vanilla(target), std::nullopt}});
  if (methods.count("TS"))
    results.push_back({"TS", {baseline_ts(source, target), std::nullopt}});
  if (methods.count("IW-TS") || methods.count("CPCS")) {
    std::vector<double> weights;
    weights.reserve(scored->source_scores.size());
    for (double s : scored->source_scores)
      weights.push_back(std::clamp(s, cfg.w_min, cfg.w_max));
    if (methods.count("IW-TS"))
      results.push_back({"IW-TS", {baseline_iwts(source, target, weights),
                                   std::nullopt}});
    if (methods.count("CPCS"))
      results.push_back({"CPCS", {baseline_cpcs(source, target, weights),
                                  std::nullopt}});
  }
  // Canonical row order regardless of computation order above.
  std::stable_sort(results.begin(), results.end(),
                   [&](const auto& a, const auto& b) {
                     const auto pos = [&](const std::string& m) {
                       return std::find(known.begin(), known.end(), m) - known.begin();
                     };
                     return pos(a.first) < pos(b.first);
                   });

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  {
    csv::Writer w((dir / "confidences.csv").string());
    w.row({"sample_id", "method", "confidence", "fallback"});
    for (const auto& [method, payload] : results)
      write_confidence_rows(w, method, target, payload.first,
                            payload.second ? &*payload.second : nullptr);
  }
  {
    std::optional<std::vector<uint8_t>> correct;
    if (target.fully_labeled()) {
      correct.emplace();
      correct->reserve(target.size());
      for (const auto& r : target.records)
        correct->push_back(is_correct(r) ? 1 : 0);
    }
    csv::Writer w((dir / "reliability.csv").string());
    w.row({"method", "bin", "count", "conf", "acc"});
    for (const auto& [method, payload] : results)
      write_reliability_rows(w, method, payload.first,
                             correct ? &*correct : nullptr, cfg.ece_bins);
  }
  if (gae)
    std::cout << "calibrate: selected t = " << gae->search.best_t << ", solved "
              << gae->search.solutions.size() << " of " << cfg.M << " groups\n";

  manifest.wall_seconds = timer.seconds();
  write_manifest(manifest, dir);
  return 0;
}

int cmd_select(const GaeConfig& cfg, const std::string& models_path,
               const std::string& methods_csv, const std::string& out_dir,
               const std::string& command) {
  Timer timer;
  const std::vector<std::string> known = {"IW-GAE", "IW-Mid", "IWCV", "Vanilla"};
  const std::set<std::string> methods = parse_methods(methods_csv, known);

  RunManifest manifest;
  manifest.command = command;
  manifest.config = cfg;
  manifest.seed = cfg.seed;
  manifest.started_at = iso_timestamp_now();
  manifest.hash_input(models_path);

  const csv::Table table = csv::read_table(models_path);
  const int id_col = table.column("model_id");
  const int src_col = table.column("source");
  const int tgt_col = table.column("target");
  const int sf_col = table.column("source_features");
  const int tf_col = table.column("target_features");
  if (id_col < 0 || src_col < 0 || tgt_col < 0)
    throw SchemaError(models_path + ": header needs model_id,source,target");
  const fs::path base = fs::path(models_path).parent_path();
  const auto resolve = [&](const std::string& p) {
    if (p.empty()) return std::string();
    const fs::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };

  struct ModelResult {
    std::string id;
    std::map<std::string, double> scores;
    bool ok = false;
  };
  std::vector<ModelResult> models;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    ModelResult m;
    m.id = table.rows[i][id_col];
    try {
      Dataset source = load_side(resolve(table.rows[i][src_col]),
                                 sf_col >= 0 ? resolve(table.rows[i][sf_col]) : "",
                                 Domain::source);
      Dataset target = load_side(resolve(table.rows[i][tgt_col]),
                                 tf_col >= 0 ? resolve(table.rows[i][tf_col]) : "",
                                 Domain::target);
      if (!source.fully_labeled())
        throw MissingLabelsError("model '" + m.id + "': unlabeled source");
      const ScoredPair scored = score_pair(source, target, cfg);
      if (methods.count("IW-GAE")) {
        Pipeline p = run_pipeline_scored(source, target, cfg,
                                         WeightMode::optimized, scored);
        m.scores["IW-GAE"] = selection_score(p.estimates);
      }
      if (methods.count("IW-Mid")) {
        Pipeline p = run_pipeline_scored(source, target, cfg,
                                         WeightMode::midpoint, scored);
        m.scores["IW-Mid"] = selection_score(p.estimates);
      }
      if (methods.count("IWCV")) {
        std::vector<double> weights;
        weights.reserve(scored.source_scores.size());
        for (double s : scored.source_scores)
          weights.push_back(std::clamp(s, cfg.w_min, cfg.w_max));
        m.scores["IWCV"] = baseline_iwcv(source, weights);
      }
      if (methods.count("Vanilla")) {
        long correct = 0;
        for (const auto& r : source.records)
          if (is_correct(r)) ++correct;
        m.scores["Vanilla"] =
            static_cast<double>(correct) / static_cast<double>(source.size());
      }
      m.ok = true;
    } catch (const std::exception& e) {
      log::warn("select: model '" + m.id + "' failed: " + e.what());
    }
    models.push_back(std::move(m));
  }

  long ranked_models = 0;
  for (const auto& m : models)
    if (m.ok) ++ranked_models;

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  {
    csv::Writer w((dir / "ranking.csv").string());
    w.row({"model_id", "method", "score", "rank"});
    for (const std::string& method : known) {
      if (!methods.count(method)) continue;
      std::vector<const ModelResult*> ok_models;
      for (const auto& m : models)
        if (m.ok) ok_models.push_back(&m);
      std::stable_sort(ok_models.begin(), ok_models.end(),
                       [&](const ModelResult* a, const ModelResult* b) {
                         const double sa = a->scores.at(method);
                         const double sb = b->scores.at(method);
                         if (sa != sb) return sa > sb;
                         return a->id < b->id;
                       });
      std::map<std::string, int> rank;
      for (std::size_t i = 0; i < ok_models.size(); ++i)
        rank[ok_models[i]->id] = static_cast<int>(i) + 1;
      for (const auto& m : models) {
        if (m.ok)
          w.row({m.id, method, csv::format_double(m.scores.at(method)),
                 std::to_string(rank[m.id])});
        else
          w.row({m.id, method, "", ""});
      }
    }
  }
  manifest.wall_seconds = timer.seconds();
  write_manifest(manifest, dir);
  std::cout << "select: ranked " << ranked_models << " of " << models.size()
            << " models\n";
  return ranked_models > 0 ? 0 : 3;
}

int cmd_evaluate(const GaeConfig& cfg, const std::string& target_path,
                 const std::string& conf_path, const std::string& out_dir,
                 const std::string& command) {
  Timer timer;
  RunManifest manifest;
  manifest.command = command;
  manifest.config = cfg;
  manifest.seed = cfg.seed;
  manifest.started_at = iso_timestamp_now();
  manifest.hash_input(target_path);
  manifest.hash_input(conf_path);

  Dataset target = load_predictions(target_path);
  if (!target.fully_labeled())
    throw MissingLabelsError(target_path + ": evaluation needs labeled target data");
  std::unordered_map<std::string, std::size_t> index;
  index.reserve(target.size());
  for (std::size_t i = 0; i < target.size(); ++i)
    index[target.records[i].sample_id] = i;
  std::vector<uint8_t> correct;
  correct.reserve(target.size());
  for (const auto& r : target.records) correct.push_back(is_correct(r) ? 1 : 0);

  const csv::Table t = csv::read_table(conf_path);
  if (t.header != std::vector<std::string>{"sample_id", "method", "confidence",
                                           "fallback"})
    throw SchemaError(conf_path +
                      ": header must be sample_id,method,confidence,fallback");
  std::vector<std::string> method_order;
  std::map<std::string, std::vector<std::optional<double>>> by_method;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::string& id = t.rows[i][0];
    const std::string& method = t.rows[i][1];
    const auto it = index.find(id);
    if (it == index.end())
      throw SchemaError(conf_path + ":" + std::to_string(t.row_lines[i]) +
                        ": sample '" + id + "' not present in target file");
    auto [slot, inserted] = by_method.try_emplace(
        method, std::vector<std::optional<double>>(target.size()));
    if (inserted) method_order.push_back(method);
    if (slot->second[it->second])
      throw SchemaError(conf_path + ":" + std::to_string(t.row_lines[i]) +
                        ": duplicate confidence for sample '" + id + "'");
    slot->second[it->second] = csv::parse_double(t, i, 2);
  }

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  csv::Writer ece_out((dir / "ece.csv").string());
  ece_out.row({"method", "ece", "count"});
  csv::Writer rel_out((dir / "reliability.csv").string());
  rel_out.row({"method", "bin", "count", "conf", "acc"});
  for (const std::string& method : method_order) {
    const auto& slots = by_method.at(method);
    std::vector<double> conf(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
      if (!slots[i])
        throw SchemaError(conf_path + ": method '" + method +
                          "' missing confidence for sample '" +
                          target.records[i].sample_id + "'");
      conf[i] = *slots[i];
    }
    const CalibrationReport rep = ece(conf, correct, cfg.ece_bins);
    ece_out.row({method, csv::format_double(rep.ece),
                 std::to_string(target.size())});
    write_reliability_rows(rel_out, method, conf, &correct, cfg.ece_bins);
    std::cout << "evaluate: " << method << " ece = " << rep.ece << "\n";
  }
  manifest.wall_seconds = timer.seconds();
  write_manifest(manifest, dir);
  return 0;
}

int cmd_diagnose(const GaeConfig& cfg, const std::vector<std::string>& dirs,
                 const std::string& out_dir, const std::string& command) {
  Timer timer;
  RunManifest manifest;
  manifest.command = command;
  manifest.config = cfg;
  manifest.seed = cfg.seed;
  manifest.started_at = iso_timestamp_now();

  std::vector<GroupDiagnostics> all;
  std::vector<std::pair<std::string, double>> selected_t;
  for (const std::string& d : dirs) {
    const fs::path dir(d);
    const fs::path truth_path = dir / "truth.csv";
    if (!fs::exists(truth_path))
      throw SchemaError(truth_path.string() + ": missing (diagnose needs synth output)");
    const fs::path src_path = dir / "source_val.csv";
    const fs::path tgt_path = dir / "target.csv";
    if (!fs::exists(src_path) || !fs::exists(tgt_path))
      throw SchemaError(d + ": missing source_val.csv / target.csv");
    manifest.hash_input(src_path.string());
    manifest.hash_input(tgt_path.string());
    manifest.hash_input(truth_path.string());

    Dataset source = load_predictions(src_path.string());
    Dataset target = load_predictions(tgt_path.string());
    const fs::path sf = dir / "source_val_features.csv";
    const fs::path tf = dir / "target_features.csv";
    if (fs::exists(sf)) load_features(source, sf.string());
    if (fs::exists(tf)) load_features(target, tf.string());

    const auto truth = load_truth(truth_path.string());
    std::vector<double> beta, true_iw;
    beta.reserve(target.size());
    true_iw.reserve(target.size());
    for (const auto& r : target.records) {
      const auto it = truth.find(r.sample_id);
      if (it == truth.end())
        throw SchemaError(truth_path.string() + ": no truth row for sample '" +
                          r.sample_id + "'");
      beta.push_back(it->second.correct_prob);
      true_iw.push_back(it->second.true_iw);
    }

    Pipeline p = run_pipeline(source, target, cfg);
    selected_t.emplace_back(d, p.search.best_t);
    const std::vector<GroupDiagnostics> rows =
        diagnostics(target, p.search.target_groups, p.target_bins(), beta,
                    true_iw, /*correctness_is_probability=*/true,
                    p.search.counts, p.search.solutions);
    all.insert(all.end(), rows.begin(), rows.end());
  }

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  {
    csv::Writer w((dir / "diagnostics.csv").string());
    w.row({"group", "eps_opt", "ident_bias", "src_err", "tgt_err", "prop1", "eq5"});
    for (const auto& g : all)
      w.row({std::to_string(g.group), csv::format_double(g.eps_opt),
             csv::format_double(g.ident_bias), csv::format_double(g.src_err),
             csv::format_double(g.tgt_err), g.prop1 ? "1" : "0",
             g.eq5 ? "1" : "0"});
  }
  {
    csv::Writer w((dir / "summary.csv").string());
    w.row({"metric", "value"});
    long prop1 = 0, eq5 = 0;
    std::vector<double> eps, src, tgt;
    for (const auto& g : all) {
      prop1 += g.prop1 ? 1 : 0;
      eq5 += g.eq5 ? 1 : 0;
      eps.push_back(g.eps_opt);
      src.push_back(g.src_err);
      tgt.push_back(g.tgt_err);
    }
    const double n = all.empty() ? 1.0 : static_cast<double>(all.size());
    w.row({"groups", std::to_string(all.size())});
    w.row({"prop1_rate", csv::format_double(prop1 / n)});
    w.row({"eq5_rate", csv::format_double(eq5 / n)});
    if (all.size() >= 2) {
      w.row({"spearman_src_tgt_err", csv::format_double(spearman(src, tgt))});
      w.row({"spearman_eps_src_err", csv::format_double(spearman(eps, src))});
    }
    for (const auto& [d, t] : selected_t)
      w.row({"selected_t:" + d, csv::format_double(t)});
    long i = 0;
    for (const auto& [d, t] : selected_t) {
      std::cout << "diagnose: dir " << d << " selected t = " << t << "\n";
      ++i;
    }
    std::cout << "diagnose: " << all.size() << " groups, prop1 rate "
              << prop1 / n << ", eq5 rate " << eq5 / n << "\n";
  }
  manifest.wall_seconds = timer.seconds();
  write_manifest(manifest, dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Group accuracy estimation under covariate shift"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  const std::string command = join_args(argc, argv);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic shifted benchmark");
  ConfigCli synth_cfg;
  synth_cfg.attach(synth);
  std::string synth_out = "synth_out";
  int synth_d = 2, synth_k = 4;
  double synth_shift = 1.0, synth_sigma = 1.0, synth_noise = 0.1;
  long synth_ns = 2000, synth_nt = 2000;
  double synth_scale = 1.0, synth_plant = 1.0;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--dim", synth_d, "feature dimension");
  synth->add_option("--classes", synth_k, "class count");
  synth->add_option("--shift", synth_shift, "domain mean shift");
  synth->add_option("--sigma", synth_sigma, "feature scale");
  synth->add_option("--noise", synth_noise, "label noise rate");
  synth->add_option("--n-source", synth_ns, "source sample count");
  synth->add_option("--n-target", synth_nt, "target sample count");
  synth->add_option("--logit-scale", synth_scale, "classifier sharpness");
  synth->add_option("--plant-temperature", synth_plant,
                    "divide target logits by this factor");

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "estimate target confidences");
  ConfigCli cal_cfg;
  cal_cfg.attach(cal);
  std::string cal_src, cal_tgt, cal_sf, cal_tf, cal_methods, cal_out = "calibrate_out";
  cal->add_option("--source", cal_src, "labeled source validation predictions")
      ->required();
  cal->add_option("--target", cal_tgt, "target predictions")->required();
  cal->add_option("--source-features", cal_sf, "source feature file");
  cal->add_option("--target-features", cal_tf, "target feature file");
  cal->add_option("--methods", cal_methods, "comma list (default: all)");
  cal->add_option("--out", cal_out, "output directory");

  // select
  auto* sel = app.add_subcommand("select", "rank candidate models");
  ConfigCli sel_cfg;
  sel_cfg.attach(sel);
  std::string sel_models, sel_methods, sel_out = "select_out";
  sel->add_option("--models", sel_models, "CSV manifest: model_id,source,target[,...]")
      ->required();
  sel->add_option("--methods", sel_methods, "comma list (default: all)");
  sel->add_option("--out", sel_out, "output directory");

  // evaluate
  auto* eva = app.add_subcommand("evaluate", "score confidences against labels");
  ConfigCli eva_cfg;
  eva_cfg.attach(eva);
  std::string eva_tgt, eva_conf, eva_out = "evaluate_out";
  eva->add_option("--target", eva_tgt, "labeled target predictions")->required();
  eva->add_option("--confidences", eva_conf, "confidences.csv from calibrate")
      ->required();
  eva->add_option("--out", eva_out, "output directory");

  // diagnose
  auto* dia = app.add_subcommand("diagnose", "bound checks against synthetic truth");
  ConfigCli dia_cfg;
  dia_cfg.attach(dia);
  std::vector<std::string> dia_dirs;
  std::string dia_out = "diagnose_out";
  dia->add_option("--dir", dia_dirs, "synth output directory (repeatable)")
      ->required();
  dia->add_option("--out", dia_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  const auto guarded = [&](const std::function<int()>& fn) {
    try {
      return fn();
    } catch (const SchemaError& e) {
      log::error(e.what());
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      log::error(e.what());
      std::cerr << "error: " << e.what() << "\n";
      return 3;
    }
  };

  if (synth->parsed())
    return guarded([&] {
      return cmd_synth(synth_cfg.resolve(), synth_out, synth_d, synth_k,
                       synth_shift, synth_sigma, synth_noise, synth_ns, synth_nt,
                       synth_scale, synth_plant, command);
    });
  if (cal->parsed())
    return guarded([&] {
      return cmd_calibrate(cal_cfg.resolve(), cal_src, cal_tgt, cal_sf, cal_tf,
                           cal_methods, cal_out, command);
    });
  if (sel->parsed())
    return guarded([&] {
      return cmd_select(sel_cfg.resolve(), sel_models, sel_methods, sel_out,
                        command);
    });
  if (eva->parsed())
    return guarded([&] {
      return cmd_evaluate(eva_cfg.resolve(), eva_tgt, eva_conf, eva_out, command);
    });
  if (dia->parsed())
    return guarded([&] {
      return cmd_diagnose(dia_cfg.resolve(), dia_dirs, dia_out, command);
    });
  return 1;
}
