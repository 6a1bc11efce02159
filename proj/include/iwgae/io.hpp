#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "iwgae/csv.hpp"
#include "iwgae/errors.hpp"
#include "iwgae/types.hpp"

namespace iwgae {

// Prediction file: sample_id,domain,split,label,logit_0..logit_{K-1}[,iw_score]
// with an empty label field meaning unlabeled.
inline Dataset load_predictions(const std::string& path) {
  const csv::Table t = csv::read_table(path);
  const auto fail = [&](std::size_t row, const std::string& msg) -> SchemaError {
    return SchemaError(path + ":" + std::to_string(t.row_lines[row]) + ": " + msg);
  };

  if (t.header.size() < 5 || t.header[0] != "sample_id" ||
      t.header[1] != "domain" || t.header[2] != "split" || t.header[3] != "label")
    throw SchemaError(path +
                      ": header must start with sample_id,domain,split,label,logit_0");
  int K = 0;
  while (4 + K < static_cast<int>(t.header.size()) &&
         t.header[4 + K] == "logit_" + std::to_string(K))
    ++K;
  if (K < 2) throw SchemaError(path + ": need logit_0..logit_{K-1} with K >= 2");
  bool has_iw = false;
  if (4 + K < static_cast<int>(t.header.size())) {
    if (t.header[4 + K] != "iw_score" || 5 + K != static_cast<int>(t.header.size()))
      throw SchemaError(path + ": unexpected trailing columns after logits");
    has_iw = true;
  }

  Dataset ds;
  ds.K = K;
  ds.d = 0;
  ds.records.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    PredictionRecord r;
    r.sample_id = t.rows[i][0];
    if (r.sample_id.empty()) throw fail(i, "empty sample_id");
    const std::string& dom = t.rows[i][1];
    if (dom == "source")
      r.domain = Domain::source;
    else if (dom == "target")
      r.domain = Domain::target;
    else
      throw fail(i, "domain must be 'source' or 'target', got '" + dom + "'");
    const std::string& sp = t.rows[i][2];
    if (sp == "train")
      r.split = Split::train;
    else if (sp == "validation")
      r.split = Split::validation;
    else if (sp == "test")
      r.split = Split::test;
    else
      throw fail(i, "split must be train|validation|test, got '" + sp + "'");
    if (!t.rows[i][3].empty()) {
      const long label = csv::parse_long(t, i, 3);
      if (label < 0 || label >= K) throw fail(i, "label out of [0, K)");
      r.label = static_cast<int>(label);
    }
    r.logits.resize(K);
    for (int k = 0; k < K; ++k) r.logits[k] = csv::parse_double(t, i, 4 + k);
    if (has_iw) {
      const double w = csv::parse_double(t, i, 4 + K);
      if (!(w > 0.0)) throw fail(i, "iw_score must be positive");
      r.iw_score = w;
    }
    ds.records.push_back(std::move(r));
  }
  ds.validate();
  return ds;
}

// Feature file: sample_id,f_0..f_{d-1}. Rows are joined onto the dataset by
// sample_id; every prediction needs a feature row, extras are ignored.
inline void load_features(Dataset& ds, const std::string& path) {
  const csv::Table t = csv::read_table(path);
  if (t.header.empty() || t.header[0] != "sample_id")
    throw SchemaError(path + ": header must start with sample_id");
  const int d = static_cast<int>(t.header.size()) - 1;
  for (int j = 0; j < d; ++j)
    if (t.header[1 + j] != "f_" + std::to_string(j))
      throw SchemaError(path + ": feature columns must be f_0..f_{d-1}");
  if (d < 1) throw SchemaError(path + ": no feature columns");

  std::unordered_map<std::string, std::vector<double>> by_id;
  by_id.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    std::vector<double> f(d);
    for (int j = 0; j < d; ++j) f[j] = csv::parse_double(t, i, 1 + j);
    by_id[t.rows[i][0]] = std::move(f);
  }
  for (auto& r : ds.records) {
    const auto it = by_id.find(r.sample_id);
    if (it == by_id.end())
      throw SchemaError(path + ": no feature row for sample '" + r.sample_id + "'");
    r.features = it->second;
  }
  ds.d = d;
  ds.validate();
}

inline void save_predictions(const Dataset& ds, const std::string& path,
                             bool include_labels = true) {
  csv::Writer w(path);
  std::vector<std::string> header = {"sample_id", "domain", "split", "label"};
  for (int k = 0; k < ds.K; ++k) header.push_back("logit_" + std::to_string(k));
  const bool has_iw = ds.has_iw_scores();
  if (has_iw) header.push_back("iw_score");
  w.row(header);
  for (const auto& r : ds.records) {
    std::vector<std::string> cells = {r.sample_id, to_string(r.domain),
                                      to_string(r.split)};
    cells.push_back(include_labels && r.label ? std::to_string(*r.label) : "");
    for (double v : r.logits) cells.push_back(csv::format_double(v));
    if (has_iw) cells.push_back(csv::format_double(r.iw_score.value()));
    w.row(cells);
  }
}

inline void save_features(const Dataset& ds, const std::string& path) {
  if (!ds.has_features()) throw PipelineError(path + ": dataset has no features");
  csv::Writer w(path);
  std::vector<std::string> header = {"sample_id"};
  for (int j = 0; j < ds.d; ++j) header.push_back("f_" + std::to_string(j));
  w.row(header);
  for (const auto& r : ds.records) {
    std::vector<std::string> cells = {r.sample_id};
    for (double v : r.features) cells.push_back(csv::format_double(v));
    w.row(cells);
  }
}

struct TruthRow {
  double true_iw = 0.0;
  double correct_prob = 0.0;
};

inline void save_truth(const std::string& path,
                       const std::vector<std::string>& ids,
                       const std::vector<double>& true_iw,
                       const std::vector<double>& correct_prob) {
  csv::Writer w(path);
  w.row({"sample_id", "true_iw", "true_correct_prob"});
  for (std::size_t i = 0; i < ids.size(); ++i)
    w.row({ids[i], csv::format_double(true_iw[i]),
           csv::format_double(correct_prob[i])});
}

inline std::unordered_map<std::string, TruthRow> load_truth(const std::string& path) {
  const csv::Table t = csv::read_table(path);
  if (t.header != std::vector<std::string>{"sample_id", "true_iw", "true_correct_prob"})
    throw SchemaError(path + ": header must be sample_id,true_iw,true_correct_prob");
  std::unordered_map<std::string, TruthRow> out;
  out.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    out[t.rows[i][0]] = {csv::parse_double(t, i, 1), csv::parse_double(t, i, 2)};
  return out;
}

// Config file: '#' comments and key=value lines mirroring GaeConfig fields.
inline void apply_config_file(GaeConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError(path + ": cannot open config file");
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string trimmed;
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c))) trimmed += c;
    if (trimmed.empty() || trimmed[0] == '#') continue;
    const std::size_t eq = trimmed.find('=');
    if (eq == std::string::npos)
      throw SchemaError(path + ":" + std::to_string(line_no) +
                        ": expected key=value");
    const std::string key = trimmed.substr(0, eq);
    const std::string value = trimmed.substr(eq + 1);
    const auto fail = [&](const std::string& msg) -> SchemaError {
      return SchemaError(path + ":" + std::to_string(line_no) + ": " + msg);
    };
    const auto as_double = [&]() {
      double v = 0.0;
      const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || p != value.data() + value.size())
        throw fail("bad number '" + value + "'");
      return v;
    };
    const auto as_long = [&]() {
      long v = 0;
      const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || p != value.data() + value.size())
        throw fail("bad integer '" + value + "'");
      return v;
    };
    if (key == "B") cfg.B = static_cast<int>(as_long());
    else if (key == "M") cfg.M = static_cast<int>(as_long());
    else if (key == "delta_bar") cfg.delta_bar = as_double();
    else if (key == "G") cfg.G = as_double();
    else if (key == "w_max") cfg.w_max = as_double();
    else if (key == "w_min") cfg.w_min = as_double();
    else if (key == "delta_tol") cfg.delta_tol = as_double();
    else if (key == "delta_prob") cfg.delta_prob = as_double();
    else if (key == "opt_tol") cfg.opt_tol = as_double();
    else if (key == "ece_bins") cfg.ece_bins = static_cast<int>(as_long());
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(as_long());
    else if (key == "min_group_count") cfg.min_group_count = static_cast<int>(as_long());
    else if (key == "l2_penalty") cfg.l2_penalty = as_double();
    else if (key == "union_bound") cfg.union_bound = as_long() != 0;
    else if (key == "threads") cfg.threads = static_cast<int>(as_long());
    else if (key == "temp_grid") {
      std::vector<double> grid;
      std::size_t start = 0;
      while (start <= value.size()) {
        std::size_t pos = value.find(',', start);
        if (pos == std::string::npos) pos = value.size();
        const std::string item = value.substr(start, pos - start);
        double v = 0.0;
        const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (ec != std::errc() || p != item.data() + item.size())
          throw fail("bad temperature '" + item + "'");
        grid.push_back(v);
        start = pos + 1;
      }
      cfg.temp_grid = std::move(grid);
    } else {
      throw fail("unknown config key '" + key + "'");
    }
  }
  cfg.validate();
}

}  // namespace iwgae
