#pragma once

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "iwgae/errors.hpp"
#include "iwgae/types.hpp"
#include "iwgae/version.hpp"

namespace iwgae {

// FNV-1a over the file bytes; enough to pin inputs in the run manifest.
inline std::string hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError(path + ": cannot open for hashing");
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
    if (!in) break;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return out;
}

struct RunManifest {
  std::string command;
  GaeConfig config;
  std::vector<std::pair<std::string, std::string>> input_hashes;  // path, fnv64
  std::uint64_t seed = 0;
  std::string started_at;
  double wall_seconds = 0.0;

  void hash_input(const std::string& path) {
    input_hashes.emplace_back(path, hash_file(path));
  }
};

inline std::string iso_timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&tt, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

// Serialized next to the outputs via temp-file + rename, so readers never
// observe a partial manifest.
inline void write_manifest(const RunManifest& m, const std::filesystem::path& out_dir) {
  nlohmann::json j;
  j["tool"] = "iwgae";
  j["version"] = kVersion;
  j["command"] = m.command;
  j["seed"] = m.seed;
  j["started_at"] = m.started_at;
  j["wall_seconds"] = m.wall_seconds;
  nlohmann::json cfg;
  cfg["B"] = m.config.B;
  cfg["M"] = m.config.M;
  cfg["delta_bar"] = m.config.delta_bar;
  cfg["G"] = m.config.G;
  cfg["w_max"] = m.config.w_max;
  cfg["w_min"] = m.config.w_min;
  cfg["delta_tol"] = m.config.delta_tol;
  cfg["delta_prob"] = m.config.delta_prob;
  cfg["temp_grid"] = m.config.temp_grid;
  cfg["opt_tol"] = m.config.opt_tol;
  cfg["ece_bins"] = m.config.ece_bins;
  cfg["seed"] = m.config.seed;
  cfg["min_group_count"] = m.config.min_group_count;
  cfg["l2_penalty"] = m.config.l2_penalty;
  cfg["union_bound"] = m.config.union_bound;
  cfg["threads"] = m.config.threads;
  j["config"] = cfg;
  nlohmann::json inputs = nlohmann::json::object();
  for (const auto& [path, digest] : m.input_hashes) inputs[path] = digest;
  j["inputs"] = inputs;

  const std::filesystem::path tmp = out_dir / "manifest.json.tmp";
  const std::filesystem::path final_path = out_dir / "manifest.json";
  {
    std::ofstream out(tmp);
    if (!out) throw PipelineError(tmp.string() + ": cannot write manifest");
    out << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, final_path);
}

}  // namespace iwgae
