#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "todlab/common.hpp"

// Every CLI run leaves a run_manifest.json beside its outputs: the fully
// resolved config, the seed, content hashes of every input file and the wall
// time. Config, seed and hashes identify the run; wall time is informational
// and the only field that varies between identical runs.

namespace todlab {

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;  // path -> fnv1a64 of contents
  double wall_seconds = 0;

  void add_input(const std::string& path) { inputs[path] = hex64(file_fnv64(path)); }

  nlohmann::json to_json() const {
    return {{"command", command},
            {"config", config},
            {"seed", seed},
            {"inputs", inputs},
            {"wall_seconds", wall_seconds}};
  }
};

inline void write_run_manifest(const std::string& dir, const RunManifest& m) {
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/run_manifest.json";
  std::ofstream f(path);
  check(f.good(), "manifest: cannot write " + path);
  f << m.to_json().dump(2) << "\n";
  f.flush();
  check(f.good(), "manifest: write failed for " + path);
}

struct WallTimer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

}  // namespace todlab
