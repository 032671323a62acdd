#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "robustmal/cli.hpp"

namespace robustmal::testing {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

inline CliRun run_tool(std::vector<std::string> args) {
  args.insert(args.begin(), "robustmal");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Fresh directory under the system temp dir.
inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("robustmal_cli_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::filesystem::path write_config(const std::filesystem::path& dir, const nlohmann::json& config) {
  const auto p = dir / "config.json";
  std::ofstream(p) << config.dump(2);
  return p;
}

// 200-sample corpus with budgets small enough for a unit test.
inline nlohmann::json desk_pipeline_config(const std::string& model, const std::string& mapping) {
  return {{"corpus", {{"spec", {{"n_families_malicious", 20}, {"samples_per_family", 5}, {"n_benign", 100}}}}},
          {"mapping", mapping},
          {"seed", 1},
          {"model", {{"name", model}, {"model", model}, {"erdalt", {{"margin", 0.0}, {"lambda3", 1.0}, {"epochs", 40}, {"refit_epochs", 30}}}}},
          {"budget", {{"max_steps", 4}, {"max_queries", 80}}},
          {"certify", {{"depth", 1}}}};
}

inline std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Relative path -> contents for every regular file under `dir`. JSON files
// lose their "timestamp" key.
inline std::map<std::string, std::string> snapshot(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() == "config.json") continue;
    std::string bytes = file_bytes(e.path());
    if (e.path().extension() == ".json") {
      auto j = nlohmann::json::parse(bytes);
      if (j.is_object()) j.erase("timestamp");
      bytes = j.dump();
    }
    out[std::filesystem::relative(e.path(), dir).string()] = std::move(bytes);
  }
  return out;
}

}  // namespace robustmal::testing
