#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace pidgen {

struct ManifestInput {
  std::string path;
  /// Git blob SHA-1 of the file contents.
  std::string hash;
};

/// Record of one command-line run, sufficient to replay it.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json seeds = nlohmann::json::object();
  std::vector<ManifestInput> inputs;
  std::vector<std::string> outputs;
  std::string started_at;
  std::string finished_at;
  int exit_code = 0;

  /// Hashes the file now; throws std::runtime_error when unreadable.
  void add_input(const std::string& path);
  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

/// ISO 8601 UTC time with second resolution.
std::string utc_timestamp();

}  // namespace pidgen
