#include "pidgen/manifest.hpp"

#include <chrono>
#include <ctime>
#include <stdexcept>

#include "pidgen/digest.hpp"

namespace pidgen {

using nlohmann::json;

void RunManifest::add_input(const std::string& path) {
  std::string h = git_blob_hash_file(path);
  if (h.empty()) throw std::runtime_error("cannot read " + path);
  inputs.push_back({path, std::move(h)});
}

json RunManifest::to_json() const {
  json in = json::array();
  for (const auto& i : inputs) in.push_back({{"path", i.path}, {"git_blob_sha1", i.hash}});
  return json{{"command", command}, {"argv", argv},         {"config", config},
              {"seeds", seeds},     {"inputs", in},         {"outputs", outputs},
              {"started_at", started_at}, {"finished_at", finished_at}, {"exit_code", exit_code}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.argv = j.at("argv").get<std::vector<std::string>>();
  m.config = j.value("config", json::object());
  m.seeds = j.value("seeds", json::object());
  for (const auto& i : j.value("inputs", json::array())) {
    m.inputs.push_back({i.at("path").get<std::string>(), i.at("git_blob_sha1").get<std::string>()});
  }
  m.outputs = j.value("outputs", std::vector<std::string>{});
  m.started_at = j.value("started_at", "");
  m.finished_at = j.value("finished_at", "");
  m.exit_code = j.value("exit_code", 0);
  return m;
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace pidgen
