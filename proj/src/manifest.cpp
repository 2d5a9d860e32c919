#include "ket/manifest.hpp"

#include <json.hpp>

#include "ket/text.hpp"

namespace ket {

void RunManifest::add_input(const std::string& path) {
  inputs.emplace_back(path, file_digest(path));
}

void RunManifest::add_output(const std::string& path) { outputs.push_back(path); }

std::string RunManifest::to_json() const {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = nlohmann::json::parse(config_json);
  j["seed"] = seed;
  nlohmann::json in = nlohmann::json::object();
  for (const auto& [path, digest] : inputs) in[path] = digest;
  j["inputs"] = in;
  j["outputs"] = outputs;
  j["wall_seconds"] = wall_seconds;
  return j.dump(2) + "\n";
}

void RunManifest::write_beside(const std::string& primary_output) {
  const std::string path = primary_output + ".manifest.json";
  write_file(path, to_json());
}

}  // namespace ket
