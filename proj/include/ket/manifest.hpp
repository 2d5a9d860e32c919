#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ket {

// Reproducibility record written beside each command's primary output (or
// to the error stream when the output goes to stdout): the command, its
// fully resolved configuration, the seed, input digests and output paths.
// Outputs are a pure function of (command, config, seed, inputs).
struct RunManifest {
  std::string command;
  std::string config_json = "{}";
  uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, fnv1a-64
  std::vector<std::string> outputs;
  double wall_seconds = 0.0;

  void add_input(const std::string& path);  // digests the file now
  void add_output(const std::string& path);

  std::string to_json() const;

  // Writes <primary_output>.manifest.json and records it as written.
  void write_beside(const std::string& primary_output);
};

}  // namespace ket
