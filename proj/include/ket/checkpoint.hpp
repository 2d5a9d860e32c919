#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ket/tensor.hpp"

namespace ket {

// Binary checkpoint: magic, format version, a JSON config blob, a named
// parameter manifest (name, shape, payload offset) and one flat
// little-endian f32 payload. Values are computed in f64 and stored in f32;
// offsets must tile the payload exactly, which load() verifies.
class Checkpoint {
 public:
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> values;
  };

  uint32_t version = 1;
  std::string config_json;
  std::vector<Entry> entries;

  const Entry* find(const std::string& name) const;
  const Entry& require(const std::string& name) const;

  static Checkpoint from_params(const std::string& config_json, const NamedParams& params);

  // Copies values into the given parameters, matching by exact name.
  // Missing or shape-mismatched parameters raise with the parameter named.
  // Unless allow_unused is set, checkpoint entries that match nothing are
  // also an error.
  void load_into(const NamedParams& params, bool allow_unused = false) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace ket
