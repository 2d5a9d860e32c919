#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ket {

// One task example. Classification uses `label`; multiple-choice and
// masked-LM scoring use `candidates` + `answer`, with the substitution
// site in `text` marked by a lone underscore. `cs` optionally pins the
// retrieved knowledge entry ids (null excluded) instead of live retrieval.
struct Example {
  std::string text;
  std::optional<std::string> text_pair;
  std::optional<int64_t> label;
  std::vector<std::string> candidates;
  std::optional<int64_t> answer;
  std::optional<std::vector<int64_t>> cs;
};

struct Dataset {
  std::vector<Example> examples;

  int64_t size() const { return static_cast<int64_t>(examples.size()); }
  bool empty() const { return examples.empty(); }
};

// JSON-lines, one object per line. Keys: "text" (required), "text_pair",
// "label", "candidates", "answer", "cs". Blank lines are skipped; any
// other problem reports the 1-based line number.
Dataset load_jsonl(const std::string& path);
Dataset parse_jsonl(const std::string& content, const std::string& origin);

std::string to_jsonl(const Dataset& ds);
void save_jsonl(const Dataset& ds, const std::string& path);

}  // namespace ket
