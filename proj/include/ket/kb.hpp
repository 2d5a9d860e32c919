#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "ket/rng.hpp"

namespace ket {

// One knowledge-base fact. `rendered` is the natural-language description
// produced from the relation's template; ids are 1-based in file order.
// Id 0 is reserved for the null commonsense entry.
struct CommonsenseEntry {
  int64_t id = 0;
  std::string head;
  std::string relation;
  std::string tail;
  std::string rendered;
  std::vector<std::string> variants;  // alternative surface forms of the head
  bool is_null() const { return id == 0; }
};

// relation -> pattern with {head} / {tail} slots.
struct TemplateTable {
  std::map<std::string, std::string> patterns;

  static TemplateTable parse(const std::string& content);
  static TemplateTable load(const std::string& path);
  bool has(const std::string& relation) const;
  std::string render(const std::string& relation, const std::string& head,
                     const std::string& tail) const;
};

// Retrieved candidates for one input text. Slot 0 is always the null entry;
// real entries follow sorted by id with no duplicates.
struct CandidateSet {
  std::vector<CommonsenseEntry> entries;

  static CandidateSet null_only();
  int64_t real_count() const { return static_cast<int64_t>(entries.size()) - 1; }
  const CommonsenseEntry& real(int64_t i) const { return entries[static_cast<size_t>(i + 1)]; }
  void validate(int64_t n_max) const;
};

enum class Truncation { lowest_ids, random_sample };

constexpr int64_t kMaxPhraseLen = 5;

// Phrase-matched commonsense store. Heads (and their surface variants) are
// normalized to word tokens; the tokens "personx"/"persony" are single-token
// wildcards. An n-gram of the query matches a pattern of the same length
// when every non-wildcard token is equal.
class CommonsenseKB {
 public:
  static CommonsenseKB ingest_file(const std::string& kb_path, const TemplateTable& templates);
  static CommonsenseKB ingest_text(const std::string& content, const TemplateTable& templates);

  int64_t size() const { return static_cast<int64_t>(entries_.size()); }
  const std::vector<CommonsenseEntry>& entries() const { return entries_; }
  const CommonsenseEntry& entry(int64_t id) const;  // 1-based

  // All matching entry ids for the text, sorted ascending, deduplicated.
  // window is the longest n-gram considered, in [1, kMaxPhraseLen].
  std::vector<int64_t> retrieve_ids(const std::string& text, int64_t window = 5) const;

  // retrieve_ids capped at n_max real entries (keep lowest ids, or a seeded
  // random sample) with the null entry prepended at slot 0.
  CandidateSet retrieve(const std::string& text, int64_t window = 5, int64_t n_max = 64,
                        Truncation mode = Truncation::lowest_ids, uint64_t seed = 0) const;

  CandidateSet candidate_set(const std::vector<int64_t>& ids, int64_t n_max) const;

  void save_index(const std::string& path) const;
  static CommonsenseKB load_index(const std::string& path);

 private:
  struct Pattern {
    std::vector<std::string> tokens;  // wildcard slots hold the marker below
    int64_t entry_id = 0;
  };
  static constexpr char kWildcard[] = "\x01";

  void index_entry(const CommonsenseEntry& e, int64_t source_line);
  void add_pattern(const std::string& surface, int64_t entry_id, int64_t source_line);

  std::vector<CommonsenseEntry> entries_;
  std::unordered_map<std::string, std::vector<int64_t>> index_;
  // wildcard-position bitmasks present per pattern length, so lookups only
  // probe masks that can exist
  std::vector<std::vector<uint32_t>> masks_by_len_;
};

struct KbStats {
  int64_t dataset_size = 0;
  double matched_ratio = 0.0;
  double avg_candidates = 0.0;          // real candidates per matched text
  double avg_description_length = 0.0;  // words per matched rendered description
  bool averages_defined = false;
};

// Corpus-level retrieval statistics with an uncapped window-5 match.
KbStats kb_stats(const std::vector<std::string>& texts, const CommonsenseKB& kb);

std::string kb_stats_tsv(const KbStats& s);

}  // namespace ket
