#include "ket/kb.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ket/text.hpp"

namespace ket {

constexpr char CommonsenseKB::kWildcard[];

// ---- templates -------------------------------------------------------------

TemplateTable TemplateTable::parse(const std::string& content) {
  TemplateTable t;
  std::istringstream in(content);
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cols = split(line, '\t');
    if (cols.size() != 2 || cols[0].empty()) {
      throw std::runtime_error("template error line " + std::to_string(lineno) +
                               ": expected 'relation<TAB>pattern'");
    }
    if (t.patterns.count(cols[0])) {
      throw std::runtime_error("template error line " + std::to_string(lineno) +
                               ": duplicate relation '" + cols[0] + "'");
    }
    t.patterns[cols[0]] = cols[1];
  }
  return t;
}

TemplateTable TemplateTable::load(const std::string& path) { return parse(read_file(path)); }

bool TemplateTable::has(const std::string& relation) const {
  return patterns.count(relation) > 0;
}

namespace {
void replace_all(std::string& s, const std::string& what, const std::string& with) {
  size_t pos = 0;
  while ((pos = s.find(what, pos)) != std::string::npos) {
    s.replace(pos, what.size(), with);
    pos += with.size();
  }
}
}  // namespace

std::string TemplateTable::render(const std::string& relation, const std::string& head,
                                  const std::string& tail) const {
  const auto it = patterns.find(relation);
  if (it == patterns.end()) {
    throw std::runtime_error("no template for relation '" + relation + "'");
  }
  std::string out = it->second;
  replace_all(out, "{head}", head);
  replace_all(out, "{tail}", tail);
  return out;
}

// ---- candidate sets --------------------------------------------------------

CandidateSet CandidateSet::null_only() {
  CandidateSet cs;
  cs.entries.push_back(CommonsenseEntry{});
  return cs;
}

void CandidateSet::validate(int64_t n_max) const {
  if (entries.empty() || !entries.front().is_null()) {
    throw std::logic_error("candidate set: slot 0 must be the null entry");
  }
  if (real_count() > n_max) {
    throw std::logic_error("candidate set: " + std::to_string(real_count()) +
                           " real entries exceed n_max " + std::to_string(n_max));
  }
  for (size_t i = 2; i < entries.size(); ++i) {
    if (entries[i - 1].id >= entries[i].id) {
      throw std::logic_error("candidate set: real entries must be sorted by id, no duplicates");
    }
  }
}

// ---- ingestion -------------------------------------------------------------

void CommonsenseKB::add_pattern(const std::string& surface, int64_t entry_id,
                                int64_t source_line) {
  std::vector<std::string> tokens = normalize_words(surface);
  if (tokens.empty()) {
    throw std::runtime_error("ingest error line " + std::to_string(source_line) +
                             ": head '" + surface + "' normalizes to no tokens");
  }
  if (static_cast<int64_t>(tokens.size()) > kMaxPhraseLen) return;  // cannot match any n-gram
  uint32_t mask = 0;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == "personx" || tokens[i] == "persony") {
      tokens[i] = kWildcard;
      mask |= 1u << i;
    }
  }
  const std::string key = join(tokens, " ");
  index_[key].push_back(entry_id);
  auto& masks = masks_by_len_[tokens.size()];
  if (std::find(masks.begin(), masks.end(), mask) == masks.end()) masks.push_back(mask);
}

void CommonsenseKB::index_entry(const CommonsenseEntry& e, int64_t source_line) {
  add_pattern(e.head, e.id, source_line);
  for (const std::string& v : e.variants) add_pattern(v, e.id, source_line);
}

CommonsenseKB CommonsenseKB::ingest_text(const std::string& content,
                                         const TemplateTable& templates) {
  CommonsenseKB kb;
  kb.masks_by_len_.resize(static_cast<size_t>(kMaxPhraseLen) + 1);
  std::istringstream in(content);
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cols = split(line, '\t');
    if (cols.size() < 3) {
      throw std::runtime_error("ingest error line " + std::to_string(lineno) +
                               ": expected head<TAB>relation<TAB>tail, got " +
                               std::to_string(cols.size()) + " fields");
    }
    CommonsenseEntry e;
    e.id = static_cast<int64_t>(kb.entries_.size()) + 1;
    e.head = cols[0];
    e.relation = cols[1];
    e.tail = cols[2];
    if (!templates.has(e.relation)) {
      throw std::runtime_error("ingest error line " + std::to_string(lineno) +
                               ": no template for relation '" + e.relation + "'");
    }
    e.rendered = templates.render(e.relation, e.head, e.tail);
    if (cols.size() > 3 && !cols[3].empty()) {
      for (const std::string& v : split(cols[3], ',')) {
        if (!v.empty()) e.variants.push_back(v);
      }
    }
    kb.index_entry(e, lineno);
    kb.entries_.push_back(std::move(e));
  }
  for (auto& [key, ids] : kb.index_) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  }
  return kb;
}

CommonsenseKB CommonsenseKB::ingest_file(const std::string& kb_path,
                                         const TemplateTable& templates) {
  return ingest_text(read_file(kb_path), templates);
}

const CommonsenseEntry& CommonsenseKB::entry(int64_t id) const {
  if (id < 1 || id > size()) {
    throw std::out_of_range("kb: entry id " + std::to_string(id) + " outside [1, " +
                            std::to_string(size()) + "]");
  }
  return entries_[static_cast<size_t>(id - 1)];
}

// ---- retrieval -------------------------------------------------------------

std::vector<int64_t> CommonsenseKB::retrieve_ids(const std::string& text, int64_t window) const {
  if (window < 1 || window > kMaxPhraseLen) {
    throw std::invalid_argument("retrieve: window must be in [1, " +
                                std::to_string(kMaxPhraseLen) + "], got " +
                                std::to_string(window));
  }
  const std::vector<std::string> tokens = normalize_words(text);
  std::vector<int64_t> hits;
  const int64_t len = static_cast<int64_t>(tokens.size());
  std::vector<std::string> gram;
  for (int64_t n = 1; n <= std::min(window, len); ++n) {
    const auto& masks = masks_by_len_[static_cast<size_t>(n)];
    if (masks.empty()) continue;
    for (int64_t start = 0; start + n <= len; ++start) {
      for (const uint32_t mask : masks) {
        gram.assign(tokens.begin() + start, tokens.begin() + start + n);
        for (int64_t i = 0; i < n; ++i) {
          if (mask & (1u << i)) gram[static_cast<size_t>(i)] = kWildcard;
        }
        const auto it = index_.find(join(gram, " "));
        if (it != index_.end()) hits.insert(hits.end(), it->second.begin(), it->second.end());
      }
    }
  }
  std::sort(hits.begin(), hits.end());
  hits.erase(std::unique(hits.begin(), hits.end()), hits.end());
  return hits;
}

CandidateSet CommonsenseKB::candidate_set(const std::vector<int64_t>& ids, int64_t n_max) const {
  if (n_max < 1) throw std::invalid_argument("candidate_set: n_max must be at least 1");
  CandidateSet cs = CandidateSet::null_only();
  for (const int64_t id : ids) cs.entries.push_back(entry(id));
  std::sort(cs.entries.begin() + 1, cs.entries.end(),
            [](const CommonsenseEntry& a, const CommonsenseEntry& b) { return a.id < b.id; });
  cs.validate(n_max);
  return cs;
}

CandidateSet CommonsenseKB::retrieve(const std::string& text, int64_t window, int64_t n_max,
                                     Truncation mode, uint64_t seed) const {
  if (n_max < 1) throw std::invalid_argument("retrieve: n_max must be at least 1");
  std::vector<int64_t> ids = retrieve_ids(text, window);
  if (static_cast<int64_t>(ids.size()) > n_max) {
    if (mode == Truncation::lowest_ids) {
      ids.resize(static_cast<size_t>(n_max));
    } else {
      Rng rng(seed);
      const std::vector<size_t> keep =
          rng.sample_indices(ids.size(), static_cast<size_t>(n_max));
      std::vector<int64_t> sampled;
      sampled.reserve(keep.size());
      for (const size_t i : keep) sampled.push_back(ids[i]);
      ids = std::move(sampled);
    }
  }
  return candidate_set(ids, n_max);
}

// ---- persistence -----------------------------------------------------------

void CommonsenseKB::save_index(const std::string& path) const {
  nlohmann::json j;
  j["version"] = 1;
  nlohmann::json arr = nlohmann::json::array();
  for (const CommonsenseEntry& e : entries_) {
    nlohmann::json je;
    je["id"] = e.id;
    je["head"] = e.head;
    je["relation"] = e.relation;
    je["tail"] = e.tail;
    je["rendered"] = e.rendered;
    je["variants"] = e.variants;
    arr.push_back(std::move(je));
  }
  j["entries"] = std::move(arr);
  write_file(path, j.dump(2) + "\n");
}

CommonsenseKB CommonsenseKB::load_index(const std::string& path) {
  nlohmann::json j = nlohmann::json::parse(read_file(path));
  if (!j.contains("version") || j["version"].get<int>() != 1) {
    throw std::runtime_error("kb index: unsupported version in " + path);
  }
  CommonsenseKB kb;
  kb.masks_by_len_.resize(static_cast<size_t>(kMaxPhraseLen) + 1);
  int64_t expect = 1;
  for (const nlohmann::json& je : j["entries"]) {
    CommonsenseEntry e;
    e.id = je.at("id").get<int64_t>();
    if (e.id != expect++) throw std::runtime_error("kb index: entry ids must be 1, 2, ... in order");
    e.head = je.at("head").get<std::string>();
    e.relation = je.at("relation").get<std::string>();
    e.tail = je.at("tail").get<std::string>();
    e.rendered = je.at("rendered").get<std::string>();
    for (const nlohmann::json& v : je.at("variants")) e.variants.push_back(v.get<std::string>());
    kb.index_entry(e, e.id);
    kb.entries_.push_back(std::move(e));
  }
  for (auto& [key, ids] : kb.index_) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  }
  return kb;
}

// ---- statistics ------------------------------------------------------------

KbStats kb_stats(const std::vector<std::string>& texts, const CommonsenseKB& kb) {
  if (texts.empty()) throw std::invalid_argument("kb_stats: dataset is empty");
  KbStats s;
  s.dataset_size = static_cast<int64_t>(texts.size());
  int64_t matched_texts = 0;
  int64_t total_candidates = 0;
  int64_t total_desc_words = 0;
  for (const std::string& text : texts) {
    const std::vector<int64_t> ids = kb.retrieve_ids(text, kMaxPhraseLen);
    if (ids.empty()) continue;
    ++matched_texts;
    total_candidates += static_cast<int64_t>(ids.size());
    for (const int64_t id : ids) total_desc_words += count_words(kb.entry(id).rendered);
  }
  s.matched_ratio = static_cast<double>(matched_texts) / static_cast<double>(s.dataset_size);
  if (matched_texts > 0) {
    s.averages_defined = true;
    s.avg_candidates = static_cast<double>(total_candidates) / static_cast<double>(matched_texts);
    s.avg_description_length =
        static_cast<double>(total_desc_words) / static_cast<double>(total_candidates);
  }
  return s;
}

std::string kb_stats_tsv(const KbStats& s) {
  std::ostringstream out;
  out << "stat\tvalue\n";
  out << "dataset_size\t" << s.dataset_size << "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", s.matched_ratio);
  out << "matched_ratio\t" << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.6f", s.avg_candidates);
  out << "avg_candidates\t" << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.6f", s.avg_description_length);
  out << "avg_description_length\t" << buf << "\n";
  if (!s.averages_defined) out << "averages_defined\t0\n";
  return out.str();
}

}  // namespace ket
