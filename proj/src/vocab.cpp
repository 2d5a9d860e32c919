#include "ket/vocab.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ket/text.hpp"

namespace ket {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> toks = {"[PAD]", "[UNK]", "[CLS]",
                                                "[SEP]", "[MASK]", "[k]"};
  return toks;
}

Vocabulary::Vocabulary() {
  for (const std::string& t : reserved_tokens()) {
    index_.emplace(t, static_cast<int64_t>(tokens_.size()));
    tokens_.push_back(t);
  }
}

int64_t Vocabulary::add(const std::string& token) {
  if (token.empty()) throw std::invalid_argument("vocabulary: empty token");
  const auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int64_t id = static_cast<int64_t>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(token);
  return id;
}

int64_t Vocabulary::id(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(const std::string& token) const {
  return index_.find(token) != index_.end();
}

const std::string& Vocabulary::token(int64_t id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " outside [0, " +
                            std::to_string(size()) + ")");
  }
  return tokens_[static_cast<size_t>(id)];
}

void Vocabulary::save(const std::string& path) const {
  std::ostringstream out;
  for (const std::string& t : tokens_) out << t << "\n";
  write_file(path, out.str());
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("vocabulary: cannot open " + path);
  Vocabulary v;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno < kReservedCount) {
      if (line != reserved_tokens()[static_cast<size_t>(lineno)]) {
        throw std::runtime_error("vocabulary: line " + std::to_string(lineno + 1) +
                                 " must be the reserved token " +
                                 reserved_tokens()[static_cast<size_t>(lineno)] + ", got '" +
                                 line + "'");
      }
    } else {
      if (line.empty()) {
        throw std::runtime_error("vocabulary: empty token at line " + std::to_string(lineno + 1));
      }
      if (v.contains(line)) {
        throw std::runtime_error("vocabulary: duplicate token '" + line + "' at line " +
                                 std::to_string(lineno + 1));
      }
      v.add(line);
    }
    ++lineno;
  }
  if (lineno < kReservedCount) {
    throw std::runtime_error("vocabulary: file " + path + " is missing the reserved block");
  }
  return v;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  std::set<std::string> words;
  for (const std::string& t : texts) {
    for (std::string& w : normalize_words(t)) words.insert(std::move(w));
  }
  Vocabulary v;
  for (const std::string& w : words) v.add(w);
  return v;
}

TokenSequence tokenize(const Vocabulary& vocab, const std::string& text,
                       const std::string* text_pair, int64_t max_len, bool insert_k) {
  if (max_len < 4) {
    throw std::invalid_argument("tokenize: max_len must be at least 4, got " +
                                std::to_string(max_len));
  }
  std::vector<std::string> a = normalize_words(text);
  std::vector<std::string> b = text_pair ? normalize_words(*text_pair) : std::vector<std::string>();
  const bool pair = text_pair != nullptr;

  // [CLS] ([k]) a... [SEP] (b... [SEP]); every [SEP] survives truncation.
  const int64_t specials = 2 + (insert_k ? 1 : 0) + (pair ? 1 : 0);
  const int64_t budget = max_len - specials;
  if (budget < 0) {
    throw std::invalid_argument("tokenize: max_len " + std::to_string(max_len) +
                                " cannot hold the special tokens");
  }
  if (pair) {
    while (static_cast<int64_t>(a.size() + b.size()) > budget) {
      if (a.size() >= b.size() && !a.empty()) {
        a.pop_back();
      } else {
        b.pop_back();
      }
    }
  } else if (static_cast<int64_t>(a.size()) > budget) {
    a.resize(static_cast<size_t>(budget));
  }

  TokenSequence seq;
  seq.ids.reserve(static_cast<size_t>(max_len));
  auto push = [&seq](int64_t id, int segment) {
    seq.ids.push_back(id);
    seq.attention_mask.push_back(1);
    seq.segment_ids.push_back(segment);
  };
  push(kClsId, 0);
  if (insert_k) push(kKnowId, 0);
  for (const std::string& w : a) push(vocab.id(w), 0);
  push(kSepId, 0);
  if (pair) {
    for (const std::string& w : b) push(vocab.id(w), 1);
    push(kSepId, 1);
  }
  while (static_cast<int64_t>(seq.ids.size()) < max_len) {
    seq.ids.push_back(kPadId);
    seq.attention_mask.push_back(0);
    seq.segment_ids.push_back(0);
  }
  return seq;
}

}  // namespace ket
