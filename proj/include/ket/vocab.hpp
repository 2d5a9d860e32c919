#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace ket {

// Reserved ids. A vocabulary file lists one token per line, line number = id,
// and must start with exactly these six entries.
constexpr int64_t kPadId = 0;
constexpr int64_t kUnkId = 1;
constexpr int64_t kClsId = 2;
constexpr int64_t kSepId = 3;
constexpr int64_t kMaskId = 4;
constexpr int64_t kKnowId = 5;  // the knowledge token [k]
constexpr int64_t kReservedCount = 6;

const std::vector<std::string>& reserved_tokens();

class Vocabulary {
 public:
  Vocabulary();  // reserved tokens only

  // Returns the existing id or assigns the next free one. Reserved entries
  // keep their ids forever.
  int64_t add(const std::string& token);
  int64_t id(const std::string& token) const;  // kUnkId for unknown surfaces
  bool contains(const std::string& token) const;
  const std::string& token(int64_t id) const;
  int64_t size() const { return static_cast<int64_t>(tokens_.size()); }

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  // Normalized words from all texts, added in sorted order after the
  // reserved block so the result is independent of text order.
  static Vocabulary build(const std::vector<std::string>& texts);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int64_t> index_;
};

// One encoded input. Padding positions carry [PAD] with attention mask 0.
struct TokenSequence {
  std::vector<int64_t> ids;
  std::vector<int> attention_mask;  // 1 = real token, 0 = padding
  std::vector<int> segment_ids;     // 0 = first text, 1 = second
  int64_t length() const { return static_cast<int64_t>(ids.size()); }
};

// Lowercased word tokens wrapped as [CLS] ([k]) text [SEP] (pair [SEP]) and
// padded to exactly max_len. With a pair, the longer text is trimmed first.
// insert_k places the knowledge token at position 1.
TokenSequence tokenize(const Vocabulary& vocab, const std::string& text,
                       const std::string* text_pair, int64_t max_len, bool insert_k);

}  // namespace ket
