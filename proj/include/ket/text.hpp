#pragma once

#include <string>
#include <vector>

namespace ket {

// Lowercases and splits on anything that is not [a-z0-9]. Bytes >= 0x80 are
// treated as word characters so multi-byte UTF-8 sequences stay intact.
// This is the single normalization used by both the tokenizer and the
// knowledge-base matcher; the two must agree or retrieval misses.
std::vector<std::string> normalize_words(const std::string& text);

std::string to_lower(const std::string& text);

// Whitespace-delimited word count (used by corpus statistics).
int64_t count_words(const std::string& text);

// Splits on a single delimiter without collapsing empty fields.
std::vector<std::string> split(const std::string& line, char delim);

std::string join(const std::vector<std::string>& parts, const std::string& sep);

// Minimal glob over full strings: '*' matches any run, '?' one character.
bool glob_match(const std::string& pattern, const std::string& name);

// FNV-1a 64-bit digest, hex-encoded (used for run-manifest input digests).
std::string fnv1a_hex(const std::string& bytes);
std::string file_digest(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace ket
