#include "ket/dataset.hpp"

#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ket/text.hpp"

namespace ket {

namespace {

[[noreturn]] void fail(const std::string& origin, size_t line, const std::string& what) {
  throw std::runtime_error("dataset " + origin + " line " + std::to_string(line) + ": " + what);
}

Example parse_example(const nlohmann::json& j, const std::string& origin, size_t line) {
  if (!j.is_object()) fail(origin, line, "expected a JSON object");
  if (!j.contains("text") || !j["text"].is_string()) fail(origin, line, "missing string field 'text'");
  Example ex;
  ex.text = j["text"].get<std::string>();
  if (j.contains("text_pair")) ex.text_pair = j["text_pair"].get<std::string>();
  if (j.contains("label")) ex.label = j["label"].get<int64_t>();
  if (j.contains("candidates")) {
    for (const auto& c : j["candidates"]) ex.candidates.push_back(c.get<std::string>());
  }
  if (j.contains("answer")) {
    ex.answer = j["answer"].get<int64_t>();
    if (*ex.answer < 0 || *ex.answer >= static_cast<int64_t>(ex.candidates.size())) {
      fail(origin, line, "answer " + std::to_string(*ex.answer) + " outside candidate range");
    }
  }
  if (j.contains("cs")) {
    std::vector<int64_t> ids;
    for (const auto& v : j["cs"]) ids.push_back(v.get<int64_t>());
    ex.cs = std::move(ids);
  }
  return ex;
}

}  // namespace

Dataset parse_jsonl(const std::string& content, const std::string& origin) {
  Dataset ds;
  std::istringstream in(content);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(origin, lineno, std::string("invalid JSON: ") + e.what());
    }
    try {
      ds.examples.push_back(parse_example(j, origin, lineno));
    } catch (const nlohmann::json::exception& e) {
      fail(origin, lineno, std::string("bad field type: ") + e.what());
    }
  }
  return ds;
}

Dataset load_jsonl(const std::string& path) { return parse_jsonl(read_file(path), path); }

std::string to_jsonl(const Dataset& ds) {
  std::string out;
  for (const Example& ex : ds.examples) {
    nlohmann::json j;
    j["text"] = ex.text;
    if (ex.text_pair) j["text_pair"] = *ex.text_pair;
    if (ex.label) j["label"] = *ex.label;
    if (!ex.candidates.empty()) j["candidates"] = ex.candidates;
    if (ex.answer) j["answer"] = *ex.answer;
    if (ex.cs) j["cs"] = *ex.cs;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_jsonl(const Dataset& ds, const std::string& path) { write_file(path, to_jsonl(ds)); }

}  // namespace ket
