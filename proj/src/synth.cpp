#include "ket/synth.hpp"

#include <array>
#include <stdexcept>
#include <vector>

#include "ket/rng.hpp"

namespace ket {

namespace {

constexpr std::array<const char*, 16> kSubjects = {
    "balo", "demi", "kura", "lano", "mira", "nodi", "rasu", "selo",
    "tiva", "bena", "dalo", "kemi", "luro", "masi", "neva", "rilo"};
constexpr std::array<const char*, 16> kObjects = {
    "boma", "dira", "kelo", "luna", "moba", "nilo", "rada", "semi",
    "tolu", "bika", "dumo", "kani", "lepo", "musa", "nera", "rovi"};
constexpr std::array<const char*, 12> kVerbs = {
    "nudged", "greeted", "phoned",  "hugged",  "teased",  "trailed",
    "quizzed", "briefed", "saluted", "dared",  "coached", "sketched"};
constexpr std::array<const char*, 4> kFillers = {"today", "at the park", "after lunch",
                                                 "by the lake"};
constexpr const char* kTails[2] = {"calm", "upset"};

struct Fact {
  std::string head;
  int bit = 0;
};

// bits for a pool: exactly half zero (rounded down), shuffled.
std::vector<int> balanced_bits(size_t n, Rng& rng) {
  std::vector<int> bits(n, 1);
  for (size_t i = 0; i < n / 2; ++i) bits[i] = 0;
  rng.shuffle(bits);
  return bits;
}

std::string sentence_for(const Fact& f, Rng& rng) {
  return f.head + " " + kFillers[rng.below(kFillers.size())] + ".";
}

}  // namespace

SynthData synth_generate(uint64_t seed, int64_t kb_size, int64_t train_n, int64_t test_n) {
  if (kb_size < 1 || train_n < 1 || test_n < 1) {
    throw std::invalid_argument("synth: sizes must be positive");
  }
  if (test_n % 2 != 0) throw std::invalid_argument("synth: test_n must be even");
  if (kb_size < test_n + 2) {
    throw std::invalid_argument("synth: kb_size must exceed test_n by at least 2");
  }
  const int64_t max_facts =
      static_cast<int64_t>(kSubjects.size() * kVerbs.size() * kObjects.size());
  if (kb_size > max_facts) {
    throw std::invalid_argument("synth: kb_size exceeds the " + std::to_string(max_facts) +
                                " distinct events available");
  }

  Rng rng(seed);

  // Every (subject, verb, object) triple is a distinct event; take a
  // shuffled prefix so heads never repeat.
  std::vector<int64_t> triples(static_cast<size_t>(max_facts));
  for (size_t i = 0; i < triples.size(); ++i) triples[i] = static_cast<int64_t>(i);
  rng.shuffle(triples);

  const size_t n_train_facts = static_cast<size_t>(kb_size - test_n);
  std::vector<Fact> facts;
  facts.reserve(static_cast<size_t>(kb_size));
  const std::vector<int> train_bits = balanced_bits(n_train_facts, rng);
  const std::vector<int> test_bits = balanced_bits(static_cast<size_t>(test_n), rng);
  for (size_t i = 0; i < static_cast<size_t>(kb_size); ++i) {
    const int64_t t = triples[i];
    const size_t s = static_cast<size_t>(t) % kSubjects.size();
    const size_t v = (static_cast<size_t>(t) / kSubjects.size()) % kVerbs.size();
    const size_t o = static_cast<size_t>(t) / (kSubjects.size() * kVerbs.size());
    Fact f;
    f.head = std::string(kSubjects[s]) + " " + kVerbs[v] + " " + kObjects[o];
    f.bit = i < n_train_facts ? train_bits[i] : test_bits[i - n_train_facts];
    facts.push_back(std::move(f));
  }

  SynthData out;
  out.templates_tsv = "xReact\tAs a result, PersonX feels {tail}.\n";
  for (const Fact& f : facts) {
    out.kb_tsv += f.head + "\txReact\t" + kTails[f.bit] + "\n";
  }

  for (int64_t i = 0; i < train_n; ++i) {
    const Fact& f = facts[static_cast<size_t>(i) % n_train_facts];
    Example ex;
    ex.text = sentence_for(f, rng);
    ex.label = f.bit;
    out.train.examples.push_back(std::move(ex));
  }
  for (int64_t i = 0; i < test_n; ++i) {
    const Fact& f = facts[n_train_facts + static_cast<size_t>(i)];
    Example ex;
    ex.text = sentence_for(f, rng);
    ex.label = f.bit;
    out.test.examples.push_back(std::move(ex));
  }
  return out;
}

}  // namespace ket
