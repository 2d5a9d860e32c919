#pragma once

#include <cstdint>
#include <string>

#include "ket/dataset.hpp"

namespace ket {

// A generated task whose label is readable only through the knowledge base.
// Each KB fact is a unique "subject verb object" event carrying a random
// bit, rendered through a tail-only template as one of two descriptions.
// Sentences mention the event; the label is the fact's bit, so without the
// KB the label is independent of the sentence and Bayes accuracy is 0.5.
// Train and test draw from disjoint fact pools (test: one fresh fact per
// example, bits exactly balanced), so memorizing training sentences does
// not transfer.
struct SynthData {
  std::string kb_tsv;
  std::string templates_tsv;
  Dataset train;
  Dataset test;
};

// kb_size facts total: kb_size - test_n for training, test_n for test.
// Requires test_n even and at least 2 training facts.
SynthData synth_generate(uint64_t seed, int64_t kb_size, int64_t train_n, int64_t test_n);

}  // namespace ket
