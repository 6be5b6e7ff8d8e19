#pragma once

#include <span>
#include <vector>

#include "docnmt/docembed.hpp"
#include "docnmt/model.hpp"

namespace docnmt {

struct Hypothesis {
  TokenIds tokens;  // generated ids, EOS included when finished
  double log_prob = 0.0;
  // log_prob / tokens.size()
  double score() const;
};

struct DecodeOptions {
  std::size_t beam_width = 4;
  // Output is capped at length_ratio * |source| + length_offset tokens
  // before EOS.
  std::size_t length_ratio = 2;
  std::size_t length_offset = 10;

  std::size_t max_output(std::size_t source_length) const {
    return length_ratio * source_length + length_offset;
  }
};

// Encodes one source sentence (ids without EOS) with its document slots.
EncodedSource encode_sentence(const NmtModel& model, std::span<const int> source,
                              const DocSlots& slots);

// Argmax at every step; EOS is forced once max_output tokens exist.
Hypothesis greedy_decode(const NmtModel& model, const EncodedSource& encoded,
                         std::size_t max_output);

// Keeps the `width` best prefixes by length-normalized score. Finished
// hypotheses leave the beam; the search ends once `width` have finished.
// Returns every finished hypothesis, best first.
std::vector<Hypothesis> beam_search(const NmtModel& model, const EncodedSource& encoded,
                                    std::size_t width, std::size_t max_output);

struct TranslateOptions {
  DecodeOptions decode;
  WindowConfig window;
  // Compute a missing global embedding from the document text rather than
  // failing.
  bool embed_missing_documents = true;
};

// Translates the sentences of one document in order; the output ids exclude
// EOS.
std::vector<TokenIds> translate_document(const NmtModel& model, const std::string& doc_id,
                                         std::span<const TokenIds> sentences,
                                         const GlobalCache* cache,
                                         const TranslateOptions& options = {});

}  // namespace docnmt
