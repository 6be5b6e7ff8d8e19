#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "docnmt/corpus.hpp"

namespace docnmt {

// A contiguous run of sentences from one document, padded for the model.
// Source rows are ids + EOS; target input rows BOS + ids; target output
// rows ids + EOS.
struct Batch {
  std::size_t doc_index = 0;
  std::string doc_id;
  std::size_t first_sentence = 0;  // index within the document
  std::vector<std::size_t> lines;  // corpus line of each row

  std::size_t rows = 0;
  std::size_t src_width = 0;
  std::size_t tgt_width = 0;
  std::vector<int> src;      // rows x src_width
  std::vector<int> tgt_in;   // rows x tgt_width
  std::vector<int> tgt_out;  // rows x tgt_width
  std::vector<std::size_t> src_lengths;
  std::vector<std::size_t> tgt_lengths;
  std::vector<std::uint8_t> src_pad;  // 1 where src is PAD
  std::vector<std::uint8_t> tgt_pad;

  std::size_t source_tokens() const;
};

// Greedy packing of one document: a batch grows while its summed source
// length stays within budget. Returns batch sizes in document order.
std::vector<std::size_t> pack_lengths(std::span<const std::size_t> lengths,
                                      std::size_t token_budget);

Batch make_batch(const Document& doc, std::size_t doc_index,
                 std::size_t first, std::size_t count);

// Batches for every document, documents shuffled by seed; batches within a
// document keep document order.
std::vector<Batch> make_batches(const ParallelDocCorpus& corpus,
                                std::size_t token_budget,
                                std::uint64_t shuffle_seed);

// Fixed per-document packing with an epoch-dependent document order.
class BatchSchedule {
 public:
  BatchSchedule(const ParallelDocCorpus& corpus, std::size_t token_budget,
                std::uint64_t seed);

  std::size_t batches_per_epoch() const { return batches_.size(); }
  // Batch order for an epoch; epoch e shuffles documents with seed + e.
  std::vector<std::size_t> epoch_order(std::uint64_t epoch) const;
  const Batch& batch(std::size_t i) const { return batches_[i]; }
  std::span<const Batch> all() const { return batches_; }

 private:
  std::vector<Batch> batches_;
  std::vector<std::vector<std::size_t>> by_document_;
  std::uint64_t seed_;
};

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

}  // namespace docnmt
