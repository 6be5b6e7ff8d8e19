#include "docnmt/batching.hpp"

#include <algorithm>
#include <numeric>

#include "docnmt/errors.hpp"
#include "docnmt/random.hpp"
#include "docnmt/vocab.hpp"

namespace docnmt {

std::size_t Batch::source_tokens() const {
  std::size_t n = 0;
  for (auto len : src_lengths) n += len - 1;  // EOS is not budgeted
  return n;
}

std::vector<std::size_t> pack_lengths(std::span<const std::size_t> lengths,
                                      std::size_t token_budget) {
  std::vector<std::size_t> sizes;
  std::size_t used = 0, count = 0;
  for (auto len : lengths) {
    if (count > 0 && used + len > token_budget) {
      sizes.push_back(count);
      used = 0;
      count = 0;
    }
    used += len;
    ++count;
  }
  if (count > 0) sizes.push_back(count);
  return sizes;
}

Batch make_batch(const Document& doc, std::size_t doc_index, std::size_t first,
                 std::size_t count) {
  Batch b;
  b.doc_index = doc_index;
  b.doc_id = doc.doc_id;
  b.first_sentence = first;
  b.rows = count;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& pair = doc.pairs[first + i];
    b.lines.push_back(pair.line);
    b.src_lengths.push_back(pair.src.size() + 1);
    b.tgt_lengths.push_back(pair.tgt.size() + 1);
  }
  b.src_width = *std::max_element(b.src_lengths.begin(), b.src_lengths.end());
  b.tgt_width = *std::max_element(b.tgt_lengths.begin(), b.tgt_lengths.end());
  b.src.assign(count * b.src_width, Vocabulary::kPad);
  b.tgt_in.assign(count * b.tgt_width, Vocabulary::kPad);
  b.tgt_out.assign(count * b.tgt_width, Vocabulary::kPad);
  b.src_pad.assign(count * b.src_width, 1);
  b.tgt_pad.assign(count * b.tgt_width, 1);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& pair = doc.pairs[first + i];
    int* src = b.src.data() + i * b.src_width;
    std::copy(pair.src.begin(), pair.src.end(), src);
    src[pair.src.size()] = Vocabulary::kEos;
    std::fill_n(b.src_pad.begin() + static_cast<std::ptrdiff_t>(i * b.src_width),
                b.src_lengths[i], 0);

    int* tin = b.tgt_in.data() + i * b.tgt_width;
    int* tout = b.tgt_out.data() + i * b.tgt_width;
    tin[0] = Vocabulary::kBos;
    std::copy(pair.tgt.begin(), pair.tgt.end(), tin + 1);
    std::copy(pair.tgt.begin(), pair.tgt.end(), tout);
    tout[pair.tgt.size()] = Vocabulary::kEos;
    std::fill_n(b.tgt_pad.begin() + static_cast<std::ptrdiff_t>(i * b.tgt_width),
                b.tgt_lengths[i], 0);
  }
  return b;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  return order;
}

BatchSchedule::BatchSchedule(const ParallelDocCorpus& corpus, std::size_t token_budget,
                             std::uint64_t seed)
    : seed_(seed) {
  for (std::size_t d = 0; d < corpus.documents.size(); ++d) {
    const auto& doc = corpus.documents[d];
    std::vector<std::size_t> lengths;
    for (const auto& pair : doc.pairs) {
      if (pair.src.size() > token_budget) {
        fail(ErrorKind::kData, "sentence at line " + std::to_string(pair.line + 1) + " has " +
                                   std::to_string(pair.src.size()) +
                                   " source tokens, more than the batch budget of " +
                                   std::to_string(token_budget));
      }
      lengths.push_back(pair.src.size());
    }
    std::vector<std::size_t> ids;
    std::size_t first = 0;
    for (auto count : pack_lengths(lengths, token_budget)) {
      ids.push_back(batches_.size());
      batches_.push_back(make_batch(doc, d, first, count));
      first += count;
    }
    by_document_.push_back(std::move(ids));
  }
}

std::vector<std::size_t> BatchSchedule::epoch_order(std::uint64_t epoch) const {
  std::vector<std::size_t> order;
  order.reserve(batches_.size());
  for (auto d : shuffled_indices(by_document_.size(), seed_ + epoch)) {
    order.insert(order.end(), by_document_[d].begin(), by_document_[d].end());
  }
  return order;
}

std::vector<Batch> make_batches(const ParallelDocCorpus& corpus, std::size_t token_budget,
                                std::uint64_t shuffle_seed) {
  BatchSchedule schedule(corpus, token_budget, shuffle_seed);
  std::vector<Batch> out;
  for (auto i : schedule.epoch_order(0)) out.push_back(schedule.batch(i));
  return out;
}

}  // namespace docnmt
