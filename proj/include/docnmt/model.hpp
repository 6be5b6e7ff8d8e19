#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "docnmt/batching.hpp"
#include "docnmt/config.hpp"
#include "docnmt/docembed.hpp"
#include "docnmt/params.hpp"
#include "docnmt/transformer.hpp"

namespace docnmt {

struct DocSlots {
  std::optional<Tensor> global;
  std::optional<Tensor> local;
};

struct EncodedSource {
  Tensor memory;                     // [rows, width, d_model]
  std::vector<std::size_t> lengths;  // valid keys per row, slots included
};

// Transformer plus the local document generators, sharing one parameter
// store. Transformer weights draw from the seed's stream and document
// generator weights from a separate stream, so enabling document slots does
// not change the initial Transformer weights.
class NmtModel {
 public:
  NmtModel(const ModelConfig& config, std::uint64_t seed);
  NmtModel(const NmtModel&) = delete;
  NmtModel& operator=(const NmtModel&) = delete;
  NmtModel(NmtModel&&) = default;

  const ModelConfig& config() const { return transformer_.config(); }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  const Transformer& transformer() const { return transformer_; }
  const std::optional<DocEmbedder>& doc_embedder() const { return doc_; }

  // Freezes both word-embedding tables.
  void freeze_embeddings();

  // Slots configured for this model, computed for a set of contiguous
  // sentences of one document. Global comes from the cache (or, when absent
  // there, from `document` if given).
  DocSlots doc_slots(const std::string& doc_id, std::span<const TokenIds> local_context,
                     const GlobalCache* cache,
                     std::span<const TokenIds> document = {}) const;

  EncodedSource encode(std::span<const int> src, std::size_t rows, std::size_t width,
                       std::span<const std::size_t> lengths, const DocSlots& slots,
                       Rng* dropout_rng = nullptr) const;

  Tensor logits(const Batch& batch, const DocSlots& slots, Rng* dropout_rng = nullptr) const;

  // Label-smoothed teacher-forced loss; the batch itself is the local context.
  Tensor loss(const Batch& batch, const GlobalCache* cache, Rng* dropout_rng = nullptr) const;
  // Same with an explicit smoothing mass; 0 gives the mean token NLL.
  Tensor loss(const Batch& batch, const GlobalCache* cache, Rng* dropout_rng,
              double label_smoothing) const;

  // Source ids of a batch without EOS, one entry per row.
  static std::vector<TokenIds> batch_sources(const Batch& batch);

 private:
  ModelParams params_;
  Transformer transformer_;
  std::optional<DocEmbedder> doc_;
};

}  // namespace docnmt
