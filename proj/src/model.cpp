#include "docnmt/model.hpp"

#include "docnmt/errors.hpp"
#include "docnmt/vocab.hpp"

namespace docnmt {

namespace {

constexpr std::uint64_t kDocStreamSalt = 0x9e3779b97f4a7c15ULL;

Transformer build_transformer(const ModelConfig& config, ModelParams& params, std::uint64_t seed) {
  Rng rng(seed);
  return Transformer(config, params, rng);
}

}  // namespace

NmtModel::NmtModel(const ModelConfig& config, std::uint64_t seed)
    : transformer_(build_transformer(config, params_, seed)) {
  if (config.use_local()) {
    Rng rng(seed ^ kDocStreamSalt);
    doc_.emplace(config, params_, rng);
  }
}

void NmtModel::freeze_embeddings() {
  params_.freeze(Transformer::kSourceEmbedding);
  params_.freeze(Transformer::kTargetEmbedding);
}

DocSlots NmtModel::doc_slots(const std::string& doc_id, std::span<const TokenIds> local_context,
                             const GlobalCache* cache, std::span<const TokenIds> document) const {
  DocSlots slots;
  const Tensor& table = transformer_.source_embedding();
  if (config().use_global) {
    if (cache) slots.global = cache->find(doc_id);
    if (!slots.global) {
      if (document.empty()) {
        fail(ErrorKind::kMissingContext, "no global embedding for document '" + doc_id +
                                             "' and no text to compute one");
      }
      NoGradGuard no_grad;
      slots.global = global_doc_embedding(document, table).vector;
    }
  }
  if (doc_) slots.local = doc_->local(local_context, table).vector;
  return slots;
}

EncodedSource NmtModel::encode(std::span<const int> src, std::size_t rows, std::size_t width,
                               std::span<const std::size_t> lengths, const DocSlots& slots,
                               Rng* dropout_rng) const {
  const Tensor tokens = transformer_.embed_source(src, rows, width);
  const auto composed = transformer_.compose_source_sequence(tokens, lengths, slots.global, slots.local);
  return {transformer_.encode(composed, dropout_rng), composed.lengths};
}

Tensor NmtModel::logits(const Batch& batch, const DocSlots& slots, Rng* dropout_rng) const {
  const auto enc = encode(batch.src, batch.rows, batch.src_width, batch.src_lengths, slots, dropout_rng);
  return transformer_.decode(batch.tgt_in, batch.rows, batch.tgt_width, batch.tgt_lengths, enc.memory,
                             enc.lengths, dropout_rng);
}

Tensor NmtModel::loss(const Batch& batch, const GlobalCache* cache, Rng* dropout_rng) const {
  return loss(batch, cache, dropout_rng, config().label_smoothing);
}

Tensor NmtModel::loss(const Batch& batch, const GlobalCache* cache, Rng* dropout_rng,
                      double label_smoothing) const {
  DocSlots slots;
  if (config().use_global || doc_) {
    const auto sources = batch_sources(batch);
    slots = doc_slots(batch.doc_id, sources, cache, sources);
  }
  return cross_entropy_label_smoothed(logits(batch, slots, dropout_rng), batch.tgt_out,
                                      label_smoothing, Vocabulary::kPad);
}

std::vector<TokenIds> NmtModel::batch_sources(const Batch& batch) {
  std::vector<TokenIds> out;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const int* row = batch.src.data() + r * batch.src_width;
    out.emplace_back(row, row + batch.src_lengths[r] - 1);
  }
  return out;
}

}  // namespace docnmt
