#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "docnmt/config.hpp"
#include "docnmt/ops.hpp"
#include "docnmt/params.hpp"

namespace docnmt {

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;

  static AttentionWeights create(ModelParams& params, const std::string& prefix,
                                 std::size_t d_model, Rng& rng);
};

struct FeedForward {
  Tensor w1, b1, w2, b2;

  static FeedForward create(ModelParams& params, const std::string& prefix,
                            std::size_t d_model, std::size_t d_ff, Rng& rng);
};

struct LayerNormWeights {
  Tensor gain, bias;

  static LayerNormWeights create(ModelParams& params, const std::string& prefix,
                                 std::size_t d_model);
};

struct AttentionResult {
  Tensor output;   // [batch, queries, d_model]
  Tensor weights;  // [batch, heads, queries, keys]
};

// Scaled dot-product attention over `heads` projections of d_model / heads
// dimensions, concatenated and projected back to d_model.
AttentionResult multi_head_attention(const AttentionWeights& w, const Tensor& queries,
                                     const Tensor& keys, const Tensor& values,
                                     const AttentionMask& mask, std::size_t heads);

// max(0, x W1 + b1) W2 + b2, applied per position.
Tensor feed_forward(const FeedForward& f, const Tensor& x);

// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same angle).
Tensor positional_encoding(std::size_t length, std::size_t d_model);

enum class SlotKind { kGlobal, kLocal };

// Encoder input [Doc_k?, Doc_l?, x_1 .. x_n] for each row of a batch.
struct ComposedSource {
  Tensor embeddings;                 // [rows, slots + width, d_model]
  std::vector<std::size_t> lengths;  // unpadded length per row, slots included
  std::vector<SlotKind> slots;       // kinds of positions 0 .. slots-1

  std::size_t rows() const { return embeddings.dim(0); }
  std::size_t width() const { return embeddings.dim(1); }
  std::size_t slot_count() const { return slots.size(); }
  // Keys at or beyond lengths[b] are padding; slot positions never are.
  bool is_padding(std::size_t row, std::size_t position) const {
    return position >= lengths[row];
  }
};

struct EncoderLayer {
  AttentionWeights self_attn;
  LayerNormWeights norm1;
  FeedForward ffn;
  LayerNormWeights norm2;
};

struct DecoderLayer {
  AttentionWeights self_attn;
  LayerNormWeights norm1;
  AttentionWeights cross_attn;
  LayerNormWeights norm2;
  FeedForward ffn;
  LayerNormWeights norm3;
};

// Post-norm encoder-decoder. Passing a dropout generator selects training
// mode; nullptr evaluates deterministically.
class Transformer {
 public:
  static constexpr const char* kSourceEmbedding = "src_embed";
  static constexpr const char* kTargetEmbedding = "tgt_embed";

  Transformer(const ModelConfig& config, ModelParams& params, Rng& init_rng);

  const ModelConfig& config() const { return config_; }
  const Tensor& source_embedding() const { return src_embed_; }
  const Tensor& target_embedding() const { return tgt_embed_; }

  // Raw table rows for a padded [rows x width] id matrix.
  Tensor embed_source(std::span<const int> ids, std::size_t rows, std::size_t width) const;

  // Scales token rows by sqrt(d_model), prepends the document slots that are
  // present (global first) and adds positional encodings to every position.
  ComposedSource compose_source_sequence(const Tensor& token_embeddings,
                                         std::span<const std::size_t> lengths,
                                         const std::optional<Tensor>& doc_global,
                                         const std::optional<Tensor>& doc_local) const;

  Tensor encode(const ComposedSource& source, Rng* dropout_rng = nullptr,
                std::vector<Tensor>* attention_trace = nullptr) const;

  // Teacher-forced logits [rows * width, tgt_vocab] for every prefix
  // position of the padded target input.
  Tensor decode(std::span<const int> tgt_in, std::size_t rows, std::size_t width,
                std::span<const std::size_t> tgt_lengths, const Tensor& memory,
                std::span<const std::size_t> memory_lengths, Rng* dropout_rng = nullptr) const;

 private:
  Tensor add_positions(const Tensor& x) const;

  ModelConfig config_;
  Tensor src_embed_;
  Tensor tgt_embed_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  Tensor out_w_;
  Tensor out_b_;
};

}  // namespace docnmt
