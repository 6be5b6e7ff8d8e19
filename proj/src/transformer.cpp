#include "docnmt/transformer.hpp"

#include <cmath>

#include "docnmt/errors.hpp"

namespace docnmt {

AttentionWeights AttentionWeights::create(ModelParams& params, const std::string& prefix,
                                          std::size_t d, Rng& rng) {
  AttentionWeights w;
  w.wq = params.add(prefix + ".wq", xavier_uniform(d, d, rng));
  w.bq = params.add(prefix + ".bq", Tensor::zeros({d}));
  w.wk = params.add(prefix + ".wk", xavier_uniform(d, d, rng));
  w.bk = params.add(prefix + ".bk", Tensor::zeros({d}));
  w.wv = params.add(prefix + ".wv", xavier_uniform(d, d, rng));
  w.bv = params.add(prefix + ".bv", Tensor::zeros({d}));
  w.wo = params.add(prefix + ".wo", xavier_uniform(d, d, rng));
  w.bo = params.add(prefix + ".bo", Tensor::zeros({d}));
  return w;
}

FeedForward FeedForward::create(ModelParams& params, const std::string& prefix, std::size_t d,
                                std::size_t d_ff, Rng& rng) {
  FeedForward f;
  f.w1 = params.add(prefix + ".w1", xavier_uniform(d, d_ff, rng));
  f.b1 = params.add(prefix + ".b1", Tensor::zeros({d_ff}));
  f.w2 = params.add(prefix + ".w2", xavier_uniform(d_ff, d, rng));
  f.b2 = params.add(prefix + ".b2", Tensor::zeros({d}));
  return f;
}

LayerNormWeights LayerNormWeights::create(ModelParams& params, const std::string& prefix,
                                          std::size_t d) {
  return {params.add(prefix + ".gain", Tensor::full({d}, 1.0)),
          params.add(prefix + ".bias", Tensor::zeros({d}))};
}

AttentionResult multi_head_attention(const AttentionWeights& w, const Tensor& queries,
                                     const Tensor& keys, const Tensor& values,
                                     const AttentionMask& mask, std::size_t heads) {
  if (queries.rank() != 3 || keys.rank() != 3 || values.shape() != keys.shape() ||
      queries.dim(0) != keys.dim(0) || queries.dim(2) != keys.dim(2)) {
    fail(ErrorKind::kDimension, "attention: queries " + to_string(queries.shape()) + ", keys " +
                                    to_string(keys.shape()) + ", values " + to_string(values.shape()));
  }
  const std::size_t batch = queries.dim(0), nq = queries.dim(1), nk = keys.dim(1);
  const std::size_t d = queries.dim(2);
  if (heads == 0 || d % heads != 0) {
    fail(ErrorKind::kConfig, "attention: d_model " + std::to_string(d) + " is not divisible by " +
                                 std::to_string(heads) + " heads");
  }
  const std::size_t dk = d / heads;
  const auto split = [&](const Tensor& x, std::size_t len) {
    return permute(reshape(x, {batch, len, heads, dk}), {0, 2, 1, 3});
  };
  const Tensor q = split(linear(queries, w.wq, w.bq), nq);
  const Tensor k = split(linear(keys, w.wk, w.bk), nk);
  const Tensor v = split(linear(values, w.wv, w.bv), nk);
  const Tensor scores = scale(batched_matmul(q, k, true), 1.0 / std::sqrt(static_cast<double>(dk)));
  const Tensor weights = softmax(masked_fill(scores, mask), 3);
  const Tensor context = reshape(permute(batched_matmul(weights, v), {0, 2, 1, 3}), {batch, nq, d});
  return {linear(context, w.wo, w.bo), weights};
}

Tensor feed_forward(const FeedForward& f, const Tensor& x) {
  return linear(relu(linear(x, f.w1, f.b1)), f.w2, f.b2);
}

Tensor positional_encoding(std::size_t length, std::size_t d_model) {
  std::vector<double> pe(length * d_model);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      pe[pos * d_model + i] = std::sin(angle);
      if (i + 1 < d_model) pe[pos * d_model + i + 1] = std::cos(angle);
    }
  }
  return Tensor::from({length, d_model}, std::move(pe));
}

Transformer::Transformer(const ModelConfig& config, ModelParams& params, Rng& rng)
    : config_(config) {
  config_.validate();
  if (config_.src_vocab == 0 || config_.tgt_vocab == 0) {
    fail(ErrorKind::kConfig, "vocabulary sizes must be set before building the model");
  }
  const std::size_t d = config_.d_model;
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(d));
  src_embed_ = params.add(kSourceEmbedding, normal_init({config_.src_vocab, d}, embed_std, rng));
  tgt_embed_ = params.add(kTargetEmbedding, normal_init({config_.tgt_vocab, d}, embed_std, rng));
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    EncoderLayer layer;
    layer.self_attn = AttentionWeights::create(params, p + ".self_attn", d, rng);
    layer.norm1 = LayerNormWeights::create(params, p + ".norm1", d);
    layer.ffn = FeedForward::create(params, p + ".ffn", d, config_.d_ff, rng);
    layer.norm2 = LayerNormWeights::create(params, p + ".norm2", d);
    encoder_.push_back(std::move(layer));
  }
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    DecoderLayer layer;
    layer.self_attn = AttentionWeights::create(params, p + ".self_attn", d, rng);
    layer.norm1 = LayerNormWeights::create(params, p + ".norm1", d);
    layer.cross_attn = AttentionWeights::create(params, p + ".cross_attn", d, rng);
    layer.norm2 = LayerNormWeights::create(params, p + ".norm2", d);
    layer.ffn = FeedForward::create(params, p + ".ffn", d, config_.d_ff, rng);
    layer.norm3 = LayerNormWeights::create(params, p + ".norm3", d);
    decoder_.push_back(std::move(layer));
  }
  if (!config_.tie_output) {
    out_w_ = params.add("out.w", config_.zero_init_output ? Tensor::zeros({d, config_.tgt_vocab})
                                                          : xavier_uniform(d, config_.tgt_vocab, rng));
  }
  out_b_ = params.add("out.b", Tensor::zeros({config_.tgt_vocab}));
}

Tensor Transformer::embed_source(std::span<const int> ids, std::size_t rows, std::size_t width) const {
  if (ids.size() != rows * width) fail(ErrorKind::kDimension, "embed_source: id matrix size mismatch");
  return reshape(embedding_lookup(src_embed_, ids), {rows, width, config_.d_model});
}

Tensor Transformer::add_positions(const Tensor& x) const {
  const std::size_t rows = x.dim(0), len = x.dim(1), d = x.dim(2);
  if (len > config_.max_len) {
    fail(ErrorKind::kDimension, "sequence of length " + std::to_string(len) + " exceeds max_len " +
                                    std::to_string(config_.max_len));
  }
  const Tensor pe = positional_encoding(len, d);
  std::vector<double> tiled;
  tiled.reserve(rows * len * d);
  for (std::size_t r = 0; r < rows; ++r) tiled.insert(tiled.end(), pe.data().begin(), pe.data().end());
  return add(x, Tensor::from({rows, len, d}, std::move(tiled)));
}

ComposedSource Transformer::compose_source_sequence(const Tensor& token_embeddings,
                                                    std::span<const std::size_t> lengths,
                                                    const std::optional<Tensor>& doc_global,
                                                    const std::optional<Tensor>& doc_local) const {
  const std::size_t d = config_.d_model;
  if (token_embeddings.rank() != 3 || token_embeddings.dim(2) != d ||
      token_embeddings.dim(0) != lengths.size()) {
    fail(ErrorKind::kConfig, "compose: token embeddings " + to_string(token_embeddings.shape()) +
                                 " do not match d_model " + std::to_string(d) + " and " +
                                 std::to_string(lengths.size()) + " rows");
  }
  const std::size_t rows = token_embeddings.dim(0);
  const double token_scale = std::sqrt(static_cast<double>(d));
  const Tensor tokens = scale(token_embeddings, token_scale);

  ComposedSource out;
  std::vector<Tensor> parts;
  const auto add_slot = [&](const std::optional<Tensor>& vec, SlotKind kind) {
    if (!vec) return;
    if (vec->size() != d) {
      fail(ErrorKind::kConfig, "compose: document vector " + to_string(vec->shape()) +
                                   " does not have d_model " + std::to_string(d) + " entries");
    }
    Tensor slot = reshape(*vec, {1, 1, d});
    if (config_.scale_doc_slots) slot = scale(slot, token_scale);
    if (rows > 1) {
      std::vector<Tensor> copies(rows, slot);
      slot = concat(copies, 0);
    }
    parts.push_back(std::move(slot));
    out.slots.push_back(kind);
  };
  add_slot(doc_global, SlotKind::kGlobal);
  add_slot(doc_local, SlotKind::kLocal);

  Tensor sequence = tokens;
  if (!parts.empty()) {
    parts.push_back(tokens);
    sequence = concat(parts, 1);
  }
  out.embeddings = add_positions(sequence);
  for (auto len : lengths) out.lengths.push_back(len + out.slots.size());
  return out;
}

Tensor Transformer::encode(const ComposedSource& source, Rng* dropout_rng,
                           std::vector<Tensor>* attention_trace) const {
  const bool train = dropout_rng != nullptr;
  Rng unused(0);
  Rng& rng = train ? *dropout_rng : unused;
  const double p = config_.dropout;
  const auto mask = AttentionMask::padding(source.lengths, source.width(), source.width());
  Tensor x = dropout(source.embeddings, p, train, rng);
  for (const auto& layer : encoder_) {
    auto attn = multi_head_attention(layer.self_attn, x, x, x, mask, config_.n_heads);
    if (attention_trace) attention_trace->push_back(attn.weights);
    x = layer_norm(add(x, dropout(attn.output, p, train, rng)), layer.norm1.gain, layer.norm1.bias,
                   config_.ln_eps);
    x = layer_norm(add(x, dropout(feed_forward(layer.ffn, x), p, train, rng)), layer.norm2.gain,
                   layer.norm2.bias, config_.ln_eps);
  }
  return x;
}

Tensor Transformer::decode(std::span<const int> tgt_in, std::size_t rows, std::size_t width,
                           std::span<const std::size_t> tgt_lengths, const Tensor& memory,
                           std::span<const std::size_t> memory_lengths, Rng* dropout_rng) const {
  if (width > config_.max_len) {
    fail(ErrorKind::kDimension, "target prefix of length " + std::to_string(width) +
                                    " exceeds max_len " + std::to_string(config_.max_len));
  }
  if (tgt_in.size() != rows * width || tgt_lengths.size() != rows || memory.dim(0) != rows) {
    fail(ErrorKind::kDimension, "decode: batch shape mismatch");
  }
  const bool train = dropout_rng != nullptr;
  Rng unused(0);
  Rng& rng = train ? *dropout_rng : unused;
  const double p = config_.dropout;
  const std::size_t d = config_.d_model;

  Tensor y = scale(reshape(embedding_lookup(tgt_embed_, tgt_in), {rows, width, d}),
                   std::sqrt(static_cast<double>(d)));
  y = dropout(add_positions(y), p, train, rng);
  const auto self_mask = AttentionMask::causal(tgt_lengths, width);
  const auto cross_mask = AttentionMask::padding(memory_lengths, width, memory.dim(1));
  for (const auto& layer : decoder_) {
    auto self_attn = multi_head_attention(layer.self_attn, y, y, y, self_mask, config_.n_heads);
    y = layer_norm(add(y, dropout(self_attn.output, p, train, rng)), layer.norm1.gain,
                   layer.norm1.bias, config_.ln_eps);
    auto cross = multi_head_attention(layer.cross_attn, y, memory, memory, cross_mask, config_.n_heads);
    y = layer_norm(add(y, dropout(cross.output, p, train, rng)), layer.norm2.gain, layer.norm2.bias,
                   config_.ln_eps);
    y = layer_norm(add(y, dropout(feed_forward(layer.ffn, y), p, train, rng)), layer.norm3.gain,
                   layer.norm3.bias, config_.ln_eps);
  }
  const Tensor flat = reshape(y, {rows * width, d});
  const Tensor projection = config_.tie_output ? transpose(tgt_embed_) : out_w_;
  return add_rowwise(matmul(flat, projection), out_b_);
}

}  // namespace docnmt
