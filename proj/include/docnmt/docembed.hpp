#pragma once

// Document embeddings: word-vector average, two-level GRU ("document RNN"),
// self-attention sentence encoder with a learned weighted sum, and a learned
// convex ensemble of several of them. Global embeddings summarise a whole
// document from frozen word vectors and are cached; local embeddings
// summarise a window of neighbouring sentences and are trained end to end.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "docnmt/config.hpp"
#include "docnmt/corpus.hpp"
#include "docnmt/params.hpp"
#include "docnmt/transformer.hpp"

namespace docnmt {

enum class DocScope { kGlobal, kLocal };

struct DocEmbedding {
  Tensor vector;  // [d_model]
  DocScope scope = DocScope::kLocal;
  DocMethod method = DocMethod::kAvg;
};

// h' = (1 - z) * n + z * h with
//   r = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
//   z = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
//   n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
struct GruParams {
  Tensor w_ir, w_iz, w_in, w_hr, w_hz, w_hn;
  Tensor b_ir, b_iz, b_in, b_hr, b_hz, b_hn;

  static GruParams create(ModelParams& params, const std::string& prefix, std::size_t d, Rng& rng);
};

struct RnnParams {
  GruParams sentence;
  GruParams document;

  static RnnParams create(ModelParams& params, const std::string& prefix, std::size_t d, Rng& rng);
};

struct AttnPoolLayer {
  AttentionWeights attn;
  FeedForward ffn;
};

struct AttnPoolParams {
  std::vector<AttnPoolLayer> layers;
  Tensor score;  // [d]; sentence weights are softmax_j(score . Sent_j / sqrt(d))
  std::size_t heads = 1;

  static AttnPoolParams create(ModelParams& params, const std::string& prefix,
                               const ModelConfig& config, Rng& rng);
};

struct EnsembleWeights {
  Tensor logits;  // [N]
  bool normalize = true;

  static EnsembleWeights create(ModelParams& params, const std::string& name, std::size_t n);
  // softmax(logits) when normalizing, the raw logits otherwise.
  Tensor weights() const;
};

// x [rows, d], h [rows, d] -> [rows, d]
Tensor gru_cell(const GruParams& p, const Tensor& x, const Tensor& h);

// Runs the GRU from a zero state over each row of seqs [rows, width, d] and
// returns the state after lengths[r] steps, [rows, d].
Tensor gru_final_states(const GruParams& p, const Tensor& seqs,
                        std::span<const std::size_t> lengths);

// sentence [n, d] -> final hidden state [d]
Tensor sentence_rnn(const GruParams& p, const Tensor& sentence);

// sentence embeddings [m, d] in document order -> final document state
DocEmbedding document_rnn(const GruParams& p, const Tensor& sentence_embeddings);

// word vectors [N, d] -> mean
DocEmbedding doc_embed_avg(const Tensor& word_vectors);

struct AttnPoolTrace {
  std::vector<Tensor> attention;  // per layer, [rows, heads, width, width]
};

// Self-attention then per-position FFN, repeated per layer, then a masked
// mean over positions: seqs [rows, width, d] -> [rows, d].
Tensor sentence_self_attn_batch(const AttnPoolParams& p, const Tensor& seqs,
                                std::span<const std::size_t> lengths,
                                AttnPoolTrace* trace = nullptr);
Tensor sentence_self_attn(const AttnPoolParams& p, const Tensor& sentence);

// Weighted sum of sentence embeddings [m, d]; alpha [m] is written if asked.
DocEmbedding doc_embed_attn(const AttnPoolParams& p, const Tensor& sentence_embeddings,
                            Tensor* alpha = nullptr);

DocEmbedding ensemble(const EnsembleWeights& weights, std::span<const DocEmbedding> docs);

// Local-context generator holding the parameters for the configured methods.
class DocEmbedder {
 public:
  DocEmbedder(const ModelConfig& config, ModelParams& params, Rng& rng);

  const std::vector<DocMethod>& methods() const { return methods_; }
  const std::optional<RnnParams>& rnn() const { return rnn_; }
  const std::optional<AttnPoolParams>& attn() const { return attn_; }
  const std::optional<EnsembleWeights>& ensemble_weights() const { return ensemble_; }

  // One method over a window of sentences (source ids, no EOS).
  DocEmbedding embed(DocMethod method, std::span<const TokenIds> sentences,
                     const Tensor& word_table) const;
  // All configured methods, ensembled when there are several.
  DocEmbedding local(std::span<const TokenIds> sentences, const Tensor& word_table) const;

 private:
  std::vector<DocMethod> methods_;
  std::optional<RnnParams> rnn_;
  std::optional<AttnPoolParams> attn_;
  std::optional<EnsembleWeights> ensemble_;
};

// Average of all word vectors of a document.
DocEmbedding global_doc_embedding(std::span<const TokenIds> sentences, const Tensor& word_table);

// doc_id -> global embedding, built once from frozen word vectors.
class GlobalCache {
 public:
  // Only DocMethod::kAvg is supported for the global scope.
  static GlobalCache build(const ParallelDocCorpus& corpus, const Tensor& word_table,
                           DocMethod method = DocMethod::kAvg);

  // "doc_id<TAB>v_1 v_2 ... v_d" per line, values printed round-trip exact.
  static GlobalCache load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string dump() const;

  void insert(std::string doc_id, std::vector<double> vector);
  std::optional<Tensor> find(const std::string& doc_id) const;
  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, std::vector<double>>& entries() const { return entries_; }

  bool operator==(const GlobalCache&) const = default;

 private:
  std::map<std::string, std::vector<double>> entries_;
};

// How neighbouring sentences are gathered at inference time.
enum class WindowMode { kSymmetric, kPast, kBatch };

struct WindowConfig {
  WindowMode mode = WindowMode::kSymmetric;
  std::size_t before = 2;
  std::size_t after = 1;
  std::size_t token_budget = 512;  // kBatch: reuse the training packing
};

WindowMode parse_window_mode(std::string_view text);

struct SentenceRange {
  std::size_t first = 0;
  std::size_t count = 0;
};

// Context window of sentence `index`, clipped at the document boundaries.
// `source_lengths` are only consulted in kBatch mode.
SentenceRange context_window(const WindowConfig& config, std::size_t index,
                             std::span<const std::size_t> source_lengths);

}  // namespace docnmt
