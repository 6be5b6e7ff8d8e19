#include "docnmt/docembed.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "docnmt/batching.hpp"
#include "docnmt/errors.hpp"

namespace docnmt {

namespace {

Tensor row_vector(const Tensor& v) { return reshape(v, {1, v.size()}); }

// Rows of word vectors for a set of sentences, flattened in order.
Tensor window_word_vectors(std::span<const TokenIds> sentences, const Tensor& table) {
  std::vector<int> ids;
  for (const auto& s : sentences) ids.insert(ids.end(), s.begin(), s.end());
  if (ids.empty()) fail(ErrorKind::kData, "document embedding of an empty document");
  return embedding_lookup(table, ids);
}

// Padded [rows, width, d] word vectors plus lengths.
std::pair<Tensor, std::vector<std::size_t>> padded_word_vectors(std::span<const TokenIds> sentences,
                                                                const Tensor& table) {
  std::size_t width = 0;
  std::vector<std::size_t> lengths;
  for (const auto& s : sentences) {
    if (s.empty()) fail(ErrorKind::kData, "document embedding of an empty sentence");
    lengths.push_back(s.size());
    width = std::max(width, s.size());
  }
  if (lengths.empty()) fail(ErrorKind::kData, "document embedding of an empty document");
  std::vector<int> ids(lengths.size() * width, 0);
  for (std::size_t r = 0; r < lengths.size(); ++r) {
    std::copy(sentences[r].begin(), sentences[r].end(), ids.begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  const std::size_t d = table.dim(1);
  return {reshape(embedding_lookup(table, ids), {lengths.size(), width, d}), lengths};
}

}  // namespace

GruParams GruParams::create(ModelParams& params, const std::string& prefix, std::size_t d, Rng& rng) {
  GruParams g;
  g.w_ir = params.add(prefix + ".w_ir", xavier_uniform(d, d, rng));
  g.w_iz = params.add(prefix + ".w_iz", xavier_uniform(d, d, rng));
  g.w_in = params.add(prefix + ".w_in", xavier_uniform(d, d, rng));
  g.w_hr = params.add(prefix + ".w_hr", xavier_uniform(d, d, rng));
  g.w_hz = params.add(prefix + ".w_hz", xavier_uniform(d, d, rng));
  g.w_hn = params.add(prefix + ".w_hn", xavier_uniform(d, d, rng));
  g.b_ir = params.add(prefix + ".b_ir", Tensor::zeros({d}));
  g.b_iz = params.add(prefix + ".b_iz", Tensor::zeros({d}));
  g.b_in = params.add(prefix + ".b_in", Tensor::zeros({d}));
  g.b_hr = params.add(prefix + ".b_hr", Tensor::zeros({d}));
  g.b_hz = params.add(prefix + ".b_hz", Tensor::zeros({d}));
  g.b_hn = params.add(prefix + ".b_hn", Tensor::zeros({d}));
  return g;
}

RnnParams RnnParams::create(ModelParams& params, const std::string& prefix, std::size_t d, Rng& rng) {
  auto sentence = GruParams::create(params, prefix + ".sentence", d, rng);
  auto document = GruParams::create(params, prefix + ".document", d, rng);
  return {std::move(sentence), std::move(document)};
}

AttnPoolParams AttnPoolParams::create(ModelParams& params, const std::string& prefix,
                                      const ModelConfig& config, Rng& rng) {
  AttnPoolParams p;
  p.heads = config.n_heads;
  for (std::size_t l = 0; l < config.attn_pool_layers; ++l) {
    const std::string lp = prefix + "." + std::to_string(l);
    AttnPoolLayer layer;
    layer.attn = AttentionWeights::create(params, lp + ".attn", config.d_model, rng);
    layer.ffn = FeedForward::create(params, lp + ".ffn", config.d_model, config.d_ff, rng);
    p.layers.push_back(std::move(layer));
  }
  const double limit = std::sqrt(3.0 / static_cast<double>(config.d_model));
  std::vector<double> w(config.d_model);
  for (auto& x : w) x = rng.uniform(-limit, limit);
  p.score = params.add(prefix + ".score", Tensor::from({config.d_model}, std::move(w)));
  return p;
}

EnsembleWeights EnsembleWeights::create(ModelParams& params, const std::string& name, std::size_t n) {
  return {params.add(name, Tensor::zeros({n})), true};
}

Tensor EnsembleWeights::weights() const {
  return normalize ? reshape(softmax(row_vector(logits), 1), {logits.size()}) : logits;
}

Tensor gru_cell(const GruParams& p, const Tensor& x, const Tensor& h) {
  const Tensor r = sigmoid(add(linear(x, p.w_ir, p.b_ir), linear(h, p.w_hr, p.b_hr)));
  const Tensor z = sigmoid(add(linear(x, p.w_iz, p.b_iz), linear(h, p.w_hz, p.b_hz)));
  const Tensor n = tanh(add(linear(x, p.w_in, p.b_in), mul(r, linear(h, p.w_hn, p.b_hn))));
  // (1 - z) * n + z * h
  return add(sub(n, mul(z, n)), mul(z, h));
}

Tensor gru_final_states(const GruParams& p, const Tensor& seqs, std::span<const std::size_t> lengths) {
  if (seqs.rank() != 3 || seqs.dim(0) != lengths.size()) {
    fail(ErrorKind::kDimension, "gru: sequences " + to_string(seqs.shape()) + " vs " +
                                    std::to_string(lengths.size()) + " lengths");
  }
  const std::size_t rows = seqs.dim(0), width = seqs.dim(1), d = seqs.dim(2);
  for (auto len : lengths) {
    if (len == 0 || len > width) fail(ErrorKind::kData, "gru: empty or overlong sequence");
  }
  Tensor h = Tensor::zeros({rows, d});
  const bool ragged = std::any_of(lengths.begin(), lengths.end(), [&](auto n) { return n != width; });
  for (std::size_t t = 0; t < width; ++t) {
    const Tensor x = reshape(slice(seqs, 1, t, 1), {rows, d});
    const Tensor next = gru_cell(p, x, h);
    if (!ragged) {
      h = next;
      continue;
    }
    // Rows that already ended keep their state: h = m * next + (1 - m) * h.
    std::vector<double> keep(rows * d), hold(rows * d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double m = t < lengths[r] ? 1.0 : 0.0;
      std::fill_n(keep.begin() + static_cast<std::ptrdiff_t>(r * d), d, m);
      std::fill_n(hold.begin() + static_cast<std::ptrdiff_t>(r * d), d, 1.0 - m);
    }
    h = add(mul(Tensor::from({rows, d}, std::move(keep)), next),
            mul(Tensor::from({rows, d}, std::move(hold)), h));
  }
  return h;
}

Tensor sentence_rnn(const GruParams& p, const Tensor& sentence) {
  if (sentence.rank() != 2) fail(ErrorKind::kDimension, "sentence_rnn: expected [n, d]");
  const std::size_t n = sentence.dim(0), d = sentence.dim(1);
  const std::size_t lengths[] = {n};
  return reshape(gru_final_states(p, reshape(sentence, {1, n, d}), lengths), {d});
}

DocEmbedding document_rnn(const GruParams& p, const Tensor& sentence_embeddings) {
  return {sentence_rnn(p, sentence_embeddings), DocScope::kLocal, DocMethod::kRnn};
}

DocEmbedding doc_embed_avg(const Tensor& word_vectors) {
  if (word_vectors.rank() != 2) fail(ErrorKind::kDimension, "doc_embed_avg: expected [N, d]");
  return {mean(word_vectors, 0), DocScope::kLocal, DocMethod::kAvg};
}

Tensor sentence_self_attn_batch(const AttnPoolParams& p, const Tensor& seqs,
                                std::span<const std::size_t> lengths, AttnPoolTrace* trace) {
  if (seqs.rank() != 3 || seqs.dim(0) != lengths.size()) {
    fail(ErrorKind::kDimension, "sentence_self_attn: sequences " + to_string(seqs.shape()));
  }
  const std::size_t rows = seqs.dim(0), width = seqs.dim(1), d = seqs.dim(2);
  const auto mask = AttentionMask::padding(lengths, width, width);
  Tensor x = seqs;
  for (const auto& layer : p.layers) {
    auto attn = multi_head_attention(layer.attn, x, x, x, mask, p.heads);
    if (trace) trace->attention.push_back(attn.weights);
    x = feed_forward(layer.ffn, attn.output);
  }
  std::vector<double> pool(rows * width, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (lengths[r] == 0 || lengths[r] > width) fail(ErrorKind::kData, "sentence_self_attn: bad length");
    std::fill_n(pool.begin() + static_cast<std::ptrdiff_t>(r * width), lengths[r],
                1.0 / static_cast<double>(lengths[r]));
  }
  const Tensor pooled = batched_matmul(Tensor::from({rows, 1, width}, std::move(pool)), x);
  return reshape(pooled, {rows, d});
}

Tensor sentence_self_attn(const AttnPoolParams& p, const Tensor& sentence) {
  if (sentence.rank() != 2) fail(ErrorKind::kDimension, "sentence_self_attn: expected [n, d]");
  const std::size_t n = sentence.dim(0), d = sentence.dim(1);
  const std::size_t lengths[] = {n};
  return reshape(sentence_self_attn_batch(p, reshape(sentence, {1, n, d}), lengths), {d});
}

DocEmbedding doc_embed_attn(const AttnPoolParams& p, const Tensor& sentence_embeddings, Tensor* alpha) {
  if (sentence_embeddings.rank() != 2 || sentence_embeddings.dim(1) != p.score.size()) {
    fail(ErrorKind::kDimension, "doc_embed_attn: sentence embeddings " +
                                    to_string(sentence_embeddings.shape()));
  }
  const std::size_t m = sentence_embeddings.dim(0), d = sentence_embeddings.dim(1);
  const Tensor scores = scale(matmul(sentence_embeddings, reshape(p.score, {d, 1})),
                              1.0 / std::sqrt(static_cast<double>(d)));
  const Tensor weights = softmax(reshape(scores, {1, m}), 1);
  if (alpha) *alpha = reshape(weights, {m});
  return {reshape(matmul(weights, sentence_embeddings), {d}), DocScope::kLocal, DocMethod::kAttn};
}

DocEmbedding ensemble(const EnsembleWeights& weights, std::span<const DocEmbedding> docs) {
  if (docs.empty() || docs.size() != weights.logits.size()) {
    fail(ErrorKind::kDimension, "ensemble: " + std::to_string(docs.size()) + " embeddings for " +
                                    std::to_string(weights.logits.size()) + " weights");
  }
  const std::size_t d = docs.front().vector.size();
  std::vector<Tensor> rows;
  for (const auto& doc : docs) {
    if (doc.vector.size() != d || doc.scope != docs.front().scope) {
      fail(ErrorKind::kDimension, "ensemble: embeddings differ in dimension or scope");
    }
    rows.push_back(reshape(doc.vector, {1, d}));
  }
  const Tensor stacked = concat(rows, 0);
  const Tensor beta = reshape(weights.weights(), {1, docs.size()});
  return {reshape(matmul(beta, stacked), {d}), docs.front().scope, DocMethod::kEnsemble};
}

DocEmbedder::DocEmbedder(const ModelConfig& config, ModelParams& params, Rng& rng)
    : methods_(config.local_methods) {
  for (auto m : methods_) {
    if (m == DocMethod::kRnn && !rnn_) rnn_ = RnnParams::create(params, "doc.rnn", config.d_model, rng);
    if (m == DocMethod::kAttn && !attn_) attn_ = AttnPoolParams::create(params, "doc.attn", config, rng);
  }
  if (methods_.size() > 1) {
    ensemble_ = EnsembleWeights::create(params, "doc.ensemble", methods_.size());
    ensemble_->normalize = config.normalize_ensemble;
  }
}

DocEmbedding DocEmbedder::embed(DocMethod method, std::span<const TokenIds> sentences,
                                const Tensor& word_table) const {
  switch (method) {
    case DocMethod::kAvg:
      return doc_embed_avg(window_word_vectors(sentences, word_table));
    case DocMethod::kRnn: {
      if (!rnn_) fail(ErrorKind::kConfig, "rnn document embedding not configured");
      auto [seqs, lengths] = padded_word_vectors(sentences, word_table);
      const Tensor sents = gru_final_states(rnn_->sentence, seqs, lengths);
      return document_rnn(rnn_->document, sents);
    }
    case DocMethod::kAttn: {
      if (!attn_) fail(ErrorKind::kConfig, "attn document embedding not configured");
      auto [seqs, lengths] = padded_word_vectors(sentences, word_table);
      const Tensor sents = sentence_self_attn_batch(*attn_, seqs, lengths);
      return doc_embed_attn(*attn_, sents);
    }
    case DocMethod::kEnsemble:
      break;
  }
  fail(ErrorKind::kConfig, "ensemble is not a base document embedding method");
}

DocEmbedding DocEmbedder::local(std::span<const TokenIds> sentences, const Tensor& word_table) const {
  if (methods_.empty()) fail(ErrorKind::kConfig, "no local document embedding method configured");
  if (methods_.size() == 1) return embed(methods_.front(), sentences, word_table);
  std::vector<DocEmbedding> parts;
  for (auto m : methods_) parts.push_back(embed(m, sentences, word_table));
  return ensemble(*ensemble_, parts);
}

DocEmbedding global_doc_embedding(std::span<const TokenIds> sentences, const Tensor& word_table) {
  auto doc = doc_embed_avg(window_word_vectors(sentences, word_table));
  doc.scope = DocScope::kGlobal;
  return doc;
}

GlobalCache GlobalCache::build(const ParallelDocCorpus& corpus, const Tensor& word_table, DocMethod method) {
  if (method != DocMethod::kAvg) {
    fail(ErrorKind::kUnsupported, "global document embeddings support only the avg method, not " +
                                      std::string(to_string(method)));
  }
  NoGradGuard no_grad;
  GlobalCache cache;
  for (const auto& doc : corpus.documents) {
    std::vector<TokenIds> sentences;
    for (const auto& pair : doc.pairs) sentences.push_back(pair.src);
    const auto emb = global_doc_embedding(sentences, word_table);
    cache.insert(doc.doc_id, {emb.vector.data().begin(), emb.vector.data().end()});
  }
  return cache;
}

void GlobalCache::insert(std::string doc_id, std::vector<double> vector) {
  for (double v : vector) {
    if (!std::isfinite(v)) fail(ErrorKind::kNumeric, "non-finite document embedding for '" + doc_id + "'");
  }
  entries_[std::move(doc_id)] = std::move(vector);
}

std::optional<Tensor> GlobalCache::find(const std::string& doc_id) const {
  auto it = entries_.find(doc_id);
  if (it == entries_.end()) return std::nullopt;
  return Tensor::from({it->second.size()}, it->second);
}

std::string GlobalCache::dump() const {
  std::string out;
  char buf[32];
  for (const auto& [id, vec] : entries_) {
    out += id;
    out += '\t';
    for (std::size_t i = 0; i < vec.size(); ++i) {
      if (i) out += ' ';
      std::snprintf(buf, sizeof buf, "%.17g", vec[i]);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void GlobalCache::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << dump();
}

GlobalCache GlobalCache::load(const std::filesystem::path& path) {
  GlobalCache cache;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto tab = lines[i].find('\t');
    if (tab == std::string::npos) {
      fail(ErrorKind::kData, path.string() + ":" + std::to_string(i + 1) + ": expected doc_id<TAB>values");
    }
    std::vector<double> values;
    for (const auto& field : split_tokens(lines[i].substr(tab + 1))) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || ptr != field.data() + field.size()) {
        fail(ErrorKind::kData, path.string() + ":" + std::to_string(i + 1) + ": bad value '" + field + "'");
      }
      values.push_back(v);
    }
    cache.insert(lines[i].substr(0, tab), std::move(values));
  }
  return cache;
}

WindowMode parse_window_mode(std::string_view text) {
  if (text == "symmetric") return WindowMode::kSymmetric;
  if (text == "past") return WindowMode::kPast;
  if (text == "batch") return WindowMode::kBatch;
  fail(ErrorKind::kConfig, "unknown window mode '" + std::string(text) + "'");
}

SentenceRange context_window(const WindowConfig& config, std::size_t index,
                             std::span<const std::size_t> source_lengths) {
  const std::size_t total = source_lengths.size();
  if (index >= total) fail(ErrorKind::kContract, "context_window: sentence outside document");
  if (config.mode == WindowMode::kBatch) {
    std::size_t first = 0;
    for (auto count : pack_lengths(source_lengths, config.token_budget)) {
      if (index < first + count) return {first, count};
      first += count;
    }
  }
  const std::size_t first = index >= config.before ? index - config.before : 0;
  const std::size_t after = config.mode == WindowMode::kPast ? 0 : config.after;
  const std::size_t last = std::min(total - 1, index + after);
  return {first, last - first + 1};
}

}  // namespace docnmt
