#include "docnmt/decode.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "docnmt/errors.hpp"
#include "docnmt/ops.hpp"
#include "docnmt/vocab.hpp"

namespace docnmt {

namespace {

// Log-probabilities of the next token after each of `prefixes` (equal
// lengths), [rows, V] flattened.
std::vector<double> next_log_probs(const NmtModel& model, const EncodedSource& encoded,
                                   const std::vector<TokenIds>& prefixes) {
  const std::size_t rows = prefixes.size();
  const std::size_t width = prefixes.front().size();
  std::vector<int> tgt_in;
  tgt_in.reserve(rows * width);
  for (const auto& p : prefixes) tgt_in.insert(tgt_in.end(), p.begin(), p.end());
  const std::vector<std::size_t> lengths(rows, width);

  Tensor memory = encoded.memory;
  if (rows > 1) {
    std::vector<Tensor> copies(rows, encoded.memory);
    memory = concat(copies, 0);
  }
  const std::vector<std::size_t> memory_lengths(rows, encoded.lengths.front());
  const Tensor logits = model.transformer().decode(tgt_in, rows, width, lengths, memory, memory_lengths);
  const std::size_t vocab = logits.dim(1);
  std::vector<Tensor> last;
  last.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) last.push_back(slice(logits, 0, r * width + width - 1, 1));
  const Tensor lp = log_softmax(concat(last, 0), 1);
  return {lp.data().begin(), lp.data().begin() + rows * vocab};
}

std::size_t cap_output(const NmtModel& model, std::size_t max_output) {
  // The decoder sees BOS plus every generated token before EOS.
  return std::min(max_output, model.config().max_len - 1);
}

}  // namespace

double Hypothesis::score() const {
  return tokens.empty() ? log_prob : log_prob / static_cast<double>(tokens.size());
}

EncodedSource encode_sentence(const NmtModel& model, std::span<const int> source,
                              const DocSlots& slots) {
  if (source.empty()) fail(ErrorKind::kData, "cannot translate an empty sentence");
  std::vector<int> ids(source.begin(), source.end());
  ids.push_back(Vocabulary::kEos);
  const std::vector<std::size_t> lengths{ids.size()};
  return model.encode(ids, 1, ids.size(), lengths, slots);
}

Hypothesis greedy_decode(const NmtModel& model, const EncodedSource& encoded, std::size_t max_output) {
  NoGradGuard no_grad;
  max_output = cap_output(model, max_output);
  TokenIds prefix{Vocabulary::kBos};
  Hypothesis hyp;
  while (true) {
    const auto lp = next_log_probs(model, encoded, {prefix});
    int next = Vocabulary::kEos;
    if (hyp.tokens.size() < max_output) {
      next = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    }
    hyp.tokens.push_back(next);
    hyp.log_prob += lp[static_cast<std::size_t>(next)];
    if (next == Vocabulary::kEos) return hyp;
    prefix.push_back(next);
  }
}

std::vector<Hypothesis> beam_search(const NmtModel& model, const EncodedSource& encoded,
                                    std::size_t width, std::size_t max_output) {
  if (width == 0) fail(ErrorKind::kConfig, "beam width must be positive");
  NoGradGuard no_grad;
  max_output = cap_output(model, max_output);
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> finished;

  struct Candidate {
    std::size_t parent;
    int token;
    double log_prob;
  };

  while (!live.empty() && finished.size() < width) {
    std::vector<TokenIds> prefixes;
    for (const auto& h : live) {
      TokenIds p{Vocabulary::kBos};
      p.insert(p.end(), h.tokens.begin(), h.tokens.end());
      prefixes.push_back(std::move(p));
    }
    const auto lp = next_log_probs(model, encoded, prefixes);
    const std::size_t vocab = lp.size() / live.size();
    const bool force_eos = live.front().tokens.size() >= max_output;

    std::vector<Candidate> candidates;
    for (std::size_t h = 0; h < live.size(); ++h) {
      for (std::size_t v = 0; v < vocab; ++v) {
        if (force_eos && static_cast<int>(v) != Vocabulary::kEos) continue;
        candidates.push_back({h, static_cast<int>(v), live[h].log_prob + lp[h * vocab + v]});
      }
    }
    // Live prefixes share one length, so ordering by log-probability is
    // ordering by normalized score.
    const std::size_t keep = std::min(width - finished.size(), candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), [](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const auto& c = candidates[i];
      Hypothesis h = live[c.parent];
      h.tokens.push_back(c.token);
      h.log_prob = c.log_prob;
      (c.token == Vocabulary::kEos ? finished : next).push_back(std::move(h));
    }
    live = std::move(next);
  }
  std::stable_sort(finished.begin(), finished.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.score() > b.score(); });
  return finished;
}

std::vector<TokenIds> translate_document(const NmtModel& model, const std::string& doc_id,
                                         std::span<const TokenIds> sentences, const GlobalCache* cache,
                                         const TranslateOptions& options) {
  if (sentences.empty()) {
    fail(ErrorKind::kMissingContext, "document '" + doc_id + "' has no sentences to translate");
  }
  std::vector<std::size_t> lengths;
  for (const auto& s : sentences) lengths.push_back(s.size());
  const std::span<const TokenIds> text = options.embed_missing_documents ? sentences : std::span<const TokenIds>{};

  std::vector<TokenIds> out;
  for (std::size_t j = 0; j < sentences.size(); ++j) {
    DocSlots slots;
    if (model.config().use_global || model.config().use_local()) {
      NoGradGuard no_grad;
      const auto range = context_window(options.window, j, lengths);
      slots = model.doc_slots(doc_id, sentences.subspan(range.first, range.count), cache, text);
    }
    const auto encoded = encode_sentence(model, sentences[j], slots);
    const auto max_output = options.decode.max_output(sentences[j].size());
    Hypothesis best = options.decode.beam_width == 1
                          ? greedy_decode(model, encoded, max_output)
                          : beam_search(model, encoded, options.decode.beam_width, max_output).front();
    if (!best.tokens.empty() && best.tokens.back() == Vocabulary::kEos) best.tokens.pop_back();
    out.push_back(std::move(best.tokens));
  }
  return out;
}

}  // namespace docnmt
