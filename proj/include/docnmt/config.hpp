#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace docnmt {

enum class DocMethod { kAvg, kRnn, kAttn, kEnsemble };

std::string_view to_string(DocMethod method);
DocMethod parse_doc_method(std::string_view text);
// "off", "avg", "rnn", "attn" or '+'-joined combinations such as "rnn+attn".
std::vector<DocMethod> parse_local_methods(std::string_view text);
std::string format_local_methods(const std::vector<DocMethod>& methods);

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 2;
  std::size_t n_layers = 2;
  std::size_t d_ff = 256;
  double dropout = 0.1;
  double label_smoothing = 0.1;
  double ln_eps = 1e-6;
  std::size_t max_len = 256;
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;

  bool use_global = false;
  DocMethod global_method = DocMethod::kAvg;
  std::vector<DocMethod> local_methods;  // empty: no local slot
  // Document slots are left unscaled by default; token embeddings are
  // always multiplied by sqrt(d_model).
  bool scale_doc_slots = false;
  std::size_t attn_pool_layers = 1;
  // Ensemble weights as softmax(logits); off means raw logits as weights.
  bool normalize_ensemble = true;

  bool tie_output = false;
  bool zero_init_output = true;

  std::size_t d_k() const { return d_model / n_heads; }
  bool use_local() const { return !local_methods.empty(); }
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace docnmt
