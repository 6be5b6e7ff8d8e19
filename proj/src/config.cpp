#include "docnmt/config.hpp"

#include "docnmt/errors.hpp"

namespace docnmt {

std::string_view to_string(DocMethod method) {
  switch (method) {
    case DocMethod::kAvg: return "avg";
    case DocMethod::kRnn: return "rnn";
    case DocMethod::kAttn: return "attn";
    case DocMethod::kEnsemble: return "ensemble";
  }
  return "?";
}

DocMethod parse_doc_method(std::string_view text) {
  if (text == "avg") return DocMethod::kAvg;
  if (text == "rnn") return DocMethod::kRnn;
  if (text == "attn") return DocMethod::kAttn;
  fail(ErrorKind::kConfig, "unknown document embedding method '" + std::string(text) + "'");
}

std::vector<DocMethod> parse_local_methods(std::string_view text) {
  std::vector<DocMethod> out;
  if (text == "off" || text.empty()) return out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto plus = text.find('+', start);
    const auto part = text.substr(start, plus == std::string_view::npos ? std::string_view::npos : plus - start);
    const auto method = parse_doc_method(part);
    for (auto m : out) {
      if (m == method) fail(ErrorKind::kConfig, "method '" + std::string(part) + "' listed twice");
    }
    out.push_back(method);
    if (plus == std::string_view::npos) break;
    start = plus + 1;
  }
  return out;
}

std::string format_local_methods(const std::vector<DocMethod>& methods) {
  if (methods.empty()) return "off";
  std::string out;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    if (i) out += '+';
    out += to_string(methods[i]);
  }
  return out;
}

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0 || max_len == 0) {
    fail(ErrorKind::kConfig, "model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    fail(ErrorKind::kConfig, "d_model " + std::to_string(d_model) + " is not divisible by " +
                                 std::to_string(n_heads) + " heads");
  }
  if (dropout < 0.0 || dropout >= 1.0) fail(ErrorKind::kConfig, "dropout must lie in [0, 1)");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    fail(ErrorKind::kConfig, "label smoothing must lie in [0, 1)");
  }
  if (use_global && global_method != DocMethod::kAvg) {
    fail(ErrorKind::kUnsupported, "global document embeddings support only the avg method");
  }
  for (auto m : local_methods) {
    if (m == DocMethod::kEnsemble) fail(ErrorKind::kConfig, "ensemble is not a local method");
  }
  if (use_local() && attn_pool_layers == 0) fail(ErrorKind::kConfig, "attn_pool_layers must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d_model", c.d_model},
                     {"n_heads", c.n_heads},
                     {"n_layers", c.n_layers},
                     {"d_ff", c.d_ff},
                     {"dropout", c.dropout},
                     {"label_smoothing", c.label_smoothing},
                     {"ln_eps", c.ln_eps},
                     {"max_len", c.max_len},
                     {"src_vocab", c.src_vocab},
                     {"tgt_vocab", c.tgt_vocab},
                     {"global", c.use_global ? std::string(to_string(c.global_method)) : "off"},
                     {"local", format_local_methods(c.local_methods)},
                     {"scale_doc_slots", c.scale_doc_slots},
                     {"attn_pool_layers", c.attn_pool_layers},
                     {"normalize_ensemble", c.normalize_ensemble},
                     {"tie_output", c.tie_output},
                     {"zero_init_output", c.zero_init_output}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("d_model").get_to(c.d_model);
  j.at("n_heads").get_to(c.n_heads);
  j.at("n_layers").get_to(c.n_layers);
  j.at("d_ff").get_to(c.d_ff);
  j.at("dropout").get_to(c.dropout);
  j.at("label_smoothing").get_to(c.label_smoothing);
  j.at("ln_eps").get_to(c.ln_eps);
  j.at("max_len").get_to(c.max_len);
  j.at("src_vocab").get_to(c.src_vocab);
  j.at("tgt_vocab").get_to(c.tgt_vocab);
  const auto global = j.at("global").get<std::string>();
  c.use_global = global != "off";
  if (c.use_global) c.global_method = parse_doc_method(global);
  c.local_methods = parse_local_methods(j.at("local").get<std::string>());
  j.at("scale_doc_slots").get_to(c.scale_doc_slots);
  j.at("attn_pool_layers").get_to(c.attn_pool_layers);
  j.at("normalize_ensemble").get_to(c.normalize_ensemble);
  j.at("tie_output").get_to(c.tie_output);
  j.at("zero_init_output").get_to(c.zero_init_output);
}

}  // namespace docnmt
