// Command-line entry point for the document-level NMT pipeline.
//
//   docnmt preprocess | train-baseline | export-embeddings | build-doc-cache |
//          train-enhanced | translate | score | bootstrap | embed-doc
//
// Failures print one line "error: <category>: <message>" and exit with the
// category's status (see exit_status below).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "docnmt/bleu.hpp"
#include "docnmt/bpe.hpp"
#include "docnmt/checkpoint.hpp"
#include "docnmt/decode.hpp"
#include "docnmt/errors.hpp"
#include "docnmt/hash.hpp"
#include "docnmt/manifest.hpp"
#include "docnmt/training.hpp"
#include "docnmt/vocab.hpp"

namespace fs = std::filesystem;
using namespace docnmt;

namespace {

constexpr int kUsageStatus = 2;
constexpr int kInternalStatus = 70;

int exit_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return 3;
    case ErrorKind::kIo: return 4;
    case ErrorKind::kData: return 5;
    case ErrorKind::kIncompatible: return 6;
    case ErrorKind::kMissingContext: return 7;
    case ErrorKind::kUnsupported: return 8;
    case ErrorKind::kDivergence: return 9;
    case ErrorKind::kDimension: return 10;
    case ErrorKind::kNumeric: return 11;
    case ErrorKind::kContract: return 12;
  }
  return kInternalStatus;
}

int report(std::string_view category, std::string message, int status) {
  for (char& c : message) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << "error: " << category << ": " << message << '\n';
  return status;
}

// ---------------------------------------------------------------------------
// Data directory layout written by `preprocess`:
//   <dir>/<prefix>.src, <prefix>.tgt, <prefix>.bnd, src.vocab, tgt.vocab

struct DataArgs {
  std::string dir;
  std::string prefix = "train";

  fs::path file(const std::string& ext) const { return fs::path(dir) / (prefix + "." + ext); }
  fs::path src_vocab() const { return fs::path(dir) / "src.vocab"; }
  fs::path tgt_vocab() const { return fs::path(dir) / "tgt.vocab"; }
};

void add_data_options(CLI::App* app, DataArgs& data, bool required = true) {
  auto* opt = app->add_option("--data", data.dir, "Preprocessed data directory");
  if (required) opt->required();
  app->add_option("--prefix", data.prefix, "Corpus name inside the data directory")->capture_default_str();
}

struct LoadedData {
  TextCorpus text;
  ParallelDocCorpus corpus;
  Vocabulary source;
  Vocabulary target;
  bool has_target = false;

  VocabHashes hashes() const { return {source.content_hash(), target.content_hash()}; }
};

LoadedData load_data(const DataArgs& args) {
  LoadedData d;
  d.source = Vocabulary::load(args.src_vocab());
  d.target = Vocabulary::load(args.tgt_vocab());
  d.has_target = fs::exists(args.file("tgt"));
  d.text = d.has_target ? load_corpus(args.file("src"), args.file("tgt"), args.file("bnd"))
                        : load_source_documents(args.file("src"), args.file("bnd"));
  d.corpus = encode_corpus(d.text, d.source, d.target);
  return d;
}

void add_data_inputs(RunManifest& m, const DataArgs& args, bool with_target) {
  m.add_input("source", args.file("src"));
  if (with_target) m.add_input("target", args.file("tgt"));
  m.add_input("boundaries", args.file("bnd"));
  m.add_input("source_vocab", args.src_vocab());
  m.add_input("target_vocab", args.tgt_vocab());
}

// ---------------------------------------------------------------------------

void add_model_options(CLI::App* app, ModelConfig& m) {
  app->add_option("--d-model", m.d_model, "Model width")->capture_default_str();
  app->add_option("--heads", m.n_heads, "Attention heads")->capture_default_str();
  app->add_option("--layers", m.n_layers, "Encoder and decoder layers")->capture_default_str();
  app->add_option("--d-ff", m.d_ff, "Feed-forward width")->capture_default_str();
  app->add_option("--dropout", m.dropout, "Dropout probability")->capture_default_str();
  app->add_option("--label-smoothing", m.label_smoothing, "Label smoothing mass")->capture_default_str();
  app->add_option("--max-len", m.max_len, "Longest sequence in subwords")->capture_default_str();
}

void add_train_options(CLI::App* app, TrainConfig& t) {
  app->add_option("--steps", t.max_steps, "Optimizer steps")->capture_default_str();
  app->add_option("--warmup", t.warmup_steps, "Learning-rate warmup steps")->capture_default_str();
  app->add_option("--lr-scale", t.lr_scale, "Multiplier on the schedule")->capture_default_str();
  app->add_option("--adam-beta1", t.adam_beta1)->capture_default_str();
  app->add_option("--adam-beta2", t.adam_beta2)->capture_default_str();
  app->add_option("--adam-eps", t.adam_eps)->capture_default_str();
  app->add_option("--clip-norm", t.clip_norm, "Global gradient-norm bound, 0 disables")->capture_default_str();
  app->add_option("--token-budget", t.token_budget, "Source tokens per batch")->capture_default_str();
  app->add_option("--checkpoint-every", t.checkpoint_every, "Periodic checkpoint interval")->capture_default_str();
  app->add_option("--log-every", t.log_every, "Progress line interval")->capture_default_str();
  app->add_option("--seed", t.seed, "Seed for initialization, shuffling and dropout")->capture_default_str();
}

struct TrainArgs {
  DataArgs data;
  std::string dev_prefix;
  std::string out;
  std::string resume;
};

void add_common_train(CLI::App* app, TrainArgs& a) {
  add_data_options(app, a.data);
  app->add_option("--dev-prefix", a.dev_prefix, "Dev corpus for checkpoint selection by perplexity");
  app->add_option("--out", a.out, "Checkpoint to write")->required();
  app->add_option("--resume", a.resume, "Continue from this checkpoint");
}

TrainHooks make_hooks(const TrainArgs& a, const LoadedData& train, std::optional<ParallelDocCorpus>& dev,
                      std::optional<Container>& resume) {
  TrainHooks hooks;
  hooks.log = &std::cerr;
  if (!a.dev_prefix.empty()) {
    DataArgs d = a.data;
    d.prefix = a.dev_prefix;
    dev = encode_corpus(load_corpus(d.file("src"), d.file("tgt"), d.file("bnd")), train.source, train.target);
    hooks.dev = &*dev;
  }
  if (!a.resume.empty()) {
    resume = load_container(a.resume);
    hooks.resume = &*resume;
  }
  const std::string out = a.out;
  hooks.on_checkpoint = [out](const Container& c) {
    save_container(out + ".step" + std::to_string(c.header.at("step").get<std::size_t>()), c);
  };
  return hooks;
}

void save_result(const TrainResult& result, const std::string& out) {
  if (result.best) {
    save_container(out, *result.best);
    save_container(out + ".last", result.checkpoint);
  } else {
    save_container(out, result.checkpoint);
  }
}

nlohmann::json file_ref(const fs::path& path) {
  return {{"file", path.filename().string()}, {"sha256", sha256_file(path)}};
}

// ---------------------------------------------------------------------------
// Subcommands

struct PreprocessArgs {
  std::string src, tgt, boundaries, src_merges, tgt_merges, src_vocab, tgt_vocab, out_dir;
  std::string prefix = "train";
  std::size_t vocab_cap = 32000;
  std::size_t max_len = 256;
};

int run_preprocess(const PreprocessArgs& a) {
  const bool with_target = !a.tgt.empty();
  TextCorpus text = with_target ? load_corpus(a.src, a.tgt, a.boundaries) : load_source_documents(a.src, a.boundaries);
  const BpeModel src_bpe = a.src_merges.empty() ? BpeModel() : BpeModel::load(a.src_merges);
  const BpeModel tgt_bpe = a.tgt_merges.empty() ? BpeModel() : BpeModel::load(a.tgt_merges);
  auto segment = [](const BpeModel& bpe, bool enabled, const Words& words) {
    return enabled ? bpe.apply(words) : words;
  };
  std::vector<Words> src_sentences, tgt_sentences;
  for (auto& doc : text.documents) {
    for (auto& pair : doc.pairs) {
      pair.src = segment(src_bpe, !a.src_merges.empty(), pair.src);
      if (with_target) pair.tgt = segment(tgt_bpe, !a.tgt_merges.empty(), pair.tgt);
      for (const auto* side : {&pair.src, &pair.tgt}) {
        if (side->size() > a.max_len) {
          fail(ErrorKind::kData, "line " + std::to_string(pair.line + 1) + " has " + std::to_string(side->size()) +
                                     " subwords, over the limit of " + std::to_string(a.max_len));
        }
      }
      src_sentences.push_back(pair.src);
      if (with_target) tgt_sentences.push_back(pair.tgt);
    }
  }

  fs::create_directories(a.out_dir);
  const DataArgs out{a.out_dir, a.prefix};
  const Vocabulary src_vocab =
      a.src_vocab.empty() ? Vocabulary::build(src_sentences, a.vocab_cap) : Vocabulary::load(a.src_vocab);
  const Vocabulary tgt_vocab =
      a.tgt_vocab.empty() ? Vocabulary::build(tgt_sentences, a.vocab_cap) : Vocabulary::load(a.tgt_vocab);
  src_vocab.save(out.src_vocab());
  tgt_vocab.save(out.tgt_vocab());
  write_side(out.file("src"), text, false);
  if (with_target) write_side(out.file("tgt"), text, true);
  std::vector<DocumentSpan> spans;
  std::size_t start = 0;
  for (const auto& doc : text.documents) {
    spans.push_back({doc.doc_id, start, doc.pairs.size()});
    start += doc.pairs.size();
  }
  write_boundaries(out.file("bnd"), spans);

  RunManifest m;
  m.command = "preprocess";
  m.config = {{"prefix", a.prefix}, {"vocab_cap", a.vocab_cap}, {"max_len", a.max_len}};
  m.add_input("raw_source", a.src);
  if (with_target) m.add_input("raw_target", a.tgt);
  m.add_input("raw_boundaries", a.boundaries);
  if (!a.src_merges.empty()) m.add_input("source_merges", a.src_merges);
  if (!a.tgt_merges.empty()) m.add_input("target_merges", a.tgt_merges);
  if (!a.src_vocab.empty()) m.add_input("source_vocab", a.src_vocab);
  if (!a.tgt_vocab.empty()) m.add_input("target_vocab", a.tgt_vocab);
  m.lineage = {{"source_vocab_hash", src_vocab.content_hash()}, {"target_vocab_hash", tgt_vocab.content_hash()}};
  write_manifest(fs::path(a.out_dir) / a.prefix, m);
  std::cout << "documents " << text.documents.size() << " sentences " << text.sentence_count() << " src_vocab "
            << src_vocab.size() << " tgt_vocab " << tgt_vocab.size() << '\n';
  return 0;
}

int run_train_baseline(const TrainArgs& a, ModelConfig mc, TrainConfig tc) {
  const auto data = load_data(a.data);
  if (!data.has_target) fail(ErrorKind::kData, "training data has no target side");
  mc.src_vocab = data.source.size();
  mc.tgt_vocab = data.target.size();
  tc.phase = Phase::kBaseline;
  std::optional<ParallelDocCorpus> dev;
  std::optional<Container> resume;
  const auto hooks = make_hooks(a, data, dev, resume);
  const auto result = train_baseline(data.corpus, mc, tc, data.hashes(), hooks);
  save_result(result, a.out);

  RunManifest m;
  m.command = "train-baseline";
  m.config = {{"model", mc}, {"train", tc}};
  add_data_inputs(m, a.data, true);
  if (!a.resume.empty()) m.add_input("resume", a.resume);
  m.lineage = {{"phase", "baseline"}};
  write_manifest(a.out, m);
  return 0;
}

int run_export(const std::string& checkpoint, const std::string& out) {
  const auto ckpt = load_container(checkpoint);
  auto emb = extract_embeddings(ckpt);
  emb.lineage["checkpoint"] = file_ref(checkpoint);
  save_container(out, to_container(emb));

  RunManifest m;
  m.command = "export-embeddings";
  m.add_input("checkpoint", checkpoint);
  m.lineage = emb.lineage;
  write_manifest(out, m);
  return 0;
}

void check_vocab(const VocabHashes& expected, const VocabHashes& actual, const std::string& what) {
  if (expected.source != actual.source || expected.target != actual.target) {
    fail(ErrorKind::kIncompatible, "vocabulary hash mismatch between the data directory and " + what);
  }
}

int run_build_cache(const DataArgs& data_args, const std::string& embeddings, const std::string& method,
                    const std::string& out) {
  const auto emb = embeddings_from_container(load_container(embeddings));
  const auto data = load_data(data_args);
  check_vocab(emb.vocab, data.hashes(), embeddings);
  const auto cache = GlobalCache::build(data.corpus, emb.source, parse_doc_method(method));
  cache.save(out);

  RunManifest m;
  m.command = "build-doc-cache";
  m.config = {{"method", method}, {"prefix", data_args.prefix}};
  add_data_inputs(m, data_args, data.has_target);
  m.add_input("embeddings", embeddings);
  m.lineage = {{"embeddings", file_ref(embeddings)}};
  write_manifest(out, m);
  std::cout << "documents " << cache.size() << '\n';
  return 0;
}

struct DocArgs {
  std::string global = "off";
  std::string local = "off";
};

void add_doc_options(CLI::App* app, DocArgs& d, ModelConfig& mc) {
  app->add_option("--global", d.global, "Global document slot")
      ->check(CLI::IsMember({"off", "avg", "rnn", "attn"}))
      ->capture_default_str();
  app->add_option("--local", d.local, "Local document slot: off, avg, rnn, attn or a '+' combination")
      ->capture_default_str();
  app->add_flag("--scale-doc-slots", mc.scale_doc_slots, "Multiply document slots by sqrt(d_model)");
  app->add_option("--attn-pool-layers", mc.attn_pool_layers, "Self-attention layers per sentence")
      ->capture_default_str();
  app->add_flag("--normalize-ensemble,!--raw-ensemble", mc.normalize_ensemble,
                "Softmax-normalize ensemble weights");
}

void apply_doc_args(const DocArgs& d, ModelConfig& mc) {
  mc.use_global = d.global != "off";
  if (mc.use_global) mc.global_method = parse_doc_method(d.global);
  mc.local_methods = parse_local_methods(d.local);
}

int run_train_enhanced(const TrainArgs& a, ModelConfig mc, TrainConfig tc, const DocArgs& doc,
                       const std::string& embeddings, const std::string& cache_path,
                       const std::string& warm_start) {
  const auto emb = embeddings_from_container(load_container(embeddings));
  const auto data = load_data(a.data);
  if (!data.has_target) fail(ErrorKind::kData, "training data has no target side");
  check_vocab(emb.vocab, data.hashes(), embeddings);
  apply_doc_args(doc, mc);
  mc.src_vocab = data.source.size();
  mc.tgt_vocab = data.target.size();
  mc.validate();
  tc.phase = Phase::kEnhanced;
  tc.warm_start = !warm_start.empty();

  std::optional<GlobalCache> cache;
  if (!cache_path.empty()) {
    const auto cache_manifest = read_manifest(cache_path);
    const auto it = cache_manifest.inputs.find("embeddings");
    if (it == cache_manifest.inputs.end() || it->second.sha256 != sha256_file(embeddings)) {
      fail(ErrorKind::kIncompatible, "document cache " + cache_path + " was built from different embeddings");
    }
    cache = GlobalCache::load(cache_path);
  } else if (mc.use_global) {
    fail(ErrorKind::kMissingContext, "--global needs --doc-cache");
  }
  std::optional<Container> warm;
  if (!warm_start.empty()) warm = load_container(warm_start);

  std::optional<ParallelDocCorpus> dev;
  std::optional<Container> resume;
  const auto hooks = make_hooks(a, data, dev, resume);
  const auto result = train_enhanced(data.corpus, emb, mc, tc, data.hashes(), cache ? &*cache : nullptr,
                                     warm ? &*warm : nullptr, hooks);
  save_result(result, a.out);

  RunManifest m;
  m.command = "train-enhanced";
  m.config = {{"model", mc}, {"train", tc}};
  add_data_inputs(m, a.data, true);
  m.add_input("embeddings", embeddings);
  if (cache) m.add_input("doc_cache", cache_path);
  if (warm) m.add_input("warm_start", warm_start);
  if (!a.resume.empty()) m.add_input("resume", a.resume);
  m.lineage = {{"embeddings", file_ref(embeddings)}, {"embeddings_lineage", emb.lineage}};
  if (warm) m.lineage["warm_start"] = file_ref(warm_start);
  write_manifest(a.out, m);
  return 0;
}

struct WindowArgs {
  std::string mode = "symmetric";
  WindowConfig config;
};

void add_window_options(CLI::App* app, WindowArgs& w) {
  app->add_option("--window", w.mode, "Local context at inference: symmetric, past or batch")
      ->capture_default_str();
  app->add_option("--before", w.config.before, "Preceding sentences in the window")->capture_default_str();
  app->add_option("--after", w.config.after, "Following sentences in the window")->capture_default_str();
  app->add_option("--window-budget", w.config.token_budget, "Token budget for --window batch")
      ->capture_default_str();
}

std::string join(const Words& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

int run_translate(const DataArgs& data_args, const std::string& checkpoint, const std::string& cache_path,
                  TranslateOptions options, const std::string& window_mode, const std::string& out) {
  options.window.mode = parse_window_mode(window_mode);
  const auto ckpt = load_container(checkpoint);
  const NmtModel model = load_model(ckpt);
  const auto data = load_data(data_args);
  check_vocab(checkpoint_vocab(ckpt), data.hashes(), checkpoint);
  std::optional<GlobalCache> cache;
  if (!cache_path.empty()) cache = GlobalCache::load(cache_path);

  std::ofstream file(out);
  if (!file) fail(ErrorKind::kIo, "cannot write " + out);
  for (const auto& doc : data.corpus.documents) {
    std::vector<TokenIds> sources;
    for (const auto& p : doc.pairs) sources.push_back(p.src);
    for (const auto& ids : translate_document(model, doc.doc_id, sources, cache ? &*cache : nullptr, options)) {
      file << remove_bpe(join(data.target.decode(ids))) << '\n';
    }
  }
  file.close();

  RunManifest m;
  m.command = "translate";
  m.config = {{"beam", options.decode.beam_width},
              {"window", window_mode},
              {"before", options.window.before},
              {"after", options.window.after},
              {"window_budget", options.window.token_budget}};
  add_data_inputs(m, data_args, false);
  m.add_input("checkpoint", checkpoint);
  if (cache) m.add_input("doc_cache", cache_path);
  m.lineage = {{"checkpoint", file_ref(checkpoint)}};
  write_manifest(out, m);
  return 0;
}

std::vector<Words> read_scored(const std::string& path) {
  std::vector<Words> out;
  for (const auto& line : read_lines(path)) out.push_back(split_tokens(remove_bpe(line)));
  return out;
}

int run_score(const std::string& hyp, const std::string& ref, bool smooth) {
  const auto report = bleu(read_scored(hyp), read_scored(ref), smooth);
  std::cout << report.format() << '\n';
  return 0;
}

int run_bootstrap(const std::string& a, const std::string& b, const std::string& ref, std::size_t resamples,
                  std::uint64_t seed) {
  const auto r = paired_bootstrap(read_scored(a), read_scored(b), read_scored(ref), resamples, seed);
  std::printf("BLEU a = %.2f, BLEU b = %.2f, p = %.4f (b better in %zu of %zu resamples, %zu ties)\n", r.bleu_a,
              r.bleu_b, r.p_value, r.b_wins, resamples, r.ties);
  return 0;
}

int run_embed_doc(const DataArgs& data_args, const std::string& checkpoint, const std::string& embeddings,
                  const std::string& doc_id, const std::string& scope, std::size_t sentence,
                  const WindowArgs& window) {
  const auto data = load_data(data_args);
  const Document* doc = nullptr;
  for (const auto& d : data.corpus.documents) {
    if (d.doc_id == doc_id) doc = &d;
  }
  if (!doc) fail(ErrorKind::kMissingContext, "no document '" + doc_id + "' in " + data_args.file("bnd").string());
  std::vector<TokenIds> sources;
  for (const auto& p : doc->pairs) sources.push_back(p.src);

  NoGradGuard no_grad;
  Tensor vec;
  if (scope == "global") {
    Tensor table;
    if (!embeddings.empty()) {
      const auto emb = embeddings_from_container(load_container(embeddings));
      check_vocab(emb.vocab, data.hashes(), embeddings);
      table = emb.source;
    } else if (!checkpoint.empty()) {
      const auto ckpt = load_container(checkpoint);
      check_vocab(checkpoint_vocab(ckpt), data.hashes(), checkpoint);
      table = load_model(ckpt).transformer().source_embedding();
    } else {
      fail(ErrorKind::kConfig, "embed-doc needs --embeddings or --checkpoint");
    }
    vec = global_doc_embedding(sources, table).vector;
  } else {
    if (checkpoint.empty()) fail(ErrorKind::kConfig, "a local embedding needs --checkpoint");
    const auto ckpt = load_container(checkpoint);
    check_vocab(checkpoint_vocab(ckpt), data.hashes(), checkpoint);
    const NmtModel model = load_model(ckpt);
    if (!model.doc_embedder()) fail(ErrorKind::kConfig, "checkpoint has no local document slot");
    if (sentence >= sources.size()) fail(ErrorKind::kData, "sentence index outside the document");
    WindowConfig w = window.config;
    w.mode = parse_window_mode(window.mode);
    std::vector<std::size_t> lengths;
    for (const auto& s : sources) lengths.push_back(s.size());
    const auto range = context_window(w, sentence, lengths);
    vec = model.doc_embedder()
              ->local(std::span<const TokenIds>(sources).subspan(range.first, range.count),
                      model.transformer().source_embedding())
              .vector;
  }
  std::cout << doc_id;
  char buf[32];
  for (std::size_t i = 0; i < vec.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", vec[i]);
    std::cout << (i ? ' ' : '\t') << buf;
  }
  std::cout << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// Flat "key = value" config files. Keys are long option names of the
// subcommand (with '_' or '-'); command-line flags take precedence.

std::vector<std::string> config_arguments(const std::string& path, const CLI::App& sub) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open config file " + path);
  std::vector<std::string> args;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::kConfig, path + ":" + std::to_string(number) + ": expected key = value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    std::replace(key.begin(), key.end(), '_', '-');
    if (key.empty() || value.empty()) {
      fail(ErrorKind::kConfig, path + ":" + std::to_string(number) + ": expected key = value");
    }
    if (key == "config" || !sub.get_option_no_throw("--" + key)) {
      fail(ErrorKind::kConfig, path + ":" + std::to_string(number) + ": unknown key '" + key + "' for " +
                                   sub.get_name());
    }
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Document-level neural machine translation"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  std::string config_file;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "Flat key = value file with defaults for these flags");
  };

  PreprocessArgs pre;
  auto* preprocess = app.add_subcommand("preprocess", "Segment and index a tokenized parallel corpus");
  preprocess->add_option("--src", pre.src, "Tokenized source text")->required();
  preprocess->add_option("--tgt", pre.tgt, "Tokenized target text (omit for source-only sets)");
  preprocess->add_option("--boundaries", pre.boundaries, "doc_id<TAB>start<TAB>count sidecar")->required();
  preprocess->add_option("--src-merges", pre.src_merges, "Source BPE merges");
  preprocess->add_option("--tgt-merges", pre.tgt_merges, "Target BPE merges");
  preprocess->add_option("--src-vocab", pre.src_vocab, "Reuse this source vocabulary");
  preprocess->add_option("--tgt-vocab", pre.tgt_vocab, "Reuse this target vocabulary");
  preprocess->add_option("--vocab-cap", pre.vocab_cap, "Largest vocabulary")->capture_default_str();
  preprocess->add_option("--max-len", pre.max_len, "Longest sentence in subwords")->capture_default_str();
  preprocess->add_option("--out-dir", pre.out_dir, "Data directory to write")->required();
  preprocess->add_option("--prefix", pre.prefix, "Corpus name in the data directory")->capture_default_str();
  add_config(preprocess);

  TrainArgs base_args;
  ModelConfig base_model;
  TrainConfig base_train;
  auto* baseline = app.add_subcommand("train-baseline", "Train the sentence-level model");
  add_common_train(baseline, base_args);
  add_model_options(baseline, base_model);
  add_train_options(baseline, base_train);
  add_config(baseline);

  std::string export_ckpt, export_out;
  auto* exporter = app.add_subcommand("export-embeddings", "Copy the word-embedding tables out of a checkpoint");
  exporter->add_option("--checkpoint", export_ckpt)->required();
  exporter->add_option("--out", export_out)->required();
  add_config(exporter);

  DataArgs cache_data;
  std::string cache_emb, cache_out, cache_method = "avg";
  auto* cacher = app.add_subcommand("build-doc-cache", "Compute global document embeddings");
  add_data_options(cacher, cache_data);
  cacher->add_option("--embeddings", cache_emb)->required();
  cacher->add_option("--method", cache_method, "Global method")->capture_default_str();
  cacher->add_option("--out", cache_out)->required();
  add_config(cacher);

  TrainArgs enh_args;
  ModelConfig enh_model;
  TrainConfig enh_train;
  DocArgs enh_doc;
  std::string enh_emb, enh_cache, enh_warm;
  auto* enhanced = app.add_subcommand("train-enhanced", "Train with frozen embeddings and document slots");
  add_common_train(enhanced, enh_args);
  add_model_options(enhanced, enh_model);
  add_train_options(enhanced, enh_train);
  add_doc_options(enhanced, enh_doc, enh_model);
  enhanced->add_option("--embeddings", enh_emb, "Exported baseline embeddings")->required();
  enhanced->add_option("--doc-cache", enh_cache, "Global document cache");
  enhanced->add_option("--warm-start", enh_warm, "Start other weights from this baseline checkpoint");
  add_config(enhanced);

  DataArgs tr_data;
  std::string tr_ckpt, tr_cache, tr_out;
  TranslateOptions tr_options;
  WindowArgs tr_window;
  auto* translate = app.add_subcommand("translate", "Beam-search translation, one document at a time");
  add_data_options(translate, tr_data);
  translate->add_option("--checkpoint", tr_ckpt)->required();
  translate->add_option("--doc-cache", tr_cache, "Global document cache");
  translate->add_option("--beam", tr_options.decode.beam_width, "Beam width")->capture_default_str();
  add_window_options(translate, tr_window);
  translate->add_option("--out", tr_out, "Output text, BPE removed")->required();
  add_config(translate);

  std::string sc_hyp, sc_ref;
  bool sc_smooth = false;
  auto* score = app.add_subcommand("score", "Corpus BLEU-4");
  score->add_option("--hyp", sc_hyp)->required();
  score->add_option("--ref", sc_ref)->required();
  score->add_flag("--smooth", sc_smooth, "Add-one smoothing for higher-order precisions");
  add_config(score);

  std::string bs_a, bs_b, bs_ref;
  std::size_t bs_n = 10000;
  std::uint64_t bs_seed = 1;
  auto* boot = app.add_subcommand("bootstrap", "Paired bootstrap significance of b over a");
  boot->add_option("--hyp-a", bs_a)->required();
  boot->add_option("--hyp-b", bs_b)->required();
  boot->add_option("--ref", bs_ref)->required();
  boot->add_option("--resamples", bs_n)->capture_default_str();
  boot->add_option("--seed", bs_seed)->capture_default_str();
  add_config(boot);

  DataArgs ed_data;
  std::string ed_ckpt, ed_emb, ed_doc, ed_scope = "global";
  std::size_t ed_sentence = 0;
  WindowArgs ed_window;
  auto* embed = app.add_subcommand("embed-doc", "Print a document embedding");
  add_data_options(embed, ed_data);
  embed->add_option("--doc", ed_doc, "Document id")->required();
  embed->add_option("--scope", ed_scope)->check(CLI::IsMember({"global", "local"}))->capture_default_str();
  embed->add_option("--embeddings", ed_emb);
  embed->add_option("--checkpoint", ed_ckpt);
  embed->add_option("--sentence", ed_sentence, "Centre of the local window")->capture_default_str();
  add_window_options(embed, ed_window);
  add_config(embed);

  try {
    // Config-file values go in front of the command-line flags so that the
    // latter win under TakeLast.
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
      if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (!path.empty()) {
      for (auto* sub : app.get_subcommands({})) {
        if (sub->get_name() != args.front()) continue;
        const auto extra = config_arguments(path, *sub);
        args.insert(args.begin() + 1, extra.begin(), extra.end());
      }
    }
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("usage", e.what(), kUsageStatus);
  } catch (const Error& e) {
    return report(to_string(e.kind()), e.what(), exit_status(e.kind()));
  }

  try {
    if (*preprocess) return run_preprocess(pre);
    if (*baseline) return run_train_baseline(base_args, base_model, base_train);
    if (*exporter) return run_export(export_ckpt, export_out);
    if (*cacher) return run_build_cache(cache_data, cache_emb, cache_method, cache_out);
    if (*enhanced) return run_train_enhanced(enh_args, enh_model, enh_train, enh_doc, enh_emb, enh_cache, enh_warm);
    if (*translate) {
      tr_options.window = tr_window.config;
      return run_translate(tr_data, tr_ckpt, tr_cache, tr_options, tr_window.mode, tr_out);
    }
    if (*score) return run_score(sc_hyp, sc_ref, sc_smooth);
    if (*boot) return run_bootstrap(bs_a, bs_b, bs_ref, bs_n, bs_seed);
    if (*embed) return run_embed_doc(ed_data, ed_ckpt, ed_emb, ed_doc, ed_scope, ed_sentence, ed_window);
  } catch (const Error& e) {
    return report(to_string(e.kind()), e.what(), exit_status(e.kind()));
  } catch (const std::exception& e) {
    return report("internal", e.what(), kInternalStatus);
  }
  return kInternalStatus;
}
