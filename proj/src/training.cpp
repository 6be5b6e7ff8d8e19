#include "docnmt/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include "docnmt/errors.hpp"
#include "docnmt/vocab.hpp"

namespace docnmt {

namespace {

constexpr std::uint64_t kDropoutSalt = 0xd1b54a32d192ed03ULL;

std::string format_step(const StepReport& r, double tokens_per_second) {
  char line[160];
  std::snprintf(line, sizeof line, "step %zu lr %.3e loss %.4f tok/s %.0f", r.step, r.lr, r.loss,
                tokens_per_second);
  return line;
}

std::vector<std::string> frozen_names(const ModelParams& params) {
  return {params.frozen().begin(), params.frozen().end()};
}

}  // namespace

std::string_view to_string(Phase phase) {
  return phase == Phase::kBaseline ? "baseline" : "enhanced";
}

Phase parse_phase(std::string_view text) {
  if (text == "baseline") return Phase::kBaseline;
  if (text == "enhanced") return Phase::kEnhanced;
  fail(ErrorKind::kConfig, "unknown phase '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (warmup_steps < 1) fail(ErrorKind::kConfig, "warmup_steps must be at least 1");
  if (!(lr_scale > 0.0)) fail(ErrorKind::kConfig, "lr_scale must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail(ErrorKind::kConfig, "Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) fail(ErrorKind::kConfig, "adam_eps must be positive");
  if (clip_norm < 0.0) fail(ErrorKind::kConfig, "clip_norm must be non-negative");
  if (token_budget == 0) fail(ErrorKind::kConfig, "token_budget must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"phase", to_string(c.phase)},
       {"warmup_steps", c.warmup_steps},
       {"lr_scale", c.lr_scale},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_eps", c.adam_eps},
       {"clip_norm", c.clip_norm},
       {"token_budget", c.token_budget},
       {"max_steps", c.max_steps},
       {"checkpoint_every", c.checkpoint_every},
       {"log_every", c.log_every},
       {"seed", c.seed},
       {"warm_start", c.warm_start}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.phase = parse_phase(j.value("phase", std::string(to_string(d.phase))));
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.lr_scale = j.value("lr_scale", d.lr_scale);
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.token_budget = j.value("token_budget", d.token_budget);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.log_every = j.value("log_every", d.log_every);
  c.seed = j.value("seed", d.seed);
  c.warm_start = j.value("warm_start", d.warm_start);
}

double noam_lr(std::size_t step, std::size_t d_model, std::size_t warmup) {
  if (step == 0) fail(ErrorKind::kContract, "learning-rate steps count from 1");
  if (warmup == 0) fail(ErrorKind::kConfig, "warmup_steps must be at least 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

void adam_step(ModelParams& params, AdamState& state, double lr, const AdamHyper& hyper) {
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (auto& [name, p] : params.entries()) {
    if (params.is_frozen(name) || !p.has_grad()) continue;
    auto& mom = state.moments[name];
    if (mom.m.empty()) {
      mom.m.assign(p.size(), 0.0);
      mom.v.assign(p.size(), 0.0);
    }
    const auto g = p.grad();
    auto w = Tensor(p).mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      mom.m[i] = hyper.beta1 * mom.m[i] + (1.0 - hyper.beta1) * g[i];
      mom.v[i] = hyper.beta2 * mom.v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
      const double m_hat = mom.m[i] / c1;
      const double v_hat = mom.v[i] / c2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
  }
}

double clip_grad_norm(ModelParams& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params.entries()) {
    if (params.is_frozen(name) || !p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& [name, p] : params.entries()) {
      if (params.is_frozen(name) || !p.has_grad()) continue;
      for (double& g : p.node().grad) g *= factor;
    }
  }
  return norm;
}

double corpus_perplexity(const NmtModel& model, const ParallelDocCorpus& corpus,
                         const GlobalCache* cache, std::size_t token_budget) {
  NoGradGuard no_grad;
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& batch : make_batches(corpus, token_budget, 0)) {
    std::size_t n = 0;
    for (auto len : batch.tgt_lengths) n += len;
    total += model.loss(batch, cache, nullptr, 0.0).item() * static_cast<double>(n);
    tokens += n;
  }
  if (tokens == 0) fail(ErrorKind::kData, "perplexity of an empty corpus");
  return std::exp(total / static_cast<double>(tokens));
}

Trainer::Trainer(NmtModel& model, const ParallelDocCorpus& corpus, const TrainConfig& config,
                 const GlobalCache* cache)
    : model_(model),
      cache_(cache),
      config_(config),
      schedule_(corpus, config.token_budget, config.seed),
      dropout_rng_(config.seed ^ kDropoutSalt),
      order_(schedule_.epoch_order(0)) {
  config_.validate();
  if (schedule_.batches_per_epoch() == 0) fail(ErrorKind::kData, "training corpus is empty");
}

StepReport Trainer::train_step() {
  if (cursor_ == order_.size()) {
    ++epoch_;
    cursor_ = 0;
    order_ = schedule_.epoch_order(epoch_);
  }
  const Batch& batch = schedule_.batch(order_[cursor_++]);
  ++step_;

  auto& params = model_.params();
  params.zero_grad();
  Tensor loss;
  try {
    loss = model_.loss(batch, cache_, &dropout_rng_);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kNumeric) throw;
    fail(ErrorKind::kDivergence, std::string(e.what()) + " at step " + std::to_string(step_) +
                                     " (document '" + batch.doc_id + "', sentence " +
                                     std::to_string(batch.first_sentence) + ")");
  }
  StepReport report;
  report.step = step_;
  report.loss = loss.item();
  report.tokens = batch.source_tokens();
  if (!std::isfinite(report.loss)) {
    fail(ErrorKind::kDivergence, "loss became " + std::to_string(report.loss) + " at step " +
                                     std::to_string(step_) + " (document '" + batch.doc_id +
                                     "', sentence " + std::to_string(batch.first_sentence) + ")");
  }
  backward(loss);
  report.grad_norm = clip_grad_norm(params, config_.clip_norm);
  if (!std::isfinite(report.grad_norm)) {
    fail(ErrorKind::kDivergence, "gradient norm became non-finite at step " + std::to_string(step_));
  }
  report.lr = config_.lr_scale * noam_lr(step_, model_.config().d_model, config_.warmup_steps);
  adam_step(params, adam_, report.lr, {config_.adam_beta1, config_.adam_beta2, config_.adam_eps});
  params.zero_grad();
  return report;
}

std::vector<StepReport> Trainer::train(std::ostream* log) {
  std::vector<StepReport> reports;
  auto start = std::chrono::steady_clock::now();
  std::size_t tokens = 0;
  while (step_ < config_.max_steps) {
    reports.push_back(train_step());
    tokens += reports.back().tokens;
    if (log && config_.log_every && step_ % config_.log_every == 0) {
      const auto now = std::chrono::steady_clock::now();
      const double secs = std::chrono::duration<double>(now - start).count();
      *log << format_step(reports.back(), secs > 0 ? tokens / secs : 0.0) << '\n';
      start = now;
      tokens = 0;
    }
  }
  return reports;
}

Container Trainer::checkpoint(const VocabHashes& vocab, const nlohmann::json& lineage) const {
  Container c;
  c.kind = "checkpoint";
  c.header = {{"phase", to_string(config_.phase)},
              {"model_config", model_.config()},
              {"train_config", config_},
              {"vocab", {{"source", vocab.source}, {"target", vocab.target}}},
              {"seed", config_.seed},
              {"step", step_},
              {"epoch", epoch_},
              {"cursor", cursor_},
              {"rng_state", dropout_rng_.state()},
              {"adam_t", adam_.t},
              {"frozen", frozen_names(model_.params())},
              {"lineage", lineage.is_null() ? nlohmann::json::object() : lineage}};
  for (const auto& [name, p] : model_.params().entries()) {
    c.tensors.push_back({name, "param", p.detach()});
  }
  for (const auto& [name, mom] : adam_.moments) {
    const Shape shape = model_.params().at(name).shape();
    c.tensors.push_back({name, "adam_m", Tensor::from(shape, mom.m)});
    c.tensors.push_back({name, "adam_v", Tensor::from(shape, mom.v)});
  }
  return c;
}

void Trainer::restore(const Container& ckpt) {
  if (ckpt.kind != "checkpoint") fail(ErrorKind::kIncompatible, "not a training checkpoint");
  const auto saved = ckpt.header.at("train_config").get<TrainConfig>();
  if (saved.seed != config_.seed || saved.token_budget != config_.token_budget) {
    fail(ErrorKind::kIncompatible, "checkpoint was trained with a different seed or token budget");
  }
  if (nlohmann::json(model_.config()) != ckpt.header.at("model_config")) {
    fail(ErrorKind::kIncompatible, "checkpoint model configuration differs");
  }
  auto& params = model_.params();
  adam_ = {};
  adam_.t = ckpt.header.at("adam_t").get<std::uint64_t>();
  for (const auto& t : ckpt.tensors) {
    if (!params.contains(t.name)) fail(ErrorKind::kIncompatible, "unknown parameter '" + t.name + "'");
    auto& p = params.at(t.name);
    if (p.shape() != t.value.shape()) {
      fail(ErrorKind::kIncompatible, "parameter '" + t.name + "' has shape " + to_string(t.value.shape()));
    }
    const auto src = t.value.data();
    if (t.group == "param") {
      std::copy(src.begin(), src.end(), p.mutable_data().begin());
    } else if (t.group == "adam_m") {
      adam_.moments[t.name].m.assign(src.begin(), src.end());
    } else if (t.group == "adam_v") {
      adam_.moments[t.name].v.assign(src.begin(), src.end());
    }
  }
  step_ = ckpt.header.at("step").get<std::size_t>();
  epoch_ = ckpt.header.at("epoch").get<std::uint64_t>();
  cursor_ = ckpt.header.at("cursor").get<std::size_t>();
  dropout_rng_.restore(ckpt.header.at("rng_state").get<std::string>());
  order_ = schedule_.epoch_order(epoch_);
}

NmtModel load_model(const Container& ckpt) {
  if (ckpt.kind != "checkpoint") fail(ErrorKind::kIncompatible, "not a model checkpoint");
  const auto config = ckpt.header.at("model_config").get<ModelConfig>();
  NmtModel model(config, ckpt.header.at("seed").get<std::uint64_t>());
  auto& params = model.params();
  for (const auto& t : ckpt.tensors) {
    if (t.group != "param") continue;
    if (!params.contains(t.name)) fail(ErrorKind::kIncompatible, "unknown parameter '" + t.name + "'");
    auto& p = params.at(t.name);
    if (p.shape() != t.value.shape()) {
      fail(ErrorKind::kIncompatible, "parameter '" + t.name + "' has shape " + to_string(t.value.shape()));
    }
    std::copy(t.value.data().begin(), t.value.data().end(), p.mutable_data().begin());
  }
  for (const auto& name : ckpt.header.at("frozen")) params.freeze(name.get<std::string>());
  return model;
}

VocabHashes checkpoint_vocab(const Container& c) {
  return {c.header.at("vocab").at("source").get<std::string>(),
          c.header.at("vocab").at("target").get<std::string>()};
}

EmbeddingExport extract_embeddings(const Container& ckpt) {
  if (ckpt.kind != "checkpoint") fail(ErrorKind::kIncompatible, "not a model checkpoint");
  const auto* src = ckpt.find(Transformer::kSourceEmbedding, "param");
  const auto* tgt = ckpt.find(Transformer::kTargetEmbedding, "param");
  if (!src || !tgt) fail(ErrorKind::kIncompatible, "checkpoint has no embedding tables");
  nlohmann::json lineage = {{"phase", ckpt.header.at("phase")}, {"step", ckpt.header.at("step")}};
  if (ckpt.header.contains("lineage")) lineage["parent"] = ckpt.header.at("lineage");
  return {src->value.detach(), tgt->value.detach(), checkpoint_vocab(ckpt), lineage};
}

Container to_container(const EmbeddingExport& e) {
  Container c;
  c.kind = "embeddings";
  c.header = {{"vocab", {{"source", e.vocab.source}, {"target", e.vocab.target}}},
              {"lineage", e.lineage.is_null() ? nlohmann::json::object() : e.lineage}};
  c.tensors.push_back({Transformer::kSourceEmbedding, "embedding", e.source});
  c.tensors.push_back({Transformer::kTargetEmbedding, "embedding", e.target});
  return c;
}

EmbeddingExport embeddings_from_container(const Container& c) {
  if (c.kind != "embeddings") fail(ErrorKind::kIncompatible, "not an embedding export");
  const auto* src = c.find(Transformer::kSourceEmbedding, "embedding");
  const auto* tgt = c.find(Transformer::kTargetEmbedding, "embedding");
  if (!src || !tgt) fail(ErrorKind::kIncompatible, "embedding export is missing a table");
  return {src->value, tgt->value, checkpoint_vocab(c), c.header.value("lineage", nlohmann::json::object())};
}

namespace {

TrainResult run(Trainer& trainer, const NmtModel& model, const GlobalCache* cache,
                const VocabHashes& vocab, const nlohmann::json& lineage, const TrainHooks& hooks) {
  if (hooks.resume) trainer.restore(*hooks.resume);
  TrainResult result;
  const auto& cfg = trainer.config();
  double best = std::numeric_limits<double>::infinity();
  auto evaluate = [&](Container ckpt) {
    if (hooks.dev) {
      const double ppl = corpus_perplexity(model, *hooks.dev, cache, cfg.token_budget);
      ckpt.header["dev_perplexity"] = ppl;
      if (hooks.log) *hooks.log << "step " << trainer.step() << " dev_ppl " << ppl << '\n';
      if (ppl < best) {
        best = ppl;
        result.best = ckpt;
      }
    }
    return ckpt;
  };

  auto start = std::chrono::steady_clock::now();
  std::size_t tokens = 0;
  while (trainer.step() < cfg.max_steps) {
    const auto r = trainer.train_step();
    result.reports.push_back(r);
    tokens += r.tokens;
    if (hooks.log && cfg.log_every && r.step % cfg.log_every == 0) {
      const auto now = std::chrono::steady_clock::now();
      const double secs = std::chrono::duration<double>(now - start).count();
      *hooks.log << format_step(r, secs > 0 ? tokens / secs : 0.0) << '\n';
      start = now;
      tokens = 0;
    }
    if (cfg.checkpoint_every && r.step % cfg.checkpoint_every == 0 && r.step < cfg.max_steps) {
      const auto ckpt = evaluate(trainer.checkpoint(vocab, lineage));
      if (hooks.on_checkpoint) hooks.on_checkpoint(ckpt);
    }
  }
  result.checkpoint = evaluate(trainer.checkpoint(vocab, lineage));
  return result;
}

}  // namespace

TrainResult train_baseline(const ParallelDocCorpus& corpus, ModelConfig model_config,
                           const TrainConfig& config, const VocabHashes& vocab, const TrainHooks& hooks) {
  if (model_config.use_global || model_config.use_local()) {
    fail(ErrorKind::kConfig, "the baseline is trained without document slots");
  }
  if (config.phase != Phase::kBaseline) fail(ErrorKind::kConfig, "train_baseline needs phase=baseline");
  model_config.validate();
  NmtModel model(model_config, config.seed);
  Trainer trainer(model, corpus, config, nullptr);
  return run(trainer, model, nullptr, vocab, nlohmann::json::object(), hooks);
}

TrainResult train_enhanced(const ParallelDocCorpus& corpus, const EmbeddingExport& embeddings,
                           ModelConfig model_config, const TrainConfig& config,
                           const VocabHashes& vocab, const GlobalCache* cache,
                           const Container* warm_start_from, const TrainHooks& hooks) {
  if (config.phase != Phase::kEnhanced) fail(ErrorKind::kConfig, "train_enhanced needs phase=enhanced");
  if (embeddings.vocab.source != vocab.source) {
    fail(ErrorKind::kIncompatible, "source vocabulary hash " + vocab.source +
                                       " does not match the embeddings' " + embeddings.vocab.source);
  }
  if (embeddings.vocab.target != vocab.target) {
    fail(ErrorKind::kIncompatible, "target vocabulary hash " + vocab.target +
                                       " does not match the embeddings' " + embeddings.vocab.target);
  }
  model_config.validate();
  const Shape src_shape{model_config.src_vocab, model_config.d_model};
  const Shape tgt_shape{model_config.tgt_vocab, model_config.d_model};
  if (embeddings.source.shape() != src_shape || embeddings.target.shape() != tgt_shape) {
    fail(ErrorKind::kIncompatible, "embedding tables " + to_string(embeddings.source.shape()) + " / " +
                                       to_string(embeddings.target.shape()) + " do not fit the model");
  }

  std::optional<GlobalCache> own_cache;
  if (model_config.use_global) {
    const auto expected = GlobalCache::build(corpus, embeddings.source, model_config.global_method);
    if (!cache) {
      own_cache = expected;
      cache = &*own_cache;
    } else {
      for (const auto& [doc_id, vec] : expected.entries()) {
        const auto it = cache->entries().find(doc_id);
        if (it == cache->entries().end() || it->second != vec) {
          fail(ErrorKind::kIncompatible,
               "global cache entry for '" + doc_id + "' was not built from these embeddings");
        }
      }
    }
  }

  NmtModel model(model_config, config.seed);
  auto& params = model.params();
  if (config.warm_start) {
    if (!warm_start_from) fail(ErrorKind::kConfig, "warm_start needs a baseline checkpoint");
    for (const auto& t : warm_start_from->tensors) {
      if (t.group != "param" || !params.contains(t.name)) continue;
      auto& p = params.at(t.name);
      if (p.shape() != t.value.shape()) continue;
      std::copy(t.value.data().begin(), t.value.data().end(), p.mutable_data().begin());
    }
  }
  auto copy_table = [&](const char* name, const Tensor& table) {
    auto& p = params.at(name);
    std::copy(table.data().begin(), table.data().end(), p.mutable_data().begin());
  };
  copy_table(Transformer::kSourceEmbedding, embeddings.source);
  copy_table(Transformer::kTargetEmbedding, embeddings.target);
  model.freeze_embeddings();

  Trainer trainer(model, corpus, config, cache);
  return run(trainer, model, cache, vocab, {{"embeddings", embeddings.lineage}}, hooks);
}

}  // namespace docnmt
