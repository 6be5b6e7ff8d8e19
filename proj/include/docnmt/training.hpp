#pragma once

// Two-phase training: a sentence-level baseline first, then an enhanced
// model that reuses the baseline's word embeddings, frozen, and learns the
// document slots and every other weight.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "docnmt/batching.hpp"
#include "docnmt/checkpoint.hpp"
#include "docnmt/config.hpp"
#include "docnmt/model.hpp"
#include "json.hpp"

namespace docnmt {

enum class Phase { kBaseline, kEnhanced };

std::string_view to_string(Phase phase);
Phase parse_phase(std::string_view text);

struct TrainConfig {
  Phase phase = Phase::kBaseline;
  std::size_t warmup_steps = 200;
  double lr_scale = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  double clip_norm = 1.0;  // 0 disables clipping
  std::size_t token_budget = 512;
  std::size_t max_steps = 2000;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t log_every = 100;       // 0: silent
  std::uint64_t seed = 1;
  bool warm_start = false;  // enhanced: start non-embedding weights from the baseline

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// d^-0.5 * min(step^-0.5, step * warmup^-1.5); step counts from 1.
double noam_lr(std::size_t step, std::size_t d_model, std::size_t warmup);

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

struct AdamState {
  std::uint64_t t = 0;
  std::map<std::string, AdamMoments> moments;  // trainable parameters only
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

// Bias-corrected Adam over every trainable parameter that holds a gradient.
// Frozen parameters are skipped and never get moments.
void adam_step(ModelParams& params, AdamState& state, double lr, const AdamHyper& hyper);

// Rescales trainable gradients so their joint L2 norm is at most max_norm;
// returns the norm before clipping.
double clip_grad_norm(ModelParams& params, double max_norm);

struct VocabHashes {
  std::string source;
  std::string target;

  bool operator==(const VocabHashes&) const = default;
};

struct StepReport {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::size_t tokens = 0;
};

// Token-weighted perplexity of a corpus without dropout or smoothing.
double corpus_perplexity(const NmtModel& model, const ParallelDocCorpus& corpus,
                         const GlobalCache* cache, std::size_t token_budget);

// Single-threaded loop over a fixed doc-contiguous batch schedule. All of its
// state (weights, moments, schedule cursor, dropout generator) is captured in
// checkpoints, so a resumed run continues bit-for-bit.
class Trainer {
 public:
  Trainer(NmtModel& model, const ParallelDocCorpus& corpus, const TrainConfig& config,
          const GlobalCache* cache = nullptr);

  std::size_t step() const { return step_; }
  const AdamState& optimizer() const { return adam_; }
  const TrainConfig& config() const { return config_; }

  StepReport train_step();
  // Runs until `config().max_steps`, logging every log_every steps.
  std::vector<StepReport> train(std::ostream* log = nullptr);

  Container checkpoint(const VocabHashes& vocab, const nlohmann::json& lineage = {}) const;
  // Restores weights, moments, cursor and generator state.
  void restore(const Container& checkpoint);

 private:
  NmtModel& model_;
  const GlobalCache* cache_;
  TrainConfig config_;
  BatchSchedule schedule_;
  AdamState adam_;
  Rng dropout_rng_;
  std::size_t step_ = 0;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

// Rebuilds the model stored in a checkpoint, weights and frozen set included.
NmtModel load_model(const Container& checkpoint);
VocabHashes checkpoint_vocab(const Container& checkpoint);

struct EmbeddingExport {
  Tensor source;
  Tensor target;
  VocabHashes vocab;
  nlohmann::json lineage;
};

EmbeddingExport extract_embeddings(const Container& checkpoint);
Container to_container(const EmbeddingExport& embeddings);
EmbeddingExport embeddings_from_container(const Container& container);

struct TrainResult {
  Container checkpoint;              // last step
  std::optional<Container> best;     // lowest dev perplexity, when a dev set is given
  std::vector<StepReport> reports;
};

struct TrainHooks {
  std::ostream* log = nullptr;
  const ParallelDocCorpus* dev = nullptr;  // evaluated every checkpoint_every steps
  // Called with each periodic checkpoint.
  std::function<void(const Container&)> on_checkpoint;
  const Container* resume = nullptr;
};

TrainResult train_baseline(const ParallelDocCorpus& corpus, ModelConfig model_config,
                           const TrainConfig& config, const VocabHashes& vocab,
                           const TrainHooks& hooks = {});

// Fails with kIncompatible when the vocabularies or the global cache do not
// match the exported embeddings.
TrainResult train_enhanced(const ParallelDocCorpus& corpus, const EmbeddingExport& embeddings,
                           ModelConfig model_config, const TrainConfig& config,
                           const VocabHashes& vocab, const GlobalCache* cache,
                           const Container* warm_start_from = nullptr,
                           const TrainHooks& hooks = {});

}  // namespace docnmt
