#pragma once

// Corpus BLEU-4 with multi-bleu.perl conventions: case-sensitive tokens,
// one reference, clipped n-gram counts, and a score of zero whenever any
// n-gram precision is zero (unless smoothing is requested).

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "docnmt/corpus.hpp"

namespace docnmt {

struct BleuStats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;

  BleuStats& operator+=(const BleuStats& other);
};

BleuStats sentence_stats(std::span<const std::string> hypothesis,
                         std::span<const std::string> reference);

struct BleuReport {
  double bleu = 0.0;                  // 0..100
  std::array<double, 4> precisions{};  // 0..1
  double brevity_penalty = 0.0;
  double ratio = 0.0;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;

  // "BLEU = X.XX, p1/p2/p3/p4 (BP=..., ratio=..., hyp_len=..., ref_len=...)"
  std::string format() const;
};

// Add-one smoothing of the n > 1 precisions when `smooth` is set.
BleuReport bleu_from_stats(const BleuStats& stats, bool smooth = false);

BleuReport bleu(std::span<const Words> hypotheses, std::span<const Words> references,
                bool smooth = false);

struct BootstrapResult {
  double p_value = 0.0;  // estimated chance that system b is not better than a
  std::size_t b_wins = 0;
  std::size_t a_wins = 0;
  std::size_t ties = 0;
  double bleu_a = 0.0;
  double bleu_b = 0.0;
};

// Paired bootstrap resampling of sentence indices. Ties count half.
BootstrapResult paired_bootstrap(std::span<const Words> hyps_a, std::span<const Words> hyps_b,
                                 std::span<const Words> references, std::size_t resamples,
                                 std::uint64_t seed);

}  // namespace docnmt
