#include "docnmt/bleu.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include "docnmt/errors.hpp"
#include "docnmt/random.hpp"

namespace docnmt {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(std::span<const std::string> words, std::size_t n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    ++counts[std::vector<std::string>(words.begin() + static_cast<std::ptrdiff_t>(i),
                                      words.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

void check_counts(std::size_t hyps, std::size_t refs) {
  if (hyps != refs) {
    fail(ErrorKind::kData, "hypothesis count " + std::to_string(hyps) +
                               " does not match reference count " + std::to_string(refs));
  }
}

}  // namespace

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (std::size_t n = 0; n < 4; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  hyp_len += o.hyp_len;
  ref_len += o.ref_len;
  return *this;
}

BleuStats sentence_stats(std::span<const std::string> hyp, std::span<const std::string> ref) {
  BleuStats s;
  s.hyp_len = hyp.size();
  s.ref_len = ref.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto h = count_ngrams(hyp, n);
    const auto r = count_ngrams(ref, n);
    for (const auto& [gram, count] : h) {
      s.totals[n - 1] += count;
      const auto it = r.find(gram);
      if (it != r.end()) s.matches[n - 1] += std::min(count, it->second);
    }
  }
  return s;
}

BleuReport bleu_from_stats(const BleuStats& s, bool smooth) {
  BleuReport r;
  r.hyp_len = s.hyp_len;
  r.ref_len = s.ref_len;
  if (s.ref_len == 0 || s.hyp_len == 0) return r;
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    double matches = static_cast<double>(s.matches[n]);
    double totals = static_cast<double>(s.totals[n]);
    if (smooth && n > 0) {
      matches += 1.0;
      totals += 1.0;
    }
    r.precisions[n] = totals > 0 ? matches / totals : 0.0;
    if (r.precisions[n] == 0.0) {
      zero = true;
    } else {
      log_sum += std::log(r.precisions[n]);
    }
  }
  r.ratio = static_cast<double>(s.hyp_len) / static_cast<double>(s.ref_len);
  r.brevity_penalty = s.hyp_len < s.ref_len
                          ? std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len))
                          : 1.0;
  r.bleu = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

std::string BleuReport::format() const {
  char line[256];
  std::snprintf(line, sizeof line,
                "BLEU = %.2f, %.1f/%.1f/%.1f/%.1f (BP=%.3f, ratio=%.3f, hyp_len=%zu, ref_len=%zu)", bleu,
                100.0 * precisions[0], 100.0 * precisions[1], 100.0 * precisions[2], 100.0 * precisions[3],
                brevity_penalty, ratio, hyp_len, ref_len);
  return line;
}

BleuReport bleu(std::span<const Words> hyps, std::span<const Words> refs, bool smooth) {
  check_counts(hyps.size(), refs.size());
  BleuStats total;
  for (std::size_t i = 0; i < hyps.size(); ++i) total += sentence_stats(hyps[i], refs[i]);
  return bleu_from_stats(total, smooth);
}

BootstrapResult paired_bootstrap(std::span<const Words> hyps_a, std::span<const Words> hyps_b,
                                 std::span<const Words> refs, std::size_t resamples, std::uint64_t seed) {
  check_counts(hyps_a.size(), refs.size());
  check_counts(hyps_b.size(), refs.size());
  if (refs.empty()) fail(ErrorKind::kData, "bootstrap needs at least one sentence");
  if (resamples < 1000) fail(ErrorKind::kConfig, "bootstrap needs at least 1000 resamples");

  std::vector<BleuStats> a, b;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    a.push_back(sentence_stats(hyps_a[i], refs[i]));
    b.push_back(sentence_stats(hyps_b[i], refs[i]));
  }
  BootstrapResult result;
  result.bleu_a = bleu(hyps_a, refs).bleu;
  result.bleu_b = bleu(hyps_b, refs).bleu;

  Rng rng(seed);
  for (std::size_t k = 0; k < resamples; ++k) {
    BleuStats sa, sb;
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const auto j = static_cast<std::size_t>(rng.below(refs.size()));
      sa += a[j];
      sb += b[j];
    }
    const double ba = bleu_from_stats(sa).bleu;
    const double bb = bleu_from_stats(sb).bleu;
    if (bb > ba) {
      ++result.b_wins;
    } else if (ba > bb) {
      ++result.a_wins;
    } else {
      ++result.ties;
    }
  }
  result.p_value = (static_cast<double>(result.a_wins) + 0.5 * static_cast<double>(result.ties)) /
                   static_cast<double>(resamples);
  return result;
}

}  // namespace docnmt
