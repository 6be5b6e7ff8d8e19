// Writes the bundled toy corpus: 10 documents of 5 sentence pairs in two
// invented languages related by a one-to-one lexicon, plus BPE merges that
// build each side's syllables and its most frequent words.
//
//   make_toy_corpus OUT_DIR [SEED]

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "docnmt/random.hpp"

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kDocuments = 10;
constexpr std::size_t kSentencesPerDocument = 5;
constexpr std::size_t kLexicon = 24;
constexpr std::size_t kWholeWordMerges = 12;

std::vector<std::string> make_words(docnmt::Rng& rng, const std::string& consonants, const std::string& vowels,
                                    std::size_t n) {
  std::set<std::string> seen;
  std::vector<std::string> words;
  while (words.size() < n) {
    std::string w;
    const std::size_t syllables = 1 + rng.below(2) + rng.below(2);
    for (std::size_t s = 0; s < syllables; ++s) {
      w += consonants[rng.below(consonants.size())];
      w += vowels[rng.below(vowels.size())];
    }
    if (seen.insert(w).second) words.push_back(w);
  }
  return words;
}

std::vector<std::pair<std::string, std::string>> make_merges(const std::vector<std::vector<std::string>>& sentences) {
  std::map<std::string, std::size_t> word_freq;
  for (const auto& s : sentences) {
    for (const auto& w : s) ++word_freq[w];
  }
  std::map<std::pair<std::string, std::string>, std::size_t> syllable_freq;
  for (const auto& [w, f] : word_freq) {
    for (std::size_t i = 0; i + 1 < w.size(); i += 2) syllable_freq[{w.substr(i, 1), w.substr(i + 1, 1)}] += f;
  }
  auto by_freq = [](auto& entries) {
    std::stable_sort(entries.begin(), entries.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
  };
  std::vector<std::pair<std::pair<std::string, std::string>, std::size_t>> syl(syllable_freq.begin(),
                                                                              syllable_freq.end());
  by_freq(syl);
  std::vector<std::pair<std::string, std::string>> merges;
  for (const auto& [pair, f] : syl) merges.push_back(pair);

  // Two-syllable words that are frequent become single symbols.
  std::vector<std::pair<std::string, std::size_t>> words(word_freq.begin(), word_freq.end());
  by_freq(words);
  std::size_t added = 0;
  for (const auto& [w, f] : words) {
    if (added == kWholeWordMerges) break;
    if (w.size() != 4) continue;
    merges.emplace_back(w.substr(0, 2), w.substr(2, 2));
    ++added;
  }
  return merges;
}

void write_lines(const fs::path& path, const std::vector<std::vector<std::string>>& sentences) {
  std::ofstream out(path);
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) out << (i ? " " : "") << s[i];
    out << '\n';
  }
}

void write_merges(const fs::path& path, const std::vector<std::pair<std::string, std::string>>& merges) {
  std::ofstream out(path);
  out << "#version: 0.2\n";
  for (const auto& [a, b] : merges) out << a << ' ' << b << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2 || argc > 3) {
    std::cerr << "usage: make_toy_corpus OUT_DIR [SEED]\n";
    return 2;
  }
  const fs::path dir = argv[1];
  const std::uint64_t seed = argc == 3 ? std::strtoull(argv[2], nullptr, 10) : 20240601;
  docnmt::Rng rng(seed);
  const auto source_words = make_words(rng, "bdgklmnprstvz", "aeiou", kLexicon);
  const auto target_words = make_words(rng, "fhjwycxq", "aeiouy", kLexicon);

  std::vector<std::vector<std::string>> src, tgt;
  std::set<std::vector<std::string>> seen;
  while (src.size() < kDocuments * kSentencesPerDocument) {
    const std::size_t len = 3 + rng.below(4);
    std::vector<std::string> s, t;
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t w = rng.below(kLexicon);
      s.push_back(source_words[w]);
      t.push_back(target_words[w]);
    }
    if (!seen.insert(s).second) continue;
    src.push_back(std::move(s));
    tgt.push_back(std::move(t));
  }

  fs::create_directories(dir);
  write_lines(dir / "train.src", src);
  write_lines(dir / "train.tgt", tgt);
  std::ofstream bnd(dir / "train.bnd");
  for (std::size_t d = 0; d < kDocuments; ++d) {
    bnd << "doc" << (d < 10 ? "0" : "") << d << '\t' << d * kSentencesPerDocument << '\t' << kSentencesPerDocument
        << '\n';
  }
  write_merges(dir / "src.merges", make_merges(src));
  write_merges(dir / "tgt.merges", make_merges(tgt));
  return 0;
}
