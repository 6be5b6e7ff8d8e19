#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "docnmt/corpus.hpp"

namespace docnmt {

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  // Reserved symbols only.
  Vocabulary();

  // Reserved ids first, then tokens by (frequency desc, token asc), keeping
  // at most `cap` entries in total.
  static Vocabulary build(std::span<const Words> sentences, std::size_t cap);

  // "token<TAB>id" per line; ids must be 0..n-1 with the reserved prefix.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string dump() const;
  // SHA-256 of dump(); identifies the exact id assignment.
  std::string content_hash() const;

  std::size_t size() const { return tokens_.size(); }
  int id(std::string_view token) const;
  const std::string& token(int id) const;

  TokenIds encode(std::span<const std::string> words) const;
  // Drops PAD/BOS and stops at EOS.
  Words decode(std::span<const int> ids) const;

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Maps both sides of a corpus to ids; target sentences may be empty.
ParallelDocCorpus encode_corpus(const TextCorpus& text, const Vocabulary& source,
                                const Vocabulary& target);

}  // namespace docnmt
