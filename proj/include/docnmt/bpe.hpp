#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "docnmt/corpus.hpp"

namespace docnmt {

inline constexpr std::string_view kContinuationMarker = "@@";

// Greedy merge-list segmentation. Each word starts as UTF-8 characters and
// the adjacent pair with the lowest merge rank is merged (every occurrence)
// until no ranked pair remains. Non-final pieces carry "@@".
//
// Merge files written by subword-nmt mark word ends with "</w>"; when any
// merge mentions it the marker is attached to the final character during
// segmentation and stripped afterwards.
class BpeModel {
 public:
  using Merge = std::pair<std::string, std::string>;

  BpeModel() = default;
  explicit BpeModel(std::vector<Merge> merges);

  // One space-separated pair per line; a leading "#version" line is skipped.
  static BpeModel load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  Words apply_word(std::string_view word) const;
  Words apply(std::span<const std::string> words) const;

  const std::vector<Merge>& merges() const { return merges_; }

 private:
  std::vector<Merge> merges_;
  std::unordered_map<std::string, std::size_t> ranks_;
  bool end_of_word_ = false;
};

// Splits a UTF-8 string into code points; invalid bytes stand alone.
std::vector<std::string> utf8_characters(std::string_view text);

// Joins pieces ending in "@@" with their successor.
Words remove_bpe(std::span<const std::string> pieces);
std::string remove_bpe(const std::string& line);

}  // namespace docnmt
