#include "docnmt/bpe.hpp"

#include <fstream>
#include <limits>

#include "docnmt/errors.hpp"

namespace docnmt {

namespace {

constexpr std::string_view kEndOfWord = "</w>";

std::string pair_key(std::string_view left, std::string_view right) {
  std::string key;
  key.reserve(left.size() + right.size() + 1);
  key.append(left);
  key.push_back('\x1f');
  key.append(right);
  return key;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

BpeModel::BpeModel(std::vector<Merge> merges) : merges_(std::move(merges)) {
  for (std::size_t rank = 0; rank < merges_.size(); ++rank) {
    const auto& [left, right] = merges_[rank];
    // First occurrence wins, as in the reference segmenter.
    ranks_.try_emplace(pair_key(left, right), rank);
    if (ends_with(right, kEndOfWord) || ends_with(left, kEndOfWord)) end_of_word_ = true;
  }
}

BpeModel BpeModel::load(const std::filesystem::path& path) {
  std::vector<Merge> merges;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i == 0 && lines[i].starts_with("#version")) continue;
    const auto fields = split_tokens(lines[i]);
    if (fields.empty()) continue;
    if (fields.size() != 2) {
      fail(ErrorKind::kData, path.string() + ":" + std::to_string(i + 1) +
                                 ": expected two space-separated symbols");
    }
    merges.emplace_back(fields[0], fields[1]);
  }
  return BpeModel(std::move(merges));
}

void BpeModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& [left, right] : merges_) out << left << ' ' << right << '\n';
}

std::vector<std::string> utf8_characters(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if ((lead & 0xE0) == 0xC0) len = 2;
    else if ((lead & 0xF0) == 0xE0) len = 3;
    else if ((lead & 0xF8) == 0xF0) len = 4;
    if (i + len > text.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

Words BpeModel::apply_word(std::string_view word) const {
  auto symbols = utf8_characters(word);
  if (symbols.empty()) return {};
  if (end_of_word_) symbols.back() += kEndOfWord;

  while (symbols.size() > 1) {
    std::size_t best = std::numeric_limits<std::size_t>::max();
    std::size_t best_at = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = ranks_.find(pair_key(symbols[i], symbols[i + 1]));
      if (it != ranks_.end() && it->second < best) {
        best = it->second;
        best_at = i;
      }
    }
    if (best == std::numeric_limits<std::size_t>::max()) break;
    const auto left = symbols[best_at];
    const auto right = symbols[best_at + 1];
    std::vector<std::string> merged;
    merged.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size();) {
      if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
        merged.push_back(left + right);
        i += 2;
      } else {
        merged.push_back(std::move(symbols[i]));
        ++i;
      }
    }
    symbols = std::move(merged);
  }

  if (end_of_word_) {
    auto& last = symbols.back();
    if (ends_with(last, kEndOfWord)) last.resize(last.size() - kEndOfWord.size());
    if (last.empty()) symbols.pop_back();
  }
  for (std::size_t i = 0; i + 1 < symbols.size(); ++i) symbols[i] += kContinuationMarker;
  return symbols;
}

Words BpeModel::apply(std::span<const std::string> words) const {
  Words out;
  for (const auto& w : words) {
    auto pieces = apply_word(w);
    out.insert(out.end(), std::make_move_iterator(pieces.begin()), std::make_move_iterator(pieces.end()));
  }
  return out;
}

Words remove_bpe(std::span<const std::string> pieces) {
  Words out;
  std::string current;
  bool open = false;
  for (const auto& p : pieces) {
    if (ends_with(p, kContinuationMarker)) {
      current += p.substr(0, p.size() - kContinuationMarker.size());
      open = true;
    } else {
      current += p;
      out.push_back(std::move(current));
      current.clear();
      open = false;
    }
  }
  if (open && !current.empty()) out.push_back(std::move(current));
  return out;
}

std::string remove_bpe(const std::string& line) {
  const auto words = remove_bpe(split_tokens(line));
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace docnmt
