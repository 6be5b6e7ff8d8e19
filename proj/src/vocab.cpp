#include "docnmt/vocab.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>

#include "docnmt/errors.hpp"
#include "docnmt/hash.hpp"

namespace docnmt {

namespace {
constexpr std::string_view kReservedTokens[] = {"<pad>", "<s>", "</s>", "<unk>"};
}

Vocabulary::Vocabulary() {
  for (auto t : kReservedTokens) add(std::string(t));
}

void Vocabulary::add(std::string token) {
  if (ids_.contains(token)) fail(ErrorKind::kData, "duplicate vocabulary token '" + token + "'");
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(std::span<const Words> sentences, std::size_t cap) {
  if (cap < kReserved) fail(ErrorKind::kConfig, "vocabulary cap smaller than the reserved symbols");
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences) {
    for (const auto& w : s) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (auto& [token, count] : ranked) {
    if (vocab.size() >= cap) break;
    if (vocab.ids_.contains(token)) continue;
    vocab.add(token);
  }
  return vocab;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  Vocabulary vocab;
  vocab.tokens_.clear();
  vocab.ids_.clear();
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto tab = lines[i].rfind('\t');
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    if (tab == std::string::npos) fail(ErrorKind::kData, where + ": expected token<TAB>id");
    int id = -1;
    const auto* begin = lines[i].data() + tab + 1;
    const auto* end = lines[i].data() + lines[i].size();
    auto [ptr, ec] = std::from_chars(begin, end, id);
    if (ec != std::errc() || ptr != end || id != static_cast<int>(vocab.tokens_.size())) {
      fail(ErrorKind::kData, where + ": ids must be consecutive from 0");
    }
    vocab.add(lines[i].substr(0, tab));
  }
  for (std::size_t i = 0; i < kReserved; ++i) {
    if (vocab.size() <= i || vocab.tokens_[i] != kReservedTokens[i]) {
      fail(ErrorKind::kData, path.string() + ": reserved ids 0-3 must be <pad> <s> </s> <unk>");
    }
  }
  return vocab;
}

std::string Vocabulary::dump() const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    out += tokens_[i];
    out += '\t';
    out += std::to_string(i);
    out += '\n';
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << dump();
}

std::string Vocabulary::content_hash() const { return sha256_hex(dump()); }

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    fail(ErrorKind::kDimension, "token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenIds Vocabulary::encode(std::span<const std::string> words) const {
  TokenIds out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

Words Vocabulary::decode(std::span<const int> ids) const {
  Words out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    out.push_back(token(id));
  }
  return out;
}

ParallelDocCorpus encode_corpus(const TextCorpus& text, const Vocabulary& source,
                                const Vocabulary& target) {
  ParallelDocCorpus out;
  out.documents.reserve(text.documents.size());
  for (const auto& doc : text.documents) {
    Document encoded{doc.doc_id, {}};
    encoded.pairs.reserve(doc.pairs.size());
    for (const auto& pair : doc.pairs) {
      encoded.pairs.push_back({pair.line, source.encode(pair.src), target.encode(pair.tgt)});
    }
    out.documents.push_back(std::move(encoded));
  }
  return out;
}

}  // namespace docnmt
