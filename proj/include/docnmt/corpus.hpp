#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace docnmt {

using Words = std::vector<std::string>;
using TokenIds = std::vector<int>;

// One line of the boundary sidecar: "doc_id<TAB>start_line<TAB>sentence_count".
struct DocumentSpan {
  std::string doc_id;
  std::size_t start = 0;
  std::size_t count = 0;
};

std::vector<DocumentSpan> read_boundaries(const std::filesystem::path& path);
void write_boundaries(const std::filesystem::path& path,
                      const std::vector<DocumentSpan>& spans);
// Spans must tile [0, line_count) in order without gaps or overlaps.
void validate_partition(const std::vector<DocumentSpan>& spans,
                        std::size_t line_count);

std::vector<std::string> read_lines(const std::filesystem::path& path);
Words split_tokens(const std::string& line);

template <typename Token>
struct DocPair {
  std::size_t line = 0;  // 0-based line in the source files
  Token src;
  Token tgt;
};

template <typename Token>
struct BasicDocument {
  std::string doc_id;
  std::vector<DocPair<Token>> pairs;
};

template <typename Token>
struct BasicCorpus {
  std::vector<BasicDocument<Token>> documents;

  std::size_t sentence_count() const {
    std::size_t n = 0;
    for (const auto& d : documents) n += d.pairs.size();
    return n;
  }
};

// Whitespace-tokenized text, before or after subword segmentation.
using TextCorpus = BasicCorpus<Words>;
// Vocabulary ids; what the model trains on.
using ParallelDocCorpus = BasicCorpus<TokenIds>;
using Document = BasicDocument<TokenIds>;

TextCorpus load_corpus(const std::filesystem::path& src_path,
                       const std::filesystem::path& tgt_path,
                       const std::filesystem::path& boundaries_path);

// Source-only documents for translation; tgt sides are left empty.
TextCorpus load_source_documents(const std::filesystem::path& src_path,
                                 const std::filesystem::path& boundaries_path);

void write_side(const std::filesystem::path& path, const TextCorpus& corpus,
                bool target_side);

}  // namespace docnmt
