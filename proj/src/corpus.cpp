#include "docnmt/corpus.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "docnmt/errors.hpp"

namespace docnmt {

namespace {

std::size_t parse_count(const std::string& field, const std::string& where) {
  std::size_t value = 0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end) fail(ErrorKind::kData, where + ": bad integer '" + field + "'");
  return value;
}

TextCorpus assemble(const std::vector<std::string>& src_lines,
                    const std::vector<std::string>* tgt_lines,
                    const std::vector<DocumentSpan>& spans) {
  validate_partition(spans, src_lines.size());
  TextCorpus corpus;
  for (const auto& span : spans) {
    BasicDocument<Words> doc{span.doc_id, {}};
    for (std::size_t line = span.start; line < span.start + span.count; ++line) {
      DocPair<Words> pair{line, split_tokens(src_lines[line]), {}};
      if (pair.src.empty()) fail(ErrorKind::kData, "empty source sentence at line " + std::to_string(line + 1));
      if (tgt_lines) {
        pair.tgt = split_tokens((*tgt_lines)[line]);
        if (pair.tgt.empty()) fail(ErrorKind::kData, "empty target sentence at line " + std::to_string(line + 1));
      }
      doc.pairs.push_back(std::move(pair));
    }
    corpus.documents.push_back(std::move(doc));
  }
  return corpus;
}

}  // namespace

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

Words split_tokens(const std::string& line) {
  Words out;
  std::istringstream is(line);
  std::string token;
  while (is >> token) out.push_back(std::move(token));
  return out;
}

std::vector<DocumentSpan> read_boundaries(const std::filesystem::path& path) {
  std::vector<DocumentSpan> spans;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    const auto t1 = lines[i].find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : lines[i].find('\t', t1 + 1);
    if (t2 == std::string::npos) fail(ErrorKind::kData, where + ": expected doc_id<TAB>start<TAB>count");
    DocumentSpan span;
    span.doc_id = lines[i].substr(0, t1);
    span.start = parse_count(lines[i].substr(t1 + 1, t2 - t1 - 1), where);
    span.count = parse_count(lines[i].substr(t2 + 1), where);
    if (span.doc_id.empty()) fail(ErrorKind::kData, where + ": empty doc_id");
    spans.push_back(std::move(span));
  }
  return spans;
}

void write_boundaries(const std::filesystem::path& path, const std::vector<DocumentSpan>& spans) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& s : spans) out << s.doc_id << '\t' << s.start << '\t' << s.count << '\n';
}

void validate_partition(const std::vector<DocumentSpan>& spans, std::size_t line_count) {
  std::size_t expected = 0;
  for (const auto& s : spans) {
    if (s.count == 0) fail(ErrorKind::kData, "document '" + s.doc_id + "' is empty");
    if (s.start < expected) {
      fail(ErrorKind::kData, "document '" + s.doc_id + "' overlaps the previous span at line " +
                                 std::to_string(s.start));
    }
    if (s.start > expected) {
      fail(ErrorKind::kData, "gap in document boundaries: lines " + std::to_string(expected) +
                                 ".." + std::to_string(s.start - 1) + " belong to no document");
    }
    expected = s.start + s.count;
  }
  if (expected < line_count) {
    fail(ErrorKind::kData, "gap in document boundaries: lines " + std::to_string(expected) + ".." +
                               std::to_string(line_count - 1) + " belong to no document");
  }
  if (expected > line_count) {
    fail(ErrorKind::kData, "document boundaries reach line " + std::to_string(expected) +
                               " but the corpus has " + std::to_string(line_count) + " lines");
  }
}

TextCorpus load_corpus(const std::filesystem::path& src_path, const std::filesystem::path& tgt_path,
                       const std::filesystem::path& boundaries_path) {
  const auto src = read_lines(src_path);
  const auto tgt = read_lines(tgt_path);
  if (src.size() != tgt.size()) {
    fail(ErrorKind::kData, "line count mismatch: " + src_path.string() + " has " +
                               std::to_string(src.size()) + ", " + tgt_path.string() + " has " +
                               std::to_string(tgt.size()));
  }
  return assemble(src, &tgt, read_boundaries(boundaries_path));
}

TextCorpus load_source_documents(const std::filesystem::path& src_path,
                                 const std::filesystem::path& boundaries_path) {
  return assemble(read_lines(src_path), nullptr, read_boundaries(boundaries_path));
}

void write_side(const std::filesystem::path& path, const TextCorpus& corpus, bool target_side) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& doc : corpus.documents) {
    for (const auto& pair : doc.pairs) {
      const auto& words = target_side ? pair.tgt : pair.src;
      for (std::size_t i = 0; i < words.size(); ++i) out << (i ? " " : "") << words[i];
      out << '\n';
    }
  }
}

}  // namespace docnmt
