#include "docnmt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "docnmt/errors.hpp"

namespace docnmt {

namespace {

constexpr char kMagic[8] = {'D', 'O', 'C', 'N', 'M', 'T', '\0', '\1'};

static_assert(std::endian::native == std::endian::little, "payload is written in native little-endian order");

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

const NamedTensor* Container::find(const std::string& name, const std::string& group) const {
  for (const auto& t : tensors) {
    if (t.name == name && t.group == group) return &t;
  }
  return nullptr;
}

std::string serialize(const Container& container) {
  nlohmann::json header = container.header;
  header["format_version"] = kContainerVersion;
  header["kind"] = container.kind;
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : container.tensors) {
    index.push_back({{"name", t.name}, {"group", t.group}, {"shape", t.value.shape()},
                     {"offset", offset}, {"count", t.value.size()}});
    offset += t.value.size();
  }
  header["tensors"] = std::move(index);
  const std::string text = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset * sizeof(double));
  for (const auto& t : container.tensors) {
    const auto data = t.value.data();
    out.append(reinterpret_cast<const char*>(data.data()), data.size_bytes());
  }
  return out;
}

Container deserialize(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    fail(ErrorKind::kIo, origin + ": not a docnmt container");
  }
  const std::uint64_t header_len = get_u64(bytes, 8);
  if (16 + header_len > bytes.size()) fail(ErrorKind::kIo, origin + ": truncated header");
  Container c;
  try {
    c.header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIo, origin + ": corrupt header: " + e.what());
  }
  if (c.header.value("format_version", 0u) != kContainerVersion) {
    fail(ErrorKind::kIncompatible, origin + ": unsupported container version");
  }
  c.kind = c.header.at("kind").get<std::string>();
  const std::size_t payload = 16 + header_len;
  const std::size_t doubles = (bytes.size() - payload) / sizeof(double);
  for (const auto& entry : c.header.at("tensors")) {
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto count = entry.at("count").get<std::uint64_t>();
    const auto shape = entry.at("shape").get<Shape>();
    if (offset + count > doubles || numel(shape) != count) {
      fail(ErrorKind::kIo, origin + ": tensor '" + entry.at("name").get<std::string>() + "' is truncated");
    }
    std::vector<double> values(count);
    std::memcpy(values.data(), bytes.data() + payload + offset * sizeof(double), count * sizeof(double));
    c.tensors.push_back({entry.at("name").get<std::string>(), entry.at("group").get<std::string>(),
                         Tensor::from(shape, std::move(values))});
  }
  c.header.erase("tensors");
  return c;
}

void save_container(const std::filesystem::path& path, const Container& container) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  const auto bytes = serialize(container);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "short write to " + path.string());
}

Container load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str(), path.string());
}

}  // namespace docnmt
