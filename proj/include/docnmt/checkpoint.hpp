#pragma once

// Binary container shared by checkpoints and embedding exports.
//
//   bytes 0..7    magic "DOCNMT\0\1"
//   bytes 8..15   header length H, uint64 little-endian
//   next H bytes  UTF-8 JSON header
//   remainder     float64 little-endian payload
//
// The header names every tensor with its shape, group and element offset
// into the payload, alongside the model and training configuration,
// vocabulary hashes, seed, step, generator state and lineage. See
// docs/checkpoint-format.md.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "docnmt/config.hpp"
#include "docnmt/tensor.hpp"
#include "json.hpp"

namespace docnmt {

inline constexpr std::uint32_t kContainerVersion = 1;

struct NamedTensor {
  std::string name;
  std::string group;  // "param", "adam_m", "adam_v", "embedding"
  Tensor value;
};

struct Container {
  std::string kind;  // "checkpoint" or "embeddings"
  nlohmann::json header;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name, const std::string& group) const;
};

std::string serialize(const Container& container);
Container deserialize(const std::string& bytes, const std::string& origin = "<memory>");

void save_container(const std::filesystem::path& path, const Container& container);
Container load_container(const std::filesystem::path& path);

}  // namespace docnmt
