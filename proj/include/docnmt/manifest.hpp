#pragma once

// Provenance record written next to every artifact: configuration, hashes
// of the inputs, and the checkpoint lineage. Contains no timestamps so that
// identical runs produce identical manifests.

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

namespace docnmt {

inline constexpr const char* kToolVersion = "1.0.0";

struct InputRecord {
  std::string file;    // base name
  std::string sha256;
};

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, InputRecord> inputs;  // by role
  nlohmann::json lineage = nlohmann::json::object();
  std::string tool_version = kToolVersion;

  // Hashes `path` and records it under `role`.
  void add_input(const std::string& role, const std::filesystem::path& path);
  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

std::filesystem::path manifest_path(const std::filesystem::path& artifact);
void write_manifest(const std::filesystem::path& artifact, const RunManifest& manifest);
// Reads the manifest of an artifact; fails with kIo when it is absent.
RunManifest read_manifest(const std::filesystem::path& artifact);

}  // namespace docnmt
