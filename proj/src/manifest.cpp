#include "docnmt/manifest.hpp"

#include <fstream>

#include "docnmt/errors.hpp"
#include "docnmt/hash.hpp"

namespace docnmt {

void RunManifest::add_input(const std::string& role, const std::filesystem::path& path) {
  inputs[role] = {path.filename().string(), sha256_file(path)};
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json in = nlohmann::json::object();
  for (const auto& [role, rec] : inputs) in[role] = {{"file", rec.file}, {"sha256", rec.sha256}};
  return {{"command", command}, {"config", config}, {"inputs", in},
          {"lineage", lineage}, {"tool_version", tool_version}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.config = j.value("config", nlohmann::json::object());
  for (const auto& [role, rec] : j.at("inputs").items()) {
    m.inputs[role] = {rec.at("file").get<std::string>(), rec.at("sha256").get<std::string>()};
  }
  m.lineage = j.value("lineage", nlohmann::json::object());
  m.tool_version = j.value("tool_version", std::string());
  return m;
}

std::filesystem::path manifest_path(const std::filesystem::path& artifact) {
  auto p = artifact;
  p += ".manifest.json";
  return p;
}

void write_manifest(const std::filesystem::path& artifact, const RunManifest& manifest) {
  const auto path = manifest_path(artifact);
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << manifest.to_json().dump(2) << '\n';
}

RunManifest read_manifest(const std::filesystem::path& artifact) {
  const auto path = manifest_path(artifact);
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "missing manifest " + path.string());
  try {
    return RunManifest::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIo, "corrupt manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace docnmt
