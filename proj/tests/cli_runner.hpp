#pragma once

// Runs the docnmt executable as a child process and captures its output.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace docnmt::testing {

struct CliRun {
  int status = -1;
  std::string out;
  std::string err;
};

inline std::string shell_quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'') q += "'\\''";
    else q += c;
  }
  return q + "'";
}

inline std::string file_contents(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// `scratch` receives the captured stdout and stderr files.
inline CliRun run_program(const std::string& program, const std::vector<std::string>& args,
                          const std::filesystem::path& scratch) {
  std::string command = shell_quote(program);
  for (const auto& a : args) command += " " + shell_quote(a);
  const auto out = scratch / "cli.stdout";
  const auto err = scratch / "cli.stderr";
  command += " >" + shell_quote(out.string()) + " 2>" + shell_quote(err.string());
  const int raw = std::system(command.c_str());
  CliRun run;
  run.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  run.out = file_contents(out);
  run.err = file_contents(err);
  return run;
}

inline CliRun run_cli(const std::vector<std::string>& args, const std::filesystem::path& scratch) {
  return run_program(DOCNMT_CLI_PATH, args, scratch);
}

inline std::filesystem::path toy_data(const std::string& name) {
  return std::filesystem::path(DOCNMT_TOY_DATA_DIR) / name;
}

// Preprocesses the bundled toy corpus into `dir`/data.
inline CliRun preprocess_toy(const std::filesystem::path& dir) {
  return run_cli({"preprocess", "--src", toy_data("train.src").string(), "--tgt", toy_data("train.tgt").string(),
                  "--boundaries", toy_data("train.bnd").string(), "--src-merges",
                  toy_data("src.merges").string(), "--tgt-merges", toy_data("tgt.merges").string(),
                  "--out-dir", (dir / "data").string()},
                 dir);
}

}  // namespace docnmt::testing
