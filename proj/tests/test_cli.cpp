#include <gtest/gtest.h>

#include <filesystem>

#include "cli_runner.hpp"
#include "docnmt/checkpoint.hpp"
#include "docnmt/hash.hpp"
#include "docnmt/manifest.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace docnmt;
using namespace docnmt::testing;
namespace fs = std::filesystem;

namespace {

// Small, fast training settings for exercising the plumbing.
void write_quick_config(const fs::path& path, std::size_t steps) {
  write_file(path, "# quick settings\nd_model = 16\nheads = 2\nlayers = 1\nd-ff = 32\nmax-len = 64\n"
                   "steps = " + std::to_string(steps) + "\ntoken-budget = 64\nlog-every = 0\nseed = 4\n");
}

bool single_error_line(const std::string& err, const std::string& category) {
  return err.rfind("error: " + category + ": ", 0) == 0 && err.find('\n') == err.size() - 1;
}

// preprocess, train-baseline, export-embeddings, build-doc-cache,
// train-enhanced (global avg, local rnn) and translate into `dir`.
void run_small_pipeline(const fs::path& dir) {
  ASSERT_EQ(preprocess_toy(dir).status, 0);
  const auto data = (dir / "data").string();
  const auto cfg = (dir / "quick.cfg").string();
  write_quick_config(cfg, 12);
  ASSERT_EQ(run_cli({"train-baseline", "--data", data, "--config", cfg, "--out", (dir / "base.ckpt").string()}, dir)
                .status,
            0);
  ASSERT_EQ(run_cli({"export-embeddings", "--checkpoint", (dir / "base.ckpt").string(), "--out",
                     (dir / "emb.bin").string()},
                    dir)
                .status,
            0);
  ASSERT_EQ(run_cli({"build-doc-cache", "--data", data, "--embeddings", (dir / "emb.bin").string(), "--out",
                     (dir / "cache.tsv").string()},
                    dir)
                .status,
            0);
  ASSERT_EQ(run_cli({"train-enhanced", "--data", data, "--config", cfg, "--embeddings", (dir / "emb.bin").string(),
                     "--doc-cache", (dir / "cache.tsv").string(), "--global", "avg", "--local", "rnn", "--out",
                     (dir / "enh.ckpt").string()},
                    dir)
                .status,
            0);
  const auto tr = run_cli({"translate", "--data", data, "--checkpoint", (dir / "enh.ckpt").string(), "--doc-cache",
                           (dir / "cache.tsv").string(), "--beam", "2", "--out", (dir / "out.txt").string()},
                          dir);
  ASSERT_EQ(tr.status, 0) << tr.err;
}

const std::vector<std::string> kArtifacts = {"data/train", "base.ckpt", "emb.bin", "cache.tsv", "enh.ckpt",
                                             "out.txt"};

}  // namespace

TEST(Cli, ScoreAgainstItselfIsOneHundred) {
  TempDir dir("cli_score");
  const auto h = dir / "h.txt";
  write_file(h, "a b c d e\nf g h@@ i j\n");
  const auto r = run_cli({"score", "--hyp", h.string(), "--ref", h.string()}, dir.path());
  EXPECT_EQ(r.status, 0);
  EXPECT_EQ(r.out.rfind("BLEU = 100.00, ", 0), 0u) << r.out;
}

TEST(Cli, BootstrapPrintsPValue) {
  TempDir dir("cli_boot");
  write_file(dir / "ref.txt", "a b c d\ne f g h\n");
  write_file(dir / "a.txt", "a b x d\ne f g y\n");
  const auto r = run_cli({"bootstrap", "--hyp-a", (dir / "a.txt").string(), "--hyp-b", (dir / "ref.txt").string(),
                          "--ref", (dir / "ref.txt").string(), "--resamples", "1000"},
                         dir.path());
  EXPECT_EQ(r.status, 0);
  EXPECT_NE(r.out.find("BLEU b = 100.00"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("p = "), std::string::npos);
}

TEST(Cli, HelpAndVersion) {
  TempDir dir("cli_help");
  const auto help = run_cli({"translate", "--help"}, dir.path());
  EXPECT_EQ(help.status, 0);
  EXPECT_NE(help.out.find("--window"), std::string::npos);
  const auto version = run_cli({"--version"}, dir.path());
  EXPECT_EQ(version.status, 0);
  EXPECT_NE(version.out.find(kToolVersion), std::string::npos);
}

TEST(Cli, ErrorCategoriesHaveDistinctExitCodes) {
  TempDir dir("cli_errors");
  const auto h = (dir / "h.txt").string();
  write_file(h, "a b\n");

  const auto unknown_flag = run_cli({"score", "--hyp", h, "--ref", h, "--bogus"}, dir.path());
  EXPECT_EQ(unknown_flag.status, 2);
  EXPECT_TRUE(single_error_line(unknown_flag.err, "usage")) << unknown_flag.err;

  const auto missing_file = run_cli({"score", "--hyp", (dir / "absent.txt").string(), "--ref", h}, dir.path());
  EXPECT_EQ(missing_file.status, 4);
  EXPECT_TRUE(single_error_line(missing_file.err, "io")) << missing_file.err;

  const auto cfg = dir / "bad.cfg";
  write_file(cfg, "smooth\n");
  const auto bad_config = run_cli({"score", "--config", cfg.string(), "--hyp", h, "--ref", h}, dir.path());
  EXPECT_EQ(bad_config.status, 3);
  EXPECT_TRUE(single_error_line(bad_config.err, "config")) << bad_config.err;

  write_file(cfg, "beam = 4\n");
  const auto foreign_key = run_cli({"score", "--config", cfg.string(), "--hyp", h, "--ref", h}, dir.path());
  EXPECT_EQ(foreign_key.status, 3);

  write_file(dir / "two.txt", "a b\nc d\n");
  const auto mismatch = run_cli({"score", "--hyp", (dir / "two.txt").string(), "--ref", h}, dir.path());
  EXPECT_EQ(mismatch.status, 5);
  EXPECT_TRUE(single_error_line(mismatch.err, "data")) << mismatch.err;
}

TEST(Cli, EnhancedRejectsForeignVocabularyBeforeTraining) {
  TempDir dir("cli_vocab");
  ASSERT_EQ(preprocess_toy(dir.path()).status, 0);
  write_quick_config(dir / "quick.cfg", 3);
  ASSERT_EQ(run_cli({"train-baseline", "--data", (dir / "data").string(), "--config", (dir / "quick.cfg").string(),
                     "--out", (dir / "base.ckpt").string()},
                    dir.path())
                .status,
            0);
  ASSERT_EQ(run_cli({"export-embeddings", "--checkpoint", (dir / "base.ckpt").string(), "--out",
                     (dir / "emb.bin").string()},
                    dir.path())
                .status,
            0);
  // The same corpus without BPE has different vocabularies.
  ASSERT_EQ(run_cli({"preprocess", "--src", toy_data("train.src").string(), "--tgt", toy_data("train.tgt").string(),
                     "--boundaries", toy_data("train.bnd").string(), "--out-dir", (dir / "words").string()},
                    dir.path())
                .status,
            0);
  const auto r = run_cli({"train-enhanced", "--data", (dir / "words").string(), "--config",
                          (dir / "quick.cfg").string(), "--embeddings", (dir / "emb.bin").string(), "--local", "avg",
                          "--out", (dir / "enh.ckpt").string()},
                         dir.path());
  EXPECT_EQ(r.status, 6);
  EXPECT_TRUE(single_error_line(r.err, "incompatible")) << r.err;
  EXPECT_FALSE(fs::exists(dir / "enh.ckpt"));

  const auto cache = run_cli({"build-doc-cache", "--data", (dir / "words").string(), "--embeddings",
                              (dir / "emb.bin").string(), "--out", (dir / "cache.tsv").string()},
                             dir.path());
  EXPECT_EQ(cache.status, 6);
}

TEST(Cli, GlobalAvgOnlyAndCacheRequired) {
  TempDir dir("cli_global");
  ASSERT_EQ(preprocess_toy(dir.path()).status, 0);
  write_quick_config(dir / "quick.cfg", 2);
  ASSERT_EQ(run_cli({"train-baseline", "--data", (dir / "data").string(), "--config", (dir / "quick.cfg").string(),
                     "--out", (dir / "base.ckpt").string()},
                    dir.path())
                .status,
            0);
  ASSERT_EQ(run_cli({"export-embeddings", "--checkpoint", (dir / "base.ckpt").string(), "--out",
                     (dir / "emb.bin").string()},
                    dir.path())
                .status,
            0);
  auto enhanced = [&](const std::string& global) {
    return run_cli({"train-enhanced", "--data", (dir / "data").string(), "--config", (dir / "quick.cfg").string(),
                    "--embeddings", (dir / "emb.bin").string(), "--global", global, "--out",
                    (dir / "enh.ckpt").string()},
                   dir.path());
  };
  EXPECT_EQ(enhanced("rnn").status, 8);
  EXPECT_EQ(enhanced("avg").status, 7);
}

TEST(Cli, ConfigFileWithFlagOverrides) {
  TempDir dir("cli_config");
  ASSERT_EQ(preprocess_toy(dir.path()).status, 0);
  write_quick_config(dir / "quick.cfg", 5);
  const auto out = dir / "base.ckpt";
  const auto r = run_cli({"train-baseline", "--data", (dir / "data").string(), "--config",
                          (dir / "quick.cfg").string(), "--steps", "3", "--out", out.string()},
                         dir.path());
  ASSERT_EQ(r.status, 0) << r.err;
  const auto m = read_manifest(out);
  EXPECT_EQ(m.config.at("train").at("max_steps"), 3);
  EXPECT_EQ(m.config.at("train").at("seed"), 4);
  EXPECT_EQ(m.config.at("model").at("d_model"), 16);
  EXPECT_EQ(load_container(out).header.at("step"), 3);
}

TEST(Cli, ToyCorpusGeneratorReproducesBundledData) {
  TempDir dir("cli_toy");
  const auto r = run_program(DOCNMT_TOY_CORPUS_TOOL, {(dir / "toy").string()}, dir.path());
  ASSERT_EQ(r.status, 0);
  for (const auto* name : {"train.src", "train.tgt", "train.bnd", "src.merges", "tgt.merges"}) {
    EXPECT_EQ(read_file(dir / "toy" / name), read_file(toy_data(name))) << name;
  }
}

TEST(Cli, PipelineWritesManifestsWithLineage) {
  TempDir dir("cli_manifest");
  run_small_pipeline(dir.path());
  for (const auto& a : kArtifacts) {
    EXPECT_TRUE(fs::exists(manifest_path(dir / a))) << a;
  }
  const auto enh = read_manifest(dir / "enh.ckpt");
  EXPECT_EQ(enh.command, "train-enhanced");
  EXPECT_EQ(enh.inputs.at("embeddings").sha256, sha256_file(dir / "emb.bin"));
  EXPECT_EQ(enh.lineage.at("embeddings").at("file"), "emb.bin");
  EXPECT_EQ(enh.lineage.at("embeddings_lineage").at("checkpoint").at("file"), "base.ckpt");
  EXPECT_EQ(enh.config.at("model").at("global"), "avg");
  const auto cache = read_manifest(dir / "cache.tsv");
  EXPECT_EQ(cache.inputs.at("embeddings").sha256, sha256_file(dir / "emb.bin"));

  // embed-doc prints the cached global vector.
  const auto line = run_cli({"embed-doc", "--data", (dir / "data").string(), "--embeddings",
                             (dir / "emb.bin").string(), "--doc", "doc03"},
                            dir.path());
  ASSERT_EQ(line.status, 0) << line.err;
  const auto cached = read_file(dir / "cache.tsv");
  EXPECT_NE(cached.find(line.out), std::string::npos);

  // A cache built from other embeddings is refused.
  write_file(dir / "emb.bin", read_file(dir / "emb.bin") + " ");
  const auto stale = run_cli({"train-enhanced", "--data", (dir / "data").string(), "--config",
                              (dir / "quick.cfg").string(), "--embeddings", (dir / "emb.bin").string(),
                              "--doc-cache", (dir / "cache.tsv").string(), "--out", (dir / "x.ckpt").string()},
                             dir.path());
  EXPECT_NE(stale.status, 0);
}

TEST(Cli, RerunsAreByteIdentical) {
  TempDir first("cli_rerun_a");
  TempDir second("cli_rerun_b");
  run_small_pipeline(first.path());
  run_small_pipeline(second.path());
  for (const auto& a : kArtifacts) {
    if (a != "data/train") EXPECT_EQ(read_file(first / a), read_file(second / a)) << a;
    EXPECT_EQ(read_file(manifest_path(first / a)), read_file(manifest_path(second / a))) << a;
  }
  for (const auto* f : {"data/train.src", "data/train.tgt", "data/train.bnd", "data/src.vocab", "data/tgt.vocab"}) {
    EXPECT_EQ(read_file(first / f), read_file(second / f)) << f;
  }
}
