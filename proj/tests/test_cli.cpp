// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include "json.hpp"
#include "memprobe/checkpoint.hpp"
#include "memprobe/cli.hpp"
#include "memprobe/corpus.hpp"
#include "memprobe/transformer.hpp"

using namespace memprobe;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Small end-to-end pipeline shared by the tests, built once.
class CliPipeline : public ::testing::Test {
 protected:
  static fs::path dir;

  static std::string path(const std::string& name) { return (dir / name).string(); }

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / "memprobe_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    ASSERT_EQ(cli({"gen-corpus", "--out", path("corpus.json"), "--seed", "3", "--vocab-size", "16",
                   "--seq-len", "8", "--tiers", "6x1,6x8", "--n-train", "4", "--n-test", "8"})
                  .code,
              0);
    ASSERT_EQ(cli({"train-target", "--corpus", path("corpus.json"), "--out", path("target.dspx"),
                   "--embed-dim", "16", "--heads", "2", "--layers", "1", "--ffn-hidden", "32",
                   "--max-seq-len", "24", "--epochs", "6", "--batch-size", "4", "--lr", "1e-2",
                   "--max-offset", "4", "--stop-accuracy", "0"})
                  .code,
              0);
    for (const std::string m : {"csp", "dynamic"}) {
      const auto r = cli({"train-prompt", "--method", m, "--target", path("target.dspx"), "--corpus",
                          path("corpus.json"), "--out", path(m + ".dspx"), "--audit", path(m + ".audit.json"),
                          "--prompt-len", "3", "--blocks", "1", "--epochs", "2", "--batch-size", "2",
                          "--prefix-len", "4"});
      ASSERT_EQ(r.code, 0) << r.err;
    }
  }

  static void TearDownTestSuite() { fs::remove_all(dir); }

  static std::vector<std::string> eval_flags() {
    return {"--target", path("target.dspx"), "--corpus", path("corpus.json"), "--prompt-len", "3",
            "--prefix-len", "4", "--suffix-len", "4"};
  }
};

fs::path CliPipeline::dir;

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"gen-corpus", "--no-such-flag", "1"}).code, 2);
  EXPECT_EQ(cli({"gen-corpus"}).code, 2);
  EXPECT_EQ(cli({"verify", "--help"}).code, 0);
}

TEST(Cli, VocabularyOfOneNamesTheFlag) {
  const auto out = (fs::temp_directory_path() / "memprobe_cli_v1.json").string();
  const auto r = cli({"gen-corpus", "--out", out, "--vocab-size", "1"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--vocab-size"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, MalformedTiersAndOversizedSplits) {
  const auto out = (fs::temp_directory_path() / "memprobe_cli_bad.json").string();
  EXPECT_EQ(cli({"gen-corpus", "--out", out, "--tiers", "10by2"}).code, 2);
  EXPECT_EQ(cli({"gen-corpus", "--out", out, "--tiers", "10x1", "--n-train", "8", "--n-test", "8"}).code, 2);
}

TEST(Cli, MissingInputFileIsAConfigurationError) {
  const auto r = cli({"evaluate", "--method", "none", "--target", "/nonexistent/t.dspx", "--corpus", "/nonexistent/c.json"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--target"), std::string::npos);
}

TEST_F(CliPipeline, GenCorpusIsDeterministic) {
  const auto again = path("corpus2.json");
  ASSERT_EQ(cli({"gen-corpus", "--out", again, "--seed", "3", "--vocab-size", "16", "--seq-len", "8", "--tiers",
                 "6x1,6x8", "--n-train", "4", "--n-test", "8"})
                .code,
            0);
  EXPECT_EQ(slurp(again), slurp(path("corpus.json")));
  const auto corpus = load_corpus(path("corpus.json"));
  EXPECT_EQ(corpus.sequences.size(), 12u);
  EXPECT_EQ(corpus.splits.train_ids.size(), 4u);
  const auto j = json::parse(slurp(path("corpus.json")));
  EXPECT_EQ(j.at("config").at("vocab-size"), 16);
  EXPECT_EQ(j.at("config").at("tiers"), "6x1,6x8");
  EXPECT_FALSE(j.at("config").contains("out"));
}

TEST_F(CliPipeline, CorruptCheckpointExitsOne) {
  const auto bad = path("bad.dspx");
  std::ofstream(bad) << "XXXXnot a checkpoint";
  const auto r = cli({"evaluate", "--method", "none", "--target", bad, "--corpus", path("corpus.json")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("magic"), std::string::npos) << r.err;
}

TEST_F(CliPipeline, PromptCheckpointsAndAudit) {
  const auto csp = read_dspx(path("csp.dspx"));
  EXPECT_EQ(csp.header.at("method_tag"), "csp");
  EXPECT_EQ(csp.tensors.size(), 1u);
  EXPECT_EQ(csp.tensors[0].tensor.shape(), (Shape{3, 16}));

  const auto dyn = read_dspx(path("dynamic.dspx"));
  EXPECT_EQ(dyn.header.at("method_tag"), "dynamic");
  bool any_nonzero_out = false;
  for (const auto& t : dyn.tensors) {
    if (t.name.find("attn.w_o") == std::string::npos) continue;
    for (float v : t.tensor.data()) any_nonzero_out = any_nonzero_out || v != 0.0f;
  }
  EXPECT_TRUE(any_nonzero_out) << "training should move the zero-initialised output projection";

  const auto corpus = load_corpus(path("corpus.json"));
  const std::set<std::int64_t> train(corpus.splits.train_ids.begin(), corpus.splits.train_ids.end());
  const auto target_checksum = load_checkpoint(path("target.dspx")).model.weights_checksum();
  for (const std::string m : {"csp", "dynamic"}) {
    const auto audit = json::parse(slurp(path(m + ".audit.json")));
    EXPECT_TRUE(audit.at("subset_of_train").get<bool>());
    const auto ids = audit.at("consumed_ids").get<std::vector<std::int64_t>>();
    EXPECT_EQ(ids.size(), train.size());
    for (auto id : ids) EXPECT_TRUE(train.count(id)) << id;
    EXPECT_EQ(audit.at("target_checksum_before"), audit.at("target_checksum_after"));
    EXPECT_EQ(audit.at("target_checksum_after").get<std::uint64_t>(), target_checksum);
  }
}

TEST_F(CliPipeline, TrainPromptRejectsUntrainableMethods) {
  const auto r = cli({"train-prompt", "--method", "hard_dyn", "--target", path("target.dspx"), "--corpus",
                      path("corpus.json"), "--out", path("x.dspx")});
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliPipeline, EvaluateTwiceIsByteIdentical) {
  auto a = eval_flags();
  a.insert(a.begin(), {"evaluate", "--method", "none", "--out", path("none_a.json")});
  auto b = eval_flags();
  b.insert(b.begin(), {"evaluate", "--method", "none", "--out", path("none_b.json")});
  ASSERT_EQ(cli(a).code, 0);
  ASSERT_EQ(cli(b).code, 0);
  EXPECT_EQ(slurp(path("none_a.json")), slurp(path("none_b.json")));
  const auto j = json::parse(slurp(path("none_a.json")));
  EXPECT_EQ(j.at("method"), "none");
  EXPECT_EQ(j.at("n_test"), 8);
  EXPECT_EQ(j.at("config").at("prefix-len"), 4);
}

TEST_F(CliPipeline, EvaluateTrainedMethodNeedsMatchingCheckpoint) {
  auto ok = eval_flags();
  ok.insert(ok.begin(), {"evaluate", "--method", "csp", "--prompt", path("csp.dspx"), "--out", path("csp_eval.json")});
  ASSERT_EQ(cli(ok).code, 0);
  EXPECT_TRUE(json::parse(slurp(path("csp_eval.json"))).at("gains").contains("exact_pct"));
  auto wrong = eval_flags();
  wrong.insert(wrong.begin(), {"evaluate", "--method", "csp", "--prompt", path("dynamic.dspx")});
  EXPECT_EQ(cli(wrong).code, 2);
}

TEST_F(CliPipeline, CompareWritesAllMethods) {
  auto args = eval_flags();
  args.insert(args.begin(), {"compare", "--csp", path("csp.dspx"), "--dynamic", path("dynamic.dspx"), "--out-csv",
                             path("cmp.csv"), "--out-json", path("cmp.json")});
  const auto r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(slurp(path("cmp.csv")));
  std::string line;
  std::vector<std::string> methods;
  std::getline(csv, line);
  EXPECT_EQ(line.rfind("method,exact_er,fractional_er", 0), 0u);
  while (std::getline(csv, line)) methods.push_back(line.substr(0, line.find(',')));
  EXPECT_EQ(methods, (std::vector<std::string>{"none", "hard_const", "hard_dyn", "csp", "dynamic"}));
  const auto j = json::parse(slurp(path("cmp.json")));
  ASSERT_EQ(j.at("reports").size(), 5u);
  for (const auto& rep : j.at("reports")) {
    EXPECT_LE(rep.at("exact_er").get<double>(), rep.at("fractional_er").get<double>());
  }
  EXPECT_NE(r.out.find("dynamic"), std::string::npos);
}

TEST_F(CliPipeline, PrefixFractionalModeKeepsExactRate) {
  auto a = eval_flags();
  a.insert(a.begin(), {"evaluate", "--method", "hard_dyn", "--out", path("pw.json")});
  auto b = eval_flags();
  b.insert(b.begin(), {"evaluate", "--method", "hard_dyn", "--fractional-mode", "prefix", "--out", path("pf.json")});
  ASSERT_EQ(cli(a).code, 0);
  ASSERT_EQ(cli(b).code, 0);
  const auto ja = json::parse(slurp(path("pw.json")));
  const auto jb = json::parse(slurp(path("pf.json")));
  EXPECT_EQ(ja.at("exact_er"), jb.at("exact_er"));
  EXPECT_LE(jb.at("fractional_er").get<double>(), ja.at("fractional_er").get<double>());
}

TEST_F(CliPipeline, ConfigFileValuesYieldToFlags) {
  const auto cfg = path("cfg.json");
  std::ofstream(cfg) << R"({"prefix_len": 4, "evaluate": {"suffix_len": 3, "prompt_len": 3}})";
  const auto r = cli({"evaluate", "--config", cfg, "--method", "none", "--target", path("target.dspx"), "--corpus",
                      path("corpus.json"), "--suffix-len", "4", "--out", path("cfg_eval.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(slurp(path("cfg_eval.json")));
  EXPECT_EQ(j.at("config").at("suffix-len"), 4);
  EXPECT_EQ(j.at("config").at("prefix-len"), 4);
  std::ofstream(cfg) << R"({"evaluate": {"bogus": 1}})";
  EXPECT_EQ(cli({"evaluate", "--config", cfg, "--method", "none"}).code, 2);
}

TEST_F(CliPipeline, TrainTargetResumesEpochCount) {
  const auto r = cli({"train-target", "--corpus", path("corpus.json"), "--resume", path("target.dspx"), "--out",
                      path("target_more.dspx"), "--epochs", "7", "--batch-size", "4", "--lr", "1e-2", "--max-offset",
                      "4", "--stop-accuracy", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_dspx(path("target_more.dspx")).header.at("epochs_completed"), 7);
  EXPECT_NE(r.out.find("\"epoch\":7"), std::string::npos);
}

TEST_F(CliPipeline, BadThreadVariableExitsTwo) {
  ::setenv("MEMPROBE_THREADS", "lots", 1);
  auto args = eval_flags();
  args.insert(args.begin(), {"evaluate", "--method", "none"});
  const auto r = cli(args);
  ::unsetenv("MEMPROBE_THREADS");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("MEMPROBE_THREADS"), std::string::npos);
}

TEST(CliBinary, VerifyAndExitCodes) {
  const std::string bin = MEMPROBE_CLI_PATH;
  const auto run = [&](const std::string& args) {
    const int status = std::system((bin + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  EXPECT_EQ(run("verify"), 0);
  EXPECT_EQ(run("gen-corpus --vocab-size 1 --out /tmp/memprobe_never.json"), 2);
  EXPECT_EQ(run("evaluate --method none --target /nonexistent --corpus /nonexistent"), 2);
  EXPECT_EQ(run("gen-corpus --out /nonexistent_dir/sub/corpus.json"), 1);
}
