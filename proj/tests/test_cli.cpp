#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "fusecap/cli.hpp"
#include "fusecap/dataset.hpp"

namespace fusecap {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "fusecap_test_cli";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string p(const std::string& name) { return (dir_ / name).string(); }

  static CliResult run(std::vector<std::string> args) {
    args.insert(args.begin(), "fusecap");
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
  }

  static inline fs::path dir_;
};

const std::vector<std::string> kSmall{"--embed-dim", "8", "--hidden-dim", "16", "--layers", "1"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(run({"synth", "--no-such-flag"}).code, kExitUsage);
  const auto r = run({"train", "--data", p("none.jsonl"), "--fusion", "bogus"});
  EXPECT_EQ(r.code, kExitUsage);
  for (const char* kind : {"none", "simple", "cold", "hier"}) {
    EXPECT_NE(r.err.find(kind), std::string::npos) << r.err;
  }
  EXPECT_EQ(run({"--help"}).code, kExitOk);
  EXPECT_EQ(run({"--version"}).code, kExitOk);
}

TEST_F(Cli, DataErrorsExitTwo) {
  const auto r = run({"pretrain-mlm", "--data", p("missing.jsonl"), "--out", p("m.ckpt")});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("fusecap: error:"), std::string::npos);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
  std::ofstream(p("bad.jsonl")) << "{not json\n";
  EXPECT_EQ(run({"pretrain-mlm", "--data", p("bad.jsonl"), "--out", p("m.ckpt")}).code, kExitData);
}

TEST_F(Cli, SynthIsIdempotentAndWritesManifest) {
  ASSERT_EQ(run({"synth", "--n", "30", "--seed", "4", "--out", p("s1.jsonl")}).code, kExitOk);
  ASSERT_EQ(run({"synth", "--n", "30", "--seed", "4", "--out", p("s2.jsonl")}).code, kExitOk);
  EXPECT_EQ(slurp(p("s1.jsonl")), slurp(p("s2.jsonl")));
  EXPECT_TRUE(fs::exists(p("s1.vocab.txt")));
  const auto m = read_json(p("s1.jsonl.manifest.json"));
  EXPECT_EQ(m["subcommand"], "synth");
  EXPECT_EQ(m["config"]["n"], 30);
  EXPECT_EQ(m["config"]["seed"], 4);
  EXPECT_EQ(m["version"], kToolVersion);
  EXPECT_EQ(read_jsonl(p("s1.jsonl")).size(), 30u);
}

TEST_F(Cli, FlagsOverrideConfigFile) {
  std::ofstream(p("cfg.json")) << R"({"n": 12, "seed": 9})";
  ASSERT_EQ(run({"synth", "--config", p("cfg.json"), "--seed", "2", "--out", p("c.jsonl")}).code,
            kExitOk);
  const auto m = read_json(p("c.jsonl.manifest.json"));
  EXPECT_EQ(m["config"]["n"], 12);
  EXPECT_EQ(m["config"]["seed"], 2);
  // A manifest is itself a valid config and reproduces the run.
  ASSERT_EQ(run({"synth", "--config", p("c.jsonl.manifest.json"), "--out", p("c2.jsonl")}).code,
            kExitOk);
  EXPECT_EQ(slurp(p("c.jsonl")), slurp(p("c2.jsonl")));
}

TEST_F(Cli, EvalOfReferencesScoresOneHundred) {
  ASSERT_EQ(run({"synth", "--n", "40", "--out", p("e.jsonl")}).code, kExitOk);
  std::vector<CaptionRecord> recs;
  for (const auto& ex : select_split(read_jsonl(p("e.jsonl")), "test")) {
    recs.push_back({ex.id, ex.references[0]});
  }
  ASSERT_FALSE(recs.empty());
  write_captions(p("refs.jsonl"), recs);
  const auto r = run({"eval", "--data", p("e.jsonl"), "--captions", "REF:" + p("refs.jsonl"),
                      "--out", p("eval.json")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("REF"), std::string::npos);
  const auto rep = read_json(p("eval.json"));
  EXPECT_DOUBLE_EQ(rep["rows"][0]["mean"]["B-4"].get<double>(), 100.0);
  EXPECT_TRUE(fs::exists(p("eval.json.manifest.json")));
}

TEST_F(Cli, EndToEndPipeline) {
  const auto data = p("d.jsonl");
  ASSERT_EQ(run({"synth", "--n", "60", "--out", data}).code, kExitOk);
  auto r = run(with({"pretrain-mlm", "--data", data, "--out", p("mlm.ckpt"), "--epochs", "1",
                     "--min-count", "1"},
                    kSmall));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::vector<std::string> train{"train", "--data", data, "--min-count", "1", "--epochs", "2"};
  r = run(with(with(train, kSmall), {"--fusion", "none", "--out", p("bl.ckpt")}));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(p("bl.ckpt.report.json")));
  EXPECT_TRUE(fs::exists(p("bl.ckpt.manifest.json")));

  r = run({"caption", "--model", p("bl.ckpt"), "--data", data, "--split", "test", "--beam", "2",
           "--out", p("drafts.jsonl")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  r = run({"caption", "--model", p("bl.ckpt"), "--data", data, "--split", "test", "--beam", "2",
           "--out", p("drafts2.jsonl")});
  EXPECT_EQ(slurp(p("drafts.jsonl")), slurp(p("drafts2.jsonl")));

  r = run(with(with(train, kSmall), {"--fusion", "cold", "--mlm", p("mlm.ckpt"), "--baseline",
                                     p("bl.ckpt"), "--out", p("cf.ckpt")}));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::vector<std::string> emend{"emend", "--model", p("cf.ckpt"), "--mlm", p("mlm.ckpt"),
                                       "--data", data, "--drafts", p("drafts.jsonl"), "--beam",
                                       "2"};
  r = run(with(emend, {"--fusion", "simple", "--out", p("x.jsonl")}));
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("cold"), std::string::npos) << r.err;
  r = run(with(emend, {"--fusion", "cold", "--out", p("emended.jsonl")}));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  // The baseline is not a fusion model.
  EXPECT_EQ(run({"emend", "--model", p("bl.ckpt"), "--mlm", p("mlm.ckpt"), "--data", data,
                 "--drafts", p("drafts.jsonl"), "--out", p("y.jsonl")})
                .code,
            kExitData);

  r = run({"eval", "--data", data, "--captions", "BL:" + p("drafts.jsonl"), "--captions",
           "CF:" + p("emended.jsonl")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("BL"), std::string::npos);
  EXPECT_NE(r.out.find("CF"), std::string::npos);

  r = run({"edits", "--drafts", p("drafts.jsonl"), "--emended", p("emended.jsonl"), "--out",
           p("edits.jsonl")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto csv = slurp(p("edits.hist.csv"));
  EXPECT_EQ(csv.rfind("edit_count,frequency\n", 0), 0u);
  EXPECT_TRUE(fs::exists(p("edits.hist.txt")));
  EXPECT_TRUE(fs::exists(p("edits.jsonl.manifest.json")));
}

}  // namespace
}  // namespace fusecap
