#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include <json.hpp>

#include "capkit/corpus.hpp"
#include "capkit/tensor_io.hpp"
#include "support.hpp"

using namespace capkit;
using capkit::testing::run_cli;
namespace fs = std::filesystem;

namespace {

bool single_error_line(const std::string& err, const std::string& code) {
  const auto pos = err.find("error: code=" + code + " message=");
  if (pos == std::string::npos) return false;
  const auto eol = err.find('\n', pos);
  return eol != std::string::npos;
}

}  // namespace

TEST(Cli, EndToEndPipeline) {
  const auto dir = capkit::testing::scratch_dir("cli_e2e");
  const auto cfg = capkit::testing::write_fast_config(dir);
  const auto data = dir + "/data";

  auto r = run_cli({"synth", "--config", cfg, "--n", "20", "--out", data});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(data + "/captions.jsonl"));
  EXPECT_TRUE(fs::exists(data + "/vocab.json"));
  EXPECT_TRUE(fs::exists(data + "/feature_models/pca.tar"));
  const auto records = read_records_jsonl(data + "/captions.jsonl");
  ASSERT_EQ(records.size(), 20u);
  EXPECT_TRUE(fs::exists(data + "/features/" + records[0].clip_id + ".vae.bin"));

  r = run_cli({"train", "--config", cfg, "--data", data, "--out", dir + "/ckpt"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir + "/ckpt/model.ckpt"));
  const auto report = nlohmann::json::parse(read_file(dir + "/ckpt/run_report.json"));
  EXPECT_TRUE(report.contains("best_epoch"));

  r = run_cli({"generate", "--config", cfg, "--data", data, "--checkpoint", dir + "/ckpt/model.ckpt", "--split",
               "test", "--out", dir + "/reports"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto hyps = read_captions_jsonl(dir + "/reports/hyps_test.jsonl");
  std::size_t n_test = 0;
  for (const auto& rec : records) n_test += rec.split == Split::kTest;
  EXPECT_EQ(hyps.size(), n_test);

  r = run_cli({"evaluate", "--hyps", dir + "/reports/hyps_test.jsonl", "--refs", data + "/captions.jsonl", "--out",
               dir + "/reports"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto metrics = nlohmann::json::parse(read_file(dir + "/reports/metrics.json"));
  for (const char* k : {"bleu1", "bleu4", "cider", "sw_precision", "sw_recall", "diversity", "normalized"})
    EXPECT_TRUE(metrics.contains(k)) << k;
  EXPECT_EQ(metrics["pairs"], n_test);
}

TEST(Cli, EvaluateIdentityAndReport) {
  const auto dir = capkit::testing::scratch_dir("cli_eval");
  std::vector<std::pair<std::string, Tokens>> rows = {{"a", tokenize("a pass to the post .")},
                                                      {"b", tokenize("a corner kick !")},
                                                      {"c", tokenize("the keeper saves it low")}};
  write_captions_jsonl(dir + "/refs.jsonl", rows);
  auto r = run_cli({"evaluate", "--hyps", dir + "/refs.jsonl", "--refs", dir + "/refs.jsonl", "--out", dir});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = nlohmann::json::parse(read_file(dir + "/metrics.json"));
  EXPECT_NEAR(m["bleu4"].get<double>(), 100.0, 1e-9);
  EXPECT_NEAR(m["cider"].get<double>(), 10.0, 1e-6);
  EXPECT_NEAR(m["diversity"].get<double>(), 1.0, 1e-12);

  write_file(dir + "/values.json",
             R"([{"name": "Proposed", "bleu4": 15.1, "cider": 0.95, "precision": 49, "recall": 46.6},
                 {"name": "k-NN", "bleu4": 9.8, "cider": 0.53, "precision": 42.6, "recall": 43.6}])");
  r = run_cli({"report", "--from-values", dir + "/values.json", "--out", dir + "/rep"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("Proposed"), std::string::npos);
  EXPECT_NE(r.out.find("1.407"), std::string::npos);  // printed as 1.41 at two decimals
  EXPECT_TRUE(fs::exists(dir + "/rep/report.json"));
}

TEST(Cli, ExitCodesAndErrorLines) {
  auto r = run_cli({});
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(single_error_line(r.err, "usage"));

  r = run_cli({"frobnicate"});
  EXPECT_EQ(r.code, 2);

  r = run_cli({"evaluate", "--hyps", "/nonexistent/h.jsonl"});
  EXPECT_EQ(r.code, 2);  // missing required --refs

  r = run_cli({"evaluate", "--hyps", "/nonexistent/h.jsonl", "--refs", "/nonexistent/r.jsonl"});
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(single_error_line(r.err, "missing_file")) << r.err;

  r = run_cli({"report"});
  EXPECT_EQ(r.code, 2);
  r = run_cli({"report", "--from-values", "a", "--from-run", "b"});
  EXPECT_EQ(r.code, 2);

  r = run_cli({"generate", "--mode", "beam"});
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, ConfigValidation) {
  const auto dir = capkit::testing::scratch_dir("cli_cfg");
  write_file(dir + "/bad.json", R"({"trian": {}})");
  auto r = run_cli({"report", "--config", dir + "/bad.json", "--from-values", dir + "/x.json"});
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(single_error_line(r.err, "bad_config")) << r.err;

  // The environment variable is the fallback when --config is absent.
  setenv("CAPKIT_CONFIG", (dir + "/bad.json").c_str(), 1);
  r = run_cli({"report", "--from-values", dir + "/x.json"});
  unsetenv("CAPKIT_CONFIG");
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(single_error_line(r.err, "bad_config")) << r.err;
}

TEST(Cli, PrepareAnonymizesAndSplits) {
  const auto dir = capkit::testing::scratch_dir("cli_prepare");
  std::string rows;
  for (int i = 0; i < 20; ++i) {
    rows += nlohmann::json{{"clip_id", "m" + std::to_string(i)}, {"action", "goal"},
                           {"caption", "Goal! Lionel Messi scores for FC Barca."}}
                .dump() +
            "\n";
  }
  write_file(dir + "/raw.jsonl", rows);
  write_file(dir + "/entities.json", R"({"Lionel Messi": "player", "FC Barca": "team"})");
  const auto r = run_cli({"prepare", "--input", dir + "/raw.jsonl", "--entities", dir + "/entities.json",
                          "--out", dir + "/out"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto recs = read_records_jsonl(dir + "/out/captions.jsonl");
  ASSERT_EQ(recs.size(), 20u);
  EXPECT_EQ(recs[0].tokens, (Tokens{"goal", "!", "{player}", "scores", "for", "{team}", "."}));
  std::size_t train = 0;
  for (const auto& x : recs) train += x.split == Split::kTrain;
  EXPECT_EQ(train, 17u);
  const auto v = load_vocab(dir + "/out/vocab.json");
  EXPECT_TRUE(v.contains("{player}"));
}
