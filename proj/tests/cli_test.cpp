#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <string>

#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::string kCli = VULNIR_CLI_PATH;

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "vulnir_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run(const std::string& args, const fs::path& stdout_file = {}) {
  std::string cmd = kCli + " " + args;
  cmd += stdout_file.empty() ? " >/dev/null" : " >" + stdout_file.string();
  cmd += " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

json corpus_spec(int n, std::uint64_t seed) {
  return {{"n_programs", n},  {"vulnerable_fraction", 0.5}, {"seed", seed},
          {"min_lines", 12},  {"max_lines", 14},            {"pattern_set", "guard-call"}};
}

json toy_run_config(const fs::path& dir, std::uint64_t model_seed) {
  return {{"paths",
           {{"vocab", (dir / "vocab.txt").string()},
            {"dataset", (dir / "pre.jsonl").string()},
            {"train_out", (dir / "train.jsonl").string()},
            {"test_out", (dir / "test.jsonl").string()},
            {"checkpoint", (dir / "model.ckpt").string()},
            {"report", (dir / "report.json").string()}}},
          {"split", {{"train_fraction", 0.75}, {"seed", 3}}},
          {"model",
           {{"d_model", 8},
            {"n_heads", 2},
            {"n_layers", 1},
            {"d_ff", 16},
            {"max_len", 256},
            {"n_fc_layers", 1},
            {"fc_hidden", 8},
            {"dropout_rate", 0.0}}},
          {"train",
           {{"learning_rate", 0.1},
            {"batch_size", 4},
            {"epochs", 2},
            {"seed", model_seed},
            {"per_class_samples", 9},
            {"precision", "double"}}}};
}

TEST(CliUsage, NoSubcommandExits2) { EXPECT_EQ(run(""), 2); }

TEST(CliUsage, UnknownSubcommandExits2) { EXPECT_EQ(run("frobnicate"), 2); }

TEST(CliUsage, HelpExits0) { EXPECT_EQ(run("--help"), 0); }

TEST(CliUsage, MissingRequiredOptionExits2) { EXPECT_EQ(run("gen-corpus"), 2); }

TEST(CliUsage, MissingInputFileExits2) {
  const auto dir = fresh_dir("missing_input");
  EXPECT_EQ(run("preprocess --in " + (dir / "nope.jsonl").string() + " --out " +
                (dir / "out.jsonl").string()),
            2);
}

TEST(CliUsage, BadThresholdExits2) {
  const auto dir = fresh_dir("bad_threshold");
  write(dir / "ckpt", "x");
  write(dir / "test.jsonl", "x");
  EXPECT_EQ(run("evaluate --checkpoint " + (dir / "ckpt").string() + " --test " +
                (dir / "test.jsonl").string() + " --out " + (dir / "r.json").string() +
                " --threshold 0"),
            2);
}

TEST(CliData, CorruptDatasetExits1) {
  const auto dir = fresh_dir("corrupt_dataset");
  write(dir / "bad.jsonl", "this is not json\n");
  EXPECT_EQ(run("preprocess --in " + (dir / "bad.jsonl").string() + " --out " +
                (dir / "out.jsonl").string()),
            1);
}

TEST(CliData, CorruptCheckpointExits1) {
  const auto dir = fresh_dir("corrupt_ckpt");
  write(dir / "model.ckpt", "definitely not a checkpoint");
  write(dir / "prog.txt", "%1 = call i8* @strcpy(i8* %2, i8* %3)\nret void\n");
  EXPECT_EQ(run("predict --checkpoint " + (dir / "model.ckpt").string() + " --program " +
                (dir / "prog.txt").string()),
            1);
}

TEST(CliGradCheck, DefaultConfigPasses) {
  const auto dir = fresh_dir("grad_check_ok");
  write(dir / "gc.json", "{}\n");
  EXPECT_EQ(run("grad-check --config " + (dir / "gc.json").string()), 0);
}

TEST(CliGradCheck, HugeEpsilonExits3) {
  const auto dir = fresh_dir("grad_check_bad");
  write(dir / "gc.json", json{{"epsilon", 1.0}}.dump());
  EXPECT_EQ(run("grad-check --config " + (dir / "gc.json").string()), 3);
}

TEST(CliGenCorpus, DeterministicBytes) {
  const auto dir = fresh_dir("gen_determinism");
  write(dir / "spec.json", corpus_spec(16, 11).dump());
  ASSERT_EQ(run("gen-corpus --spec " + (dir / "spec.json").string() + " --out " +
                (dir / "a.jsonl").string()),
            0);
  ASSERT_EQ(run("gen-corpus --spec " + (dir / "spec.json").string() + " --out " +
                (dir / "b.jsonl").string()),
            0);
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
}

TEST(CliPipeline, EndToEnd) {
  const auto dir = fresh_dir("pipeline");
  write(dir / "spec.json", corpus_spec(24, 5).dump());
  ASSERT_EQ(run("gen-corpus --spec " + (dir / "spec.json").string() + " --out " +
                (dir / "corpus.jsonl").string()),
            0);
  ASSERT_EQ(run("preprocess --in " + (dir / "corpus.jsonl").string() + " --out " +
                (dir / "pre.jsonl").string()),
            0);
  ASSERT_EQ(run("build-vocab --in " + (dir / "pre.jsonl").string() + " --out " +
                (dir / "vocab.txt").string()),
            0);
  EXPECT_EQ(slurp(dir / "vocab.txt").rfind("[PAD]\n[UNK]\n[SEP]\n[CLS]\n", 0), 0u);

  write(dir / "run.json", toy_run_config(dir, 9).dump(2));
  ASSERT_EQ(run("train --config " + (dir / "run.json").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "model.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "train.jsonl"));
  EXPECT_TRUE(fs::exists(dir / "test.jsonl"));
  const auto report = json::parse(slurp(dir / "report.json"));
  EXPECT_EQ(report.at("epoch_losses").size(), 2u);
  EXPECT_GE(report.at("wall_time_s").get<double>(), 0.0);

  ASSERT_EQ(run("evaluate --checkpoint " + (dir / "model.ckpt").string() + " --test " +
                (dir / "test.jsonl").string() + " --out " + (dir / "eval.json").string()),
            0);
  const auto eval = json::parse(slurp(dir / "eval.json"));
  const auto n = eval.at("n_samples").get<std::int64_t>();
  EXPECT_EQ(n, 6);
  EXPECT_EQ(eval.at("tp").get<std::int64_t>() + eval.at("fp").get<std::int64_t>() +
                eval.at("tn").get<std::int64_t>() + eval.at("fn").get<std::int64_t>(),
            n);

  write(dir / "prog.txt",
        "%1 = alloca [64 x i8], align 1\n"
        "%2 = getelementptr inbounds [64 x i8], [64 x i8]* %1, i64 0, i64 0\n"
        "%3 = call i8* @strcpy(i8* %2, i8* %4)\n"
        "ret void\n");
  ASSERT_EQ(run("predict --checkpoint " + (dir / "model.ckpt").string() + " --program " +
                (dir / "prog.txt").string(),
                dir / "predict.out"),
            0);
  const auto out = slurp(dir / "predict.out");
  EXPECT_TRUE(std::regex_match(out, std::regex("label=[01] prob=[01]\\.[0-9]{6}\n")))
      << "got: " << out;
}

TEST(CliTrain, ByteIdenticalCheckpointsUnderSameSeed) {
  const auto dir = fresh_dir("train_determinism");
  write(dir / "spec.json", corpus_spec(24, 5).dump());
  ASSERT_EQ(run("gen-corpus --spec " + (dir / "spec.json").string() + " --out " +
                (dir / "pre.jsonl").string()),
            0);
  ASSERT_EQ(run("build-vocab --in " + (dir / "pre.jsonl").string() + " --out " +
                (dir / "vocab.txt").string()),
            0);

  auto cfg = toy_run_config(dir, 9);
  write(dir / "run_a.json", cfg.dump());
  cfg["paths"]["checkpoint"] = (dir / "model_b.ckpt").string();
  cfg["paths"]["report"] = (dir / "report_b.json").string();
  write(dir / "run_b.json", cfg.dump());

  ASSERT_EQ(run("train --config " + (dir / "run_a.json").string()), 0);
  ASSERT_EQ(run("train --config " + (dir / "run_b.json").string()), 0);
  const auto a = slurp(dir / "model.ckpt");
  const auto b = slurp(dir / "model_b.ckpt");
  ASSERT_FALSE(a.empty());
  EXPECT_EQ(a, b);
}

TEST(CliAblate, WritesTableAndCsv) {
  const auto dir = fresh_dir("ablate");
  write(dir / "spec.json", corpus_spec(16, 13).dump());
  ASSERT_EQ(run("gen-corpus --spec " + (dir / "spec.json").string() + " --out " +
                (dir / "pre.jsonl").string()),
            0);
  ASSERT_EQ(run("build-vocab --in " + (dir / "pre.jsonl").string() + " --out " +
                (dir / "vocab.txt").string()),
            0);
  auto cfg = toy_run_config(dir, 7);
  cfg["train"]["epochs"] = 1;
  cfg["train"]["per_class_samples"] = 4;
  write(dir / "run.json", cfg.dump());
  ASSERT_EQ(run("ablate --config " + (dir / "run.json").string() +
                " --depths 1,2 --repeats 2 --out " + (dir / "ablation.json").string()),
            0);
  const auto table = json::parse(slurp(dir / "ablation.json"));
  ASSERT_EQ(table.at("rows").size(), 2u);
  EXPECT_EQ(table.at("rows")[0].at("depth").get<int>(), 1);
  EXPECT_EQ(table.at("rows")[0].at("accuracies").size(), 2u);
  const auto csv = slurp(dir / "ablation.csv");
  EXPECT_EQ(csv.rfind("depth,run,accuracy\n", 0), 0u);
}

TEST(CliTrain, BadConfigJsonExits2) {
  const auto dir = fresh_dir("bad_config");
  write(dir / "run.json", "{not json");
  EXPECT_EQ(run("train --config " + (dir / "run.json").string()), 2);
}

}  // namespace
