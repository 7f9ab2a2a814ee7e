#include <sstream>

#include <gtest/gtest.h>

#include "mocc/cli.hpp"
#include "test_util.hpp"

using namespace mocc;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mocc");
  std::vector<const char *> argv;
  for (const auto &a : args)
    argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::map<std::string, std::string> tree(const std::filesystem::path &root) {
  std::map<std::string, std::string> files;
  for (const auto &e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file())
      files[std::filesystem::relative(e.path(), root).string()] = read_bytes(e.path());
  return files;
}

// Synthetic two-class dataset plus a short training config.
struct Workspace {
  TempDir dir;
  std::string data, config;
  Workspace() {
    data = (dir / "data").string();
    config = (dir / "config.json").string();
    auto r = run_cli({"synth", "--out", data, "--seed", "3", "--n-per-class", "12", "--classes",
                      "2"});
    EXPECT_EQ(r.code, 0) << r.err;
    write_text(config, R"({"epochs": 1, "batch_size": 8, "seed": 4})");
  }
  std::string manifest() const { return data + "/manifest.csv"; }
};

} // namespace

TEST(Cli, UnknownSubcommand) {
  const auto r = run_cli({"frobnicate"});
  EXPECT_NE(r.code, 0);
  EXPECT_NE((r.out + r.err).find("Usage"), std::string::npos);
}

TEST(Cli, NoSubcommandIsUsageError) {
  const auto r = run_cli({});
  EXPECT_EQ(r.code, cli::kUsage);
}

TEST(Cli, HelpExitsZero) { EXPECT_EQ(run_cli({"--help"}).code, 0); }

TEST(Cli, SynthIsReproducible) {
  TempDir dir;
  for (const char *name : {"a", "b"})
    ASSERT_EQ(run_cli({"synth", "--out", (dir / name).string(), "--seed", "9", "--n-per-class",
                       "3"})
                  .code,
              0);
  const auto a = tree(dir / "a"), b = tree(dir / "b");
  EXPECT_EQ(a.size(), 1u + 4 * 3 * 2);
  EXPECT_EQ(a, b);
}

TEST(Cli, TrainEvalScore) {
  Workspace ws;
  const auto model = (ws.dir / "m.bin").string();
  const auto model2 = (ws.dir / "m2.bin").string();
  auto r = run_cli({"train", "--manifest", ws.manifest(), "--config", ws.config, "--out", model,
                    "--positive-class", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("tau"), std::string::npos);
  r = run_cli({"train", "--manifest", ws.manifest(), "--config", ws.config, "--out", model2,
               "--positive-class", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_bytes(model), read_bytes(model2));

  const auto report = (ws.dir / "report.json").string();
  r = run_cli({"eval", "--model", model, "--manifest", ws.manifest(), "--out", report});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("ROC"), std::string::npos);
  const auto j = nlohmann::json::parse(read_bytes(report));

  // Same numbers from an in-memory model trained with the same settings.
  const auto data = load_dataset(ws.manifest(), 32);
  std::vector<SamplePair> positives;
  for (const auto &s : data)
    if (s.class_id == 0)
      positives.push_back(s);
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 8;
  c.seed = 4;
  const auto in_memory = train(positives, c);
  const auto labels = cli::labels_for(data, 0);
  const auto expected = evaluate(in_memory, data, labels);
  EXPECT_EQ(j["roc_auc"].get<double>(), expected.roc_auc);
  EXPECT_EQ(j["recall"].get<double>(), expected.recall);
  EXPECT_EQ(j["p_at_n"].get<double>(), expected.p_at_n);
  EXPECT_EQ(j["n_test"].get<std::size_t>(), data.size());
  EXPECT_EQ(j["n_anomalies"].get<std::size_t>(), 12u);

  r = run_cli({"score", "--model", model, "--left", ws.data + "/images/c0_0000_left.ppm",
               "--right", ws.data + "/images/c0_0000_right.ppm"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.find("positive") != std::string::npos ||
              r.out.find("anomaly") != std::string::npos);
  r = run_cli({"score", "--model", model, "--manifest", ws.manifest()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1 + 24);
}

TEST(Cli, ConfigRejectsUnknownKeys) {
  Workspace ws;
  write_text(ws.config, R"({"epochs": 1, "learning_rate": 0.1})");
  const auto r = run_cli({"train", "--manifest", ws.manifest(), "--config", ws.config, "--out",
                          (ws.dir / "m.bin").string()});
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos);
}

TEST(Cli, ParseConfigAllKeys) {
  const auto c = cli::parse_config(nlohmann::json::parse(
      R"({"epochs": 3, "batch_size": 5, "lr": 0.01, "weight_decay": 0, "input_size": 64,
          "mode": "unimodal_right", "regularizer": "det", "lambda": 0.5, "seed": 77})"));
  EXPECT_EQ(c.epochs, 3);
  EXPECT_EQ(c.batch_size, 5);
  EXPECT_EQ(c.lr, 0.01);
  EXPECT_EQ(c.weight_decay, 0.0);
  EXPECT_EQ(c.input_size, 64);
  EXPECT_EQ(c.mode, Modality::unimodal_right);
  EXPECT_EQ(c.regularizer, Regularizer::det);
  EXPECT_EQ(c.lambda, 0.5);
  EXPECT_EQ(c.seed, 77u);
  EXPECT_EQ(cli::parse_config(cli::config_to_json(c)), c);
  EXPECT_THROW(cli::parse_config(nlohmann::json::parse(R"({"mode": "stereo"})")), cli::UsageError);
  EXPECT_THROW(cli::parse_config(nlohmann::json::parse(R"({"epochs": "four"})")), cli::UsageError);
  EXPECT_THROW(cli::parse_config(nlohmann::json::parse("[1]")), cli::UsageError);
}

TEST(Cli, InvalidFlagValuesAreUsageErrors) {
  Workspace ws;
  const auto out = (ws.dir / "m.bin").string();
  EXPECT_EQ(run_cli({"train", "--manifest", ws.manifest(), "--out", out, "--mode", "both"}).code,
            cli::kUsage);
  EXPECT_EQ(run_cli({"train", "--manifest", ws.manifest(), "--out", out, "--input-size", "30"})
                .code,
            cli::kUsage);
  EXPECT_EQ(run_cli({"train", "--manifest", ws.manifest()}).code, cli::kUsage);
}

TEST(Cli, DataErrors) {
  TempDir dir;
  auto r = run_cli({"train", "--manifest", (dir / "none.csv").string(), "--out",
                    (dir / "m.bin").string()});
  EXPECT_EQ(r.code, cli::kData);
  EXPECT_NE(r.err.find("none.csv"), std::string::npos);
  write_text(dir / "junk.bin", "garbage");
  write_text(dir / "manifest.csv", std::string(kManifestHeader) + "\n");
  r = run_cli({"eval", "--model", (dir / "junk.bin").string(), "--manifest",
               (dir / "manifest.csv").string(), "--positive-class", "0"});
  EXPECT_EQ(r.code, cli::kData);
}

TEST(Cli, NumericErrorExitCode) {
  Workspace ws;
  write_text(ws.config, R"({"epochs": 2, "batch_size": 4, "lr": 1e30})");
  const auto r = run_cli({"train", "--manifest", ws.manifest(), "--config", ws.config, "--out",
                          (ws.dir / "m.bin").string(), "--positive-class", "1"});
  EXPECT_EQ(r.code, cli::kNumeric);
}

TEST(Cli, GradcheckPasses) {
  const auto r = run_cli({"gradcheck", "--seeds", "1"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("upsample2x"), std::string::npos);
}

TEST(Cli, BenchPrintsAverageRow) {
  Workspace ws;
  const auto json_out = (ws.dir / "bench.json").string();
  const auto r = run_cli({"bench", "--manifest", ws.manifest(), "--config", ws.config, "--out",
                          json_out});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("average"), std::string::npos);
  EXPECT_NE(r.out.find("unimodal_left"), std::string::npos);
  const auto j = nlohmann::json::parse(read_bytes(json_out));
  EXPECT_EQ(j["tasks"].size(), 2u);
  EXPECT_TRUE(j["average"].contains("multimodal"));
}
