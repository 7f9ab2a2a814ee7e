#pragma once

// Command-line front end: synth, train, score, eval, gradcheck, bench.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mocc/checkpoint.hpp"
#include "mocc/data.hpp"
#include "mocc/metrics.hpp"
#include "mocc/occ.hpp"
#include "mocc/verification.hpp"

namespace mocc::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

// Thrown for bad flags or config files; maps to exit code 2.
class UsageError : public Error {
public:
  using Error::Error;
};

// Keys accepted in a JSON config file; any other key is rejected.
inline TrainConfig parse_config(const nlohmann::json &j) {
  if (!j.is_object())
    throw UsageError("config must be a JSON object");
  TrainConfig c;
  try {
    for (const auto &[key, value] : j.items()) {
      if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "input_size") c.input_size = value.get<int>();
      else if (key == "lambda") c.lambda = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "mode") {
        auto m = parse_modality(value.get<std::string>());
        if (!m)
          throw UsageError("config: unknown mode '" + value.get<std::string>() + "'");
        c.mode = *m;
      } else if (key == "regularizer") {
        auto r = parse_regularizer(value.get<std::string>());
        if (!r)
          throw UsageError("config: unknown regularizer '" + value.get<std::string>() + "'");
        c.regularizer = *r;
      } else {
        throw UsageError("config: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception &e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  return c;
}

inline nlohmann::json config_to_json(const TrainConfig &c) {
  return {{"epochs", c.epochs},           {"batch_size", c.batch_size},
          {"lr", c.lr},                   {"weight_decay", c.weight_decay},
          {"input_size", c.input_size},   {"mode", to_string(c.mode)},
          {"regularizer", to_string(c.regularizer)}, {"lambda", c.lambda},
          {"seed", c.seed}};
}

inline TrainConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw UsageError("cannot open config '" + path.string() + "'");
  try {
    return parse_config(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error &e) {
    throw UsageError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline nlohmann::json report_to_json(const EvalReport &r) {
  return {{"recall", r.recall},
          {"p_at_n", r.p_at_n},
          {"roc_auc", r.roc_auc},
          {"n_test", r.n_test},
          {"n_anomalies", r.n_anomalies}};
}

inline void write_json(const std::filesystem::path &path, const nlohmann::json &j) {
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out)
    throw IoError("failed writing '" + path.string() + "'");
}

// Flags shared by train and bench that override config-file values.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> regularizer;
  std::optional<double> lambda;
  std::optional<int> input_size;

  void attach(CLI::App *cmd) {
    cmd->add_option("--config", config_path, "JSON training config");
    cmd->add_option("--seed", seed, "random seed");
    cmd->add_option("--mode", mode, "multimodal|unimodal_left|unimodal_right");
    cmd->add_option("--regularizer", regularizer, "none|direct|det|logdet");
    cmd->add_option("--lambda", lambda, "diversity regularizer weight");
    cmd->add_option("--input-size", input_size, "image side length after resizing");
  }

  TrainConfig resolve() const {
    TrainConfig c = config_path.empty() ? TrainConfig{} : load_config(config_path);
    if (seed) c.seed = *seed;
    if (mode) {
      auto m = parse_modality(*mode);
      if (!m)
        throw UsageError("unknown --mode '" + *mode + "'");
      c.mode = *m;
    }
    if (regularizer) {
      auto r = parse_regularizer(*regularizer);
      if (!r)
        throw UsageError("unknown --regularizer '" + *regularizer + "'");
      c.regularizer = *r;
    }
    if (lambda) c.lambda = *lambda;
    if (input_size) c.input_size = *input_size;
    try {
      c.validate();
    } catch (const ParameterError &e) {
      throw UsageError(e.what());
    }
    return c;
  }
};

inline std::vector<int> labels_for(const std::vector<SamplePair> &samples, int positive_class) {
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const auto &s : samples) {
    if (!s.class_id)
      throw DataError("sample '" + s.sample_id + "' has no class_id; cannot label it");
    labels.push_back(*s.class_id == positive_class ? 0 : 1);
  }
  return labels;
}

inline void print_report(std::ostream &out, const EvalReport &r) {
  out << std::fixed << std::setprecision(3);
  out << "Recall  P@n    ROC    n_test  n_anomalies\n";
  out << r.recall << "   " << r.p_at_n << "  " << r.roc_auc << "  " << std::setw(6) << r.n_test
      << "  " << r.n_anomalies << '\n';
  out << std::defaultfloat;
}

// ---------------------------------------------------------------------------

inline int cmd_synth(const SynthOptions &opt, const std::string &out_dir, std::ostream &out) {
  const auto samples = synth_generate(opt);
  export_dataset(samples, out_dir);
  out << "wrote " << samples.size() << " sample pairs to "
      << (std::filesystem::path(out_dir) / "manifest.csv").string() << '\n';
  return kOk;
}

inline int cmd_train(const ConfigFlags &flags, const std::string &manifest,
                     std::optional<int> positive_class, const std::string &out_path,
                     std::ostream &out) {
  const TrainConfig config = flags.resolve();
  auto data = load_dataset(manifest, static_cast<std::size_t>(config.input_size));
  if (positive_class) {
    std::erase_if(data, [&](const SamplePair &s) { return s.class_id != positive_class; });
    if (data.empty())
      throw DataError("no samples of class " + std::to_string(*positive_class) + " in '" +
                      manifest + "'");
  }
  TrainOptions options;
  options.on_epoch = [&](int epoch, const EpochStats &s) {
    out << "epoch " << epoch + 1 << "/" << config.epochs << "  loss " << s.mean.total
        << "  compactness " << s.mean.compactness << "  recon " << s.mean.recon_x
        << " + " << s.mean.recon_xprime << '\n';
  };
  OccModel model = train(data, config, options);
  model.positive_class = positive_class;
  save_checkpoint(model, out_path);
  out << "trained on " << model.n_train << " samples, tau = " << model.tau << ", saved "
      << out_path << '\n';
  return kOk;
}

inline int cmd_score(const std::string &model_path, const std::string &manifest,
                     const std::string &left, const std::string &right, std::ostream &out) {
  const OccModel model = load_checkpoint(model_path);
  const auto size = static_cast<std::size_t>(model.config.input_size);
  std::vector<SamplePair> samples;
  if (!manifest.empty()) {
    samples = load_dataset(manifest, size);
  } else {
    if (left.empty() || right.empty())
      throw UsageError("score needs --manifest or both --left and --right");
    samples.push_back({preprocess_image(read_ppm(left), size),
                       preprocess_image(read_ppm(right), size), std::nullopt, "sample"});
  }
  const auto scores = score_batch(model, samples);
  out << "sample_id,score,decision\n";
  for (std::size_t i = 0; i < samples.size(); ++i)
    out << samples[i].sample_id << ',' << std::setprecision(9) << scores[i] << ','
        << to_string(decide(scores[i], model.tau)) << '\n';
  return kOk;
}

inline int cmd_eval(const std::string &model_path, const std::string &manifest,
                    std::optional<int> positive_class, const std::string &out_path,
                    std::ostream &out) {
  const OccModel model = load_checkpoint(model_path);
  if (!positive_class)
    positive_class = model.positive_class;
  if (!positive_class)
    throw UsageError("eval needs --positive-class (the checkpoint does not record one)");
  const auto test = load_dataset(manifest, static_cast<std::size_t>(model.config.input_size));
  const auto labels = labels_for(test, *positive_class);
  EvalReport report;
  try {
    report = evaluate(model, test, labels);
  } catch (const ParameterError &e) {
    throw DataError(std::string("cannot evaluate: ") + e.what());
  }
  print_report(out, report);
  if (!out_path.empty()) {
    write_json(out_path, report_to_json(report));
    out << "report written to " << out_path << '\n';
  }
  return kOk;
}

inline int cmd_gradcheck(std::uint64_t first_seed, int n_seeds, std::ostream &out) {
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < n_seeds; ++i)
    seeds.push_back(first_seed + static_cast<std::uint64_t>(i));
  const auto entries = run_gradient_suite(seeds);
  bool ok = true;
  out << std::left << std::setw(32) << "check" << std::setw(8) << "seed" << "max rel error\n";
  for (const auto &e : entries) {
    out << std::setw(32) << e.name << std::setw(8) << e.seed << std::scientific
        << std::setprecision(3) << e.max_relative_error << std::defaultfloat
        << (e.passed() ? "  ok" : "  FAIL") << '\n';
    ok = ok && e.passed();
  }
  out << std::right << (ok ? "all gradient checks passed" : "gradient checks FAILED") << '\n';
  return ok ? kOk : kNumeric;
}

struct BenchCell {
  EvalReport mean;
  int runs = 0;
};

inline int cmd_bench(const ConfigFlags &flags, const std::string &manifest, int n_seeds,
                     const std::string &out_path, std::ostream &out) {
  const TrainConfig base = flags.resolve();
  const auto data = load_dataset(manifest, static_cast<std::size_t>(base.input_size));
  const auto classes = class_ids(data);
  if (classes.size() < 2)
    throw DataError("bench needs a labeled dataset with at least two classes");
  std::vector<Modality> modes{Modality::unimodal_left, Modality::unimodal_right,
                              Modality::multimodal};
  if (flags.mode)
    modes = {base.mode};

  std::vector<std::vector<BenchCell>> table(classes.size(), std::vector<BenchCell>(modes.size()));
  for (std::size_t t = 0; t < classes.size(); ++t) {
    for (int s = 0; s < n_seeds; ++s) {
      const std::uint64_t seed = base.seed + static_cast<std::uint64_t>(s);
      const OccTask task = build_task(data, classes[t], 0.66, seed);
      for (std::size_t m = 0; m < modes.size(); ++m) {
        TrainConfig config = base;
        config.mode = modes[m];
        config.seed = seed;
        const OccModel model = train(task.train, config);
        const EvalReport r = evaluate(model, task);
        auto &cell = table[t][m];
        cell.mean.recall += r.recall;
        cell.mean.p_at_n += r.p_at_n;
        cell.mean.roc_auc += r.roc_auc;
        cell.mean.n_test = r.n_test;
        cell.mean.n_anomalies = r.n_anomalies;
        ++cell.runs;
      }
    }
  }

  nlohmann::json j = {{"config", config_to_json(base)}, {"seeds", n_seeds}, {"tasks", nlohmann::json::array()}};
  std::vector<EvalReport> average(modes.size());
  out << std::fixed << std::setprecision(3);
  out << std::left << std::setw(14) << "normal class";
  for (auto m : modes)
    out << std::setw(22) << to_string(m);
  out << "\n" << std::setw(14) << "";
  for (std::size_t m = 0; m < modes.size(); ++m)
    out << std::setw(22) << "Recall P@n   ROC";
  out << '\n';
  for (std::size_t t = 0; t < classes.size(); ++t) {
    out << std::setw(14) << classes[t];
    nlohmann::json row = {{"positive_class", classes[t]}};
    for (std::size_t m = 0; m < modes.size(); ++m) {
      auto &cell = table[t][m];
      const double inv = 1.0 / cell.runs;
      cell.mean.recall *= inv;
      cell.mean.p_at_n *= inv;
      cell.mean.roc_auc *= inv;
      average[m].recall += cell.mean.recall / static_cast<double>(classes.size());
      average[m].p_at_n += cell.mean.p_at_n / static_cast<double>(classes.size());
      average[m].roc_auc += cell.mean.roc_auc / static_cast<double>(classes.size());
      out << cell.mean.recall << "  " << cell.mean.p_at_n << "  " << cell.mean.roc_auc << "  ";
      row[to_string(modes[m])] = report_to_json(cell.mean);
    }
    out << '\n';
    j["tasks"].push_back(row);
  }
  out << std::setw(14) << "average";
  nlohmann::json avg;
  for (std::size_t m = 0; m < modes.size(); ++m) {
    out << average[m].recall << "  " << average[m].p_at_n << "  " << average[m].roc_auc << "  ";
    avg[to_string(modes[m])] = {{"recall", average[m].recall},
                                {"p_at_n", average[m].p_at_n},
                                {"roc_auc", average[m].roc_auc}};
  }
  out << '\n' << std::right << std::defaultfloat;
  j["average"] = avg;
  if (!out_path.empty())
    write_json(out_path, j);
  return kOk;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char *const *argv, std::ostream &out = std::cout,
               std::ostream &err = std::cerr) {
  CLI::App app{"Multimodal one-class classification with shared-weight convolutional "
               "autoencoders"};
  app.name("mocc");
  app.require_subcommand(1);

  auto *synth = app.add_subcommand("synth", "write a synthetic two-view dataset");
  SynthOptions synth_opt;
  std::string synth_out;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_opt.seed, "random seed");
  synth->add_option("--n-per-class", synth_opt.n_per_class, "samples per class");
  synth->add_option("--classes", synth_opt.n_classes, "number of classes (2-4)");
  synth->add_option("--input-size", synth_opt.input_size, "image side length");
  synth->add_option("--noise", synth_opt.noise_sigma, "Gaussian noise sigma");

  auto *train_cmd = app.add_subcommand("train", "train a model and calibrate its threshold");
  ConfigFlags train_flags;
  train_flags.attach(train_cmd);
  std::string train_manifest, train_out;
  std::optional<int> train_class;
  train_cmd->add_option("--manifest", train_manifest, "training manifest")->required();
  train_cmd->add_option("--out", train_out, "checkpoint path")->required();
  train_cmd->add_option("--positive-class", train_class,
                        "train only on rows of this class (default: all rows)");

  auto *score_cmd = app.add_subcommand("score", "score samples with a trained model");
  std::string score_model, score_manifest, score_left, score_right;
  score_cmd->add_option("--model", score_model, "checkpoint path")->required();
  score_cmd->add_option("--manifest", score_manifest, "manifest of samples to score");
  score_cmd->add_option("--left", score_left, "left-view PPM of a single sample");
  score_cmd->add_option("--right", score_right, "right-view PPM of a single sample");

  auto *eval_cmd = app.add_subcommand("eval", "evaluate a model on a labeled manifest");
  std::string eval_model, eval_manifest, eval_out;
  std::optional<int> eval_class;
  eval_cmd->add_option("--model", eval_model, "checkpoint path")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "test manifest")->required();
  eval_cmd->add_option("--positive-class", eval_class,
                       "normal class id (default: the class recorded at training)");
  eval_cmd->add_option("--out", eval_out, "write the report as JSON");

  auto *grad_cmd = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
  std::uint64_t grad_seed = 0;
  int grad_seeds = 5;
  grad_cmd->add_option("--seed", grad_seed, "first seed");
  grad_cmd->add_option("--seeds", grad_seeds, "number of seeds")->check(CLI::PositiveNumber);

  auto *bench_cmd = app.add_subcommand("bench", "one-vs-rest benchmark over every class");
  ConfigFlags bench_flags;
  bench_flags.attach(bench_cmd);
  std::string bench_manifest, bench_out;
  int bench_seeds = 1;
  bench_cmd->add_option("--manifest", bench_manifest, "labeled manifest")->required();
  bench_cmd->add_option("--seeds", bench_seeds, "seeds per task")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--out", bench_out, "write the summary as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError &e) {
    app.exit(e, out, err);
    err << app.help();
    return kUsage;
  }

  try {
    if (synth->parsed())
      return cmd_synth(synth_opt, synth_out, out);
    if (train_cmd->parsed())
      return cmd_train(train_flags, train_manifest, train_class, train_out, out);
    if (score_cmd->parsed())
      return cmd_score(score_model, score_manifest, score_left, score_right, out);
    if (eval_cmd->parsed())
      return cmd_eval(eval_model, eval_manifest, eval_class, eval_out, out);
    if (grad_cmd->parsed())
      return cmd_gradcheck(grad_seed, grad_seeds, out);
    if (bench_cmd->parsed())
      return cmd_bench(bench_flags, bench_manifest, bench_seeds, bench_out, out);
  } catch (const UsageError &e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ParameterError &e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError &e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const Error &e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  }
  err << app.help();
  return kUsage;
}

} // namespace mocc::cli
