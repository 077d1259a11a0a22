#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "vulnir/vulnir.hpp"

namespace {

using nlohmann::json;

json load_json_file(const std::string& path) {
  const auto raw = vulnir::read_file(path);
  try {
    return json::parse(raw);
  } catch (const json::exception& e) {
    throw vulnir::ConfigError(path + ": invalid JSON: " + std::string(e.what()));
  }
}

std::string require_path(const json& paths, const char* key) {
  if (!paths.contains(key)) {
    throw vulnir::ConfigError(std::string("config: paths.") + key + " is required");
  }
  return paths.at(key).get<std::string>();
}

// Training data comes either from explicit paths.train/paths.test files or
// from paths.dataset cut by the "split" section (optionally saving the two
// sides to paths.train_out/paths.test_out).
struct ResolvedData {
  std::vector<vulnir::IrProgram> train_set;
  std::vector<vulnir::IrProgram> test_set;
  vulnir::Vocabulary vocab;
};

ResolvedData resolve_data(const json& cfg, bool need_test) {
  if (!cfg.contains("paths") || !cfg.at("paths").is_object()) {
    throw vulnir::ConfigError("config: 'paths' object is required");
  }
  const auto& paths = cfg.at("paths");
  ResolvedData data;
  data.vocab = vulnir::Vocabulary::load(require_path(paths, "vocab"));
  if (paths.contains("train")) {
    data.train_set = vulnir::load_dataset(paths.at("train").get<std::string>());
    if (paths.contains("test")) {
      data.test_set = vulnir::load_dataset(paths.at("test").get<std::string>());
    } else if (need_test) {
      throw vulnir::ConfigError(
          "config: paths.test is required (or use paths.dataset with a split)");
    }
  } else if (paths.contains("dataset")) {
    const auto corpus = vulnir::load_dataset(paths.at("dataset").get<std::string>());
    vulnir::SplitSpec split_spec;
    if (cfg.contains("split")) split_spec = cfg.at("split").get<vulnir::SplitSpec>();
    auto parts = vulnir::split(corpus, split_spec);
    if (paths.contains("train_out")) {
      vulnir::save_dataset(paths.at("train_out").get<std::string>(), parts.first);
    }
    if (paths.contains("test_out")) {
      vulnir::save_dataset(paths.at("test_out").get<std::string>(), parts.second);
    }
    data.train_set = std::move(parts.first);
    data.test_set = std::move(parts.second);
  } else {
    throw vulnir::ConfigError("config: paths.train or paths.dataset is required");
  }
  return data;
}

vulnir::ModelConfig resolve_model_config(const json& cfg, const vulnir::Vocabulary& vocab) {
  vulnir::ModelConfig mc;
  if (cfg.contains("model")) mc = vulnir::model_config_from_json(cfg.at("model"));
  if (mc.vocab_size == 0) {
    mc.vocab_size = vocab.size();
  } else if (mc.vocab_size != vocab.size()) {
    throw vulnir::ConfigError("config: model.vocab_size " + std::to_string(mc.vocab_size) +
                              " does not match the vocabulary (" + std::to_string(vocab.size()) +
                              " ids)");
  }
  mc.validate();
  return mc;
}

vulnir::TrainConfig resolve_train_config(const json& cfg) {
  vulnir::TrainConfig tc;
  if (cfg.contains("train")) tc = cfg.at("train").get<vulnir::TrainConfig>();
  tc.validate();
  return tc;
}

int cmd_gen_corpus(const std::string& spec_path, const std::string& out_path) {
  const auto spec = load_json_file(spec_path).get<vulnir::CorpusSpec>();
  const auto programs = vulnir::generate_synthetic(spec);
  std::size_t n_vuln = 0;
  for (const auto& p : programs) n_vuln += p.label == 1 ? 1 : 0;
  vulnir::save_dataset(out_path, programs);
  std::cerr << "generated " << programs.size() << " programs (" << n_vuln << " vulnerable) -> "
            << out_path << "\n";
  return 0;
}

int cmd_preprocess(const std::string& in_path, const std::string& out_path,
                   std::uint32_t max_lines) {
  vulnir::PreprocessConfig pc;
  pc.max_lines = max_lines;
  pc.validate();
  const auto input = vulnir::load_dataset(in_path);
  const auto output = vulnir::preprocess(input, pc);
  vulnir::save_dataset(out_path, output);
  std::cerr << "preprocessed " << input.size() << " programs, kept " << output.size()
            << " under " << max_lines << " lines -> " << out_path << "\n";
  return 0;
}

int cmd_build_vocab(const std::string& in_path, const std::string& out_path) {
  const auto programs = vulnir::load_dataset(in_path);
  const auto vocab = vulnir::build_vocab(programs);
  vocab.save(out_path);
  std::cerr << "vocabulary: " << vocab.n_tokens() << " corpus tokens + "
            << vulnir::kNumSpecialTokens << " special = " << vocab.size() << " ids -> "
            << out_path << "\n";
  return 0;
}

template <typename Scalar>
void run_train(const vulnir::ModelConfig& mc, const vulnir::TrainConfig& tc,
               const ResolvedData& data, const std::string& ckpt_path,
               const std::string& report_path) {
  vulnir::TransformerModel<Scalar> model(mc, tc.seed);
  const auto report = vulnir::train(model, data.train_set, tc, data.vocab);
  vulnir::save_checkpoint(model, data.vocab, ckpt_path);
  vulnir::write_file_atomic(report_path, json(report).dump(2) + "\n");
  std::cerr << "trained " << tc.epochs << " epochs on " << report.train_config.per_class_samples
            << " per-class cap, final train accuracy " << report.final_train_accuracy << " in "
            << report.wall_time_s << " s\n"
            << "checkpoint -> " << ckpt_path << "\nreport -> " << report_path << "\n";
}

int cmd_train(const std::string& config_path) {
  const auto cfg = load_json_file(config_path);
  const auto data = resolve_data(cfg, false);
  const auto mc = resolve_model_config(cfg, data.vocab);
  const auto tc = resolve_train_config(cfg);
  const auto& paths = cfg.at("paths");
  const auto ckpt = require_path(paths, "checkpoint");
  const auto report = paths.contains("report") ? paths.at("report").get<std::string>()
                                               : ckpt + ".report.json";
  if (tc.precision == vulnir::Precision::Single) {
    run_train<float>(mc, tc, data, ckpt, report);
  } else {
    run_train<double>(mc, tc, data, ckpt, report);
  }
  return 0;
}

template <typename Scalar>
vulnir::EvalReport run_evaluate(const std::string& ckpt_path,
                                const std::vector<vulnir::IrProgram>& test_set,
                                double threshold) {
  const auto ckpt = vulnir::load_checkpoint<Scalar>(ckpt_path);
  return vulnir::evaluate(ckpt.model, test_set, ckpt.vocab, threshold);
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& test_path,
                 const std::string& out_path, double threshold) {
  vulnir::validate_threshold(threshold);
  const auto test_set = vulnir::load_dataset(test_path);
  const auto report = vulnir::checkpoint_precision(ckpt_path) == vulnir::Precision::Single
                          ? run_evaluate<float>(ckpt_path, test_set, threshold)
                          : run_evaluate<double>(ckpt_path, test_set, threshold);
  vulnir::write_file_atomic(out_path, json(report).dump(2) + "\n");
  std::cerr << "accuracy " << report.accuracy << " on " << report.n_samples << " programs (tp "
            << report.tp << ", fp " << report.fp << ", tn " << report.tn << ", fn " << report.fn
            << ") -> " << out_path << "\n";
  return 0;
}

vulnir::IrProgram read_program_text(const std::string& path) {
  const auto raw = vulnir::read_file(path);
  vulnir::IrProgram p;
  p.id = path;
  std::size_t start = 0;
  while (start <= raw.size()) {
    auto end = raw.find('\n', start);
    if (end == std::string::npos) end = raw.size();
    auto line = raw.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const bool last = end >= raw.size();
    if (!(last && line.empty())) p.lines.push_back(std::move(line));
    start = end + 1;
    if (last) break;
  }
  if (p.lines.empty()) throw vulnir::ParseError(path + ": empty program");
  p.line_labels.assign(p.lines.size(), 0);
  return p;
}

template <typename Scalar>
std::pair<std::int32_t, double> run_predict(const std::string& ckpt_path,
                                            const vulnir::IrProgram& program) {
  const auto ckpt = vulnir::load_checkpoint<Scalar>(ckpt_path);
  return vulnir::predict(ckpt.model, program, ckpt.vocab);
}

int cmd_predict(const std::string& ckpt_path, const std::string& program_path) {
  const auto program = read_program_text(program_path);
  const auto result = vulnir::checkpoint_precision(ckpt_path) == vulnir::Precision::Single
                          ? run_predict<float>(ckpt_path, program)
                          : run_predict<double>(ckpt_path, program);
  std::printf("label=%d prob=%.6f\n", result.first, result.second);
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::int32_t>& depths,
               std::int32_t repeats, const std::string& out_path) {
  const auto cfg = load_json_file(config_path);
  const auto data = resolve_data(cfg, true);
  const auto mc = resolve_model_config(cfg, data.vocab);
  const auto tc = resolve_train_config(cfg);
  if (repeats < 1) throw vulnir::ConfigError("ablate: repeats must be >= 1");

  std::vector<std::uint64_t> seeds;
  if (cfg.contains("seeds")) {
    seeds = cfg.at("seeds").get<std::vector<std::uint64_t>>();
    if (seeds.size() != static_cast<std::size_t>(repeats)) {
      throw vulnir::ConfigError("config: 'seeds' must list exactly one seed per repeat");
    }
  } else {
    for (std::int32_t r = 0; r < repeats; ++r) {
      seeds.push_back(vulnir::derive_seed(tc.seed, static_cast<std::uint64_t>(r)));
    }
  }
  const double threshold = cfg.value("threshold", 0.5);

  const auto table =
      tc.precision == vulnir::Precision::Single
          ? vulnir::ablate<float>(mc, tc, depths, repeats, data.train_set, data.test_set,
                                  data.vocab, seeds, threshold)
          : vulnir::ablate<double>(mc, tc, depths, repeats, data.train_set, data.test_set,
                                   data.vocab, seeds, threshold);

  vulnir::write_file_atomic(out_path, json(table).dump(2) + "\n");
  auto csv_path = std::filesystem::path(out_path);
  csv_path.replace_extension(".csv");
  vulnir::write_file_atomic(csv_path, vulnir::ablation_csv(table));
  for (const auto& row : table.rows) {
    std::cerr << "depth " << row.depth << ": mean accuracy " << row.mean << " +/- "
              << row.std_dev << "\n";
  }
  std::cerr << "table -> " << out_path << ", csv -> " << csv_path.string() << "\n";
  return 0;
}

vulnir::ModelConfig grad_check_toy_config() {
  vulnir::ModelConfig mc;
  mc.vocab_size = 16;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.n_layers = 1;
  mc.d_ff = 16;
  mc.max_len = 8;
  mc.n_fc_layers = 2;
  mc.fc_hidden = 8;
  mc.dropout_rate = 0.0;
  return mc;
}

int cmd_grad_check(const std::string& config_path) {
  const auto cfg = load_json_file(config_path);
  json base;
  vulnir::to_json(base, grad_check_toy_config());
  if (cfg.contains("model")) {
    if (cfg.at("model").contains("preset")) {
      throw vulnir::ConfigError(
          "grad-check: presets are too large to difference; give explicit small fields");
    }
    base.update(cfg.at("model"));
  }
  auto mc = vulnir::model_config_from_json(base);
  mc.dropout_rate = 0.0;  // checks run with dropout disabled
  mc.validate();
  if (mc.vocab_size < 5) throw vulnir::ConfigError("grad-check: vocab_size must be >= 5");
  if (mc.max_len < 4) throw vulnir::ConfigError("grad-check: max_len must be >= 4");
  const double epsilon = cfg.value("epsilon", 1e-5);
  const std::uint64_t seed = cfg.value("seed", std::uint64_t{42});

  const auto len = std::min<std::int32_t>(6, mc.max_len);
  vulnir::Rng rng(seed);
  auto make_example = [&](std::int32_t label, std::int32_t pad_tail) {
    vulnir::EncodedExample ex;
    ex.label = label;
    ex.ids.assign(static_cast<std::size_t>(len), vulnir::kPadId);
    ex.mask.assign(static_cast<std::size_t>(len), 1);
    ex.ids[0] = vulnir::kClsId;
    ex.ids[1] = vulnir::kSepId;
    const auto body = len - pad_tail;
    for (std::int32_t t = 2; t < body; ++t) {
      ex.ids[static_cast<std::size_t>(t)] = static_cast<std::int32_t>(
          vulnir::kNumSpecialTokens +
          rng.bounded(static_cast<std::uint64_t>(mc.vocab_size - vulnir::kNumSpecialTokens)));
    }
    if (body > 2) ex.ids[static_cast<std::size_t>(body - 1)] = vulnir::kSepId;
    for (std::int32_t t = body; t < len; ++t) ex.mask[static_cast<std::size_t>(t)] = 0;
    return ex;
  };
  const std::vector<vulnir::EncodedExample> batch = {make_example(0, 0), make_example(1, 2),
                                                     make_example(1, 0)};

  vulnir::TransformerModel<double> model(mc, seed);
  const double err = vulnir::grad_check(model, batch, epsilon);
  const bool ok = err <= 1e-4;
  std::cerr << "max relative error: " << err << (ok ? " (<= 1e-4)" : " (> 1e-4)") << "\n";
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"transformer-based vulnerability detector over IR token sequences"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic labeled corpus");
  std::string gen_spec, gen_out;
  gen->add_option("--spec", gen_spec, "CorpusSpec JSON file")->required();
  gen->add_option("--out", gen_out, "output dataset JSONL")->required();

  auto* pre = app.add_subcommand("preprocess", "strip wrappers, normalize locals, filter length");
  std::string pre_in, pre_out;
  std::uint32_t pre_max_lines = 265;
  pre->add_option("--in", pre_in, "input dataset JSONL")->required();
  pre->add_option("--out", pre_out, "output dataset JSONL")->required();
  pre->add_option("--max-lines", pre_max_lines, "exclusive line cap (default 265)");

  auto* bv = app.add_subcommand("build-vocab", "build a vocabulary from a dataset");
  std::string bv_in, bv_out;
  bv->add_option("--in", bv_in, "input dataset JSONL")->required();
  bv->add_option("--out", bv_out, "output vocabulary file")->required();

  auto* tr = app.add_subcommand("train", "train a model per a JSON config");
  std::string tr_config;
  tr->add_option("--config", tr_config, "RunConfig JSON file")->required();

  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on a test set");
  std::string ev_ckpt, ev_test, ev_out;
  double ev_threshold = 0.5;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--test", ev_test, "test dataset JSONL")->required();
  ev->add_option("--out", ev_out, "output EvalReport JSON")->required();
  ev->add_option("--threshold", ev_threshold, "decision threshold in (0,1), default 0.5");

  auto* pr = app.add_subcommand("predict", "classify one program (plain text, one IR line per line)");
  std::string pr_ckpt, pr_program;
  pr->add_option("--checkpoint", pr_ckpt, "checkpoint file")->required();
  pr->add_option("--program", pr_program, "program text file")->required();

  auto* ab = app.add_subcommand("ablate", "sweep classifier head depth with repeated runs");
  std::string ab_config, ab_out;
  std::vector<std::int32_t> ab_depths;
  std::int32_t ab_repeats = 5;
  ab->add_option("--config", ab_config, "RunConfig JSON file")->required();
  ab->add_option("--depths", ab_depths, "comma-separated FC depths, e.g. 1,2,3,4,5")
      ->required()
      ->delimiter(',');
  ab->add_option("--repeats", ab_repeats, "runs per depth")->required();
  ab->add_option("--out", ab_out, "output AblationTable JSON (CSV written alongside)")->required();

  auto* gc = app.add_subcommand("grad-check", "finite-difference check of analytic gradients");
  std::string gc_config;
  gc->add_option("--config", gc_config, "grad-check JSON config ({} for defaults)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_corpus(gen_spec, gen_out);
    if (pre->parsed()) return cmd_preprocess(pre_in, pre_out, pre_max_lines);
    if (bv->parsed()) return cmd_build_vocab(bv_in, bv_out);
    if (tr->parsed()) return cmd_train(tr_config);
    if (ev->parsed()) return cmd_evaluate(ev_ckpt, ev_test, ev_out, ev_threshold);
    if (pr->parsed()) return cmd_predict(pr_ckpt, pr_program);
    if (ab->parsed()) return cmd_ablate(ab_config, ab_depths, ab_repeats, ab_out);
    if (gc->parsed()) return cmd_grad_check(gc_config);
  } catch (const vulnir::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return vulnir::exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
