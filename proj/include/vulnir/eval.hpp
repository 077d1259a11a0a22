#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "vulnir/errors.hpp"
#include "vulnir/ir_program.hpp"
#include "vulnir/model.hpp"
#include "vulnir/training.hpp"
#include "vulnir/vocabulary.hpp"

namespace vulnir {

inline void validate_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("threshold must be in (0, 1), got " + std::to_string(threshold));
  }
}

// label 1 iff p(Y=1|X) >= threshold; ties go to vulnerable
template <typename Scalar>
std::pair<std::int32_t, double> predict(const TransformerModel<Scalar>& model,
                                        const IrProgram& program, const Vocabulary& vocab,
                                        double threshold = 0.5) {
  validate_threshold(threshold);
  const auto ex = encode_example(program, vocab, model.cfg.max_len);
  const auto fwd = forward(ex.ids, ex.mask, model);
  const auto prob = static_cast<double>(fwd.prob);
  return {prob >= threshold ? 1 : 0, prob};
}

struct EvalReport {
  double accuracy = 0.0;
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::int64_t n_samples = 0;
  double threshold = 0.5;
};

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json{{"accuracy", r.accuracy}, {"tp", r.tp},
                     {"fp", r.fp},             {"tn", r.tn},
                     {"fn", r.fn},             {"n_samples", r.n_samples},
                     {"threshold", r.threshold}};
}

// Full-set evaluation: every program, no subsampling or rebalancing.
template <typename Scalar>
EvalReport evaluate(const TransformerModel<Scalar>& model, const std::vector<IrProgram>& test_set,
                    const Vocabulary& vocab, double threshold = 0.5) {
  validate_threshold(threshold);
  if (test_set.empty()) throw EmptyTestSet("evaluate: empty test set");
  EvalReport r;
  r.threshold = threshold;
  r.n_samples = static_cast<std::int64_t>(test_set.size());
  for (const auto& p : test_set) {
    const auto [predicted, prob] = predict(model, p, vocab, threshold);
    if (p.label == 1) {
      (predicted == 1 ? r.tp : r.fn) += 1;
    } else {
      (predicted == 1 ? r.fp : r.tn) += 1;
    }
  }
  r.accuracy = static_cast<double>(r.tp + r.tn) / static_cast<double>(r.n_samples);
  return r;
}

struct AblationRow {
  std::int32_t depth = 0;
  std::vector<double> accuracies;
  double mean = 0.0;
  double std_dev = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::int32_t repeats = 0;
  std::vector<std::uint64_t> seeds;
};

inline void to_json(nlohmann::json& j, const AblationRow& r) {
  j = nlohmann::json{
      {"depth", r.depth}, {"accuracies", r.accuracies}, {"mean", r.mean}, {"std", r.std_dev}};
}

inline void to_json(nlohmann::json& j, const AblationTable& t) {
  j = nlohmann::json{{"rows", t.rows}, {"repeats", t.repeats}, {"seeds", t.seeds}};
}

inline std::string ablation_csv(const AblationTable& t) {
  std::string out = "depth,run,accuracy\n";
  for (const auto& row : t.rows) {
    for (std::size_t run = 0; run < row.accuracies.size(); ++run) {
      out += std::to_string(row.depth) + "," + std::to_string(run) + "," +
             std::to_string(row.accuracies[run]) + "\n";
    }
  }
  return out;
}

inline std::pair<double, double> mean_and_sample_std(const std::vector<double>& xs) {
  double mean = 0.0;
  for (const auto x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};  // std is 0 by convention for one run
  double ss = 0.0;
  for (const auto x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

// Classifier-depth sweep: for each depth, train and evaluate `repeats` times
// with the shared seed list, so depths differ only in head depth.
template <typename Scalar>
AblationTable ablate(const ModelConfig& base_model, const TrainConfig& base_train,
                     const std::vector<std::int32_t>& depths, std::int32_t repeats,
                     const std::vector<IrProgram>& train_set,
                     const std::vector<IrProgram>& test_set, const Vocabulary& vocab,
                     const std::vector<std::uint64_t>& seeds, double threshold = 0.5) {
  if (repeats < 1) throw ConfigError("ablate: repeats must be >= 1");
  if (depths.empty()) throw ConfigError("ablate: depths must be non-empty");
  if (seeds.size() != static_cast<std::size_t>(repeats)) {
    throw ConfigError("ablate: need exactly one seed per repeat");
  }
  for (const auto d : depths) {
    if (d < 1) throw ConfigError("ablate: depths must be >= 1");
  }

  AblationTable table;
  table.repeats = repeats;
  table.seeds = seeds;
  for (const auto depth : depths) {
    AblationRow row;
    row.depth = depth;
    for (std::int32_t run = 0; run < repeats; ++run) {
      auto model_cfg = base_model;
      model_cfg.n_fc_layers = depth;
      auto train_cfg = base_train;
      train_cfg.seed = seeds[static_cast<std::size_t>(run)];
      try {
        TransformerModel<Scalar> model(model_cfg, train_cfg.seed);
        train(model, train_set, train_cfg, vocab);
        row.accuracies.push_back(evaluate(model, test_set, vocab, threshold).accuracy);
      } catch (const NonFiniteGradient& e) {
        throw NonFiniteGradient("ablate depth " + std::to_string(depth) + ", run " +
                                std::to_string(run) + ": " + e.what());
      }
    }
    const auto [mean, std_dev] = mean_and_sample_std(row.accuracies);
    row.mean = mean;
    row.std_dev = std_dev;
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace vulnir
