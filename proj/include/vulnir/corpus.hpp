#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "vulnir/errors.hpp"
#include "vulnir/ir_program.hpp"
#include "vulnir/rng.hpp"

namespace vulnir {

struct CorpusSpec {
  std::int32_t n_programs = 1000;
  double vulnerable_fraction = 0.5;
  std::uint64_t seed = 7;
  std::int32_t min_lines = 12;
  std::int32_t max_lines = 40;
  std::string pattern_set = "guard-call";

  void validate() const {
    if (n_programs < 1) throw ConfigError("corpus: n_programs must be >= 1");
    if (!(vulnerable_fraction > 0.0 && vulnerable_fraction < 1.0)) {
      throw ConfigError("corpus: vulnerable_fraction must be in (0, 1)");
    }
    // 12 lines = fixed template scaffolding plus guard, call, and one
    // distractor; shorter programs cannot host the planted pattern
    if (min_lines < 12) throw ConfigError("corpus: min_lines must be >= 12");
    if (min_lines > max_lines) throw ConfigError("corpus: min_lines must be <= max_lines");
    if (max_lines >= 265) throw ConfigError("corpus: max_lines must be < 265");
    if (pattern_set != "guard-call") {
      throw ConfigError("corpus: unknown pattern_set '" + pattern_set + "'");
    }
  }
};

inline void to_json(nlohmann::json& j, const CorpusSpec& spec) {
  j = nlohmann::json{{"n_programs", spec.n_programs},
                     {"vulnerable_fraction", spec.vulnerable_fraction},
                     {"seed", spec.seed},
                     {"min_lines", spec.min_lines},
                     {"max_lines", spec.max_lines},
                     {"pattern_set", spec.pattern_set}};
}

inline void from_json(const nlohmann::json& j, CorpusSpec& spec) {
  spec = CorpusSpec{};
  if (j.contains("n_programs")) spec.n_programs = j.at("n_programs").get<std::int32_t>();
  if (j.contains("vulnerable_fraction")) {
    spec.vulnerable_fraction = j.at("vulnerable_fraction").get<double>();
  }
  if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("min_lines")) spec.min_lines = j.at("min_lines").get<std::int32_t>();
  if (j.contains("max_lines")) spec.max_lines = j.at("max_lines").get<std::int32_t>();
  if (j.contains("pattern_set")) spec.pattern_set = j.at("pattern_set").get<std::string>();
}

namespace detail {

// Locals are handed out in text order starting at %1, which makes the
// generated programs fixed points of normalize_locals. Block labels share
// the numbering but never enter the operand pool.
class LocalPool {
public:
  std::string fresh() {
    auto name = fresh_label();
    names_.push_back(name);
    return name;
  }
  std::string fresh_label() { return "%" + std::to_string(next_++); }
  const std::string& existing(Rng& rng) const {
    return names_[static_cast<std::size_t>(rng.bounded(names_.size()))];
  }

private:
  std::int32_t next_ = 1;
  std::vector<std::string> names_;
};

inline std::string pick_const(Rng& rng) {
  static const char* kConsts[] = {"0", "1", "2", "4", "8", "16", "32", "64"};
  return kConsts[rng.bounded(8)];
}

// Distractor grammar shared by both classes. icmp is reserved for the guard
// pattern and never appears here.
inline std::string make_distractor(LocalPool& pool, Rng& rng) {
  switch (rng.bounded(8)) {
    case 0: {
      auto def = pool.fresh();
      return def + " = alloca i32 , align " + (rng.bounded(2) ? "8" : "4");
    }
    case 1: {
      auto src = pool.existing(rng);
      auto def = pool.fresh();
      return def + " = load i32 , i32* " + src + " , align 4";
    }
    case 2: {
      auto a = pool.existing(rng);
      auto b = pool.existing(rng);
      return "store i32 " + a + " , i32* " + b + " , align 4";
    }
    case 3: {
      auto a = pool.existing(rng);
      auto def = pool.fresh();
      return def + " = add nsw i32 " + a + " , " + pick_const(rng);
    }
    case 4: {
      auto a = pool.existing(rng);
      auto def = pool.fresh();
      return def + " = mul nsw i32 " + a + " , " + pick_const(rng);
    }
    case 5: {
      auto def = pool.fresh();
      return def + " = getelementptr inbounds [ 64 x i8 ] , [ 64 x i8 ]* %1 , i64 0 , i64 " +
             pick_const(rng);
    }
    case 6: {
      auto a = pool.existing(rng);
      auto def = pool.fresh();
      return def + " = sext i32 " + a + " to i64";
    }
    default: {
      auto def = pool.fresh();
      return def + " = call i32 @memcmp ( i8* %1 , i8* %1 , i64 " + pick_const(rng) + " )";
    }
  }
}

}  // namespace detail

// Seeded template generator. Vulnerable programs plant an unguarded
// `call @strcpy` line; benign programs either guard the call with an icmp
// bounds check before it or omit the call entirely. The guard tokens are the
// learnable class signal.
inline std::vector<IrProgram> generate_synthetic(const CorpusSpec& spec) {
  spec.validate();
  std::vector<IrProgram> corpus;
  corpus.reserve(static_cast<std::size_t>(spec.n_programs));

  for (std::int32_t i = 0; i < spec.n_programs; ++i) {
    // telescoping rounding keeps the total vulnerable count at
    // round(n * fraction) exactly
    const auto upto = [&spec](std::int32_t m) {
      return std::llround(spec.vulnerable_fraction * m);
    };
    const bool vulnerable = upto(i + 1) - upto(i) == 1;

    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
    const bool has_call = vulnerable || rng.bounded(2) == 0;
    const bool has_guard = has_call && !vulnerable;

    const auto total = spec.min_lines +
                       static_cast<std::int32_t>(rng.bounded(
                           static_cast<std::uint64_t>(spec.max_lines - spec.min_lines + 1)));
    const std::int32_t pattern_lines = has_call ? (has_guard ? 3 : 1) : 0;
    const std::int32_t n_distract = total - 8 - pattern_lines;  // 8 fixed scaffold lines

    detail::LocalPool pool;
    std::string exit_label;
    const auto get_exit_label = [&pool, &exit_label]() -> const std::string& {
      if (exit_label.empty()) exit_label = pool.fresh_label();
      return exit_label;
    };
    IrProgram p;
    p.id = [i] {
      auto s = std::to_string(i);
      return "syn-" + std::string(6 - std::min<std::size_t>(6, s.size()), '0') + s;
    }();

    p.lines.push_back("define i32 @main ( ) {");
    p.lines.push_back("entry :");
    p.lines.push_back(pool.fresh() + " = alloca [ 64 x i8 ] , align 16");
    p.lines.push_back(pool.fresh() + " = alloca i32 , align 4");

    std::int32_t call_index = -1;
    if (has_call) {
      const auto before = static_cast<std::int32_t>(
          rng.bounded(static_cast<std::uint64_t>(n_distract + 1)));
      std::int32_t mid = 0;
      if (has_guard) {
        mid = static_cast<std::int32_t>(
            rng.bounded(static_cast<std::uint64_t>(n_distract - before + 1)));
      }
      for (std::int32_t k = 0; k < before; ++k) {
        p.lines.push_back(detail::make_distractor(pool, rng));
      }
      if (has_guard) {
        const auto checked = pool.existing(rng);
        const auto flag = pool.fresh();
        const auto lbl = get_exit_label();
        p.lines.push_back(flag + " = icmp ult i32 " + checked + " , 64");
        p.lines.push_back("br i1 " + flag + " , label " + lbl + " , label " + lbl);
        for (std::int32_t k = 0; k < mid; ++k) {
          p.lines.push_back(detail::make_distractor(pool, rng));
        }
      }
      const auto src = pool.existing(rng);
      const auto def = pool.fresh();
      call_index = static_cast<std::int32_t>(p.lines.size());
      p.lines.push_back(def + " = call i8* @strcpy ( i8* %1 , i8* " + src + " )");
      for (std::int32_t k = before + mid; k < n_distract; ++k) {
        p.lines.push_back(detail::make_distractor(pool, rng));
      }
    } else {
      for (std::int32_t k = 0; k < n_distract; ++k) {
        p.lines.push_back(detail::make_distractor(pool, rng));
      }
    }

    {
      const auto lbl = get_exit_label();
      p.lines.push_back("br label " + lbl);
      p.lines.push_back(lbl + " :");
    }
    p.lines.push_back("ret i32 0");
    p.lines.push_back("}");

    p.label = vulnerable ? 1 : 0;
    p.line_labels.assign(p.lines.size(), 0);
    if (vulnerable) p.line_labels[static_cast<std::size_t>(call_index)] = 1;

    validate_program(p);
    corpus.push_back(std::move(p));
  }
  return corpus;
}

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
      throw ConfigError("split: train_fraction must be in (0, 1)");
    }
  }
};

inline void to_json(nlohmann::json& j, const SplitSpec& spec) {
  j = nlohmann::json{{"train_fraction", spec.train_fraction}, {"seed", spec.seed}};
}

inline void from_json(const nlohmann::json& j, SplitSpec& spec) {
  spec = SplitSpec{};
  if (j.contains("train_fraction")) spec.train_fraction = j.at("train_fraction").get<double>();
  if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
}

// Seeded shuffle then cut: disjoint, exhaustive.
inline std::pair<std::vector<IrProgram>, std::vector<IrProgram>> split(
    const std::vector<IrProgram>& corpus, const SplitSpec& spec) {
  spec.validate();
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(spec.seed);
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(
      std::llround(spec.train_fraction * static_cast<double>(corpus.size())));
  if (n_train == 0 || n_train >= corpus.size()) {
    throw DegenerateSplit("split: a " + std::to_string(spec.train_fraction) +
                          " fraction of " + std::to_string(corpus.size()) +
                          " programs leaves one side empty");
  }
  std::pair<std::vector<IrProgram>, std::vector<IrProgram>> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? out.first : out.second).push_back(corpus[order[i]]);
  }
  return out;
}

}  // namespace vulnir
