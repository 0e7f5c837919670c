#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "rsa/core.hpp"

namespace rsa {

enum class ExtractionMethod { boxed, answer_tag, none };

struct ExtractionResult {
  std::optional<std::string> answer;
  ExtractionMethod method = ExtractionMethod::none;
  /// [begin, end) byte offsets of the answer inside the source text.
  std::optional<std::pair<std::size_t, std::size_t>> span;
};

/// math/mcq/code: contents of the last balanced \boxed{...}.
/// rg: contents of the last <answer>...</answer> pair.
ExtractionResult extract_answer(std::string_view text, TaskKind kind);

/// Trim plus whitespace collapse, then per-kind canonicalization: plain
/// integers, decimals and simple fractions (a/b, \frac{a}{b}) become a reduced
/// rational string for math; a lone option letter is upper-cased for mcq.
std::string normalize_answer(std::string_view raw, TaskKind kind);

/// Decides whether an extracted answer matches the gold answer.
using Equivalence = std::function<bool(std::string_view answer, std::string_view gold, TaskKind kind)>;
/// Full reward override for one (task, trajectory) pair; must return 0 or 1.
/// This is the seam for out-of-process verifiers such as code execution.
using RewardHook = std::function<double(const TaskSpec&, const Trajectory&)>;

bool normalized_equal(std::string_view answer, std::string_view gold, TaskKind kind);

class Scorer {
 public:
  Scorer();

  Scorer& with_equivalence(Equivalence eq);
  Scorer& with_code_hook(RewardHook hook);

  /// 1.0 iff the extracted answer is equivalent to task.gold. Throws
  /// ConfigError when the task has no gold answer.
  double score(const Trajectory& traj, const TaskSpec& task) const;

  /// Fills traj.answer and traj.reward.
  void annotate(Trajectory& traj, const TaskSpec& task) const;

 private:
  Equivalence equivalence_;
  RewardHook code_hook_;
};

/// Scores with the default Scorer.
double score(const Trajectory& traj, const TaskSpec& task);

}  // namespace rsa
