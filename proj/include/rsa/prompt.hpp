#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rsa/core.hpp"

namespace rsa {

/// Task-specific wording slotted into the aggregation templates.
struct PromptTemplateSet {
  TaskKind kind = TaskKind::math;
  std::string problem_kind;
  std::string format_hint;
  /// Extra sentence appended to the opening instruction (code tasks only).
  std::string extra_instruction;
};

PromptTemplateSet templates_for(TaskKind kind);

struct PromptOptions {
  /// Maximum prompt length in bytes; 0 means unlimited. When exceeded, each
  /// candidate is cut from its head down to a common cap so the tails (where
  /// final answers live) survive. Candidate order is never changed.
  std::size_t char_budget = 0;
};

/// Base query when candidates is nullopt, otherwise the aggregation prompt.
std::string build_prompt(const TaskSpec& task, const std::optional<std::vector<std::string>>& candidates,
                         const PromptOptions& options = {});

/// Refinement template for one candidate, aggregation template for several.
/// Sections are joined with a single '\n' and no trailing newline is added.
/// Throws std::invalid_argument on an empty candidate list.
std::string build_aggregation_prompt(const TaskSpec& task, std::span<const std::string> candidates,
                                     const PromptOptions& options = {});

/// Accept/reject self-verification prompt used by the rejection-sampling
/// baseline.
std::string build_verification_prompt(const TaskSpec& task, std::string_view candidate);

/// Parses a verifier response: the last standalone ACCEPT / REJECT token
/// (case-insensitive) decides. No token means reject.
bool parse_verdict(std::string_view response);

/// Whitespace trim with the same character set as Python's str.strip()
/// (ASCII and Unicode spaces, decoded from UTF-8).
std::string strip_whitespace(std::string_view text);

}  // namespace rsa
