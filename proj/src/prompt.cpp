#include "rsa/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include "rsa/log.hpp"

namespace rsa {
namespace {

constexpr std::string_view kCodeInstruction =
    "Your solution must build on the starter code given in the problem and keep its function signatures "
    "unchanged.";

// Decodes one UTF-8 code point starting at `pos`; returns its length, or 0 on
// a malformed sequence.
std::size_t decode_at(std::string_view s, std::size_t pos, char32_t& cp) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  std::size_t len = 0;
  if (b0 < 0x80) {
    cp = b0;
    return 1;
  }
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return 0;
  }
  if (pos + len > s.size()) return 0;
  for (std::size_t i = 1; i < len; ++i) {
    const auto b = static_cast<unsigned char>(s[pos + i]);
    if ((b & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (b & 0x3F);
  }
  return len;
}

bool is_python_space(char32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D:
    case 0x1C: case 0x1D: case 0x1E: case 0x1F: case 0x20:
    case 0x85: case 0xA0: case 0x1680:
    case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

bool is_continuation(unsigned char b) { return (b & 0xC0) == 0x80; }

std::string render(const PromptTemplateSet& tpl, std::string_view query, std::span<const std::string> candidates) {
  const std::string extra = tpl.extra_instruction.empty() ? "" : " " + tpl.extra_instruction;
  std::vector<std::string> parts;
  const bool refine = candidates.size() == 1;
  if (refine) {
    parts.push_back("You are given a " + tpl.problem_kind + " and a candidate solution. " +
                    "The candidate may be incomplete or contain errors. " +
                    "Refine this trajectory and produce an improved, higher-quality solution. " +
                    "If it is entirely wrong, attempt a new strategy. " + "End with the final result in " +
                    tpl.format_hint + "." + extra + "\n");
  } else {
    parts.push_back("You are given a " + tpl.problem_kind + " and several candidate solutions. " +
                    "Some candidates may be incorrect or contain errors. " +
                    "Aggregate the useful ideas and produce a single, high-quality solution. " +
                    "Reason carefully; if candidates disagree, choose the correct path. " +
                    "If all are incorrect, then attempt a different strategy." + "End with the final result in " +
                    tpl.format_hint + "." + extra + "\n");
  }
  parts.push_back("Problem:\n");
  parts.push_back(strip_whitespace(query) + "\n");
  if (refine) {
    parts.push_back("Candidate solution (may contain mistakes):\n");
    parts.push_back("---- Candidate ----\n" + candidates[0] + "\n");
    // The placeholder below is emitted literally: the reference template
    // never interpolates it.
    parts.push_back(
        "Now refine the candidate into an improved solution. "
        "Provide clear reasoning and end with the final answer in {format_hint}.");
  } else {
    parts.push_back("Candidate solutions (may contain mistakes):\n");
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      parts.push_back("---- Solution " + std::to_string(i + 1) + " ----\n" + candidates[i] + "\n");
    }
    parts.push_back("Now write a single improved solution. Provide clear reasoning and end with the final answer in " +
                    tpl.format_hint + ".");
  }
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i != 0) out += '\n';
    out += parts[i];
  }
  return out;
}

// Keeps the last `cap` bytes of `text`, moved forward to a code-point boundary.
std::string keep_tail(const std::string& text, std::size_t cap) {
  if (text.size() <= cap) return text;
  std::size_t start = text.size() - cap;
  while (start < text.size() && is_continuation(static_cast<unsigned char>(text[start]))) ++start;
  return text.substr(start);
}

}  // namespace

std::string strip_whitespace(std::string_view text) {
  std::size_t begin = 0;
  while (begin < text.size()) {
    char32_t cp = 0;
    const std::size_t len = decode_at(text, begin, cp);
    if (len == 0 || !is_python_space(cp)) break;
    begin += len;
  }
  std::size_t end = text.size();
  while (end > begin) {
    std::size_t start = end - 1;
    while (start > begin && is_continuation(static_cast<unsigned char>(text[start]))) --start;
    char32_t cp = 0;
    const std::size_t len = decode_at(text, start, cp);
    if (len == 0 || start + len != end || !is_python_space(cp)) break;
    end = start;
  }
  return std::string(text.substr(begin, end - begin));
}

PromptTemplateSet templates_for(TaskKind kind) {
  switch (kind) {
    case TaskKind::rg:
      return {kind, "problem", "<answer>...</answer>", ""};
    case TaskKind::mcq:
      return {kind, "multiple-choice problem",
              "\\boxed{}. Only include the correct option letter in \\boxed{}; for example \\boxed{A}", ""};
    case TaskKind::code:
      return {kind, "coding problem", "\\boxed{}", std::string(kCodeInstruction)};
    case TaskKind::math:
      break;
  }
  return {TaskKind::math, "math problem", "\\boxed{}", ""};
}

std::string build_prompt(const TaskSpec& task, const std::optional<std::vector<std::string>>& candidates,
                         const PromptOptions& options) {
  if (!candidates) return task.query;
  return build_aggregation_prompt(task, *candidates, options);
}

std::string build_aggregation_prompt(const TaskSpec& task, std::span<const std::string> candidates,
                                     const PromptOptions& options) {
  if (candidates.empty()) throw std::invalid_argument("build_aggregation_prompt needs at least one candidate");
  const PromptTemplateSet tpl = templates_for(task.kind);
  std::vector<std::string> stripped;
  stripped.reserve(candidates.size());
  for (const auto& c : candidates) stripped.push_back(strip_whitespace(c));

  std::string prompt = render(tpl, task.query, stripped);
  if (options.char_budget == 0 || prompt.size() <= options.char_budget) return prompt;

  std::size_t candidate_bytes = 0;
  std::size_t longest = 0;
  for (const auto& c : stripped) {
    candidate_bytes += c.size();
    longest = std::max(longest, c.size());
  }
  const std::size_t overhead = prompt.size() - candidate_bytes;
  auto total_with_cap = [&](std::size_t cap) {
    std::size_t total = overhead;
    for (const auto& c : stripped) total += std::min(c.size(), cap);
    return total;
  };
  // Largest common cap that fits.
  std::size_t lo = 0;
  std::size_t hi = longest;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo + 1) / 2;
    if (total_with_cap(mid) <= options.char_budget) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  std::vector<std::string> cut;
  cut.reserve(stripped.size());
  for (const auto& c : stripped) cut.push_back(keep_tail(c, lo));
  std::string truncated = render(tpl, task.query, cut);
  log(LogLevel::warn, "aggregation prompt for task '" + task.id + "' exceeded " +
                          std::to_string(options.char_budget) + " chars (" + std::to_string(prompt.size()) +
                          "); candidates head-truncated to " + std::to_string(lo) + " chars each");
  return truncated;
}

std::string build_verification_prompt(const TaskSpec& task, std::string_view candidate) {
  const PromptTemplateSet tpl = templates_for(task.kind);
  std::vector<std::string> parts;
  parts.push_back("You are given a " + tpl.problem_kind + " and a candidate solution. " +
                  "Check the candidate's reasoning step by step and decide whether its final answer is correct.\n");
  parts.push_back("Problem:\n");
  parts.push_back(strip_whitespace(task.query) + "\n");
  parts.push_back("Candidate solution:\n");
  parts.push_back("---- Candidate ----\n" + strip_whitespace(candidate) + "\n");
  parts.push_back(
      "Give your analysis, then finish with a final line containing only ACCEPT if the candidate is correct or "
      "REJECT if it is not.");
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i != 0) out += '\n';
    out += parts[i];
  }
  return out;
}

bool parse_verdict(std::string_view response) {
  bool verdict = false;
  std::size_t i = 0;
  while (i < response.size()) {
    if (!std::isalpha(static_cast<unsigned char>(response[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    std::string word;
    while (j < response.size() && std::isalpha(static_cast<unsigned char>(response[j]))) {
      word += static_cast<char>(std::tolower(static_cast<unsigned char>(response[j])));
      ++j;
    }
    if (word == "accept") verdict = true;
    if (word == "reject") verdict = false;
    i = j;
  }
  return verdict;
}

}  // namespace rsa
