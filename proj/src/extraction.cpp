#include "rsa/extraction.hpp"

#include <cctype>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "rsa/prompt.hpp"

namespace rsa {
namespace {

using i128 = __int128;

constexpr std::string_view kBoxed = "\\boxed{";
constexpr std::string_view kOpenTag = "<answer>";
constexpr std::string_view kCloseTag = "</answer>";

// Index one past the brace that closes the one at `open`, or npos. Escaped
// braces (\{ and \}) are literal characters.
std::size_t match_brace(std::string_view text, std::size_t open) {
  int depth = 0;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\\' && i + 1 < text.size() && (text[i + 1] == '{' || text[i + 1] == '}')) {
      ++i;
      continue;
    }
    if (c == '{') ++depth;
    if (c == '}') {
      if (--depth == 0) return i + 1;
    }
  }
  return std::string_view::npos;
}

ExtractionResult extract_boxed(std::string_view text) {
  std::size_t pos = text.rfind(kBoxed);
  while (pos != std::string_view::npos) {
    const std::size_t open = pos + kBoxed.size() - 1;
    const std::size_t close = match_brace(text, open);
    if (close != std::string_view::npos) {
      const std::size_t begin = open + 1;
      const std::size_t end = close - 1;
      return {std::string(text.substr(begin, end - begin)), ExtractionMethod::boxed, std::pair{begin, end}};
    }
    if (pos == 0) break;
    pos = text.rfind(kBoxed, pos - 1);
  }
  return {};
}

ExtractionResult extract_tag(std::string_view text) {
  const std::size_t close = text.rfind(kCloseTag);
  if (close == std::string_view::npos) return {};
  const std::size_t open = text.rfind(kOpenTag, close);
  if (open == std::string_view::npos || open + kOpenTag.size() > close) return {};
  const std::size_t begin = open + kOpenTag.size();
  return {std::string(text.substr(begin, close - begin)), ExtractionMethod::answer_tag, std::pair{begin, close}};
}

std::string collapse_spaces(std::string_view text) {
  std::string out;
  bool pending = false;
  for (char c : strip_whitespace(text)) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending = true;
      continue;
    }
    if (pending && !out.empty()) out += ' ';
    pending = false;
    out += c;
  }
  return out;
}

std::string remove_spaces(std::string_view text) {
  std::string out;
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) out += c;
  }
  return out;
}

bool all_digits(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

constexpr i128 kLimit = static_cast<i128>(1) << 100;

std::optional<i128> parse_digits(std::string_view s) {
  if (s.empty() || s.size() > 30) return std::nullopt;
  i128 value = 0;
  for (char c : s) {
    value = value * 10 + (c - '0');
    if (value > kLimit) return std::nullopt;
  }
  return value;
}

std::optional<i128> pow10(std::size_t n) {
  if (n > 30) return std::nullopt;
  i128 v = 1;
  for (std::size_t i = 0; i < n; ++i) v *= 10;
  return v;
}

struct Rational {
  i128 num = 0;
  i128 den = 1;
};

// Accepts [sign] digits ['.' digits] and [sign] '.' digits.
std::optional<Rational> parse_decimal(std::string_view s) {
  bool negative = false;
  if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
    negative = s[0] == '-';
    s.remove_prefix(1);
  }
  const std::size_t dot = s.find('.');
  std::string_view whole = s.substr(0, dot);
  std::string_view frac = dot == std::string_view::npos ? std::string_view{} : s.substr(dot + 1);
  if (whole.empty() && frac.empty()) return std::nullopt;
  if (!whole.empty() && !all_digits(whole)) return std::nullopt;
  if (!frac.empty() && !all_digits(frac)) return std::nullopt;
  if (dot != std::string_view::npos && whole.empty() && frac.empty()) return std::nullopt;
  const auto w = whole.empty() ? std::optional<i128>(0) : parse_digits(whole);
  const auto f = frac.empty() ? std::optional<i128>(0) : parse_digits(frac);
  const auto scale = pow10(frac.size());
  if (!w || !f || !scale) return std::nullopt;
  if (*w > kLimit / *scale) return std::nullopt;
  Rational r{*w * *scale + *f, *scale};
  if (negative) r.num = -r.num;
  return r;
}

i128 gcd128(i128 a, i128 b) {
  if (a < 0) a = -a;
  if (b < 0) b = -b;
  while (b != 0) {
    const i128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

std::string to_string128(i128 v) {
  if (v == 0) return "0";
  const bool negative = v < 0;
  if (negative) v = -v;
  std::string out;
  while (v > 0) {
    out += static_cast<char>('0' + static_cast<int>(v % 10));
    v /= 10;
  }
  if (negative) out += '-';
  return std::string(out.rbegin(), out.rend());
}

std::optional<std::string> canonical(Rational r) {
  if (r.den == 0) return std::nullopt;
  if (r.den < 0) {
    r.num = -r.num;
    r.den = -r.den;
  }
  const i128 g = gcd128(r.num, r.den);
  if (g > 1) {
    r.num /= g;
    r.den /= g;
  }
  if (r.den == 1) return to_string128(r.num);
  return to_string128(r.num) + "/" + to_string128(r.den);
}

std::optional<Rational> divide(const Rational& a, const Rational& b) {
  if (b.num == 0) return std::nullopt;
  // a.num/a.den / (b.num/b.den); operands are bounded by 2^100 only after
  // reduction, so reduce first and bail out on anything that would overflow.
  const auto reduce = [](Rational r) {
    const i128 g = gcd128(r.num, r.den);
    if (g > 1) {
      r.num /= g;
      r.den /= g;
    }
    return r;
  };
  const Rational x = reduce(a);
  const Rational y = reduce(b);
  const i128 limit = static_cast<i128>(1) << 60;
  auto small = [&](i128 v) { return v < limit && v > -limit; };
  if (!small(x.num) || !small(x.den) || !small(y.num) || !small(y.den)) return std::nullopt;
  return Rational{x.num * y.den, x.den * y.num};
}

// "\frac{a}{b}", "\dfrac{a}{b}", "\tfrac{a}{b}" with an optional leading sign.
std::optional<Rational> parse_latex_fraction(std::string_view s) {
  bool negative = false;
  if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
    negative = s[0] == '-';
    s.remove_prefix(1);
  }
  for (std::string_view head : {std::string_view("\\frac"), std::string_view("\\dfrac"), std::string_view("\\tfrac")}) {
    if (s.substr(0, head.size()) != head) continue;
    std::string_view rest = s.substr(head.size());
    if (rest.empty() || rest[0] != '{') return std::nullopt;
    const std::size_t end1 = match_brace(rest, 0);
    if (end1 == std::string_view::npos) return std::nullopt;
    std::string_view num = rest.substr(1, end1 - 2);
    rest = rest.substr(end1);
    if (rest.empty() || rest[0] != '{') return std::nullopt;
    const std::size_t end2 = match_brace(rest, 0);
    if (end2 != rest.size()) return std::nullopt;
    std::string_view den = rest.substr(1, end2 - 2);
    const auto a = parse_decimal(num);
    const auto b = parse_decimal(den);
    if (!a || !b) return std::nullopt;
    auto q = divide(*a, *b);
    if (q && negative) q->num = -q->num;
    return q;
  }
  return std::nullopt;
}

std::optional<std::string> canonical_number(std::string_view compact) {
  if (auto frac = parse_latex_fraction(compact)) return canonical(*frac);
  const std::size_t slash = compact.find('/');
  if (slash != std::string_view::npos) {
    if (compact.find('/', slash + 1) != std::string_view::npos) return std::nullopt;
    const auto a = parse_decimal(compact.substr(0, slash));
    const auto b = parse_decimal(compact.substr(slash + 1));
    if (!a || !b) return std::nullopt;
    const auto q = divide(*a, *b);
    if (!q) return std::nullopt;
    return canonical(*q);
  }
  if (const auto d = parse_decimal(compact)) return canonical(*d);
  return std::nullopt;
}

std::string strip_math_delimiters(std::string s) {
  while (s.size() >= 2 && s.front() == '$' && s.back() == '$') s = collapse_spaces(s.substr(1, s.size() - 2));
  return s;
}

}  // namespace

ExtractionResult extract_answer(std::string_view text, TaskKind kind) {
  if (kind == TaskKind::rg) return extract_tag(text);
  return extract_boxed(text);
}

std::string normalize_answer(std::string_view raw, TaskKind kind) {
  std::string text = collapse_spaces(raw);
  switch (kind) {
    case TaskKind::math: {
      text = strip_math_delimiters(std::move(text));
      if (auto number = canonical_number(remove_spaces(text))) return *number;
      return text;
    }
    case TaskKind::mcq: {
      std::string letter = text;
      if (letter.size() == 3 && letter.front() == '(' && letter.back() == ')') letter = letter.substr(1, 1);
      if (letter.size() == 2 && letter.back() == '.') letter.pop_back();
      if (letter.size() == 1 && std::isalpha(static_cast<unsigned char>(letter[0]))) {
        return std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(letter[0]))));
      }
      return text;
    }
    case TaskKind::rg:
    case TaskKind::code:
      break;
  }
  return text;
}

bool normalized_equal(std::string_view answer, std::string_view gold, TaskKind kind) {
  return normalize_answer(answer, kind) == normalize_answer(gold, kind);
}

Scorer::Scorer() : equivalence_(normalized_equal) {}

Scorer& Scorer::with_equivalence(Equivalence eq) {
  equivalence_ = eq ? std::move(eq) : Equivalence(normalized_equal);
  return *this;
}

Scorer& Scorer::with_code_hook(RewardHook hook) {
  code_hook_ = std::move(hook);
  return *this;
}

double Scorer::score(const Trajectory& traj, const TaskSpec& task) const {
  if (task.gold.empty()) throw ConfigError("task '" + task.id + "' has no gold answer");
  if (task.kind == TaskKind::code && code_hook_) {
    const double r = code_hook_(task, traj);
    if (r != 0.0 && r != 1.0) throw ConfigError("code reward hook returned a non-binary reward");
    return r;
  }
  const ExtractionResult extracted = extract_answer(traj.text, task.kind);
  if (!extracted.answer) return 0.0;
  return equivalence_(*extracted.answer, task.gold, task.kind) ? 1.0 : 0.0;
}

void Scorer::annotate(Trajectory& traj, const TaskSpec& task) const {
  traj.answer = extract_answer(traj.text, task.kind).answer;
  traj.reward = score(traj, task);
}

double score(const Trajectory& traj, const TaskSpec& task) { return Scorer().score(traj, task); }

}  // namespace rsa
