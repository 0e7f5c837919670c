#include "rsa/core.hpp"

#include <numeric>
#include <utility>

namespace rsa {
namespace {

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kFnvOffset = 0xCBF29CE484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001B3ULL;

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = kFnvOffset;
  for (unsigned char c : data) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

}  // namespace

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::math: return "math";
    case TaskKind::rg: return "rg";
    case TaskKind::mcq: return "mcq";
    case TaskKind::code: return "code";
  }
  return "math";
}

TaskKind parse_task_kind(std::string_view text) {
  if (text == "math") return TaskKind::math;
  if (text == "rg") return TaskKind::rg;
  if (text == "mcq") return TaskKind::mcq;
  if (text == "code") return TaskKind::code;
  throw ConfigError("unknown task kind '" + std::string(text) + "'");
}

std::string_view to_string(FinalSelection sel) {
  return sel == FinalSelection::uniform ? "uniform" : "majority";
}

FinalSelection parse_final_selection(std::string_view text) {
  if (text == "uniform") return FinalSelection::uniform;
  if (text == "majority") return FinalSelection::majority;
  throw ConfigError("unknown final selection '" + std::string(text) + "'");
}

std::string_view to_string(T1Semantics sem) {
  return sem == T1Semantics::init_only ? "init_only" : "init_plus_one_agg";
}

T1Semantics parse_t1_semantics(std::string_view text) {
  if (text == "init_only") return T1Semantics::init_only;
  if (text == "init_plus_one_agg") return T1Semantics::init_plus_one_agg;
  throw ConfigError("unknown t1 semantics '" + std::string(text) + "'");
}

void RunConfig::validate() const {
  if (n < 1) throw std::invalid_argument("population size N must be >= 1, got " + std::to_string(n));
  if (k < 1 || k > n) {
    throw std::invalid_argument("aggregation size K must satisfy 1 <= K <= N (K=" + std::to_string(k) +
                                ", N=" + std::to_string(n) + ")");
  }
  if (t < 1) throw std::invalid_argument("step count T must be >= 1, got " + std::to_string(t));
  if (concurrency < 1) throw std::invalid_argument("concurrency must be >= 1");
  if (max_tokens < 1) throw std::invalid_argument("max_tokens must be >= 1");
}

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t stable_hash64(std::string_view data) { return mix64(fnv1a64(data)); }

std::string hex64(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xF];
    value >>= 4;
  }
  return out;
}

SeededRng::SeededRng(std::uint64_t seed, std::string stream_label)
    : seed_(seed), label_(std::move(stream_label)) {
  key_ = mix64(seed_ + kGamma) ^ mix64(fnv1a64(label_));
}

std::uint64_t SeededRng::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGamma);
}

std::uint64_t SeededRng::uniform_below(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("uniform_below: bound must be positive");
  unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * bound;
  auto low = static_cast<std::uint64_t>(m);
  if (low < bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    while (low < threshold) {
      m = static_cast<unsigned __int128>(next_u64()) * bound;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double SeededRng::uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

SeededRng derive_rng(std::uint64_t seed, std::string_view stream_label) {
  if (stream_label.empty()) throw std::invalid_argument("derive_rng: stream label must be nonempty");
  return SeededRng(seed, std::string(stream_label));
}

std::vector<int> sample_without_replacement(SeededRng& rng, int n, int k) {
  if (n < 1 || k < 1 || k > n) {
    throw std::invalid_argument("sample_without_replacement requires 1 <= k <= n (n=" + std::to_string(n) +
                                ", k=" + std::to_string(k) + ")");
  }
  std::vector<int> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < k; ++i) {
    const auto j = i + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(n - i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(k));
  return pool;
}

}  // namespace rsa
