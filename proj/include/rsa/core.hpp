#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rsa {

/// Raised when a run or dataset is misconfigured (missing gold, bad kind, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TaskKind { math, rg, mcq, code };

std::string_view to_string(TaskKind kind);
/// Accepts "math", "rg", "mcq", "code". Throws ConfigError otherwise.
TaskKind parse_task_kind(std::string_view text);

struct TaskSpec {
  std::string id;
  TaskKind kind = TaskKind::math;
  /// Full query text, including the task's own formatting instructions.
  std::string query;
  /// Ground-truth answer, or a test descriptor for code tasks.
  std::string gold;
};

/// One candidate reasoning chain.
struct Trajectory {
  std::string text;
  std::optional<std::string> answer;
  std::optional<double> reward;
  int step = 1;
  std::vector<int> parents;  // indices into the previous population
  bool truncated = false;
  std::string prompt_hash;
  // Wall-clock bookkeeping; never part of the deterministic record.
  std::int64_t started_ms = 0;
  std::int64_t finished_ms = 0;
};

struct Population {
  int step = 1;
  std::vector<Trajectory> members;
  std::string seed_path;
};

struct AggregationSet {
  int target_index = 0;
  std::vector<int> member_indices;

  bool operator==(const AggregationSet&) const = default;
};

enum class FinalSelection { uniform, majority };

/// How "T = 1" is read for the single-step aggregation baseline.
enum class T1Semantics { init_only, init_plus_one_agg };

std::string_view to_string(FinalSelection sel);
FinalSelection parse_final_selection(std::string_view text);
std::string_view to_string(T1Semantics sem);
T1Semantics parse_t1_semantics(std::string_view text);

struct RunConfig {
  int n = 16;
  int k = 4;
  int t = 10;
  double temperature = 1.0;
  double top_p = 1.0;
  double min_p = 0.0;
  int max_tokens = 8192;
  std::string endpoint;
  std::string model;
  int concurrency = 1;
  std::uint64_t seed = 0;
  FinalSelection final_selection = FinalSelection::uniform;
  T1Semantics t1_semantics = T1Semantics::init_plus_one_agg;
  /// Character budget for aggregation prompts; 0 disables the guard.
  std::size_t prompt_char_budget = 0;

  /// Throws std::invalid_argument on N < 1, K outside [1, N], T < 1 or
  /// concurrency < 1.
  void validate() const;
};

/// Deterministic generator keyed by (seed, stream_label).
///
/// SplitMix64 run in counter mode: draw i is mix(key + (i + 1) * gamma), so
/// the sequence depends only on the key and never on shared state. Bounded
/// integers use Lemire's multiply-and-reject method, which keeps the output
/// identical across standard libraries.
class SeededRng {
 public:
  SeededRng(std::uint64_t seed, std::string stream_label);

  std::uint64_t seed() const { return seed_; }
  const std::string& stream_label() const { return label_; }

  std::uint64_t next_u64();
  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t uniform_below(std::uint64_t bound);
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01();

 private:
  std::uint64_t seed_;
  std::string label_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Throws std::invalid_argument when stream_label is empty.
SeededRng derive_rng(std::uint64_t seed, std::string_view stream_label);

/// k distinct indices from [0, n) in draw order (partial Fisher-Yates), so
/// every k-subset is equally likely. Throws std::invalid_argument unless
/// 1 <= k <= n.
std::vector<int> sample_without_replacement(SeededRng& rng, int n, int k);

/// 64-bit FNV-1a followed by the SplitMix64 finalizer. Stable across
/// platforms; used for prompt hashes and mock digests.
std::uint64_t stable_hash64(std::string_view data);
std::uint64_t mix64(std::uint64_t x);
/// Lower-case, zero-padded 16-digit hex.
std::string hex64(std::uint64_t value);

}  // namespace rsa
