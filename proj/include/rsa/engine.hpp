#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rsa/client.hpp"
#include "rsa/core.hpp"
#include "rsa/extraction.hpp"
#include "rsa/prompt.hpp"

namespace rsa {

struct RunState {
  RunConfig config;
  TaskSpec task;
  /// populations[t - 1] is P_t.
  std::vector<Population> populations;
  /// aggregation_history[t - 1] holds the N sets drawn from P_t.
  std::vector<std::vector<AggregationSet>> aggregation_history;
  std::int64_t budget_used = 0;
  /// Prepended to every RNG stream label and request tag of this run.
  std::string stream_prefix;
  bool aborted = false;
  std::string abort_reason;
};

/// Thrown when a generation fails after its retries. Carries everything that
/// completed before the failure.
class RunAborted : public std::runtime_error {
 public:
  RunAborted(const std::string& message, RunState partial, int status)
      : std::runtime_error(message), partial_(std::move(partial)), status_(status) {}
  const RunState& partial() const { return partial_; }
  int status() const { return status_; }

 private:
  RunState partial_;
  int status_;
};

struct EngineOptions {
  Scorer scorer;
  PromptOptions prompt;
};

/// Validates the config and prepares an empty run.
RunState make_run_state(TaskSpec task, RunConfig config, std::string stream_prefix = "");

SamplingParams sampling_for(const RunConfig& config);

/// Request seed for one generation, derived from the run seed and label.
std::int64_t request_seed_for(const RunState& state, const std::string& label);

/// Generates P_1 from the base query. Appends it and charges N generations.
const Population& initialize_population(RunState& state, GenerationClient& client, const EngineOptions& options = {});

/// Draws N independent K-subsets of P_t (stream "subsample/t=<t>/i=<i>") and
/// records them. Requires 1 <= t < T and P_t present.
const std::vector<AggregationSet>& subsample_sets(RunState& state, int t);

/// Produces P_{t+1} from the recorded sets of step t.
const Population& aggregate_step(RunState& state, int t, GenerationClient& client, const EngineOptions& options = {});

RunState run_rsa(const TaskSpec& task, const RunConfig& config, GenerationClient& client,
                 const EngineOptions& options = {}, const std::string& stream_prefix = "");

/// Majority mode picks the first member of the largest normalized-answer
/// group (earliest group wins ties) and falls back to uniform when no member
/// has an answer.
const Trajectory& select_final(const Population& population, FinalSelection mode, SeededRng& rng, TaskKind kind);
/// Index form of select_final.
std::size_t select_final_index(const Population& population, FinalSelection mode, SeededRng& rng, TaskKind kind);

/// RSA with N = 1, K = 1.
RunState run_self_refinement(const TaskSpec& task, const RunConfig& config, GenerationClient& client,
                             const EngineOptions& options = {}, const std::string& stream_prefix = "");

/// Single-step self-aggregation. Under init_plus_one_agg: one initial
/// population plus one aggregation pass; under init_only: the initial
/// population alone.
RunState run_single_aggregation(const TaskSpec& task, const RunConfig& config, GenerationClient& client,
                                const EngineOptions& options = {}, const std::string& stream_prefix = "");

struct VoteCount {
  std::string answer;  // normalized
  int count = 0;
  std::size_t first_index = 0;
};

/// Groups normalized answers in first-appearance order. Members without an
/// answer are skipped.
std::vector<VoteCount> tally_votes(const Population& population, TaskKind kind);

struct MajorityResult {
  /// One batch of N * T base generations, stored as a single population.
  RunState batch;
  std::vector<VoteCount> votes;
  std::optional<std::string> answer;  // nullopt means abstain
  double reward = 0.0;
};

MajorityResult run_majority_voting(const TaskSpec& task, const RunConfig& config, GenerationClient& client,
                                   const EngineOptions& options = {}, const std::string& stream_prefix = "");

struct RejectionResult {
  RunState batch;
  std::vector<bool> accepted;
  /// Mean reward over accepted candidates (over all when none accepted).
  double mean_score = 0.0;
  bool fell_back = false;
  std::int64_t verification_calls = 0;
};

RejectionResult run_rejection_sampling(const TaskSpec& task, const RunConfig& config, GenerationClient& client,
                                       const EngineOptions& options = {}, const std::string& stream_prefix = "");

namespace detail {
/// Runs fn(i) for i in [0, count) with at most `concurrency` in flight. The
/// first exception stops new work and is rethrown after all workers join.
void parallel_for(std::size_t count, int concurrency, const std::function<void(std::size_t)>& fn);
}  // namespace detail

}  // namespace rsa
