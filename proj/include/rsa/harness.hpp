#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rsa/client.hpp"
#include "rsa/core.hpp"
#include "rsa/engine.hpp"
#include "rsa/persistence.hpp"

namespace rsa {

enum class Method { rsa, refine, majority, rejection, agg1 };

std::string_view to_string(Method method);
/// Throws ConfigError for unknown names.
Method parse_method(std::string_view text);

struct ExperimentSpec {
  Method method = Method::rsa;
  RunConfig config;
  int num_seeds = 1;
  std::vector<TaskSpec> tasks;
  std::string dataset_path;
  std::string dataset_sha1;
  /// Tasks in flight at once; each also honours config.concurrency.
  int task_concurrency = 1;

  void validate() const;
};

/// "task=<id>/n=<N>/k=<K>/t=<T>/seed=<seed>/"
std::string stream_prefix_for(const TaskSpec& task, const RunConfig& config);

/// The part of the manifest that determines results. Endpoint, concurrency
/// and output location are left out, so they do not change the run id.
nlohmann::ordered_json hashed_payload(const ExperimentSpec& spec);
std::string content_hash(const ExperimentSpec& spec);
/// "<method>-<first 12 hex digits of the content hash>"
std::string default_run_id(const ExperimentSpec& spec);

struct FinalPick {
  std::uint64_t seed = 0;
  std::string task_id;
  std::optional<std::size_t> member_index;
  std::optional<std::string> answer;
  double reward = 0.0;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

struct ExperimentOutcome {
  std::string run_id;
  std::filesystem::path dir;
  std::vector<RunState> states;
  std::vector<FinalPick> finals;
  MetricsBundle metrics;
  std::int64_t generations = 0;
  bool partial = false;
  std::string abort_reason;
};

/// Runs every (seed, task) pair and writes runs/<run_id>/ artifacts. An
/// aborted generation stops new work; artifacts are still written with the
/// partial flag set.
ExperimentOutcome run_experiment(const ExperimentSpec& spec, GenerationClient& client, EmbeddingClient* embedder,
                                 const std::filesystem::path& out_root,
                                 const std::optional<std::string>& run_id = std::nullopt);

struct RlDatasetOptions {
  int k = 4;
  RunConfig sampling;
  std::uint64_t seed = 0;
};

struct RlDatasetResult {
  int written = 0;
  int skipped = 0;
  bool aborted = false;
  std::string abort_reason;
};

/// Appends one standard and one aggregation record per task to `out`. Ids
/// already present in `out` are skipped, so an interrupted build can resume.
RlDatasetResult build_rl_dataset(std::span<const TaskSpec> tasks, const RlDatasetOptions& options,
                                 GenerationClient& client, const std::filesystem::path& out);

/// Recomputes metrics from a run directory (or a steps.jsonl path) into
/// `out_dir`. Returns the bundle that was written.
MetricsBundle replay_metrics(const std::filesystem::path& input, const std::filesystem::path& out_dir,
                             EmbeddingClient* embedder = nullptr);

/// Entry point of the `rsa` tool. Exit codes: 0 ok, 2 usage or input error,
/// 3 endpoint failure (partial artifacts written).
int cli_main(int argc, char** argv);

}  // namespace rsa
