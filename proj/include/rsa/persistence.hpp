#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rsa/core.hpp"
#include "rsa/engine.hpp"
#include "rsa/metrics.hpp"

namespace rsa {

/// A malformed input line; the message is prefixed with "<source>:<line>: ".
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Reads {"id", "kind", "query", "gold"} per line. Blank lines are skipped;
/// ids must be unique.
std::vector<TaskSpec> parse_dataset(std::istream& in, const std::string& source);
std::vector<TaskSpec> load_dataset(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const TaskSpec& task);

/// One persisted trajectory. (run_id, task_id, step, member_index) is unique.
struct StepRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string task_id;
  int step = 1;
  int member_index = 0;
  std::string prompt_hash;
  std::string text;
  std::optional<std::string> answer;
  double reward = 0.0;
  std::vector<int> parents;
  bool truncated = false;

  bool operator==(const StepRecord&) const = default;
};

nlohmann::ordered_json to_json(const StepRecord& record);
StepRecord step_record_from_json(const nlohmann::json& j);

std::vector<StepRecord> records_for(const RunState& state, const std::string& run_id);

void write_jsonl_line(std::ostream& out, const nlohmann::ordered_json& j);
std::vector<StepRecord> read_step_records(const std::filesystem::path& path);

/// Rebuilds per-(seed, task) populations in first-appearance order.
struct ReplayedRun {
  std::uint64_t seed = 0;
  std::string task_id;
  std::vector<Population> populations;
};

std::vector<ReplayedRun> group_records(std::span<const StepRecord> records);

/// Everything the metrics writers need.
struct MetricsBundle {
  std::vector<RunSeries> series;
  std::vector<CurvePoint> curve;
  bool partial = false;
};

MetricsBundle metrics_from_states(std::span<const RunState> states, EmbeddingClient* embedder);
MetricsBundle metrics_from_records(std::span<const StepRecord> records, bool partial, EmbeddingClient* embedder);

/// Writes metrics.csv, metrics.json and plotdata/{pass_at_1,gap}_vs_step.csv.
void write_metrics(const std::filesystem::path& dir, const MetricsBundle& bundle, const std::string& series_name);

/// Git blob-style SHA-1 ("blob <len>\0<content>"), lower-case hex.
std::string git_blob_sha1(std::string_view content);
std::string sha1_hex(std::string_view content);

}  // namespace rsa
