#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsa/client.hpp"
#include "rsa/core.hpp"
#include "rsa/engine.hpp"

namespace rsa {

/// Budget bookkeeping disagrees with the client's own call log.
class AccountingError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct StepMetrics {
  int step = 0;
  double pass_at_1 = 0.0;
  double pass_at_n = 0.0;
  double gap = 0.0;
  std::optional<double> diversity;
  std::int64_t budget_used = 0;
};

/// Mean member reward. Throws std::logic_error if a member is unscored.
double pass_at_1(const Population& population);
/// 1.0 iff some member has reward 1.0.
double pass_at_n(const Population& population);
/// Mean pairwise cosine distance (1 - dot) over unit vectors. Throws
/// std::domain_error with fewer than two vectors.
double diversity(std::span<const std::vector<double>> embeddings);

/// Per-step metrics of one run; diversity is filled when an embedding client
/// is given and the population has at least two members. Asserts
/// pass_at_1 <= pass_at_n on every step.
std::vector<StepMetrics> step_metrics(const RunState& state, EmbeddingClient* embedder = nullptr);

/// Same computation over bare populations (used for replay).
std::vector<StepMetrics> step_metrics(std::span<const Population> populations, EmbeddingClient* embedder = nullptr);

struct BudgetReport {
  std::int64_t generations = 0;
  std::vector<std::int64_t> per_step;
  bool partial = false;
};

/// Counts generations by step. When `client_log` is given the totals must
/// agree exactly, otherwise AccountingError is thrown.
BudgetReport budget_report(const RunState& state, std::optional<std::int64_t> client_log = std::nullopt);

/// One (seed, task) metric series.
struct RunSeries {
  std::uint64_t seed = 0;
  std::string task_id;
  std::vector<StepMetrics> steps;
};

/// Dataset-level point: per seed the unweighted mean over tasks, then mean and
/// sample standard deviation across seeds. The gap is taken per seed before
/// averaging.
struct CurvePoint {
  int step = 0;
  double pass_at_1 = 0.0;
  double pass_at_1_std = 0.0;
  double pass_at_n = 0.0;
  double pass_at_n_std = 0.0;
  double gap = 0.0;
  double gap_std = 0.0;
  std::optional<double> diversity;
  int seeds = 0;
  int tasks = 0;
};

std::vector<CurvePoint> dataset_curve(std::span<const RunSeries> series);

double mean(std::span<const double> xs);
/// Sample standard deviation; 0 for fewer than two values.
double sample_std(std::span<const double> xs);

}  // namespace rsa
