#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rsa/plotdata.hpp"

namespace rsa::sim {

/// Synthetic aggregation operators over correctness bits.
///   any_correct: a child is correct iff some parent is.
///   majority_of_parents: correct iff more than K/2 parents are; an exact
///     tie is a fair coin.
///   never_flip: every member keeps its correctness.
/// Outcomes of the first two are flipped with probability epsilon.
enum class Operator { any_correct, majority_of_parents, never_flip };

std::string_view to_string(Operator op);
/// Throws std::invalid_argument for unknown names.
Operator parse_operator(std::string_view text);

struct AbstractWorld {
  int n = 16;
  int k = 4;
  int t = 10;
  Operator op = Operator::any_correct;
  double epsilon = 0.0;
  /// Each initial member is correct with this probability, unless
  /// initial_correct_count pins the exact number.
  double initial_correct_prob = 0.0;
  std::optional<int> initial_correct_count;

  void validate() const;
};

/// Probability that one child is correct when c of N members are, obtained by
/// hypergeometric enumeration of the K-subsets.
double child_correct_probability(const AbstractWorld& world, int c);

struct ChainResult {
  /// distribution[t - 1][c] = P(c correct members at step t).
  std::vector<std::vector<double>> distribution;
  std::vector<double> pass_at_1;
  std::vector<double> pass_at_n;
  std::vector<double> gap;
  /// Per-trial standard deviations of the three quantities.
  std::vector<double> pass_at_1_sd;
  std::vector<double> pass_at_n_sd;
  std::vector<double> gap_sd;
};

/// Exact Markov chain over the correct count. Requires N <= 20.
ChainResult exact_chain(const AbstractWorld& world);

struct McResult {
  int trials = 0;
  std::vector<double> pass_at_1;
  std::vector<double> pass_at_n;
  std::vector<double> gap;
  std::vector<double> pass_at_1_se;
  std::vector<double> pass_at_n_se;
  std::vector<double> gap_se;
};

/// Simulates the population bit-by-bit with real K-subset draws.
McResult mc_simulate(const AbstractWorld& world, int trials, std::uint64_t seed);

/// Expected number of steps until the realized gap first drops below
/// `threshold` (step 1 is the initial population). nullopt when the
/// probability of not having hit it is still non-negligible after max_steps.
std::optional<double> expected_steps_below(const AbstractWorld& world, double threshold, int max_steps = 100000);

/// First step (1-based) whose value is below `threshold`.
std::optional<int> first_step_below(std::span<const double> curve, double threshold);

std::vector<PlotRow> to_plot_rows(const std::string& series, const ChainResult& chain);
std::vector<PlotRow> to_plot_rows(const std::string& series, const McResult& mc);

}  // namespace rsa::sim
