#include "rsa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace rsa {
namespace {

double reward_of(const Trajectory& t) {
  if (!t.reward) throw std::logic_error("metric over an unscored trajectory (step " + std::to_string(t.step) + ")");
  return *t.reward;
}

}  // namespace

double pass_at_1(const Population& population) {
  if (population.members.empty()) throw std::logic_error("pass_at_1: empty population");
  double sum = 0.0;
  for (const auto& m : population.members) sum += reward_of(m);
  return sum / static_cast<double>(population.members.size());
}

double pass_at_n(const Population& population) {
  if (population.members.empty()) throw std::logic_error("pass_at_n: empty population");
  double best = 0.0;
  for (const auto& m : population.members) best = std::max(best, reward_of(m) == 1.0 ? 1.0 : 0.0);
  return best;
}

double diversity(std::span<const std::vector<double>> embeddings) {
  if (embeddings.size() < 2) throw std::domain_error("diversity needs at least two embeddings");
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    for (std::size_t j = i + 1; j < embeddings.size(); ++j) {
      const auto& a = embeddings[i];
      const auto& b = embeddings[j];
      if (a.size() != b.size()) throw std::invalid_argument("diversity: embedding dimensions differ");
      double dot = 0.0;
      for (std::size_t d = 0; d < a.size(); ++d) dot += a[d] * b[d];
      sum += 1.0 - dot;
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

std::vector<StepMetrics> step_metrics(std::span<const Population> populations, EmbeddingClient* embedder) {
  std::vector<StepMetrics> out;
  std::int64_t budget = 0;
  for (const auto& pop : populations) {
    StepMetrics m;
    m.step = pop.step;
    m.pass_at_1 = pass_at_1(pop);
    m.pass_at_n = pass_at_n(pop);
    if (m.pass_at_1 > m.pass_at_n) throw std::logic_error("Pass@1 exceeds Pass@N at step " + std::to_string(m.step));
    m.gap = m.pass_at_n - m.pass_at_1;
    budget += static_cast<std::int64_t>(pop.members.size());
    m.budget_used = budget;
    if (embedder != nullptr && pop.members.size() >= 2) {
      std::vector<std::string> texts;
      texts.reserve(pop.members.size());
      for (const auto& t : pop.members) texts.push_back(t.text);
      const auto vectors = embedder->embed(texts);
      m.diversity = diversity(vectors);
    }
    out.push_back(m);
  }
  return out;
}

std::vector<StepMetrics> step_metrics(const RunState& state, EmbeddingClient* embedder) {
  return step_metrics(std::span<const Population>(state.populations), embedder);
}

BudgetReport budget_report(const RunState& state, std::optional<std::int64_t> client_log) {
  BudgetReport report;
  for (const auto& pop : state.populations) {
    report.per_step.push_back(static_cast<std::int64_t>(pop.members.size()));
    report.generations += static_cast<std::int64_t>(pop.members.size());
  }
  report.partial = state.aborted || static_cast<int>(state.populations.size()) < state.config.t;
  if (report.generations != state.budget_used) {
    throw AccountingError("budget_used " + std::to_string(state.budget_used) + " disagrees with recorded " +
                          std::to_string(report.generations) + " generations");
  }
  if (client_log && *client_log != report.generations) {
    throw AccountingError("client logged " + std::to_string(*client_log) + " generations, run recorded " +
                          std::to_string(report.generations));
  }
  return report;
}

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_std(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

std::vector<CurvePoint> dataset_curve(std::span<const RunSeries> series) {
  // seed -> step -> per-task values, keeping seed order stable.
  struct Acc {
    std::vector<double> p1, pn, gap, div;
  };
  std::map<std::uint64_t, std::map<int, Acc>> by_seed;
  std::set<std::string> tasks;
  for (const auto& s : series) {
    tasks.insert(s.task_id);
    for (const auto& m : s.steps) {
      Acc& a = by_seed[s.seed][m.step];
      a.p1.push_back(m.pass_at_1);
      a.pn.push_back(m.pass_at_n);
      a.gap.push_back(m.gap);
      if (m.diversity) a.div.push_back(*m.diversity);
    }
  }
  std::set<int> steps;
  for (const auto& [seed, per_step] : by_seed) {
    for (const auto& [step, acc] : per_step) steps.insert(step);
  }
  std::vector<CurvePoint> out;
  for (int step : steps) {
    std::vector<double> p1, pn, gap, div;
    for (const auto& [seed, per_step] : by_seed) {
      const auto it = per_step.find(step);
      if (it == per_step.end()) continue;
      p1.push_back(mean(it->second.p1));
      pn.push_back(mean(it->second.pn));
      gap.push_back(mean(it->second.gap));
      if (!it->second.div.empty()) div.push_back(mean(it->second.div));
    }
    CurvePoint c;
    c.step = step;
    c.pass_at_1 = mean(p1);
    c.pass_at_1_std = sample_std(p1);
    c.pass_at_n = mean(pn);
    c.pass_at_n_std = sample_std(pn);
    c.gap = mean(gap);
    c.gap_std = sample_std(gap);
    if (!div.empty()) c.diversity = mean(div);
    c.seeds = static_cast<int>(p1.size());
    c.tasks = static_cast<int>(tasks.size());
    out.push_back(c);
  }
  return out;
}

}  // namespace rsa
