#include "rsa/sim.hpp"

#include <cmath>
#include <stdexcept>

#include "rsa/core.hpp"

namespace rsa::sim {
namespace {

double choose(int n, int r) {
  if (r < 0 || r > n) return 0.0;
  double v = 1.0;
  for (int i = 1; i <= r; ++i) v = v * static_cast<double>(n - r + i) / static_cast<double>(i);
  return v;
}

std::vector<double> binomial_pmf(int n, double p) {
  std::vector<double> pmf(static_cast<std::size_t>(n + 1));
  for (int j = 0; j <= n; ++j) pmf[static_cast<std::size_t>(j)] = choose(n, j) * std::pow(p, j) * std::pow(1.0 - p, n - j);
  return pmf;
}

struct Moments {
  double p1 = 0, pn = 0, gap = 0, p1_sd = 0, pn_sd = 0, gap_sd = 0;
};

Moments moments(const std::vector<double>& dist, int n) {
  double e1 = 0, e1sq = 0, en = 0, eg = 0, egsq = 0;
  for (int c = 0; c <= n; ++c) {
    const double p = dist[static_cast<std::size_t>(c)];
    const double x = static_cast<double>(c) / n;
    const double y = c > 0 ? 1.0 : 0.0;
    e1 += p * x;
    e1sq += p * x * x;
    en += p * y;
    eg += p * (y - x);
    egsq += p * (y - x) * (y - x);
  }
  Moments m;
  m.p1 = e1;
  m.pn = en;
  m.gap = eg;
  m.p1_sd = std::sqrt(std::max(0.0, e1sq - e1 * e1));
  m.pn_sd = std::sqrt(std::max(0.0, en - en * en));
  m.gap_sd = std::sqrt(std::max(0.0, egsq - eg * eg));
  return m;
}

std::vector<double> initial_distribution(const AbstractWorld& world) {
  if (!world.initial_correct_count) return binomial_pmf(world.n, world.initial_correct_prob);
  std::vector<double> dist(static_cast<std::size_t>(world.n + 1), 0.0);
  dist[static_cast<std::size_t>(*world.initial_correct_count)] = 1.0;
  return dist;
}

std::vector<double> step_distribution(const std::vector<double>& dist, const std::vector<std::vector<double>>& rows) {
  std::vector<double> next(dist.size(), 0.0);
  for (std::size_t c = 0; c < dist.size(); ++c) {
    if (dist[c] == 0.0) continue;
    for (std::size_t d = 0; d < dist.size(); ++d) next[d] += dist[c] * rows[c][d];
  }
  return next;
}

}  // namespace

std::string_view to_string(Operator op) {
  switch (op) {
    case Operator::any_correct: return "any_correct";
    case Operator::majority_of_parents: return "majority_of_parents";
    case Operator::never_flip: return "never_flip";
  }
  return "any_correct";
}

Operator parse_operator(std::string_view text) {
  if (text == "any_correct") return Operator::any_correct;
  if (text == "majority_of_parents") return Operator::majority_of_parents;
  if (text == "never_flip") return Operator::never_flip;
  throw std::invalid_argument("unsupported operator '" + std::string(text) + "'");
}

void AbstractWorld::validate() const {
  if (n < 1) throw std::invalid_argument("world: N must be >= 1");
  if (k < 1 || k > n) throw std::invalid_argument("world: K must satisfy 1 <= K <= N");
  if (t < 1) throw std::invalid_argument("world: T must be >= 1");
  if (!(epsilon >= 0.0 && epsilon < 0.5)) throw std::invalid_argument("world: epsilon must lie in [0, 0.5)");
  if (!(initial_correct_prob >= 0.0 && initial_correct_prob <= 1.0)) {
    throw std::invalid_argument("world: initial probability must lie in [0, 1]");
  }
  if (initial_correct_count && (*initial_correct_count < 0 || *initial_correct_count > n)) {
    throw std::invalid_argument("world: initial count must lie in [0, N]");
  }
}

double child_correct_probability(const AbstractWorld& world, int c) {
  const int n = world.n;
  const int k = world.k;
  const double total = choose(n, k);
  double f = 0.0;
  switch (world.op) {
    case Operator::never_flip:
      return static_cast<double>(c) / n;
    case Operator::any_correct:
      f = 1.0 - choose(n - c, k) / total;
      break;
    case Operator::majority_of_parents:
      for (int j = 0; j <= k; ++j) {
        const double pj = choose(c, j) * choose(n - c, k - j) / total;
        if (2 * j > k) {
          f += pj;
        } else if (2 * j == k) {
          f += 0.5 * pj;
        }
      }
      break;
  }
  return f * (1.0 - world.epsilon) + (1.0 - f) * world.epsilon;
}

namespace {

// Row c: Binomial(N, f(c)); never_flip is the identity.
std::vector<std::vector<double>> transition_rows(const AbstractWorld& world) {
  const int n = world.n;
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(n + 1));
  for (int c = 0; c <= n; ++c) {
    if (world.op == Operator::never_flip) {
      rows[static_cast<std::size_t>(c)].assign(static_cast<std::size_t>(n + 1), 0.0);
      rows[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)] = 1.0;
    } else {
      rows[static_cast<std::size_t>(c)] = binomial_pmf(n, child_correct_probability(world, c));
    }
  }
  return rows;
}

}  // namespace

ChainResult exact_chain(const AbstractWorld& world) {
  world.validate();
  if (world.n > 20) throw std::invalid_argument("exact_chain supports N <= 20, got " + std::to_string(world.n));
  const int n = world.n;
  std::vector<double> dist = initial_distribution(world);
  const auto rows = transition_rows(world);
  ChainResult out;
  for (int step = 1; step <= world.t; ++step) {
    if (step > 1) dist = step_distribution(dist, rows);
    out.distribution.push_back(dist);
    const Moments m = moments(dist, n);
    out.pass_at_1.push_back(m.p1);
    out.pass_at_n.push_back(m.pn);
    out.gap.push_back(m.gap);
    out.pass_at_1_sd.push_back(m.p1_sd);
    out.pass_at_n_sd.push_back(m.pn_sd);
    out.gap_sd.push_back(m.gap_sd);
  }
  return out;
}

McResult mc_simulate(const AbstractWorld& world, int trials, std::uint64_t seed) {
  world.validate();
  if (trials < 1) throw std::invalid_argument("mc_simulate: trials must be >= 1");
  const int n = world.n;
  const auto steps = static_cast<std::size_t>(world.t);
  std::vector<double> s1(steps), s1sq(steps), sn(steps), sg(steps), sgsq(steps);
  std::vector<char> bits(static_cast<std::size_t>(n)), next(static_cast<std::size_t>(n));
  for (int trial = 0; trial < trials; ++trial) {
    SeededRng rng = derive_rng(seed, "mc/n=" + std::to_string(n) + "/k=" + std::to_string(world.k) +
                                         "/trial=" + std::to_string(trial));
    for (int i = 0; i < n; ++i) {
      bits[static_cast<std::size_t>(i)] = world.initial_correct_count
                                              ? static_cast<char>(i < *world.initial_correct_count)
                                              : static_cast<char>(rng.uniform01() < world.initial_correct_prob);
    }
    for (std::size_t step = 0; step < steps; ++step) {
      if (step > 0) {
        for (int i = 0; i < n; ++i) {
          bool child = false;
          if (world.op == Operator::never_flip) {
            child = bits[static_cast<std::size_t>(i)] != 0;
          } else {
            const auto subset = sample_without_replacement(rng, n, world.k);
            int correct = 0;
            for (int m : subset) correct += bits[static_cast<std::size_t>(m)];
            if (world.op == Operator::any_correct) {
              child = correct > 0;
            } else if (2 * correct == world.k) {
              child = rng.uniform01() < 0.5;
            } else {
              child = 2 * correct > world.k;
            }
            if (world.epsilon > 0.0 && rng.uniform01() < world.epsilon) child = !child;
          }
          next[static_cast<std::size_t>(i)] = static_cast<char>(child);
        }
        bits.swap(next);
      }
      int c = 0;
      for (char b : bits) c += b;
      const double x = static_cast<double>(c) / n;
      const double y = c > 0 ? 1.0 : 0.0;
      s1[step] += x;
      s1sq[step] += x * x;
      sn[step] += y;
      sg[step] += y - x;
      sgsq[step] += (y - x) * (y - x);
    }
  }
  McResult out;
  out.trials = trials;
  const double m = trials;
  auto se = [&](double sum, double sumsq) {
    if (trials < 2) return 0.0;
    const double mu = sum / m;
    const double var = std::max(0.0, (sumsq - m * mu * mu) / (m - 1));
    return std::sqrt(var / m);
  };
  for (std::size_t step = 0; step < steps; ++step) {
    out.pass_at_1.push_back(s1[step] / m);
    out.pass_at_n.push_back(sn[step] / m);
    out.gap.push_back(sg[step] / m);
    out.pass_at_1_se.push_back(se(s1[step], s1sq[step]));
    out.pass_at_n_se.push_back(se(sn[step], sn[step]));
    out.gap_se.push_back(se(sg[step], sgsq[step]));
  }
  return out;
}

std::optional<double> expected_steps_below(const AbstractWorld& world, double threshold, int max_steps) {
  world.validate();
  if (world.n > 20) throw std::invalid_argument("expected_steps_below supports N <= 20, got " + std::to_string(world.n));
  const int n = world.n;
  std::vector<char> hit(static_cast<std::size_t>(n + 1));
  for (int c = 0; c <= n; ++c) {
    const double gap = (c > 0 ? 1.0 : 0.0) - static_cast<double>(c) / n;
    hit[static_cast<std::size_t>(c)] = gap < threshold;
  }
  const auto rows = transition_rows(world);
  // Mass that has not yet hit; E[tau] = sum over t >= 0 of P(tau > t).
  std::vector<double> alive = initial_distribution(world);
  double expected = 1.0;
  for (int step = 1; step <= max_steps; ++step) {
    if (step > 1) alive = step_distribution(alive, rows);
    double survive = 0.0;
    for (int c = 0; c <= n; ++c) {
      if (hit[static_cast<std::size_t>(c)]) alive[static_cast<std::size_t>(c)] = 0.0;
      survive += alive[static_cast<std::size_t>(c)];
    }
    if (survive < 1e-13) return expected;
    expected += survive;
  }
  return std::nullopt;
}

std::optional<int> first_step_below(std::span<const double> curve, double threshold) {
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (curve[i] < threshold) return static_cast<int>(i + 1);
  }
  return std::nullopt;
}

std::vector<PlotRow> to_plot_rows(const std::string& series, const ChainResult& chain) {
  std::vector<PlotRow> rows;
  for (std::size_t i = 0; i < chain.pass_at_1.size(); ++i) {
    rows.push_back({series, static_cast<int>(i + 1), chain.pass_at_1[i], chain.pass_at_n[i], chain.gap[i], 0.0, 0.0,
                    0.0});
  }
  return rows;
}

std::vector<PlotRow> to_plot_rows(const std::string& series, const McResult& mc) {
  std::vector<PlotRow> rows;
  for (std::size_t i = 0; i < mc.pass_at_1.size(); ++i) {
    rows.push_back({series, static_cast<int>(i + 1), mc.pass_at_1[i], mc.pass_at_n[i], mc.gap[i], mc.pass_at_1_se[i],
                    mc.pass_at_n_se[i], mc.gap_se[i]});
  }
  return rows;
}

}  // namespace rsa::sim
