#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "rsa/engine.hpp"
#include "rsa/extraction.hpp"
#include "rsa/harness.hpp"
#include "rsa/metrics.hpp"
#include "rsa/mock.hpp"
#include "rsa/prompt.hpp"
#include "rsa/sim.hpp"

namespace py = pybind11;
using namespace rsa;

namespace {

TaskSpec task_of(const std::string& kind, const std::string& query, std::string gold = "") {
  return {"py", parse_task_kind(kind), query, std::move(gold)};
}

Population population_of(const std::vector<double>& rewards) {
  Population p;
  for (double r : rewards) {
    Trajectory t;
    t.reward = r;
    p.members.push_back(std::move(t));
  }
  return p;
}

sim::AbstractWorld world_of(int n, int k, int t, std::optional<int> initial_count, double initial_prob,
                            const std::string& op, double epsilon) {
  sim::AbstractWorld w;
  w.n = n;
  w.k = k;
  w.t = t;
  w.initial_correct_count = initial_count;
  w.initial_correct_prob = initial_prob;
  w.op = sim::parse_operator(op);
  w.epsilon = epsilon;
  return w;
}

}  // namespace

PYBIND11_MODULE(_rsa, m) {
  m.doc() = "Recursive self-aggregation core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("build_prompt", [](const std::string& kind, const std::string& query) {
    return build_prompt(task_of(kind, query), std::nullopt);
  }, py::arg("kind"), py::arg("query"));

  m.def("build_aggregation_prompt",
        [](const std::string& kind, const std::string& query, const std::vector<std::string>& candidates,
           std::size_t char_budget) {
          PromptOptions opts;
          opts.char_budget = char_budget;
          return build_aggregation_prompt(task_of(kind, query), candidates, opts);
        },
        py::arg("kind"), py::arg("query"), py::arg("candidates"), py::arg("char_budget") = 0);

  m.def("extract_answer", [](const std::string& text, const std::string& kind) {
    return extract_answer(text, parse_task_kind(kind)).answer;
  }, py::arg("text"), py::arg("kind") = "math");

  m.def("normalize_answer", [](const std::string& raw, const std::string& kind) {
    return normalize_answer(raw, parse_task_kind(kind));
  }, py::arg("raw"), py::arg("kind") = "math");

  m.def("score", [](const std::string& text, const std::string& gold, const std::string& kind) {
    Trajectory t;
    t.text = text;
    return score(t, task_of(kind, "q", gold));
  }, py::arg("text"), py::arg("gold"), py::arg("kind") = "math");

  m.def("pass_at_1", [](const std::vector<double>& rewards) { return pass_at_1(population_of(rewards)); });
  m.def("pass_at_n", [](const std::vector<double>& rewards) { return pass_at_n(population_of(rewards)); });
  m.def("diversity", [](const std::vector<std::vector<double>>& embeddings) { return diversity(embeddings); });

  m.def("exact_chain",
        [](int n, int k, int t, std::optional<int> initial_count, double initial_prob, const std::string& op,
           double epsilon) {
          const auto r = sim::exact_chain(world_of(n, k, t, initial_count, initial_prob, op, epsilon));
          py::dict d;
          d["pass_at_1"] = r.pass_at_1;
          d["pass_at_n"] = r.pass_at_n;
          d["gap"] = r.gap;
          d["pass_at_1_sd"] = r.pass_at_1_sd;
          d["pass_at_n_sd"] = r.pass_at_n_sd;
          d["gap_sd"] = r.gap_sd;
          return d;
        },
        py::arg("n"), py::arg("k"), py::arg("t"), py::arg("initial_count") = py::none(),
        py::arg("initial_prob") = 0.5, py::arg("op") = "any_correct", py::arg("epsilon") = 0.0);

  m.def("mc_simulate",
        [](int n, int k, int t, int trials, std::uint64_t seed, std::optional<int> initial_count, double initial_prob,
           const std::string& op, double epsilon) {
          const auto r = sim::mc_simulate(world_of(n, k, t, initial_count, initial_prob, op, epsilon), trials, seed);
          py::dict d;
          d["pass_at_1"] = r.pass_at_1;
          d["pass_at_n"] = r.pass_at_n;
          d["gap"] = r.gap;
          d["pass_at_1_se"] = r.pass_at_1_se;
          d["pass_at_n_se"] = r.pass_at_n_se;
          d["gap_se"] = r.gap_se;
          return d;
        },
        py::arg("n"), py::arg("k"), py::arg("t"), py::arg("trials"), py::arg("seed") = 0,
        py::arg("initial_count") = py::none(), py::arg("initial_prob") = 0.5, py::arg("op") = "any_correct",
        py::arg("epsilon") = 0.0);

  m.def("expected_steps_below",
        [](int n, int k, std::optional<int> initial_count, double initial_prob, const std::string& op, double epsilon,
           double threshold) {
          return sim::expected_steps_below(world_of(n, k, 1, initial_count, initial_prob, op, epsilon), threshold);
        },
        py::arg("n"), py::arg("k"), py::arg("initial_count") = py::none(), py::arg("initial_prob") = 0.5,
        py::arg("op") = "any_correct", py::arg("epsilon") = 0.0, py::arg("threshold") = 0.05);

  // Runs RSA in-process against the synthetic any-correct world.
  m.def("run_mock",
        [](const std::string& query, const std::string& gold, int n, int k, int t, std::uint64_t seed,
           int initial_correct, double epsilon, const std::string& kind) {
          MockWorldConfig w;
          w.behavior = MockBehavior::any_correct_world;
          w.gold = gold;
          w.initial_correct = initial_correct;
          w.epsilon = epsilon;
          MockClient client(std::make_shared<MockWorld>(w));
          RunConfig cfg;
          cfg.n = n;
          cfg.k = k;
          cfg.t = t;
          cfg.seed = seed;
          RunState state;
          {
            py::gil_scoped_release release;
            state = run_rsa(task_of(kind, query, gold), cfg, client);
          }
          py::list steps;
          for (const auto& sm : step_metrics(state)) {
            py::dict d;
            d["step"] = sm.step;
            d["pass_at_1"] = sm.pass_at_1;
            d["pass_at_n"] = sm.pass_at_n;
            d["gap"] = sm.gap;
            d["budget_used"] = sm.budget_used;
            steps.append(d);
          }
          return steps;
        },
        py::arg("query"), py::arg("gold"), py::arg("n") = 16, py::arg("k") = 4, py::arg("t") = 10,
        py::arg("seed") = 0, py::arg("initial_correct") = 1, py::arg("epsilon") = 0.0, py::arg("kind") = "math");

  m.def("cli", [](std::vector<std::string> args) {
    args.insert(args.begin(), "rsa");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    py::gil_scoped_release release;
    return cli_main(static_cast<int>(argv.size()), argv.data());
  }, py::arg("args"));
}
