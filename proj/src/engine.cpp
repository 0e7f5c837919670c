#include "rsa/engine.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>

namespace rsa {
namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string step_label(int t, std::size_t i) { return "t=" + std::to_string(t) + "/i=" + std::to_string(i); }

struct Job {
  std::string prompt;
  std::string label;  // e.g. "t=2/i=5"; tag and seed stream derive from it
  std::vector<int> parents;
};

// Generates one trajectory per job, in job order, under the run's
// concurrency cap.
std::vector<Trajectory> generate_all(RunState& state, int step, std::vector<Job> jobs, GenerationClient& client,
                                     const EngineOptions& options) {
  const SamplingParams base = sampling_for(state.config);
  std::vector<Trajectory> out(jobs.size());
  try {
    detail::parallel_for(jobs.size(), state.config.concurrency, [&](std::size_t i) {
      const Job& job = jobs[i];
      SamplingParams params = base;
      params.request_seed = request_seed_for(state, "gen/" + job.label);
      Trajectory traj;
      traj.started_ms = now_ms();
      const Generation g = client.generate(job.prompt, params, state.stream_prefix + job.label);
      traj.finished_ms = now_ms();
      traj.text = g.text;
      traj.truncated = g.finish_reason == FinishReason::length;
      traj.step = step;
      traj.parents = job.parents;
      traj.prompt_hash = hex64(stable_hash64(job.prompt));
      options.scorer.annotate(traj, state.task);
      out[i] = std::move(traj);
    });
  } catch (const GenerationError& e) {
    state.aborted = true;
    state.abort_reason = e.what();
    throw RunAborted(e.what(), state, e.status());
  }
  return out;
}

void append_population(RunState& state, int step, std::vector<Trajectory> members) {
  Population pop;
  pop.step = step;
  pop.members = std::move(members);
  pop.seed_path = std::to_string(state.config.seed) + ":" + state.stream_prefix + "t=" + std::to_string(step);
  state.populations.push_back(std::move(pop));
  state.budget_used += static_cast<std::int64_t>(state.populations.back().members.size());
}

}  // namespace

namespace detail {

void parallel_for(std::size_t count, int concurrency, const std::function<void(std::size_t)>& fn) {
  if (count == 0) return;
  const auto workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, concurrency)));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (!failed.load()) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          failed.store(true);
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace detail

RunState make_run_state(TaskSpec task, RunConfig config, std::string stream_prefix) {
  config.validate();
  if (task.id.empty()) throw ConfigError("task id is empty");
  RunState state;
  state.config = std::move(config);
  state.task = std::move(task);
  state.stream_prefix = std::move(stream_prefix);
  return state;
}

SamplingParams sampling_for(const RunConfig& config) {
  SamplingParams p;
  p.temperature = config.temperature;
  p.top_p = config.top_p;
  p.min_p = config.min_p;
  p.max_tokens = config.max_tokens;
  return p;
}

std::int64_t request_seed_for(const RunState& state, const std::string& label) {
  SeededRng rng = derive_rng(state.config.seed, state.stream_prefix + label);
  return static_cast<std::int64_t>(rng.next_u64() & 0x7FFFFFFFULL);
}

const Population& initialize_population(RunState& state, GenerationClient& client, const EngineOptions& options) {
  if (!state.populations.empty()) throw std::logic_error("initialize_population: population already initialized");
  const auto n = static_cast<std::size_t>(state.config.n);
  std::vector<Job> jobs(n);
  const std::string prompt = build_prompt(state.task, std::nullopt, options.prompt);
  for (std::size_t i = 0; i < n; ++i) jobs[i] = {prompt, step_label(1, i), {}};
  append_population(state, 1, generate_all(state, 1, std::move(jobs), client, options));
  return state.populations.back();
}

const std::vector<AggregationSet>& subsample_sets(RunState& state, int t) {
  const RunConfig& cfg = state.config;
  if (cfg.k > cfg.n) throw std::invalid_argument("subsample_sets: K > N");
  if (t < 1 || t >= cfg.t) {
    throw std::logic_error("subsample_sets: step " + std::to_string(t) + " outside [1, T) with T=" +
                           std::to_string(cfg.t));
  }
  if (static_cast<int>(state.populations.size()) < t) {
    throw std::logic_error("subsample_sets: population for step " + std::to_string(t) + " does not exist");
  }
  std::vector<AggregationSet> sets;
  sets.reserve(static_cast<std::size_t>(cfg.n));
  for (int i = 0; i < cfg.n; ++i) {
    SeededRng rng =
        derive_rng(cfg.seed, state.stream_prefix + "subsample/t=" + std::to_string(t) + "/i=" + std::to_string(i));
    sets.push_back({i, sample_without_replacement(rng, cfg.n, cfg.k)});
  }
  const auto slot = static_cast<std::size_t>(t - 1);
  if (state.aggregation_history.size() <= slot) state.aggregation_history.resize(slot + 1);
  state.aggregation_history[slot] = std::move(sets);
  return state.aggregation_history[slot];
}

const Population& aggregate_step(RunState& state, int t, GenerationClient& client, const EngineOptions& options) {
  const RunConfig& cfg = state.config;
  if (t < 1 || t >= cfg.t) {
    throw std::logic_error("aggregate_step: step " + std::to_string(t) + " outside [1, T) with T=" +
                           std::to_string(cfg.t));
  }
  if (static_cast<int>(state.populations.size()) != t) {
    throw std::logic_error("aggregate_step: expected exactly " + std::to_string(t) + " populations");
  }
  if (static_cast<int>(state.aggregation_history.size()) < t) {
    throw std::logic_error("aggregate_step: aggregation sets for step " + std::to_string(t) + " not drawn");
  }
  const Population& current = state.populations[static_cast<std::size_t>(t - 1)];
  const auto& sets = state.aggregation_history[static_cast<std::size_t>(t - 1)];
  std::vector<Job> jobs;
  jobs.reserve(sets.size());
  for (const auto& set : sets) {
    std::vector<std::string> candidates;
    candidates.reserve(set.member_indices.size());
    for (int m : set.member_indices) candidates.push_back(current.members[static_cast<std::size_t>(m)].text);
    jobs.push_back({build_aggregation_prompt(state.task, candidates, options.prompt),
                    step_label(t + 1, static_cast<std::size_t>(set.target_index)), set.member_indices});
  }
  append_population(state, t + 1, generate_all(state, t + 1, std::move(jobs), client, options));
  return state.populations.back();
}

RunState run_rsa(const TaskSpec& task, const RunConfig& config, GenerationClient& client,
                 const EngineOptions& options, const std::string& stream_prefix) {
  RunState state = make_run_state(task, config, stream_prefix);
  EngineOptions opts = options;
  if (state.config.prompt_char_budget != 0 && opts.prompt.char_budget == 0) {
    opts.prompt.char_budget = state.config.prompt_char_budget;
  }
  initialize_population(state, client, opts);
  for (int t = 1; t < state.config.t; ++t) {
    subsample_sets(state, t);
    aggregate_step(state, t, client, opts);
  }
  return state;
}

std::vector<VoteCount> tally_votes(const Population& population, TaskKind kind) {
  std::vector<VoteCount> votes;
  for (std::size_t i = 0; i < population.members.size(); ++i) {
    const auto& answer = population.members[i].answer;
    if (!answer) continue;
    const std::string norm = normalize_answer(*answer, kind);
    auto it = std::find_if(votes.begin(), votes.end(), [&](const VoteCount& v) { return v.answer == norm; });
    if (it == votes.end()) {
      votes.push_back({norm, 1, i});
    } else {
      ++it->count;
    }
  }
  return votes;
}

std::size_t select_final_index(const Population& population, FinalSelection mode, SeededRng& rng, TaskKind kind) {
  if (population.members.empty()) throw std::logic_error("select_final: empty population");
  if (mode == FinalSelection::majority) {
    const auto votes = tally_votes(population, kind);
    if (!votes.empty()) {
      const VoteCount* best = &votes.front();
      for (const auto& v : votes) {
        if (v.count > best->count) best = &v;
      }
      return best->first_index;
    }
  }
  return static_cast<std::size_t>(rng.uniform_below(population.members.size()));
}

const Trajectory& select_final(const Population& population, FinalSelection mode, SeededRng& rng, TaskKind kind) {
  return population.members[select_final_index(population, mode, rng, kind)];
}

RunState run_self_refinement(const TaskSpec& task, const RunConfig& config, GenerationClient& client,
                             const EngineOptions& options, const std::string& stream_prefix) {
  RunConfig cfg = config;
  cfg.n = 1;
  cfg.k = 1;
  return run_rsa(task, cfg, client, options, stream_prefix);
}

RunState run_single_aggregation(const TaskSpec& task, const RunConfig& config, GenerationClient& client,
                                const EngineOptions& options, const std::string& stream_prefix) {
  RunConfig cfg = config;
  cfg.t = cfg.t1_semantics == T1Semantics::init_plus_one_agg ? 2 : 1;
  return run_rsa(task, cfg, client, options, stream_prefix);
}

namespace {

RunState base_batch(const TaskSpec& task, const RunConfig& config, GenerationClient& client,
                    const EngineOptions& options, const std::string& stream_prefix) {
  config.validate();
  RunConfig cfg = config;
  cfg.n = config.n * config.t;
  cfg.k = 1;
  cfg.t = 1;
  RunState state = make_run_state(task, cfg, stream_prefix);
  initialize_population(state, client, options);
  return state;
}

}  // namespace

MajorityResult run_majority_voting(const TaskSpec& task, const RunConfig& config, GenerationClient& client,
                                   const EngineOptions& options, const std::string& stream_prefix) {
  MajorityResult result;
  result.batch = base_batch(task, config, client, options, stream_prefix);
  const Population& pop = result.batch.populations.front();
  result.votes = tally_votes(pop, task.kind);
  if (result.votes.empty()) return result;
  const VoteCount* best = &result.votes.front();
  for (const auto& v : result.votes) {
    if (v.count > best->count) best = &v;
  }
  result.answer = best->answer;
  result.reward = pop.members[best->first_index].reward.value_or(0.0);
  return result;
}

RejectionResult run_rejection_sampling(const TaskSpec& task, const RunConfig& config, GenerationClient& client,
                                       const EngineOptions& options, const std::string& stream_prefix) {
  RejectionResult result;
  result.batch = base_batch(task, config, client, options, stream_prefix);
  RunState& state = result.batch;
  const auto& members = state.populations.front().members;
  result.accepted.assign(members.size(), false);
  const SamplingParams base = sampling_for(state.config);
  std::vector<char> verdicts(members.size(), 0);
  try {
    detail::parallel_for(members.size(), state.config.concurrency, [&](std::size_t i) {
      const std::string label = "verify/i=" + std::to_string(i);
      SamplingParams params = base;
      params.request_seed = request_seed_for(state, label);
      const Generation g =
          client.generate(build_verification_prompt(task, members[i].text), params, state.stream_prefix + label);
      verdicts[i] = parse_verdict(g.text) ? 1 : 0;
    });
  } catch (const GenerationError& e) {
    state.aborted = true;
    state.abort_reason = e.what();
    throw RunAborted(e.what(), state, e.status());
  }
  result.verification_calls = static_cast<std::int64_t>(members.size());
  double accepted_sum = 0.0;
  double all_sum = 0.0;
  std::size_t accepted_count = 0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    result.accepted[i] = verdicts[i] != 0;
    const double r = members[i].reward.value_or(0.0);
    all_sum += r;
    if (result.accepted[i]) {
      accepted_sum += r;
      ++accepted_count;
    }
  }
  if (accepted_count == 0) {
    result.fell_back = true;
    result.mean_score = all_sum / static_cast<double>(members.size());
  } else {
    result.mean_score = accepted_sum / static_cast<double>(accepted_count);
  }
  return result;
}

}  // namespace rsa
