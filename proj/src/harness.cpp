#include "rsa/harness.hpp"

#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include "rsa/log.hpp"
#include "rsa/prompt.hpp"

namespace rsa {
namespace {

using ojson = nlohmann::ordered_json;

ojson config_json(const RunConfig& c) {
  return ojson{{"n", c.n},
               {"k", c.k},
               {"t", c.t},
               {"temperature", c.temperature},
               {"top_p", c.top_p},
               {"min_p", c.min_p},
               {"max_tokens", c.max_tokens},
               {"model", c.model},
               {"final_selection", std::string(to_string(c.final_selection))},
               {"t1_semantics", std::string(to_string(c.t1_semantics))},
               {"prompt_char_budget", c.prompt_char_budget}};
}

std::vector<std::uint64_t> seeds_of(const ExperimentSpec& spec) {
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < spec.num_seeds; ++i) seeds.push_back(spec.config.seed + static_cast<std::uint64_t>(i));
  return seeds;
}

struct JobResult {
  bool ran = false;
  RunState state;
  FinalPick pick;
};

FinalPick pick_from_population(const RunState& s) {
  FinalPick pick{s.config.seed, s.task.id, std::nullopt, std::nullopt, 0.0, ojson::object()};
  if (s.populations.empty()) return pick;
  const Population& last = s.populations.back();
  SeededRng rng = derive_rng(s.config.seed, s.stream_prefix + "final");
  const std::size_t idx = select_final_index(last, s.config.final_selection, rng, s.task.kind);
  pick.member_index = idx;
  pick.answer = last.members[idx].answer;
  pick.reward = last.members[idx].reward.value_or(0.0);
  return pick;
}

JobResult run_job(const ExperimentSpec& spec, const TaskSpec& task, std::uint64_t seed, GenerationClient& client) {
  RunConfig cfg = spec.config;
  cfg.seed = seed;
  const std::string prefix = stream_prefix_for(task, cfg);
  JobResult r;
  r.ran = true;
  switch (spec.method) {
    case Method::rsa:
      r.state = run_rsa(task, cfg, client, {}, prefix);
      r.pick = pick_from_population(r.state);
      break;
    case Method::refine:
      r.state = run_self_refinement(task, cfg, client, {}, prefix);
      r.pick = pick_from_population(r.state);
      break;
    case Method::agg1:
      r.state = run_single_aggregation(task, cfg, client, {}, prefix);
      r.pick = pick_from_population(r.state);
      break;
    case Method::majority: {
      MajorityResult m = run_majority_voting(task, cfg, client, {}, prefix);
      r.state = std::move(m.batch);
      r.pick = {seed, task.id, std::nullopt, m.answer, m.reward, ojson::object()};
      ojson votes = ojson::array();
      for (const auto& v : m.votes) votes.push_back({{"answer", v.answer}, {"count", v.count}});
      r.pick.extra["votes"] = std::move(votes);
      r.pick.extra["abstained"] = !m.answer.has_value();
      break;
    }
    case Method::rejection: {
      RejectionResult rej = run_rejection_sampling(task, cfg, client, {}, prefix);
      r.state = std::move(rej.batch);
      r.pick = {seed, task.id, std::nullopt, std::nullopt, rej.mean_score, ojson::object()};
      int accepted = 0;
      for (bool a : rej.accepted) accepted += a ? 1 : 0;
      r.pick.extra["accepted"] = accepted;
      r.pick.extra["fell_back"] = rej.fell_back;
      r.pick.extra["verification_calls"] = rej.verification_calls;
      break;
    }
  }
  return r;
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << content;
}

std::string series_name_of(const std::string& record_run_id) {
  const auto pos = record_run_id.rfind("-s");
  return pos == std::string::npos ? record_run_id : record_run_id.substr(0, pos);
}

std::set<std::string> existing_ids(const std::filesystem::path& out) {
  std::set<std::string> ids;
  if (!std::filesystem::exists(out)) return ids;
  std::string content;
  {
    std::ifstream in(out, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    content = ss.str();
  }
  // Keep every complete, parseable line; a torn trailing line is dropped.
  std::size_t good_end = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    const std::size_t nl = content.find('\n', pos);
    if (nl == std::string::npos) break;
    const std::string line = content.substr(pos, nl - pos);
    if (!strip_whitespace(line).empty()) {
      try {
        ids.insert(nlohmann::json::parse(line).at("id").get<std::string>());
      } catch (const std::exception&) {
        break;
      }
    }
    good_end = nl + 1;
    pos = nl + 1;
  }
  if (good_end < content.size()) {
    log(LogLevel::warn, "dropping incomplete trailing data in " + out.string());
    std::filesystem::resize_file(out, good_end);
  }
  return ids;
}

}  // namespace

std::string_view to_string(Method method) {
  switch (method) {
    case Method::rsa: return "rsa";
    case Method::refine: return "refine";
    case Method::majority: return "majority";
    case Method::rejection: return "rejection";
    case Method::agg1: return "agg1";
  }
  return "rsa";
}

Method parse_method(std::string_view text) {
  if (text == "rsa") return Method::rsa;
  if (text == "refine") return Method::refine;
  if (text == "majority") return Method::majority;
  if (text == "rejection") return Method::rejection;
  if (text == "agg1") return Method::agg1;
  throw ConfigError("unknown method '" + std::string(text) + "'");
}

void ExperimentSpec::validate() const {
  config.validate();
  if (num_seeds < 1) throw ConfigError("seeds must be >= 1");
  if (task_concurrency < 1) throw ConfigError("task concurrency must be >= 1");
  if (tasks.empty()) throw ConfigError("dataset has no tasks");
  for (const auto& t : tasks) {
    if (strip_whitespace(t.gold).empty()) throw ConfigError("task '" + t.id + "' has no gold answer");
  }
}

std::string stream_prefix_for(const TaskSpec& task, const RunConfig& config) {
  return "task=" + task.id + "/n=" + std::to_string(config.n) + "/k=" + std::to_string(config.k) +
         "/t=" + std::to_string(config.t) + "/seed=" + std::to_string(config.seed) + "/";
}

ojson hashed_payload(const ExperimentSpec& spec) {
  ojson tasks = ojson::array();
  for (const auto& t : spec.tasks) tasks.push_back(to_json(t));
  return ojson{{"method", std::string(to_string(spec.method))},
               {"config", config_json(spec.config)},
               {"seeds", seeds_of(spec)},
               {"tasks", std::move(tasks)}};
}

std::string content_hash(const ExperimentSpec& spec) { return git_blob_sha1(hashed_payload(spec).dump()); }

std::string default_run_id(const ExperimentSpec& spec) {
  return std::string(to_string(spec.method)) + "-" + content_hash(spec).substr(0, 12);
}

ExperimentOutcome run_experiment(const ExperimentSpec& spec, GenerationClient& client, EmbeddingClient* embedder,
                                 const std::filesystem::path& out_root, const std::optional<std::string>& run_id) {
  spec.validate();
  ExperimentOutcome outcome;
  outcome.run_id = run_id.value_or(default_run_id(spec));
  outcome.dir = out_root / outcome.run_id;

  const auto seeds = seeds_of(spec);
  const std::size_t jobs = seeds.size() * spec.tasks.size();
  std::vector<JobResult> results(jobs);
  std::atomic<bool> stop{false};
  std::mutex abort_mutex;
  detail::parallel_for(jobs, spec.task_concurrency, [&](std::size_t j) {
    if (stop.load()) return;
    const std::uint64_t seed = seeds[j / spec.tasks.size()];
    const TaskSpec& task = spec.tasks[j % spec.tasks.size()];
    try {
      results[j] = run_job(spec, task, seed, client);
    } catch (const RunAborted& e) {
      stop.store(true);
      results[j].ran = true;
      results[j].state = e.partial();
      std::lock_guard<std::mutex> lock(abort_mutex);
      if (outcome.abort_reason.empty()) outcome.abort_reason = e.what();
    }
  });

  for (auto& r : results) {
    if (!r.ran) {
      outcome.partial = true;
      continue;
    }
    if (r.state.aborted) {
      outcome.partial = true;
    } else {
      outcome.finals.push_back(std::move(r.pick));
    }
    outcome.generations += r.state.budget_used;
    outcome.states.push_back(std::move(r.state));
  }

  std::filesystem::create_directories(outcome.dir);
  {
    std::ofstream steps(outcome.dir / "steps.jsonl", std::ios::binary);
    std::ofstream timings(outcome.dir / "timings.jsonl", std::ios::binary);
    for (const auto& s : outcome.states) {
      const std::string rid = outcome.run_id + "-s" + std::to_string(s.config.seed);
      for (const auto& rec : records_for(s, rid)) write_jsonl_line(steps, to_json(rec));
      for (const auto& pop : s.populations) {
        for (std::size_t i = 0; i < pop.members.size(); ++i) {
          write_jsonl_line(timings, ojson{{"run_id", rid},
                                          {"task_id", s.task.id},
                                          {"step", pop.step},
                                          {"member_index", i},
                                          {"started_ms", pop.members[i].started_ms},
                                          {"finished_ms", pop.members[i].finished_ms}});
        }
      }
    }
  }
  {
    std::ofstream finals(outcome.dir / "final.jsonl", std::ios::binary);
    for (const auto& f : outcome.finals) {
      ojson j{{"seed", f.seed},
              {"task_id", f.task_id},
              {"member_index", f.member_index ? ojson(*f.member_index) : ojson(nullptr)},
              {"answer", f.answer ? ojson(*f.answer) : ojson(nullptr)},
              {"reward", f.reward}};
      for (const auto& [key, value] : f.extra.items()) j[key] = value;
      write_jsonl_line(finals, j);
    }
  }

  outcome.metrics = metrics_from_states(outcome.states, embedder);
  outcome.metrics.partial = outcome.metrics.partial || outcome.partial;
  outcome.partial = outcome.metrics.partial;
  write_metrics(outcome.dir, outcome.metrics, outcome.run_id);

  ojson config = config_json(spec.config);
  config["endpoint"] = spec.config.endpoint;
  config["concurrency"] = spec.config.concurrency;
  config["task_concurrency"] = spec.task_concurrency;
  config["seed"] = spec.config.seed;
  config["num_seeds"] = spec.num_seeds;
  ojson manifest{{"run_id", outcome.run_id},
                 {"method", std::string(to_string(spec.method))},
                 {"content_hash", content_hash(spec)},
                 {"partial", outcome.partial},
                 {"abort_reason", outcome.abort_reason.empty() ? ojson(nullptr) : ojson(outcome.abort_reason)},
                 {"config", std::move(config)},
                 {"seeds", seeds},
                 {"dataset", {{"path", spec.dataset_path}, {"sha1", spec.dataset_sha1}, {"tasks", spec.tasks.size()}}},
                 {"generations", outcome.generations},
                 {"expected_generations",
                  static_cast<std::int64_t>(spec.config.n) * spec.config.t * static_cast<std::int64_t>(jobs)}};
  if (spec.method == Method::refine) manifest["expected_generations"] = static_cast<std::int64_t>(spec.config.t) * jobs;
  if (spec.method == Method::agg1) {
    const int steps = spec.config.t1_semantics == T1Semantics::init_plus_one_agg ? 2 : 1;
    manifest["expected_generations"] = static_cast<std::int64_t>(spec.config.n) * steps * jobs;
  }
  write_text(outcome.dir / "manifest.json", manifest.dump(2) + "\n");
  return outcome;
}

RlDatasetResult build_rl_dataset(std::span<const TaskSpec> tasks, const RlDatasetOptions& options,
                                 GenerationClient& client, const std::filesystem::path& out) {
  if (options.k < 1) throw ConfigError("k must be >= 1");
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  const std::set<std::string> done = existing_ids(out);
  std::ofstream file(out, std::ios::binary | std::ios::app);
  if (!file) throw ConfigError("cannot open '" + out.string() + "' for writing");

  RlDatasetResult result;
  for (const auto& task : tasks) {
    const std::string std_id = task.id + "/standard";
    const std::string agg_id = task.id + "/aggregation";
    const bool need_std = !done.contains(std_id);
    const bool need_agg = !done.contains(agg_id);
    if (!need_std && !need_agg) {
      ++result.skipped;
      continue;
    }
    std::string lines;
    if (need_std) {
      lines += ojson{{"id", std_id},
                     {"type", "standard"},
                     {"task_id", task.id},
                     {"kind", std::string(to_string(task.kind))},
                     {"prompt", build_prompt(task, std::nullopt)},
                     {"gold", task.gold}}
                   .dump() +
               "\n";
    }
    if (need_agg) {
      RunConfig cfg = options.sampling;
      cfg.n = options.k;
      cfg.k = options.k;
      cfg.t = 1;
      cfg.seed = options.seed;
      RunState state =
          make_run_state(task, cfg, "rl/task=" + task.id + "/k=" + std::to_string(options.k) + "/seed=" +
                                        std::to_string(options.seed) + "/");
      try {
        initialize_population(state, client);
      } catch (const RunAborted& e) {
        file << lines;
        file.flush();
        result.written += need_std ? 1 : 0;
        result.aborted = true;
        result.abort_reason = e.what();
        return result;
      }
      std::vector<std::string> candidates;
      for (const auto& m : state.populations.back().members) candidates.push_back(m.text);
      lines += ojson{{"id", agg_id},
                     {"type", "aggregation"},
                     {"task_id", task.id},
                     {"kind", std::string(to_string(task.kind))},
                     {"prompt", build_aggregation_prompt(task, candidates)},
                     {"gold", task.gold},
                     {"k", options.k}}
                   .dump() +
               "\n";
    }
    file << lines;
    file.flush();
    result.written += (need_std ? 1 : 0) + (need_agg ? 1 : 0);
  }
  return result;
}

MetricsBundle replay_metrics(const std::filesystem::path& input, const std::filesystem::path& out_dir,
                             EmbeddingClient* embedder) {
  const std::filesystem::path steps_path =
      std::filesystem::is_directory(input) ? input / "steps.jsonl" : input;
  const std::vector<StepRecord> records = read_step_records(steps_path);
  if (records.empty()) throw ConfigError("no step records in '" + steps_path.string() + "'");

  std::string series = series_name_of(records.front().run_id);
  std::optional<bool> partial;
  const auto manifest_path = steps_path.parent_path() / "manifest.json";
  if (std::filesystem::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    const auto manifest = nlohmann::json::parse(in);
    partial = manifest.at("partial").get<bool>();
    series = manifest.at("run_id").get<std::string>();
  }
  MetricsBundle bundle = metrics_from_records(records, partial.value_or(false), embedder);
  if (!partial) {
    // Without a manifest, uneven step counts or population sizes mark a
    // truncated run.
    std::size_t max_steps = 0;
    for (const auto& s : bundle.series) max_steps = std::max(max_steps, s.steps.size());
    for (const auto& run : group_records(records)) {
      if (run.populations.size() != max_steps) bundle.partial = true;
      for (const auto& p : run.populations) {
        if (p.members.size() != run.populations.front().members.size()) bundle.partial = true;
      }
    }
  }
  write_metrics(out_dir, bundle, series);
  return bundle;
}

}  // namespace rsa
