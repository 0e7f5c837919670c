#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "rsa/harness.hpp"
#include "rsa/log.hpp"
#include "rsa/mock.hpp"
#include "rsa/plotdata.hpp"
#include "rsa/prompt.hpp"

namespace rsa {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitEndpoint = 3;

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

struct CommonFlags {
  std::string dataset;
  std::string kind;
  int n = 16;
  int k = 4;
  int t = 10;
  std::uint64_t seed = 0;
  int seeds = 1;
  std::string endpoint = "http://127.0.0.1:8000/v1";
  std::string model = "default";
  std::string api_key_env = "OPENAI_API_KEY";
  std::string embed_endpoint;
  std::string embed_model = "default";
  double temperature = 1.0;
  double top_p = 1.0;
  double min_p = 0.0;
  int max_tokens = 8192;
  int concurrency = 1;
  int task_concurrency = 1;
  int max_retries = 3;
  double timeout = 600.0;
  std::string final_selection = "uniform";
  std::string t1_semantics = "init_plus_one_agg";
  std::size_t prompt_budget = 0;
  std::string out = "runs";
  std::string run_id;
};

void add_endpoint_flags(CLI::App* app, CommonFlags& f) {
  app->add_option("--endpoint", f.endpoint, "OpenAI-compatible base URL")->capture_default_str();
  app->add_option("--model", f.model, "Model name")->capture_default_str();
  app->add_option("--api-key-env", f.api_key_env, "Environment variable holding the API key")->capture_default_str();
  app->add_option("--temperature", f.temperature)->capture_default_str();
  app->add_option("--top-p", f.top_p)->capture_default_str();
  app->add_option("--min-p", f.min_p)->capture_default_str();
  app->add_option("--max-tokens", f.max_tokens)->capture_default_str();
  app->add_option("--concurrency", f.concurrency, "Requests in flight per task")->capture_default_str();
  app->add_option("--max-retries", f.max_retries)->capture_default_str();
  app->add_option("--timeout", f.timeout, "Request timeout in seconds")->capture_default_str();
}

void add_run_flags(CLI::App* app, CommonFlags& f, bool with_grid_sizes) {
  app->add_option("--config", "TOML/INI file with the same keys as the flags");
  app->add_option("--dataset", f.dataset, "JSONL dataset of {id, kind, query, gold}")->required();
  app->add_option("--kind", f.kind, "Override the task kind of every record");
  if (with_grid_sizes) {
    app->add_option("--n", f.n, "Population size")->capture_default_str();
    app->add_option("--k", f.k, "Aggregation set size")->capture_default_str();
    app->add_option("--t", f.t, "Steps")->capture_default_str();
  }
  app->add_option("--seed", f.seed, "Base seed")->capture_default_str();
  app->add_option("--seeds", f.seeds, "Number of seeds (base + i)")->capture_default_str();
  app->add_option("--task-concurrency", f.task_concurrency, "Tasks in flight")->capture_default_str();
  app->add_option("--final-selection", f.final_selection, "uniform or majority")->capture_default_str();
  app->add_option("--t1-semantics", f.t1_semantics, "init_only or init_plus_one_agg")->capture_default_str();
  app->add_option("--prompt-budget", f.prompt_budget, "Aggregation prompt character budget, 0 = off");
  app->add_option("--embed-endpoint", f.embed_endpoint, "Embedding endpoint for diversity");
  app->add_option("--embed-model", f.embed_model)->capture_default_str();
  app->add_option("--out", f.out, "Output root")->capture_default_str();
  app->add_option("--run-id", f.run_id, "Override the derived run id");
  add_endpoint_flags(app, f);
}

std::optional<std::string> api_key(const CommonFlags& f) {
  if (f.api_key_env.empty()) return std::nullopt;
  const char* v = std::getenv(f.api_key_env.c_str());
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

EndpointConfig endpoint_config(const CommonFlags& f, const std::string& url) {
  EndpointConfig cfg;
  cfg.base_url = url;
  cfg.api_key = api_key(f);
  cfg.model = f.model;
  cfg.embedding_model = f.embed_model;
  cfg.timeout_s = f.timeout;
  cfg.max_retries = f.max_retries;
  cfg.validate();
  return cfg;
}

std::string file_sha1(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return git_blob_sha1(ss.str());
}

std::vector<TaskSpec> load_tasks(const CommonFlags& f) {
  auto tasks = load_dataset(f.dataset);
  if (!f.kind.empty()) {
    const TaskKind kind = parse_task_kind(f.kind);
    for (auto& t : tasks) t.kind = kind;
  }
  return tasks;
}

ExperimentSpec make_spec(const CommonFlags& f, Method method) {
  ExperimentSpec spec;
  spec.method = method;
  spec.config.n = f.n;
  spec.config.k = f.k;
  spec.config.t = f.t;
  spec.config.temperature = f.temperature;
  spec.config.top_p = f.top_p;
  spec.config.min_p = f.min_p;
  spec.config.max_tokens = f.max_tokens;
  spec.config.endpoint = f.endpoint;
  spec.config.model = f.model;
  spec.config.concurrency = f.concurrency;
  spec.config.seed = f.seed;
  spec.config.final_selection = parse_final_selection(f.final_selection);
  spec.config.t1_semantics = parse_t1_semantics(f.t1_semantics);
  spec.config.prompt_char_budget = f.prompt_budget;
  spec.num_seeds = f.seeds;
  spec.task_concurrency = f.task_concurrency;
  spec.tasks = load_tasks(f);
  spec.dataset_path = f.dataset;
  spec.dataset_sha1 = file_sha1(f.dataset);
  return spec;
}

int execute(const CommonFlags& f, const ExperimentSpec& spec, const std::filesystem::path& out_root,
            std::optional<std::string> run_id, ExperimentOutcome* out = nullptr) {
  OpenAiClient client(endpoint_config(f, f.endpoint));
  std::unique_ptr<OpenAiClient> embedder;
  if (!f.embed_endpoint.empty()) embedder = std::make_unique<OpenAiClient>(endpoint_config(f, f.embed_endpoint));
  ExperimentOutcome outcome = run_experiment(spec, client, embedder.get(), out_root, run_id);
  std::cout << outcome.dir.string() << "\n";
  const bool aborted = !outcome.abort_reason.empty();
  if (aborted) std::cerr << "error: endpoint failure, partial artifacts written: " << outcome.abort_reason << "\n";
  if (out != nullptr) *out = std::move(outcome);
  return aborted ? kExitEndpoint : kExitOk;
}

int cmd_run(const CommonFlags& f, Method method) {
  const ExperimentSpec spec = make_spec(f, method);
  return execute(f, spec, f.out, f.run_id.empty() ? std::nullopt : std::optional<std::string>(f.run_id));
}

int cmd_sweep(const CommonFlags& f, std::vector<int> ns, std::vector<int> ks, std::vector<int> ts) {
  if (ns.empty()) ns = {f.n};
  if (ks.empty()) ks = {f.k};
  if (ts.empty()) ts = {f.t};
  ExperimentSpec base = make_spec(f, Method::rsa);
  struct Point {
    int n, k, t;
  };
  std::vector<Point> grid;
  for (int n : ns) {
    for (int k : ks) {
      for (int t : ts) {
        if (k > n || k < 1 || n < 1 || t < 1) {
          log(LogLevel::warn, "skipping grid point n=" + std::to_string(n) + " k=" + std::to_string(k) +
                                  " t=" + std::to_string(t));
          continue;
        }
        grid.push_back({n, k, t});
      }
    }
  }
  if (grid.empty()) throw ConfigError("sweep grid is empty");

  nlohmann::ordered_json id_payload = hashed_payload(base);
  id_payload["grid"] = nlohmann::ordered_json::array();
  for (const auto& p : grid) id_payload["grid"].push_back({p.n, p.k, p.t});
  const std::string sweep_id =
      f.run_id.empty() ? "sweep-" + git_blob_sha1(id_payload.dump()).substr(0, 12) : f.run_id;
  const std::filesystem::path root = std::filesystem::path(f.out) / sweep_id;
  std::filesystem::create_directories(root / "plotdata");

  std::ofstream csv(root / "sweep.csv", std::ios::binary);
  csv << "n,k,t,step,pass_at_1,pass_at_1_std,pass_at_n,pass_at_n_std,gap,gap_std,seeds,tasks\n";
  std::vector<PlotRow> rows;
  int code = kExitOk;
  for (const auto& p : grid) {
    ExperimentSpec spec = base;
    spec.config.n = p.n;
    spec.config.k = p.k;
    spec.config.t = p.t;
    const std::string point_id = "n" + std::to_string(p.n) + "-k" + std::to_string(p.k) + "-t" + std::to_string(p.t);
    ExperimentOutcome outcome;
    code = execute(f, spec, root, point_id, &outcome);
    for (const auto& c : outcome.metrics.curve) {
      csv << p.n << ',' << p.k << ',' << p.t << ',' << c.step << ',' << format_double(c.pass_at_1) << ','
          << format_double(c.pass_at_1_std) << ',' << format_double(c.pass_at_n) << ','
          << format_double(c.pass_at_n_std) << ',' << format_double(c.gap) << ',' << format_double(c.gap_std)
          << ',' << c.seeds << ',' << c.tasks << '\n';
      const double root_n = std::sqrt(static_cast<double>(std::max(1, c.seeds)));
      rows.push_back({point_id, c.step, c.pass_at_1, c.pass_at_n, c.gap, c.pass_at_1_std / root_n,
                      c.pass_at_n_std / root_n, c.gap_std / root_n});
    }
    if (code != kExitOk) break;
  }
  std::ofstream plot(root / "plotdata" / "sweep_vs_step.csv", std::ios::binary);
  write_plot_csv(plot, rows);
  std::cout << root.string() << "\n";
  return code;
}

int cmd_rl_dataset(const CommonFlags& f, const std::string& out) {
  const auto tasks = load_tasks(f);
  RlDatasetOptions opts;
  opts.k = f.k;
  opts.seed = f.seed;
  opts.sampling.temperature = f.temperature;
  opts.sampling.top_p = f.top_p;
  opts.sampling.min_p = f.min_p;
  opts.sampling.max_tokens = f.max_tokens;
  opts.sampling.concurrency = f.concurrency;
  opts.sampling.model = f.model;
  OpenAiClient client(endpoint_config(f, f.endpoint));
  const RlDatasetResult r = build_rl_dataset(tasks, opts, client, out);
  std::cout << "wrote " << r.written << " records, skipped " << r.skipped << " tasks\n";
  if (r.aborted) {
    std::cerr << "error: endpoint failure, rerun to resume: " << r.abort_reason << "\n";
    return kExitEndpoint;
  }
  return kExitOk;
}

int cmd_metrics(const CommonFlags& f, const std::string& input, std::string out) {
  std::filesystem::path in(input);
  if (!std::filesystem::exists(in)) throw ConfigError("no such file or directory '" + input + "'");
  if (out.empty()) {
    const auto dir = std::filesystem::is_directory(in) ? in : in.parent_path();
    out = (dir / "replay").string();
  }
  std::unique_ptr<OpenAiClient> embedder;
  if (!f.embed_endpoint.empty()) embedder = std::make_unique<OpenAiClient>(endpoint_config(f, f.embed_endpoint));
  const MetricsBundle b = replay_metrics(in, out, embedder.get());
  std::cout << out << (b.partial ? " (partial)" : "") << "\n";
  return kExitOk;
}

struct MockFlags {
  std::string host = "127.0.0.1";
  int port = 8000;
  std::uint64_t seed = 0;
  std::string behavior = "echo_hash";
  std::string fixture;
  std::string gold = "42";
  std::string dataset;
  int initial_correct = 1;
  double initial_correct_prob = -1.0;
  double epsilon = 0.0;
  int latency_ms = 0;
  int embedding_dim = 64;
  std::string port_file;
};

int cmd_mock_serve(const MockFlags& m) {
  MockWorldConfig cfg;
  cfg.seed = m.seed;
  cfg.behavior = parse_mock_behavior(m.behavior);
  cfg.gold = m.gold;
  cfg.initial_correct = m.initial_correct;
  if (m.initial_correct_prob >= 0.0) cfg.initial_correct_prob = m.initial_correct_prob;
  cfg.epsilon = m.epsilon;
  cfg.embedding_dim = m.embedding_dim;
  if (!m.fixture.empty()) cfg.script = load_script(m.fixture);
  if (!m.dataset.empty()) {
    for (const auto& t : load_dataset(m.dataset)) cfg.gold_by_query[strip_whitespace(t.query)] = t.gold;
  }
  MockServerOptions opts;
  opts.host = m.host;
  opts.port = m.port;
  opts.latency_ms = m.latency_ms;
  MockServer server(std::make_shared<MockWorld>(std::move(cfg)), opts);
  server.start();
  std::cout << server.base_url() << std::endl;
  if (!m.port_file.empty()) {
    std::ofstream pf(m.port_file);
    pf << server.port() << "\n";
  }
  g_stop.store(false);
  auto prev_int = std::signal(SIGINT, on_signal);
  auto prev_term = std::signal(SIGTERM, on_signal);
  while (!g_stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  std::signal(SIGINT, prev_int);
  std::signal(SIGTERM, prev_term);
  return kExitOk;
}

// Subcommand config files: every key becomes "--key value" unless the flag
// was given explicitly.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  auto it = std::find(args.begin(), args.end(), "--config");
  std::string path;
  if (it != args.end() && it + 1 != args.end()) {
    path = *(it + 1);
  } else {
    for (const auto& a : args) {
      if (a.rfind("--config=", 0) == 0) path = a.substr(9);
    }
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  const auto items = CLI::ConfigTOML().from_config(in);
  std::vector<std::string> extra;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--" || item.inputs.empty()) continue;
    const std::string flag = "--" + item.name;
    const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (given) continue;
    std::string value;
    for (std::size_t i = 0; i < item.inputs.size(); ++i) value += (i ? "," : "") + item.inputs[i];
    extra.push_back(flag);
    extra.push_back(value);
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Recursive self-aggregation runner"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  auto* run = app.add_subcommand("run", "Run RSA over a dataset");
  add_run_flags(run, run_flags, true);

  CommonFlags base_flags;
  std::string baseline_name;
  auto* baseline = app.add_subcommand("baseline", "Run a budget-matched baseline");
  baseline->add_option("name", baseline_name, "refine, majority, rejection or agg1")->required();
  add_run_flags(baseline, base_flags, true);

  CommonFlags sweep_flags;
  std::vector<int> ns, ks, ts;
  auto* sweep = app.add_subcommand("sweep", "Run RSA over a grid of N, K, T");
  add_run_flags(sweep, sweep_flags, true);
  sweep->add_option("--ns", ns, "Population sizes")->delimiter(',');
  sweep->add_option("--ks", ks, "Aggregation sizes")->delimiter(',');
  sweep->add_option("--ts", ts, "Step counts")->delimiter(',');

  CommonFlags rl_flags;
  std::string rl_out;
  auto* rl = app.add_subcommand("rl-dataset", "Build a mixed standard/aggregation prompt file");
  rl->add_option("--config", "TOML/INI file with the same keys as the flags");
  rl->add_option("--dataset", rl_flags.dataset)->required();
  rl->add_option("--kind", rl_flags.kind);
  rl->add_option("--k", rl_flags.k, "Candidates per aggregation prompt")->capture_default_str();
  rl->add_option("--seed", rl_flags.seed)->capture_default_str();
  rl->add_option("--out", rl_out, "Output JSONL")->required();
  add_endpoint_flags(rl, rl_flags);

  CommonFlags metrics_flags;
  std::string metrics_in, metrics_out;
  auto* metrics = app.add_subcommand("metrics", "Recompute metrics from persisted step records");
  metrics->add_option("input", metrics_in, "Run directory or steps.jsonl")->required();
  metrics->add_option("--out", metrics_out, "Output directory (default <run>/replay)");
  metrics->add_option("--embed-endpoint", metrics_flags.embed_endpoint);
  metrics->add_option("--embed-model", metrics_flags.embed_model);
  metrics->add_option("--api-key-env", metrics_flags.api_key_env);

  MockFlags mock_flags;
  auto* mock = app.add_subcommand("mock-serve", "Serve the deterministic mock endpoint");
  mock->add_option("--config", "TOML/INI file with the same keys as the flags");
  mock->add_option("--host", mock_flags.host)->capture_default_str();
  mock->add_option("--port", mock_flags.port, "0 picks a free port")->capture_default_str();
  mock->add_option("--seed", mock_flags.seed)->capture_default_str();
  mock->add_option("--behavior", mock_flags.behavior, "echo_hash, scripted or any_correct_world")
      ->capture_default_str();
  mock->add_option("--fixture", mock_flags.fixture, "Scripted replies (JSONL)");
  mock->add_option("--gold", mock_flags.gold, "Default gold answer")->capture_default_str();
  mock->add_option("--dataset", mock_flags.dataset, "Per-query gold answers");
  mock->add_option("--initial-correct", mock_flags.initial_correct)->capture_default_str();
  mock->add_option("--initial-correct-prob", mock_flags.initial_correct_prob);
  mock->add_option("--epsilon", mock_flags.epsilon)->capture_default_str();
  mock->add_option("--latency-ms", mock_flags.latency_ms)->capture_default_str();
  mock->add_option("--embedding-dim", mock_flags.embedding_dim)->capture_default_str();
  mock->add_option("--port-file", mock_flags.port_file, "Write the bound port here");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*run) return cmd_run(run_flags, Method::rsa);
    if (*baseline) {
      const Method m = parse_method(baseline_name);
      if (m == Method::rsa) throw ConfigError("'rsa' is not a baseline; use the run command");
      return cmd_run(base_flags, m);
    }
    if (*sweep) return cmd_sweep(sweep_flags, ns, ks, ts);
    if (*rl) return cmd_rl_dataset(rl_flags, rl_out);
    if (*metrics) return cmd_metrics(metrics_flags, metrics_in, metrics_out);
    if (*mock) return cmd_mock_serve(mock_flags);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const GenerationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitEndpoint;
  }
  return kExitUsage;
}

}  // namespace rsa
