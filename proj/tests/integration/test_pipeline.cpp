#include <doctest.h>

#include <sstream>

#include "rsa/harness.hpp"
#include "rsa/metrics.hpp"
#include "rsa/mock.hpp"
#include "test_util.hpp"

using namespace rsa;
using rsa::testing::read_file;
using rsa::testing::TempDir;

namespace {

std::vector<TaskSpec> tasks(int n) {
  std::istringstream in(rsa::testing::dataset_jsonl(n));
  return parse_dataset(in, "mem");
}

EndpointConfig endpoint_for(const MockServer& s) {
  EndpointConfig c;
  c.base_url = s.base_url();
  c.model = "mock";
  c.backoff_initial_s = 0.005;
  return c;
}

}  // namespace

TEST_CASE("HTTP runs are byte-identical across concurrency caps") {
  MockWorldConfig w;
  w.behavior = MockBehavior::any_correct_world;
  w.initial_correct = 2;
  w.epsilon = 0.1;
  auto world = std::make_shared<MockWorld>(w);
  MockServerOptions opts;
  opts.latency_ms = 1;
  MockServer server(world, opts);
  server.start();

  TempDir dir;
  auto run_with = [&](int concurrency, int task_concurrency, const std::string& sub) {
    ExperimentSpec spec;
    spec.tasks = tasks(3);
    spec.config.n = 6;
    spec.config.k = 3;
    spec.config.t = 4;
    spec.config.concurrency = concurrency;
    spec.task_concurrency = task_concurrency;
    spec.num_seeds = 2;
    OpenAiClient client(endpoint_for(server));
    return run_experiment(spec, client, nullptr, dir / sub);
  };
  const auto a = run_with(1, 1, "a");
  const auto b = run_with(8, 3, "b");
  CHECK(a.run_id == b.run_id);
  CHECK(read_file(a.dir / "steps.jsonl") == read_file(b.dir / "steps.jsonl"));
  CHECK(read_file(a.dir / "metrics.json") == read_file(b.dir / "metrics.json"));
  CHECK(read_file(a.dir / "final.jsonl") == read_file(b.dir / "final.jsonl"));
  CHECK(server.chat_replies() == 2 * 3 * 6 * 4 * 2);
}

TEST_CASE("task concurrency multiplies the client cap") {
  auto world = std::make_shared<MockWorld>(MockWorldConfig{});
  MockServerOptions opts;
  opts.latency_ms = 30;
  MockServer server(world, opts);
  server.start();
  ExperimentSpec spec;
  spec.tasks = tasks(4);
  spec.config.n = 4;
  spec.config.k = 2;
  spec.config.t = 1;
  spec.config.concurrency = 2;
  spec.task_concurrency = 2;
  TempDir dir;
  OpenAiClient client(endpoint_for(server));
  run_experiment(spec, client, nullptr, dir.path());
  CHECK(server.peak_in_flight() <= 4);
  CHECK(server.peak_in_flight() >= 3);
}

TEST_CASE("diversity through the HTTP embedding route") {
  auto world = std::make_shared<MockWorld>(MockWorldConfig{.behavior = MockBehavior::any_correct_world});
  MockServer server(world);
  server.start();
  ExperimentSpec spec;
  spec.tasks = tasks(1);
  spec.config.n = 4;
  spec.config.k = 4;
  spec.config.t = 3;
  TempDir dir;
  OpenAiClient client(endpoint_for(server));
  const auto out = run_experiment(spec, client, &client, dir.path());
  CHECK(server.embedding_requests() == 3);
  const auto& steps = out.metrics.series.at(0).steps;
  for (const auto& s : steps) REQUIRE(s.diversity.has_value());
  CHECK(*steps[0].diversity > 0.0);
  replay_metrics(out.dir, dir / "replay", &client);
  CHECK(read_file(out.dir / "metrics.json") == read_file(dir / "replay" / "metrics.json"));
}

TEST_CASE("scripted fixture drives a majority baseline over HTTP") {
  MockWorldConfig w;
  w.behavior = MockBehavior::scripted;
  for (int i = 0; i < 160; ++i) {
    w.script.push_back({"*", "candidate " + std::to_string(i) + " \\boxed{" + std::to_string(i % 3 == 0 ? 7 : 8) + "}",
                        FinishReason::stop});
  }
  auto world = std::make_shared<MockWorld>(w);
  MockServer server(world);
  server.start();
  ExperimentSpec spec;
  spec.method = Method::majority;
  spec.tasks = {{"q", TaskKind::math, "Q", "8"}};
  spec.config.n = 16;
  spec.config.t = 10;
  spec.config.concurrency = 8;
  TempDir dir;
  OpenAiClient client(endpoint_for(server));
  const auto out = run_experiment(spec, client, nullptr, dir.path());
  CHECK(world->script_consumed() == 160);
  CHECK(world->script_remaining() == 0);
  REQUIRE(out.finals.size() == 1);
  CHECK(out.finals[0].answer == std::optional<std::string>("8"));
  CHECK(out.finals[0].reward == 1.0);
}

TEST_CASE("exact-hash fixtures replay a recorded run") {
  // Record prompts and seeds from an echo run, then serve the same text via
  // request_hash keys and check the run reproduces.
  auto echo = std::make_shared<MockWorld>(MockWorldConfig{});
  MockClient recorder(echo);
  RunConfig cfg;
  cfg.n = 3;
  cfg.k = 2;
  cfg.t = 3;
  const TaskSpec task{"q", TaskKind::math, "Q", "1"};
  const RunState original = run_rsa(task, cfg, recorder);

  MockWorldConfig w;
  w.behavior = MockBehavior::scripted;
  for (std::size_t t = 0; t < original.populations.size(); ++t) {
    for (std::size_t i = 0; i < original.populations[t].members.size(); ++i) {
      // Reconstruct each request the engine sent.
      const auto& m = original.populations[t].members[i];
      std::string prompt = task.query;
      if (t > 0) {
        std::vector<std::string> cands;
        for (int p : m.parents) cands.push_back(original.populations[t - 1].members[p].text);
        prompt = build_aggregation_prompt(task, cands);
      }
      const auto seed = request_seed_for(original, "gen/t=" + std::to_string(t + 1) + "/i=" + std::to_string(i));
      w.script.push_back({mock_request_hash(prompt, seed), m.text, FinishReason::stop});
    }
  }
  std::reverse(w.script.begin(), w.script.end());
  auto world = std::make_shared<MockWorld>(w);
  MockServer server(world);
  server.start();
  OpenAiClient client(endpoint_for(server));
  cfg.concurrency = 3;
  const RunState replayed = run_rsa(task, cfg, client);
  CHECK(world->script_consumed() == 9);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t i = 0; i < 3; ++i) CHECK(replayed.populations[t].members[i].text == original.populations[t].members[i].text);
  }
}
