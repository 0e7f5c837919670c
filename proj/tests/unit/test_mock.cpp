#include <doctest.h>

#include <cmath>

#include "rsa/mock.hpp"
#include "rsa/prompt.hpp"
#include "test_util.hpp"

using namespace rsa;

namespace {

// Independent restatement of the documented echo digest.
std::uint64_t echo_digest(std::uint64_t world_seed, const std::string& prompt, std::optional<std::int64_t> seed) {
  const std::string key = prompt + '\x1f' + (seed ? std::to_string(*seed) : std::string("none"));
  return mix64(stable_hash64(key) ^ mix64(world_seed + 0x51ED270B27A1D5F3ULL));
}

// Independent restatement of the trigram feature-hash embedding.
std::vector<double> oracle_embedding(std::uint64_t world_seed, const std::string& text, int dim) {
  std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
  v.back() = 1.0;
  const std::uint64_t salt = mix64(world_seed ^ 0xA24BAED4963EE407ULL);
  std::vector<std::string> grams;
  if (text.size() < 3) {
    if (!text.empty()) grams.push_back(text);
  } else {
    for (std::size_t i = 0; i + 3 <= text.size(); ++i) grams.push_back(text.substr(i, 3));
  }
  for (const auto& g : grams) {
    const std::uint64_t h = mix64(stable_hash64(g) ^ salt);
    v[h % static_cast<std::uint64_t>(dim - 1)] += (h >> 63) ? 1.0 : -1.0;
  }
  return v;
}

MockWorldConfig any_correct(int initial = 1, double eps = 0.0) {
  MockWorldConfig c;
  c.behavior = MockBehavior::any_correct_world;
  c.gold = "42";
  c.initial_correct = initial;
  c.epsilon = eps;
  return c;
}

}  // namespace

TEST_CASE("behavior names") {
  CHECK(parse_mock_behavior("scripted") == MockBehavior::scripted);
  CHECK(to_string(MockBehavior::any_correct_world) == "any_correct_world");
  CHECK_THROWS_AS(parse_mock_behavior("random"), std::invalid_argument);
}

TEST_CASE("echo_hash replies are a pure function of prompt and seed") {
  MockWorldConfig cfg;
  cfg.seed = 17;
  MockWorld w(cfg);
  const std::string prompt = "What is 1+1?";
  const auto d = echo_digest(17, prompt, 3);
  const Generation g = w.respond(prompt, 3, "tag");
  CHECK(g.text == "echo prompt=" + hex64(stable_hash64(prompt)) + " digest=" + hex64(d) +
                      "\nFinal answer: \\boxed{" + std::to_string(d % 1000) + "}");
  CHECK(w.respond(prompt, 3, "other tag").text == g.text);
  CHECK(w.respond(prompt, 4, "tag").text != g.text);
  CHECK(w.respond(prompt, std::nullopt, "tag").text != g.text);

  MockWorldConfig other = cfg;
  other.seed = 18;
  CHECK(MockWorld(other).respond(prompt, 3, "tag").text != g.text);
}

TEST_CASE("echo_hash verification replies use digest parity") {
  MockWorld w({});
  const TaskSpec t{"v", TaskKind::math, "Q", "1"};
  const std::string prompt = build_verification_prompt(t, "candidate \\boxed{1}");
  const auto d = echo_digest(0, prompt, 9);
  const auto text = w.respond(prompt, 9, "v").text;
  CHECK(text.ends_with((d & 1) == 0 ? "ACCEPT" : "REJECT"));
}

TEST_CASE("truncate marker yields finish_reason length") {
  MockWorld w({});
  CHECK(w.respond("x [[truncate]]", 1, "t").finish_reason == FinishReason::length);
  CHECK(w.respond("x", 1, "t").finish_reason == FinishReason::stop);
}

TEST_CASE("scripted replies: keyed first, then FIFO, then 410") {
  MockWorldConfig cfg;
  cfg.behavior = MockBehavior::scripted;
  cfg.script = {{mock_request_hash("special", 7), "keyed reply", FinishReason::stop},
                {"*", "first", FinishReason::stop},
                {"*", "second", FinishReason::length}};
  MockWorld w(cfg);
  CHECK(w.respond("anything", 1, "").text == "first");
  CHECK(w.respond("special", 7, "").text == "keyed reply");
  const auto g = w.respond("special", 7, "");
  CHECK(g.text == "second");
  CHECK(g.finish_reason == FinishReason::length);
  CHECK(w.script_consumed() == 3);
  CHECK(w.script_remaining() == 0);
  try {
    w.respond("more", 1, "");
    FAIL("expected MockError");
  } catch (const MockError& e) {
    CHECK(e.status() == 410);
  }
}

TEST_CASE("script fixtures load from JSONL") {
  rsa::testing::TempDir dir;
  rsa::testing::write_file(dir / "s.jsonl",
                           "{\"request_hash\":\"*\",\"response_text\":\"a\"}\n\n"
                           "{\"request_hash\":\"abc\",\"response_text\":\"b\",\"finish_reason\":\"length\"}\n");
  const auto s = load_script((dir / "s.jsonl").string());
  REQUIRE(s.size() == 2);
  CHECK(s[1].request_hash == "abc");
  CHECK(s[1].finish_reason == FinishReason::length);
  rsa::testing::write_file(dir / "bad.jsonl", "{\"response_text\":\"a\"}\nnot json\n");
  CHECK_THROWS_WITH_AS(load_script((dir / "bad.jsonl").string()), doctest::Contains(":2:"), std::runtime_error);
}

TEST_CASE("any_correct_world base prompts follow the member mask") {
  MockWorld w(any_correct(2));
  const std::string q = "What is 6*7?";
  CHECK(w.respond(q, 1, "task=a/t=1/i=0").text.find("\\boxed{42}") != std::string::npos);
  CHECK(w.respond(q, 1, "task=a/t=1/i=1").text.find("\\boxed{42}") != std::string::npos);
  CHECK(w.respond(q, 1, "task=a/t=1/i=2").text.find("\\boxed{42}") == std::string::npos);
  CHECK(w.respond(q, 1, "task=a/t=1/i=2").text.find("<answer>wrong-") != std::string::npos);
}

TEST_CASE("any_correct_world aggregation is correct iff a candidate is") {
  MockWorld w(any_correct());
  const TaskSpec t{"a", TaskKind::math, "What is 6*7?", "42"};
  const std::vector<std::string> with{"nope \\boxed{41}", "yes \\boxed{42}"};
  const std::vector<std::string> without{"nope \\boxed{41}", "\\boxed{420}"};
  CHECK(w.respond(build_aggregation_prompt(t, with), 1, "t=2/i=0").text.find("\\boxed{42}") != std::string::npos);
  CHECK(w.respond(build_aggregation_prompt(t, without), 1, "t=2/i=0").text.find("\\boxed{42}") == std::string::npos);
  const std::vector<std::string> single{"\\boxed{42}"};
  CHECK(w.respond(build_aggregation_prompt(t, single), 1, "t=2/i=5").text.find("\\boxed{42}") != std::string::npos);
}

TEST_CASE("any_correct_world epsilon flips roughly that fraction") {
  MockWorld w(any_correct(1, 0.2));
  const TaskSpec t{"a", TaskKind::math, "Q", "42"};
  const std::vector<std::string> with{"\\boxed{42}", "x"};
  const std::string prompt = build_aggregation_prompt(t, with);
  int wrong = 0;
  const int n = 4000;
  for (int s = 0; s < n; ++s) {
    if (w.respond(prompt, s, "t=2/i=0").text.find("\\boxed{42}") == std::string::npos) ++wrong;
  }
  const double rate = static_cast<double>(wrong) / n;
  CHECK(rate > 0.2 - 4 * std::sqrt(0.16 / n));
  CHECK(rate < 0.2 + 4 * std::sqrt(0.16 / n));
}

TEST_CASE("any_correct_world verification is a perfect judge") {
  MockWorld w(any_correct());
  const TaskSpec t{"a", TaskKind::math, "Q", "42"};
  CHECK(w.respond(build_verification_prompt(t, "\\boxed{42}"), 1, "v").text.ends_with("ACCEPT"));
  CHECK(w.respond(build_verification_prompt(t, "\\boxed{43}"), 1, "v").text.ends_with("REJECT"));
}

TEST_CASE("per-query gold answers") {
  MockWorldConfig cfg = any_correct();
  cfg.gold_by_query["What is 1+1?"] = "2";
  MockWorld w(cfg);
  CHECK(w.respond("  What is 1+1?\n", 1, "t=1/i=0").text.find("\\boxed{2}") != std::string::npos);
  CHECK(w.respond("Other", 1, "t=1/i=0").text.find("\\boxed{42}") != std::string::npos);
  const TaskSpec t{"a", TaskKind::math, "What is 1+1?", "2"};
  const std::vector<std::string> c{"\\boxed{2}", "\\boxed{3}"};
  CHECK(w.respond(build_aggregation_prompt(t, c), 1, "t=2/i=1").text.find("\\boxed{2}") != std::string::npos);
}

TEST_CASE("embeddings match an independent reimplementation") {
  MockWorldConfig cfg;
  cfg.seed = 5;
  cfg.embedding_dim = 32;
  MockWorld w(cfg);
  for (const std::string text : {"", "ab", "abc", "the quick brown fox", "\\boxed{42}"}) {
    CAPTURE(text);
    CHECK(w.raw_embedding(text) == oracle_embedding(5, text, 32));
  }
  MockClient client(std::make_shared<MockWorld>(cfg));
  const std::vector<std::string> texts{"same", "same"};
  const auto v = client.embed(texts);
  CHECK(v[0] == v[1]);
  CHECK_THROWS_AS(MockWorld(MockWorldConfig{.embedding_dim = 1}), std::invalid_argument);
}

TEST_CASE("in-process client counts calls and converts errors") {
  MockWorldConfig cfg;
  cfg.behavior = MockBehavior::scripted;
  MockClient client(std::make_shared<MockWorld>(cfg));
  CHECK_THROWS_AS(client.generate("x", {}, "tag"), GenerationError);
  CHECK(client.calls() == 1);
}

TEST_CASE("server refuses a port that is already bound") {
  auto world = std::make_shared<MockWorld>(MockWorldConfig{});
  MockServer a(world);
  a.start();
  MockServerOptions opts;
  opts.port = a.port();
  MockServer b(world, opts);
  CHECK_THROWS_AS(b.start(), std::runtime_error);
}

TEST_CASE("fail_after switches the server to errors") {
  auto world = std::make_shared<MockWorld>(MockWorldConfig{});
  MockServer s(world);
  s.start();
  s.fail_after(2, 503);
  EndpointConfig c;
  c.base_url = s.base_url();
  c.max_retries = 0;
  OpenAiClient client(c);
  CHECK_NOTHROW(client.generate("a", {}, "1"));
  CHECK_NOTHROW(client.generate("b", {}, "2"));
  CHECK_THROWS_AS(client.generate("c", {}, "3"), GenerationError);
  CHECK(s.chat_replies() == 2);
}
