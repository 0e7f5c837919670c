#include "rsa/mock.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>

#include <nlohmann/json.hpp>

#include "httplib.h"
#include "rsa/core.hpp"
#include "rsa/log.hpp"
#include "rsa/prompt.hpp"

namespace rsa {
namespace {

using json = nlohmann::ordered_json;

constexpr std::string_view kTruncateMarker = "[[truncate]]";
constexpr std::string_view kVerifyMarker = "Check the candidate's reasoning step by step";

bool contains(std::string_view hay, std::string_view needle) { return hay.find(needle) != std::string_view::npos; }

std::optional<int> member_index_from_tag(const std::string& tag) {
  const auto pos = tag.rfind("i=");
  if (pos == std::string::npos || (pos > 0 && tag[pos - 1] != '/')) return std::nullopt;
  int value = 0;
  bool any = false;
  for (std::size_t i = pos + 2; i < tag.size() && std::isdigit(static_cast<unsigned char>(tag[i])); ++i) {
    value = value * 10 + (tag[i] - '0');
    any = true;
  }
  return any ? std::optional<int>(value) : std::nullopt;
}

// Query embedded in an aggregation or verification prompt, or the prompt
// itself for base queries.
std::string query_of(const std::string& prompt) {
  constexpr std::string_view kProblem = "\nProblem:\n\n";
  const auto start = prompt.find(kProblem);
  if (start == std::string::npos) return strip_whitespace(prompt);
  const auto begin = start + kProblem.size();
  const auto end = prompt.find("\n\nCandidate solution", begin);
  return strip_whitespace(std::string_view(prompt).substr(begin, end == std::string::npos ? end : end - begin));
}

std::vector<std::string> candidate_sections(const std::string& prompt) {
  std::vector<std::string> sections;
  std::size_t pos = 0;
  while (true) {
    const auto header = prompt.find("---- ", pos);
    if (header == std::string::npos) break;
    const auto line_end = prompt.find('\n', header);
    if (line_end == std::string::npos) break;
    const std::string_view head(prompt.data() + header, line_end - header);
    if (!(head.starts_with("---- Solution ") || head == "---- Candidate ----") || !head.ends_with(" ----")) {
      pos = line_end;
      continue;
    }
    const auto body = line_end + 1;
    auto next = prompt.find("\n\n---- ", body);
    const auto closing = prompt.find("\n\nNow ", body);
    const auto verify_close = prompt.find("\n\nGive your analysis", body);
    next = std::min({next, closing, verify_close});
    sections.push_back(prompt.substr(body, next == std::string::npos ? std::string::npos : next - body));
    if (next == std::string::npos) break;
    pos = next;
  }
  return sections;
}

std::uint64_t digest_of(std::uint64_t world_seed, const std::string& prompt, std::optional<std::int64_t> seed) {
  const std::string key = prompt + '\x1f' + (seed ? std::to_string(*seed) : std::string("none"));
  return mix64(stable_hash64(key) ^ mix64(world_seed + 0x51ED270B27A1D5F3ULL));
}

double unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

FinishReason parse_finish(const std::string& s) {
  if (s == "length") return FinishReason::length;
  if (s == "stop" || s.empty()) return FinishReason::stop;
  throw std::invalid_argument("unknown finish_reason '" + s + "'");
}

}  // namespace

std::string_view to_string(MockBehavior behavior) {
  switch (behavior) {
    case MockBehavior::echo_hash: return "echo_hash";
    case MockBehavior::scripted: return "scripted";
    case MockBehavior::any_correct_world: return "any_correct_world";
  }
  return "echo_hash";
}

MockBehavior parse_mock_behavior(std::string_view text) {
  if (text == "echo_hash") return MockBehavior::echo_hash;
  if (text == "scripted") return MockBehavior::scripted;
  if (text == "any_correct_world") return MockBehavior::any_correct_world;
  throw std::invalid_argument("unknown mock behavior '" + std::string(text) + "'");
}

std::vector<ScriptEntry> load_script(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open script fixture '" + path + "'");
  std::vector<ScriptEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (strip_whitespace(line).empty()) continue;
    try {
      const json j = json::parse(line);
      entries.push_back({j.value("request_hash", std::string("*")), j.at("response_text").get<std::string>(),
                         parse_finish(j.value("finish_reason", std::string("stop")))});
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return entries;
}

std::string mock_request_hash(const std::string& prompt, std::optional<std::int64_t> request_seed) {
  return hex64(stable_hash64(prompt + '\x1f' + (request_seed ? std::to_string(*request_seed) : std::string("none"))));
}

MockWorld::MockWorld(MockWorldConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.embedding_dim < 2) throw std::invalid_argument("mock embedding_dim must be >= 2");
  for (std::size_t i = 0; i < cfg_.script.size(); ++i) {
    const auto& key = cfg_.script[i].request_hash;
    if (key.empty() || key == "*") {
      fifo_.push_back(i);
    } else {
      keyed_[key].push_back(i);
    }
  }
}

std::string MockWorld::correct_marker(const std::string& gold) { return "\\boxed{" + gold + "}"; }

std::size_t MockWorld::script_consumed() const {
  std::lock_guard lock(script_mutex_);
  return consumed_;
}

std::size_t MockWorld::script_remaining() const {
  std::lock_guard lock(script_mutex_);
  return cfg_.script.size() - consumed_;
}

std::string MockWorld::gold_for(const std::string& prompt) const {
  if (!cfg_.gold_by_query.empty()) {
    const auto it = cfg_.gold_by_query.find(query_of(prompt));
    if (it != cfg_.gold_by_query.end()) return it->second;
  }
  return cfg_.gold;
}

Generation MockWorld::respond(const std::string& prompt, std::optional<std::int64_t> request_seed,
                              const std::string& tag) {
  const std::uint64_t digest = digest_of(cfg_.seed, prompt, request_seed);
  Generation out;
  switch (cfg_.behavior) {
    case MockBehavior::scripted:
      return respond_scripted(prompt, request_seed);
    case MockBehavior::any_correct_world:
      out = respond_any_correct(prompt, digest, tag);
      break;
    case MockBehavior::echo_hash: {
      out.text = "echo prompt=" + hex64(stable_hash64(prompt)) + " digest=" + hex64(digest) + "\n";
      if (contains(prompt, kVerifyMarker)) {
        out.text += (digest & 1) == 0 ? "ACCEPT" : "REJECT";
      } else {
        out.text += "Final answer: \\boxed{" + std::to_string(digest % 1000) + "}";
      }
      break;
    }
  }
  if (contains(prompt, kTruncateMarker)) out.finish_reason = FinishReason::length;
  return out;
}

Generation MockWorld::respond_any_correct(const std::string& prompt, std::uint64_t digest, const std::string& tag) {
  const std::string gold = gold_for(prompt);
  const std::string marker = correct_marker(gold);
  const std::string label = hex64(digest).substr(0, 8);
  if (contains(prompt, kVerifyMarker)) {
    const auto sections = candidate_sections(prompt);
    const bool ok = !sections.empty() && contains(sections.front(), marker);
    return {"verification " + label + "\n" + (ok ? "ACCEPT" : "REJECT"), FinishReason::stop};
  }
  bool correct = false;
  const auto sections = candidate_sections(prompt);
  if (!sections.empty()) {
    for (const auto& s : sections) correct = correct || contains(s, marker);
    if (cfg_.epsilon > 0.0 && unit(mix64(digest ^ 0xE7037ED1A0B428DBULL)) < cfg_.epsilon) correct = !correct;
  } else if (cfg_.initial_correct_prob) {
    correct = unit(digest) < *cfg_.initial_correct_prob;
  } else {
    const auto index = member_index_from_tag(tag);
    correct = index && *index < cfg_.initial_correct;
  }
  const std::string answer = correct ? gold : "wrong-" + hex64(mix64(digest)).substr(0, 6);
  return {"reasoning " + label + "\nFinal answer: \\boxed{" + answer + "} <answer>" + answer + "</answer>",
          FinishReason::stop};
}

Generation MockWorld::respond_scripted(const std::string& prompt, std::optional<std::int64_t> request_seed) {
  std::lock_guard lock(script_mutex_);
  std::optional<std::size_t> index;
  const auto it = keyed_.find(mock_request_hash(prompt, request_seed));
  if (it != keyed_.end() && !it->second.empty()) {
    index = it->second.front();
    it->second.pop_front();
  } else if (!fifo_.empty()) {
    index = fifo_.front();
    fifo_.pop_front();
  }
  if (!index) throw MockError("scripted mock has no reply left for this request", 410);
  ++consumed_;
  const ScriptEntry& entry = cfg_.script[*index];
  return {entry.response_text, entry.finish_reason};
}

std::vector<double> MockWorld::raw_embedding(const std::string& text) const {
  const auto dim = static_cast<std::size_t>(cfg_.embedding_dim);
  std::vector<double> v(dim, 0.0);
  v[dim - 1] = 1.0;
  const std::uint64_t salt = mix64(cfg_.seed ^ 0xA24BAED4963EE407ULL);
  auto add = [&](std::string_view gram) {
    const std::uint64_t h = mix64(stable_hash64(gram) ^ salt);
    v[h % (dim - 1)] += ((h >> 63) != 0) ? 1.0 : -1.0;
  };
  if (text.size() < 3) {
    if (!text.empty()) add(text);
  } else {
    for (std::size_t i = 0; i + 3 <= text.size(); ++i) add(std::string_view(text).substr(i, 3));
  }
  return v;
}

InFlightGauge::Scope::Scope(InFlightGauge& g) : g_(g) {
  const int now = g_.current_.fetch_add(1) + 1;
  int peak = g_.peak_.load();
  while (now > peak && !g_.peak_.compare_exchange_weak(peak, now)) {
  }
}

InFlightGauge::Scope::~Scope() { g_.current_.fetch_sub(1); }

MockClient::MockClient(std::shared_ptr<MockWorld> world, int latency_ms)
    : world_(std::move(world)), latency_ms_(latency_ms) {}

Generation MockClient::generate(const std::string& prompt, const SamplingParams& params, const std::string& tag) {
  InFlightGauge::Scope scope(gauge_);
  calls_.fetch_add(1);
  if (latency_ms_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(latency_ms_));
  try {
    return world_->respond(prompt, params.request_seed, tag);
  } catch (const MockError& e) {
    throw GenerationError(e.what(), tag, e.status(), 1);
  }
}

std::vector<std::vector<double>> MockClient::embed(std::span<const std::string> texts) {
  embed_calls_.fetch_add(1);
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(l2_normalize(world_->raw_embedding(t)));
  return out;
}

MockServer::MockServer(std::shared_ptr<MockWorld> world, MockServerOptions options)
    : world_(std::move(world)), options_(std::move(options)) {}

MockServer::~MockServer() { stop(); }

std::string MockServer::base_url() const { return "http://" + options_.host + ":" + std::to_string(port_) + "/v1"; }

void MockServer::inject_failures(std::vector<int> statuses) {
  std::lock_guard lock(mutex_);
  for (int s : statuses) injected_.push_back(s);
}

void MockServer::fail_after(std::int64_t n, int status) {
  std::lock_guard lock(mutex_);
  fail_after_status_ = status;
  fail_after_.store(n);
}

std::vector<std::string> MockServer::request_bodies() const {
  std::lock_guard lock(mutex_);
  return bodies_;
}

void MockServer::start() {
  if (server_) return;
  server_ = std::make_unique<httplib::Server>();
  const int threads = options_.threads;
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };

  auto chat = [this](const httplib::Request& req, httplib::Response& res) {
    InFlightGauge::Scope scope(gauge_);
    chat_requests_.fetch_add(1);
    int injected = 0;
    {
      std::lock_guard lock(mutex_);
      if (options_.record_bodies) bodies_.push_back(req.body);
      if (!injected_.empty()) {
        injected = injected_.front();
        injected_.pop_front();
      } else if (fail_after_.load() == 0) {
        injected = fail_after_status_;
      }
    }
    if (options_.latency_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(options_.latency_ms));
    if (injected != 0) {
      res.status = injected;
      res.set_content(json{{"error", {{"message", "injected failure"}}}}.dump(), "application/json");
      return;
    }
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", {{"message", e.what()}}}}.dump(), "application/json");
      return;
    }
    std::string prompt;
    for (const auto& m : body.value("messages", json::array())) {
      if (m.value("role", "") == "user") prompt = m.value("content", "");
    }
    std::optional<std::int64_t> seed;
    if (body.contains("seed") && body["seed"].is_number_integer()) seed = body["seed"].get<std::int64_t>();
    const std::string tag = req.get_header_value("X-Request-Tag");
    Generation g;
    try {
      g = world_->respond(prompt, seed, tag);
    } catch (const MockError& e) {
      res.status = e.status();
      res.set_content(json{{"error", {{"message", e.what()}}}}.dump(), "application/json");
      return;
    }
    if (fail_after_.load() > 0) fail_after_.fetch_sub(1);
    chat_replies_.fetch_add(1);
    json reply = {{"id", "mock-" + hex64(stable_hash64(prompt))},
                  {"object", "chat.completion"},
                  {"model", body.value("model", "")},
                  {"choices",
                   json::array({{{"index", 0},
                                 {"message", {{"role", "assistant"}, {"content", g.text}}},
                                 {"finish_reason", std::string(to_string(g.finish_reason))}}})}};
    res.set_content(reply.dump(), "application/json");
  };

  auto embeddings = [this](const httplib::Request& req, httplib::Response& res) {
    InFlightGauge::Scope scope(gauge_);
    embedding_requests_.fetch_add(1);
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", {{"message", e.what()}}}}.dump(), "application/json");
      return;
    }
    std::vector<std::string> inputs;
    if (body["input"].is_string()) {
      inputs.push_back(body["input"].get<std::string>());
    } else {
      inputs = body["input"].get<std::vector<std::string>>();
    }
    json data = json::array();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      data.push_back({{"object", "embedding"}, {"index", i}, {"embedding", world_->raw_embedding(inputs[i])}});
    }
    res.set_content(json{{"object", "list"}, {"data", std::move(data)}}.dump(), "application/json");
  };

  server_->Post("/v1/chat/completions", chat);
  server_->Post("/chat/completions", chat);
  server_->Post("/v1/embeddings", embeddings);
  server_->Post("/embeddings", embeddings);

  // httplib's default also sets SO_REUSEPORT, which lets a second server
  // silently share an occupied port.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  if (options_.port == 0) {
    port_ = server_->bind_to_any_port(options_.host);
    if (port_ <= 0) throw std::runtime_error("mock server could not bind " + options_.host);
  } else {
    if (!server_->bind_to_port(options_.host, options_.port)) {
      server_.reset();
      throw std::runtime_error("mock server could not bind port " + std::to_string(options_.port) +
                               " (already in use?)");
    }
    port_ = options_.port;
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  log(LogLevel::info, "mock server listening on " + base_url());
}

void MockServer::wait() {
  if (thread_.joinable()) thread_.join();
}

void MockServer::stop() {
  if (!server_) return;
  server_->stop();
  if (thread_.joinable()) thread_.join();
  server_.reset();
}

}  // namespace rsa
