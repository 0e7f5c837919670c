#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "rsa/client.hpp"

namespace httplib {
class Server;
}

namespace rsa {

enum class MockBehavior { echo_hash, scripted, any_correct_world };

std::string_view to_string(MockBehavior behavior);
MockBehavior parse_mock_behavior(std::string_view text);

/// One scripted reply. request_hash "*" entries are served in order to any
/// request that has no exact match.
struct ScriptEntry {
  std::string request_hash;
  std::string response_text;
  FinishReason finish_reason = FinishReason::stop;
};

/// Reads a JSONL fixture of {"request_hash", "response_text"[, "finish_reason"]}.
std::vector<ScriptEntry> load_script(const std::string& path);

/// Key used to match scripted replies: hex digest of prompt and request seed.
std::string mock_request_hash(const std::string& prompt, std::optional<std::int64_t> request_seed);

/// Raised by the mock when it has no reply; carries the HTTP status the
/// server answers with.
class MockError : public std::runtime_error {
 public:
  MockError(const std::string& message, int status) : std::runtime_error(message), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct MockWorldConfig {
  std::uint64_t seed = 0;
  MockBehavior behavior = MockBehavior::echo_hash;
  /// Default gold answer for any_correct_world.
  std::string gold = "42";
  /// Per-query gold answers, keyed by the whitespace-stripped query.
  std::map<std::string, std::string> gold_by_query;
  /// Base-prompt requests whose member index is below this answer correctly.
  int initial_correct = 1;
  /// When set, base prompts are instead correct with this probability.
  std::optional<double> initial_correct_prob;
  /// Probability that an aggregation outcome is flipped.
  double epsilon = 0.0;
  std::vector<ScriptEntry> script;
  int embedding_dim = 64;
};

/// The deterministic response function shared by the in-process client and
/// the HTTP server.
///
/// echo_hash: a digest of (prompt, request seed) plus "\boxed{digest mod 1000}".
/// scripted: replays ScriptEntry fixtures.
/// any_correct_world: base prompts are correct per the initial mask;
/// an aggregation child is correct iff some candidate section carries the
/// gold answer (flipped with probability epsilon); verification prompts are
/// judged perfectly.
class MockWorld {
 public:
  explicit MockWorld(MockWorldConfig cfg);

  Generation respond(const std::string& prompt, std::optional<std::int64_t> request_seed, const std::string& tag);
  /// Unnormalized trigram feature-hash embedding, seeded by cfg.seed.
  std::vector<double> raw_embedding(const std::string& text) const;

  const MockWorldConfig& config() const { return cfg_; }
  std::size_t script_consumed() const;
  std::size_t script_remaining() const;

  /// Marker a correct any_correct_world response carries for `gold`.
  static std::string correct_marker(const std::string& gold);

 private:
  std::string gold_for(const std::string& prompt) const;
  Generation respond_any_correct(const std::string& prompt, std::uint64_t digest, const std::string& tag);
  Generation respond_scripted(const std::string& prompt, std::optional<std::int64_t> request_seed);

  MockWorldConfig cfg_;
  mutable std::mutex script_mutex_;
  std::map<std::string, std::deque<std::size_t>> keyed_;
  std::deque<std::size_t> fifo_;
  std::size_t consumed_ = 0;
};

/// Tracks concurrent requests and keeps the high-water mark.
class InFlightGauge {
 public:
  class Scope {
   public:
    explicit Scope(InFlightGauge& g);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    InFlightGauge& g_;
  };

  int current() const { return current_.load(); }
  int peak() const { return peak_.load(); }

 private:
  std::atomic<int> current_{0};
  std::atomic<int> peak_{0};
};

/// In-process client backed by a MockWorld; no sockets involved.
class MockClient final : public GenerationClient, public EmbeddingClient {
 public:
  explicit MockClient(std::shared_ptr<MockWorld> world, int latency_ms = 0);

  Generation generate(const std::string& prompt, const SamplingParams& params, const std::string& tag) override;
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;

  std::int64_t calls() const { return calls_.load(); }
  std::int64_t embed_calls() const { return embed_calls_.load(); }
  int peak_in_flight() const { return gauge_.peak(); }
  MockWorld& world() { return *world_; }

 private:
  std::shared_ptr<MockWorld> world_;
  int latency_ms_;
  std::atomic<std::int64_t> calls_{0};
  std::atomic<std::int64_t> embed_calls_{0};
  InFlightGauge gauge_;
};

struct MockServerOptions {
  std::string host = "127.0.0.1";
  /// 0 picks a free port.
  int port = 0;
  int latency_ms = 0;
  int threads = 32;
  bool record_bodies = false;
};

/// Local HTTP endpoint speaking the chat-completions and embeddings wire
/// format on top of a MockWorld.
class MockServer {
 public:
  MockServer(std::shared_ptr<MockWorld> world, MockServerOptions options = {});
  ~MockServer();
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  /// Binds and starts serving on a background thread. Throws
  /// std::runtime_error if the port cannot be bound.
  void start();
  void stop();
  /// Blocks the calling thread until stop() is called from elsewhere.
  void wait();

  int port() const { return port_; }
  std::string base_url() const;

  /// Statuses returned, in order, to the next chat requests instead of a reply.
  void inject_failures(std::vector<int> statuses);
  /// After `n` more successful chat replies every request gets `status`.
  void fail_after(std::int64_t n, int status = 503);

  std::int64_t chat_requests() const { return chat_requests_.load(); }
  std::int64_t chat_replies() const { return chat_replies_.load(); }
  std::int64_t embedding_requests() const { return embedding_requests_.load(); }
  int peak_in_flight() const { return gauge_.peak(); }
  std::vector<std::string> request_bodies() const;
  MockWorld& world() { return *world_; }

 private:
  std::shared_ptr<MockWorld> world_;
  MockServerOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<std::int64_t> chat_requests_{0};
  std::atomic<std::int64_t> chat_replies_{0};
  std::atomic<std::int64_t> embedding_requests_{0};
  std::atomic<std::int64_t> fail_after_{-1};
  int fail_after_status_ = 503;
  InFlightGauge gauge_;
  mutable std::mutex mutex_;
  std::deque<int> injected_;
  std::vector<std::string> bodies_;
};

}  // namespace rsa
