#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rsa {

enum class FinishReason { stop, length, error };

std::string_view to_string(FinishReason reason);

struct Generation {
  std::string text;
  FinishReason finish_reason = FinishReason::stop;
};

struct SamplingParams {
  double temperature = 1.0;
  double top_p = 1.0;
  double min_p = 0.0;
  int max_tokens = 8192;
  std::optional<std::int64_t> request_seed;
};

/// Raised when a request fails for good: a non-retryable status or
/// exhausted retries.
class GenerationError : public std::runtime_error {
 public:
  GenerationError(const std::string& message, std::string tag, int status, int attempts)
      : std::runtime_error(message), tag_(std::move(tag)), status_(status), attempts_(attempts) {}

  const std::string& tag() const { return tag_; }
  /// HTTP status, or 0 when the endpoint could not be reached.
  int status() const { return status_; }
  int attempts() const { return attempts_; }

 private:
  std::string tag_;
  int status_;
  int attempts_;
};

/// Anything that can turn a prompt into a completion. Implementations must be
/// safe to call from several threads at once.
class GenerationClient {
 public:
  virtual ~GenerationClient() = default;
  /// `tag` identifies the request for logs and mock routing, e.g.
  /// "task=q1/t=2/i=5".
  virtual Generation generate(const std::string& prompt, const SamplingParams& params, const std::string& tag) = 0;
};

class EmbeddingClient {
 public:
  virtual ~EmbeddingClient() = default;
  /// One unit-norm vector per input text.
  virtual std::vector<std::vector<double>> embed(std::span<const std::string> texts) = 0;
};

struct EndpointConfig {
  /// Base URL including the API prefix, e.g. "http://127.0.0.1:8000/v1".
  std::string base_url;
  std::optional<std::string> api_key;
  std::string model;
  std::string embedding_model;
  double timeout_s = 600.0;
  int max_retries = 3;
  /// First backoff ceiling; doubles per retry, full jitter.
  double backoff_initial_s = 0.5;
  std::optional<std::string> system_message;

  void validate() const;
};

/// Scales a vector to unit L2 norm. Throws std::domain_error on a zero vector.
std::vector<double> l2_normalize(std::vector<double> v);

/// Request body for POST {base}/chat/completions (exposed for wire tests).
std::string chat_request_body(const EndpointConfig& cfg, const SamplingParams& params, const std::string& prompt);

struct ClientStats {
  std::int64_t requests = 0;   // logical generate/embed calls that succeeded
  std::int64_t attempts = 0;   // HTTP attempts including retries
  std::int64_t retries = 0;
  std::int64_t failures = 0;
};

/// OpenAI wire-format client for chat completions and embeddings.
class OpenAiClient final : public GenerationClient, public EmbeddingClient {
 public:
  explicit OpenAiClient(EndpointConfig cfg);
  ~OpenAiClient() override;

  Generation generate(const std::string& prompt, const SamplingParams& params, const std::string& tag) override;
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;

  const EndpointConfig& config() const { return cfg_; }
  ClientStats stats() const;

 private:
  struct Response {
    int status = 0;
    std::string body;
  };

  Response post_with_retries(const std::string& route, const std::string& body, const std::string& tag);

  EndpointConfig cfg_;
  std::string scheme_host_port_;
  std::string path_prefix_;
  std::atomic<std::int64_t> requests_{0};
  std::atomic<std::int64_t> attempts_{0};
  std::atomic<std::int64_t> retries_{0};
  std::atomic<std::int64_t> failures_{0};
};

}  // namespace rsa
