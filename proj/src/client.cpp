#include "rsa/client.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include <nlohmann/json.hpp>

#include "httplib.h"
#include "rsa/core.hpp"
#include "rsa/log.hpp"

namespace rsa {
namespace {

using json = nlohmann::ordered_json;

bool retryable(int status) { return status == 429 || status >= 500 || status == 0; }

// Splits "http://host:port/v1" into ("http://host:port", "/v1").
std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw std::invalid_argument("endpoint URL needs a scheme: '" + url + "'");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, ""};
  std::string path = url.substr(path_start);
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {url.substr(0, path_start), path};
}

}  // namespace

std::string_view to_string(FinishReason reason) {
  switch (reason) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::error: return "error";
  }
  return "error";
}

void EndpointConfig::validate() const {
  if (base_url.empty()) throw std::invalid_argument("endpoint base URL is empty");
  if (max_retries < 0) throw std::invalid_argument("max_retries must be >= 0");
  if (!(timeout_s > 0)) throw std::invalid_argument("timeout must be > 0");
  if (backoff_initial_s < 0) throw std::invalid_argument("backoff must be >= 0");
}

std::vector<double> l2_normalize(std::vector<double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (!(sq > 0.0)) throw std::domain_error("cannot normalize a zero-length embedding");
  const double inv = 1.0 / std::sqrt(sq);
  for (double& x : v) x *= inv;
  return v;
}

std::string chat_request_body(const EndpointConfig& cfg, const SamplingParams& params, const std::string& prompt) {
  json messages = json::array();
  if (cfg.system_message) messages.push_back({{"role", "system"}, {"content", *cfg.system_message}});
  messages.push_back({{"role", "user"}, {"content", prompt}});
  json body = {{"model", cfg.model},
               {"messages", std::move(messages)},
               {"temperature", params.temperature},
               {"top_p", params.top_p},
               {"max_tokens", params.max_tokens}};
  if (params.request_seed) body["seed"] = *params.request_seed;
  // min_p is a vLLM-style extension; plain OpenAI endpoints reject it.
  if (params.min_p > 0.0) body["min_p"] = params.min_p;
  return body.dump();
}

OpenAiClient::OpenAiClient(EndpointConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::tie(scheme_host_port_, path_prefix_) = split_url(cfg_.base_url);
}

OpenAiClient::~OpenAiClient() = default;

ClientStats OpenAiClient::stats() const {
  return {requests_.load(), attempts_.load(), retries_.load(), failures_.load()};
}

OpenAiClient::Response OpenAiClient::post_with_retries(const std::string& route, const std::string& body,
                                                       const std::string& tag) {
  httplib::Client http(scheme_host_port_);
  const auto secs = static_cast<time_t>(cfg_.timeout_s);
  const auto usecs = static_cast<time_t>((cfg_.timeout_s - static_cast<double>(secs)) * 1e6);
  http.set_connection_timeout(secs, usecs);
  http.set_read_timeout(secs, usecs);
  http.set_write_timeout(secs, usecs);
  httplib::Headers headers{{"X-Request-Tag", tag}};
  if (cfg_.api_key && !cfg_.api_key->empty()) headers.emplace("Authorization", "Bearer " + *cfg_.api_key);

  SeededRng jitter = derive_rng(stable_hash64(tag), "backoff");
  const std::string path = path_prefix_ + route;
  int last_status = 0;
  std::string last_error;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) {
      retries_.fetch_add(1);
      const double ceiling = cfg_.backoff_initial_s * std::pow(2.0, attempt - 1);
      const double delay = ceiling * jitter.uniform01();
      log(LogLevel::info, "retry " + std::to_string(attempt) + "/" + std::to_string(cfg_.max_retries) + " for [" +
                              tag + "] after status " + std::to_string(last_status));
      std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
    attempts_.fetch_add(1);
    auto result = http.Post(path, headers, body, "application/json");
    if (!result) {
      last_status = 0;
      last_error = httplib::to_string(result.error());
      continue;
    }
    last_status = result->status;
    if (last_status >= 200 && last_status < 300) return {last_status, result->body};
    last_error = result->body;
    if (!retryable(last_status)) {
      failures_.fetch_add(1);
      throw GenerationError("request [" + tag + "] failed with HTTP " + std::to_string(last_status) + ": " +
                                last_error.substr(0, 500),
                            tag, last_status, attempt + 1);
    }
  }
  failures_.fetch_add(1);
  const std::string what = last_status == 0 ? "endpoint unreachable (" + last_error + ")"
                                            : "HTTP " + std::to_string(last_status);
  throw GenerationError("request [" + tag + "] failed after " + std::to_string(cfg_.max_retries + 1) +
                            " attempts: " + what,
                        tag, last_status, cfg_.max_retries + 1);
}

Generation OpenAiClient::generate(const std::string& prompt, const SamplingParams& params, const std::string& tag) {
  if (prompt.empty()) throw std::invalid_argument("generate: prompt is empty [" + tag + "]");
  const Response response = post_with_retries("/chat/completions", chat_request_body(cfg_, params, prompt), tag);
  json parsed;
  try {
    parsed = json::parse(response.body);
  } catch (const json::exception& e) {
    throw GenerationError("request [" + tag + "] returned malformed JSON: " + e.what(), tag, response.status, 1);
  }
  if (!parsed.contains("choices") || !parsed["choices"].is_array() || parsed["choices"].empty()) {
    throw GenerationError("request [" + tag + "] returned no choices", tag, response.status, 1);
  }
  const json& choice = parsed["choices"][0];
  Generation out;
  if (choice.contains("message") && choice["message"].contains("content") && choice["message"]["content"].is_string()) {
    out.text = choice["message"]["content"].get<std::string>();
  }
  const std::string finish = choice.value("finish_reason", std::string("stop"));
  out.finish_reason = finish == "length" ? FinishReason::length : FinishReason::stop;
  requests_.fetch_add(1);
  return out;
}

std::vector<std::vector<double>> OpenAiClient::embed(std::span<const std::string> texts) {
  if (texts.empty()) throw std::invalid_argument("embed: no texts");
  json body = {{"model", cfg_.embedding_model.empty() ? cfg_.model : cfg_.embedding_model},
               {"input", std::vector<std::string>(texts.begin(), texts.end())}};
  const Response response = post_with_retries("/embeddings", body.dump(), "embed");
  const json parsed = json::parse(response.body);
  const json& data = parsed.at("data");
  if (data.size() != texts.size()) throw GenerationError("embedding count mismatch", "embed", response.status, 1);
  std::vector<std::vector<double>> out(texts.size());
  for (const auto& item : data) {
    const auto index = item.value("index", std::size_t{0});
    if (index >= out.size()) throw GenerationError("embedding index out of range", "embed", response.status, 1);
    out[index] = l2_normalize(item.at("embedding").get<std::vector<double>>());
  }
  requests_.fetch_add(1);
  return out;
}

}  // namespace rsa
