#include "lamb/knowledge.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include <cstdlib>
#include <thread>

namespace lamb {

using nlohmann::json;

HttpLlmClient::HttpLlmClient(HttpLlmConfig config, Sleeper sleeper)
    : config_(std::move(config)), sleeper_(std::move(sleeper)) {
  if (config_.max_attempts < 1) throw std::invalid_argument("http llm: max_attempts must be >= 1");
  if (!sleeper_) {
    sleeper_ = [](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); };
  }
}

std::string HttpLlmClient::request_body(const HttpLlmConfig& config, const std::string& prompt) {
  json body = {{"model", config.model},
               {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
               {"temperature", config.temperature},
               {"top_p", config.top_p}};
  return body.dump();
}

std::string HttpLlmClient::do_complete(const std::string& prompt) {
  httplib::Client client(config_.base_url);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(config_.timeout_seconds));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  httplib::Headers headers;
  if (const char* token = std::getenv(config_.api_key_env.c_str()); token != nullptr && *token != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  const std::string body = request_body(config_, prompt);

  std::string last_error = "no attempt made";
  double backoff = config_.initial_backoff_seconds;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    ++attempts_;
    auto res = client.Post(config_.path, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
    } else if (res->status != 200) {
      last_error = "HTTP status " + std::to_string(res->status);
    } else {
      try {
        const json j = json::parse(res->body);
        std::string content = j.at("choices").at(0).at("message").at("content").get<std::string>();
        if (!content.empty()) return content;
        last_error = "empty completion";
      } catch (const json::exception& e) {
        last_error = std::string("unparseable completion: ") + e.what();
      }
    }
    if (attempt < config_.max_attempts) {
      sleeper_(std::chrono::duration<double>(backoff));
      backoff *= 2.0;
    }
  }
  throw std::runtime_error("http llm failed after " + std::to_string(config_.max_attempts) +
                           " attempts: " + last_error);
}

}  // namespace lamb
