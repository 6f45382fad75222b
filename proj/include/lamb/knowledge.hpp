#pragma once

// Rational knowledge sources: a commonsense relation provider for the last
// speaker utterance, and the chain-of-thought prompt + cached LLM client
// that produce the free-text analysis paragraph.

#include "lamb/corpus.hpp"

#include <array>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lamb {

enum class Relation { x_intent, x_effect, x_want, x_react, x_need };

inline constexpr std::size_t kRelationCount = 5;
inline constexpr std::array<Relation, kRelationCount> kRelations{
    Relation::x_intent, Relation::x_effect, Relation::x_want, Relation::x_react, Relation::x_need};

std::string_view relation_name(Relation r);

struct KnowledgeBundle {
  std::array<std::string, kRelationCount> texts;  // in kRelations order
  std::string source_utterance;

  const std::string& text(Relation r) const { return texts[static_cast<std::size_t>(r)]; }
  void validate() const;
};

// ---------------------------------------------------------------------------
// Commonsense provider

enum class CommonsenseBackend { templated, fixture };

std::string_view backend_name(CommonsenseBackend b);
CommonsenseBackend parse_commonsense_backend(std::string_view name);

struct CommonsenseRecord {
  std::string utterance_hash;
  KnowledgeBundle bundle;
};

std::string commonsense_record_to_json(const CommonsenseRecord& record);
std::vector<CommonsenseRecord> load_commonsense_records(const std::filesystem::path& path);
void save_commonsense_records(const std::filesystem::path& path,
                              const std::vector<CommonsenseRecord>& records);

class CommonsenseProvider {
 public:
  virtual ~CommonsenseProvider() = default;
  KnowledgeBundle generate(std::string_view last_utterance) const;
  virtual CommonsenseBackend backend() const = 0;
  std::size_t calls() const { return calls_.load(); }

 protected:
  virtual KnowledgeBundle do_generate(std::string_view last_utterance) const = 0;

 private:
  mutable std::atomic<std::size_t> calls_{0};
};

// "the speaker <relation phrase> <content words>" strings.
class TemplateCommonsenseProvider final : public CommonsenseProvider {
 public:
  CommonsenseBackend backend() const override { return CommonsenseBackend::templated; }

 protected:
  KnowledgeBundle do_generate(std::string_view last_utterance) const override;
};

// Looks bundles up by sha256 of the utterance text.
class FixtureCommonsenseProvider final : public CommonsenseProvider {
 public:
  explicit FixtureCommonsenseProvider(const std::vector<CommonsenseRecord>& records);
  CommonsenseBackend backend() const override { return CommonsenseBackend::fixture; }

 protected:
  KnowledgeBundle do_generate(std::string_view last_utterance) const override;

 private:
  std::unordered_map<std::string, KnowledgeBundle> by_hash_;
};

// ---------------------------------------------------------------------------
// Prompt construction

// Prompt text with {{dialogue}} and {{label}} placeholders.
class PromptTemplate {
 public:
  PromptTemplate(std::string text, std::string version);
  static PromptTemplate load(const std::filesystem::path& path);
  // The template shipped under assets/prompts.
  static PromptTemplate default_template();

  const std::string& text() const { return text_; }
  const std::string& version() const { return version_; }
  std::string render(std::string_view dialogue, std::string_view label) const;

 private:
  std::string text_;
  std::string version_;
};

// "Speaker: ...\nListener: ..." in history order.
std::string render_dialogue(const std::vector<Utterance>& history);

std::string build_conect_prompt(const std::vector<Utterance>& history, const EmotionLabel& e_ano,
                                const PromptTemplate& tmpl = PromptTemplate::default_template());

// Recovers the label from a rendered prompt's "Sentiment label:" line.
std::optional<std::string> extract_sentiment_label(std::string_view prompt);

// ---------------------------------------------------------------------------
// LLM client and cache

struct ConectRecord {
  std::string prompt;
  std::string response;
  std::string cache_key;
  std::string llm_id;
  std::string created_at;

  std::string to_json() const;
  static ConectRecord from_json(std::string_view line);
};

class ConectError : public std::runtime_error {
 public:
  ConectError(const std::string& what, std::string cache_key)
      : std::runtime_error(what + " [cache_key=" + cache_key + "]"), cache_key_(std::move(cache_key)) {}
  const std::string& cache_key() const { return cache_key_; }

 private:
  std::string cache_key_;
};

std::vector<ConectRecord> load_conect_records(const std::filesystem::path& path);

enum class LlmBackend { echo, fixture, http };

std::string_view backend_name(LlmBackend b);
LlmBackend parse_llm_backend(std::string_view name);

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  std::string complete(const std::string& prompt);
  virtual LlmBackend backend() const = 0;
  virtual std::string id() const = 0;
  std::size_t calls() const { return calls_.load(); }

 protected:
  virtual std::string do_complete(const std::string& prompt) = 0;

 private:
  std::atomic<std::size_t> calls_{0};
};

// Deterministic digest-tagged stub that repeats the prompt's label.
class EchoLlmClient final : public LlmClient {
 public:
  LlmBackend backend() const override { return LlmBackend::echo; }
  std::string id() const override { return "echo-v1"; }

 protected:
  std::string do_complete(const std::string& prompt) override;
};

// Serves stored responses keyed by prompt digest.
class FixtureLlmClient final : public LlmClient {
 public:
  explicit FixtureLlmClient(const std::vector<ConectRecord>& records, std::string llm_id = "fixture");
  static FixtureLlmClient load(const std::filesystem::path& path);
  LlmBackend backend() const override { return LlmBackend::fixture; }
  std::string id() const override { return llm_id_; }

 protected:
  std::string do_complete(const std::string& prompt) override;

 private:
  std::unordered_map<std::string, std::string> responses_;
  std::string llm_id_;
};

struct HttpLlmConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string path = "/v1/chat/completions";
  std::string model = "llama-2-13b-chat";
  std::string api_key_env = "LAMB_LLM_API_KEY";
  double temperature = 0.8;
  double top_p = 0.95;
  int max_attempts = 3;
  double initial_backoff_seconds = 1.0;
  double timeout_seconds = 60.0;
};

// OpenAI-compatible chat-completions endpoint.
class HttpLlmClient final : public LlmClient {
 public:
  using Sleeper = std::function<void(std::chrono::duration<double>)>;

  explicit HttpLlmClient(HttpLlmConfig config, Sleeper sleeper = {});
  LlmBackend backend() const override { return LlmBackend::http; }
  std::string id() const override { return "http:" + config_.model; }
  const HttpLlmConfig& config() const { return config_; }
  std::size_t attempts() const { return attempts_.load(); }

  static std::string request_body(const HttpLlmConfig& config, const std::string& prompt);

 protected:
  std::string do_complete(const std::string& prompt) override;

 private:
  HttpLlmConfig config_;
  Sleeper sleeper_;
  std::atomic<std::size_t> attempts_{0};
};

// ISO-8601 UTC; honours SOURCE_DATE_EPOCH when set.
std::string current_timestamp();

// Append-only JSONL store keyed by prompt digest. Lookups take a shared
// lock; appends are serialized and flushed line by line.
class ConectCache {
 public:
  ConectCache() = default;  // in-memory only
  explicit ConectCache(std::filesystem::path path);

  std::optional<ConectRecord> find(const std::string& cache_key) const;
  // Returns the stored record; if the key already exists the earlier record wins.
  ConectRecord insert(ConectRecord record);
  std::size_t size() const;
  const std::optional<std::filesystem::path>& path() const { return path_; }

 private:
  std::optional<std::filesystem::path> path_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, ConectRecord> records_;
  std::ofstream out_;
};

ConectRecord query_conect(const std::string& prompt, LlmClient& client, ConectCache& cache);

}  // namespace lamb
