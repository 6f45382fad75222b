#include "lamb/knowledge.hpp"

#include "lamb/digest.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <ctime>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#ifndef LAMB_ASSET_DIR
#define LAMB_ASSET_DIR "assets"
#endif

namespace lamb {

using nlohmann::json;

std::string_view relation_name(Relation r) {
  switch (r) {
    case Relation::x_intent: return "xIntent";
    case Relation::x_effect: return "xEffect";
    case Relation::x_want: return "xWant";
    case Relation::x_react: return "xReact";
    case Relation::x_need: return "xNeed";
  }
  return "?";
}

void KnowledgeBundle::validate() const {
  for (Relation r : kRelations) {
    if (normalize_whitespace(text(r)).empty()) {
      throw std::invalid_argument("knowledge bundle relation " + std::string(relation_name(r)) +
                                  " is empty");
    }
  }
}

std::string_view backend_name(CommonsenseBackend b) {
  return b == CommonsenseBackend::templated ? "template" : "fixture";
}

CommonsenseBackend parse_commonsense_backend(std::string_view name) {
  if (name == "template") return CommonsenseBackend::templated;
  if (name == "fixture") return CommonsenseBackend::fixture;
  throw std::invalid_argument("unknown commonsense backend '" + std::string(name) + "'");
}

std::string commonsense_record_to_json(const CommonsenseRecord& record) {
  json j = {{"utterance_hash", record.utterance_hash}, {"utterance", record.bundle.source_utterance}};
  for (Relation r : kRelations) j[std::string(relation_name(r))] = record.bundle.text(r);
  return j.dump();
}

std::vector<CommonsenseRecord> load_commonsense_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open commonsense file '" + path.string() + "'");
  std::vector<CommonsenseRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    try {
      const json j = json::parse(line);
      CommonsenseRecord rec;
      rec.utterance_hash = j.at("utterance_hash").get<std::string>();
      rec.bundle.source_utterance = j.at("utterance").get<std::string>();
      for (Relation r : kRelations) {
        rec.bundle.texts[static_cast<std::size_t>(r)] = j.at(std::string(relation_name(r))).get<std::string>();
      }
      rec.bundle.validate();
      out.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void save_commonsense_records(const std::filesystem::path& path,
                              const std::vector<CommonsenseRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  for (const auto& r : records) out << commonsense_record_to_json(r) << '\n';
}

KnowledgeBundle CommonsenseProvider::generate(std::string_view last_utterance) const {
  if (normalize_whitespace(last_utterance).empty()) {
    throw std::invalid_argument("generate_commonsense: empty utterance");
  }
  ++calls_;
  KnowledgeBundle b = do_generate(last_utterance);
  b.validate();
  return b;
}

namespace {

const std::set<std::string>& stopwords() {
  static const std::set<std::string> kStop{
      "a",    "an",   "the",  "and",  "or",   "but",  "i",    "you",  "he",   "she",  "it",
      "we",   "they", "me",   "my",   "your", "our",  "is",   "am",   "are",  "was",  "were",
      "be",   "been", "to",   "of",   "in",   "on",   "at",   "for",  "with", "about", "so",
      "that", "this", "have", "has",  "had",  "do",   "did",  "not",  "just", "really", "very",
      "when", "what", "how",  "all",  "there", "from", "as",  "by",   "its",  "im",   "s"};
  return kStop;
}

}  // namespace

KnowledgeBundle TemplateCommonsenseProvider::do_generate(std::string_view last_utterance) const {
  std::vector<std::string> keywords;
  for (const auto& tok : tokenize(last_utterance)) {
    const bool alpha = std::all_of(tok.begin(), tok.end(), [](char c) {
      return std::isalpha(static_cast<unsigned char>(c)) != 0;
    });
    if (!alpha || stopwords().count(tok) != 0) continue;
    if (std::find(keywords.begin(), keywords.end(), tok) != keywords.end()) continue;
    keywords.push_back(tok);
    if (keywords.size() == 4) break;
  }
  std::string tail;
  for (const auto& k : keywords) tail += " " + k;
  if (tail.empty()) tail = " the situation";

  static constexpr std::array<std::string_view, kRelationCount> kPhrases{
      "intends to share", "is affected by", "wants to talk about", "feels strongly about",
      "needed to experience"};
  KnowledgeBundle b;
  b.source_utterance = normalize_whitespace(last_utterance);
  for (std::size_t i = 0; i < kRelationCount; ++i) {
    b.texts[i] = "the speaker " + std::string(kPhrases[i]) + tail;
  }
  return b;
}

FixtureCommonsenseProvider::FixtureCommonsenseProvider(const std::vector<CommonsenseRecord>& records) {
  for (const auto& r : records) by_hash_.emplace(r.utterance_hash, r.bundle);
}

KnowledgeBundle FixtureCommonsenseProvider::do_generate(std::string_view last_utterance) const {
  const std::string hash = sha256_hex(normalize_whitespace(last_utterance));
  auto it = by_hash_.find(hash);
  if (it == by_hash_.end()) {
    throw std::out_of_range("commonsense fixture miss for utterance hash " + hash);
  }
  return it->second;
}

PromptTemplate::PromptTemplate(std::string text, std::string version)
    : text_(std::move(text)), version_(std::move(version)) {
  for (std::string_view ph : {"{{dialogue}}", "{{label}}"}) {
    const auto first = text_.find(ph);
    if (first == std::string::npos || text_.find(ph, first + 1) != std::string::npos) {
      throw std::invalid_argument("prompt template must contain " + std::string(ph) + " exactly once");
    }
  }
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open prompt template '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return PromptTemplate(ss.str(), path.stem().string());
}

PromptTemplate PromptTemplate::default_template() {
  static const PromptTemplate tmpl =
      load(std::filesystem::path(LAMB_ASSET_DIR) / "prompts" / "conect_v1.txt");
  return tmpl;
}

std::string PromptTemplate::render(std::string_view dialogue, std::string_view label) const {
  std::string out = text_;
  // Label first: a dialogue may legitimately contain the literal "{{label}}".
  out.replace(out.find("{{label}}"), 9, label);
  out.replace(out.find("{{dialogue}}"), 12, dialogue);
  return out;
}

std::string render_dialogue(const std::vector<Utterance>& history) {
  std::string out;
  for (const auto& u : history) {
    if (!out.empty()) out.push_back('\n');
    out += u.role == Role::speaker ? "Speaker: " : "Listener: ";
    out += normalize_whitespace(u.text);
  }
  return out;
}

std::string build_conect_prompt(const std::vector<Utterance>& history, const EmotionLabel& e_ano,
                                const PromptTemplate& tmpl) {
  if (history.empty()) throw std::invalid_argument("build_conect_prompt: empty history");
  if (e_ano.name.empty()) throw std::invalid_argument("build_conect_prompt: empty label");
  return tmpl.render(render_dialogue(history), e_ano.name);
}

std::optional<std::string> extract_sentiment_label(std::string_view prompt) {
  static constexpr std::string_view kKey = "Sentiment label: ";
  const auto pos = prompt.rfind(kKey);
  if (pos == std::string_view::npos) return std::nullopt;
  const auto start = pos + kKey.size();
  const auto end = prompt.find('\n', start);
  std::string label(prompt.substr(start, end == std::string_view::npos ? end : end - start));
  label = normalize_whitespace(label);
  if (label.empty()) return std::nullopt;
  return label;
}

std::string ConectRecord::to_json() const {
  json j = {{"cache_key", cache_key},
            {"llm_id", llm_id},
            {"prompt", prompt},
            {"response", response},
            {"created_at", created_at}};
  return j.dump();
}

ConectRecord ConectRecord::from_json(std::string_view line) {
  const json j = json::parse(line);
  ConectRecord r;
  r.cache_key = j.at("cache_key").get<std::string>();
  r.llm_id = j.at("llm_id").get<std::string>();
  r.prompt = j.at("prompt").get<std::string>();
  r.response = j.at("response").get<std::string>();
  r.created_at = j.at("created_at").get<std::string>();
  if (r.cache_key != sha256_hex(r.prompt)) {
    throw std::runtime_error("cache record key does not match its prompt digest");
  }
  if (r.response.empty()) throw std::runtime_error("cache record has an empty response");
  return r;
}

std::string_view backend_name(LlmBackend b) {
  switch (b) {
    case LlmBackend::echo: return "echo";
    case LlmBackend::fixture: return "fixture";
    case LlmBackend::http: return "http";
  }
  return "?";
}

LlmBackend parse_llm_backend(std::string_view name) {
  if (name == "echo") return LlmBackend::echo;
  if (name == "fixture") return LlmBackend::fixture;
  if (name == "http") return LlmBackend::http;
  throw std::invalid_argument("unknown llm backend '" + std::string(name) + "'");
}

std::string LlmClient::complete(const std::string& prompt) {
  ++calls_;
  return do_complete(prompt);
}

std::string EchoLlmClient::do_complete(const std::string& prompt) {
  const std::string tag = sha256_hex(prompt).substr(0, 12);
  const std::string label = extract_sentiment_label(prompt).value_or("unknown");
  return "[echo " + tag + "] the speaker seems to feel " + label +
         " . the dialogue describes what made the speaker feel " + label + " .";
}

std::vector<ConectRecord> load_conect_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::vector<ConectRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    try {
      out.push_back(ConectRecord::from_json(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}


FixtureLlmClient::FixtureLlmClient(const std::vector<ConectRecord>& records, std::string llm_id)
    : llm_id_(std::move(llm_id)) {
  for (const auto& r : records) responses_.emplace(r.cache_key, r.response);
}

FixtureLlmClient FixtureLlmClient::load(const std::filesystem::path& path) {
  return FixtureLlmClient(load_conect_records(path));
}

std::string FixtureLlmClient::do_complete(const std::string& prompt) {
  const std::string key = sha256_hex(prompt);
  auto it = responses_.find(key);
  if (it == responses_.end()) throw ConectError("llm fixture has no response for prompt", key);
  return it->second;
}

std::string current_timestamp() {
  std::time_t t = 0;
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH"); sde != nullptr && *sde != '\0') {
    t = static_cast<std::time_t>(std::strtoll(sde, nullptr, 10));
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

ConectCache::ConectCache(std::filesystem::path path) : path_(std::move(path)) {
  if (std::filesystem::exists(*path_)) {
    for (auto& r : load_conect_records(*path_)) records_.emplace(r.cache_key, std::move(r));
  } else if (path_->has_parent_path()) {
    std::filesystem::create_directories(path_->parent_path());
  }
  out_.open(*path_, std::ios::binary | std::ios::app);
  if (!out_) throw std::runtime_error("cannot open cache '" + path_->string() + "' for append");
}

std::optional<ConectRecord> ConectCache::find(const std::string& cache_key) const {
  std::shared_lock lock(mutex_);
  auto it = records_.find(cache_key);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

ConectRecord ConectCache::insert(ConectRecord record) {
  std::unique_lock lock(mutex_);
  auto [it, inserted] = records_.emplace(record.cache_key, record);
  if (inserted && out_.is_open()) {
    out_ << record.to_json() << '\n';
    out_.flush();
  }
  return it->second;
}

std::size_t ConectCache::size() const {
  std::shared_lock lock(mutex_);
  return records_.size();
}

ConectRecord query_conect(const std::string& prompt, LlmClient& client, ConectCache& cache) {
  if (prompt.empty()) throw std::invalid_argument("query_conect: empty prompt");
  const std::string key = sha256_hex(prompt);
  if (auto hit = cache.find(key)) return *std::move(hit);
  std::string response;
  try {
    response = client.complete(prompt);
  } catch (const ConectError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConectError(e.what(), key);
  }
  if (normalize_whitespace(response).empty()) throw ConectError("llm returned an empty response", key);
  ConectRecord rec{prompt, std::move(response), key, client.id(), current_timestamp()};
  return cache.insert(std::move(rec));
}

}  // namespace lamb
