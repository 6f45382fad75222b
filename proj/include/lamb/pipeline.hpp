#pragma once

// Command implementations behind the `lamb` tool: data preparation,
// knowledge building, training, evaluation, single-dialogue generation and
// the ablation matrix. Every command writes one manifest.json into its
// output directory.

#include "lamb/evaluation.hpp"
#include "lamb/knowledge.hpp"
#include "lamb/model.hpp"
#include "lamb/selectors.hpp"
#include "lamb/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace lamb::pipeline {

namespace fs = std::filesystem;

// Non-owning view of the providers a featurization may call.
struct ProviderSet {
  const SentimentPredictor* sentiment = nullptr;
  const CauseDetector* cause = nullptr;
  const CommonsenseProvider* commonsense = nullptr;
  LlmClient* llm = nullptr;
  ConectCache* cache = nullptr;
  const PromptTemplate* prompt = nullptr;
};

struct CallCounts {
  std::size_t sentiment = 0;
  std::size_t cause = 0;
  std::size_t commonsense = 0;
  std::size_t llm = 0;

  nlohmann::json to_json() const;
  friend bool operator==(const CallCounts&, const CallCounts&) = default;
};

CallCounts call_counts(const ProviderSet& providers);

// Tokenizes one dialogue and pulls in the knowledge streams its ablation
// uses; providers for unused streams are never touched. The target and
// emotion are filled only when the sample carries them.
PreparedSample featurize(const DialogueSample& sample, const Vocab& vocab, const ModelConfig& config,
                         const ProviderSet& providers);
std::vector<PreparedSample> featurize_all(const std::vector<DialogueSample>& samples, const Vocab& vocab,
                                          const ModelConfig& config, const ProviderSet& providers);

// Providers replaying a knowledge directory written by build_knowledge.
class KnowledgeStore {
 public:
  static std::unique_ptr<KnowledgeStore> load(const fs::path& dir);

  ProviderSet providers();
  Ablation built_for() const { return built_for_; }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  Ablation built_for_ = Ablation::full;
  std::unique_ptr<FixtureSentimentPredictor> sentiment_;
  std::unique_ptr<FixtureCauseDetector> cause_;
  std::unique_ptr<FixtureCommonsenseProvider> commonsense_;
  std::unique_ptr<FixtureLlmClient> llm_;
  std::unique_ptr<ConectCache> cache_;
  std::unique_ptr<PromptTemplate> prompt_;
};

// Knowledge built for `built` serves `wanted`.
bool covers(Ablation built, Ablation wanted);

struct ProviderOptions {
  SentimentBackend sentiment = SentimentBackend::fixture;
  CauseBackend cause = CauseBackend::fixture;
  CommonsenseBackend commonsense = CommonsenseBackend::fixture;
  LlmBackend llm = LlmBackend::fixture;
  fs::path fixture_dir;  // selections.jsonl, comet.jsonl, conect.jsonl, lexicon.json
  std::optional<fs::path> prompt_template;
  HttpLlmConfig http;
};

fs::path default_fixture_dir();

// Owns providers built from ProviderOptions.
class LiveProviders {
 public:
  // `reference` supplies the lexicon fallback label (majority gold label).
  LiveProviders(const ProviderOptions& options, const std::vector<DialogueSample>& reference);
  ProviderSet providers(ConectCache* cache);
  const PromptTemplate& prompt() const { return *prompt_; }
  const LlmClient& llm() const { return *llm_; }

 private:
  std::unique_ptr<SentimentPredictor> sentiment_;
  std::unique_ptr<CauseDetector> cause_;
  std::unique_ptr<CommonsenseProvider> commonsense_;
  std::unique_ptr<LlmClient> llm_;
  std::unique_ptr<PromptTemplate> prompt_;
};

// ---------------------------------------------------------------------------
// Manifests

struct RunManifest {
  std::string command;
  std::string config_path;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string output_dir;
  std::string started_at;
  std::string finished_at;
  nlohmann::json details = nlohmann::json::object();

  nlohmann::json to_json() const;
};

std::string code_version();
std::string config_hash(const nlohmann::json& config);
void write_manifest(const fs::path& dir, const RunManifest& manifest);
nlohmann::json read_manifest(const fs::path& dir);

// ---------------------------------------------------------------------------
// Commands

struct PrepareOptions {
  fs::path input;
  fs::path out;
  std::uint64_t seed = 13;
  int min_freq = 1;
  SplitRatios ratios;
};
void prepare_data(const PrepareOptions& options);

struct DataSplits {
  Vocab vocab;
  std::vector<DialogueSample> train, val, test;
  const std::vector<DialogueSample>& split(std::string_view name) const;
};
DataSplits load_splits(const fs::path& data_dir);

struct BuildKnowledgeOptions {
  fs::path data_dir;
  fs::path out;
  Ablation ablation = Ablation::full;
  ProviderOptions providers;
  int jobs = 1;
  bool continue_on_error = false;
};

struct SampleError {
  std::string id;
  std::string stage;
  std::string message;
};

struct BuildKnowledgeResult {
  std::size_t samples = 0;
  CallCounts calls;
  std::vector<SampleError> errors;
};

// Resumable: records already present in `out` are reused without calling
// the providers again. Throws on the first failure unless continue_on_error.
BuildKnowledgeResult build_knowledge(const BuildKnowledgeOptions& options);

struct TrainOptions {
  fs::path data_dir;
  fs::path knowledge_dir;
  fs::path out;
  TrainConfig config;
  std::string config_path;
  bool resume = false;
  bool quiet = true;
};

struct TrainOutcome {
  std::vector<EpochSummary> epochs;
  CallCounts calls;
};
TrainOutcome train_command(const TrainOptions& options);

struct EvaluateOptions {
  fs::path checkpoint;
  fs::path data_dir;
  fs::path knowledge_dir;
  std::string split = "test";
  fs::path out;
  std::optional<Ablation> ablation;  // must match the checkpoint when given
  EvalOptions eval;
};
Evaluation evaluate_command(const EvaluateOptions& options);

struct GenerateOptions {
  fs::path checkpoint;
  fs::path vocab;
  fs::path dialogue;  // JSON object with a "history" array
  ProviderOptions providers;
  DecodeOptions decode{DecodeStrategy::greedy, 4, 32, 1, {special::pad, special::bos, special::sep, special::cls}};
};

struct GenerateResult {
  std::string response;
  EmotionLabel emotion;
};
GenerateResult generate_command(const GenerateOptions& options);

// Dialogue from a JSON object; "emotion" and "response" are optional.
DialogueSample parse_dialogue_json(const nlohmann::json& j);

struct AblateOptions {
  fs::path data_dir;
  fs::path knowledge_dir;
  fs::path out;
  TrainConfig config;
  std::string config_path;
  EvalOptions eval;
};

struct AblationRow {
  Ablation ablation = Ablation::full;
  MetricReport report;
  CallCounts calls;
  std::vector<std::string> footprint;  // parameter names reached by the loss
  std::vector<EpochSummary> epochs;
};

struct AblateResult {
  std::vector<AblationRow> rows;
  std::string table;
};
AblateResult ablate_command(const AblateOptions& options);

// Parameter names reachable from one sample's loss graph.
std::vector<std::string> parameter_footprint(const LambModel& model, const PreparedSample& sample);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace lamb::pipeline
