#include "lamb/pipeline.hpp"

#include "lamb/digest.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#ifndef LAMB_VERSION
#define LAMB_VERSION "0.0.0"
#endif
#ifndef LAMB_FIXTURE_DIR
#define LAMB_FIXTURE_DIR "tests/data"
#endif

namespace lamb::pipeline {

using nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

template <typename T>
const T& require(const T* p, const char* what, const std::string& id) {
  if (p == nullptr) throw std::logic_error("featurize " + id + ": no " + std::string(what) + " provider configured");
  return *p;
}

std::vector<int> history_indices(const std::vector<Utterance>& selected) {
  std::vector<int> out;
  for (const auto& u : selected) out.push_back(u.turn_index);
  return out;
}

std::vector<metrics::Tokens> reference_tokens(const std::vector<DialogueSample>& samples) {
  std::vector<metrics::Tokens> refs;
  for (const auto& s : samples) refs.push_back(tokenize(s.gold_response));
  return refs;
}

TrainConfig checkpoint_config(const Checkpoint& ckpt) { return TrainConfig::from_json(ckpt.config); }

}  // namespace

json CallCounts::to_json() const {
  return {{"sentiment", sentiment}, {"cause", cause}, {"commonsense", commonsense}, {"llm", llm}};
}

CallCounts call_counts(const ProviderSet& p) {
  CallCounts c;
  if (p.sentiment != nullptr) c.sentiment = p.sentiment->calls();
  if (p.cause != nullptr) c.cause = p.cause->calls();
  if (p.commonsense != nullptr) c.commonsense = p.commonsense->calls();
  if (p.llm != nullptr) c.llm = p.llm->calls();
  return c;
}

PreparedSample featurize(const DialogueSample& sample, const Vocab& vocab, const ModelConfig& config,
                         const ProviderSet& p) {
  PreparedSample s;
  s.id = sample.id;
  s.context = encode_dialogue(sample, vocab, config.max_context_len);
  const KnowledgeBundle bundle =
      require(p.commonsense, "commonsense", sample.id).generate(sample.last_speaker_utterance().text);
  s.relations = relation_token_ids(bundle, vocab, config.max_relation_len);

  const Ablation a = config.ablation;
  if (uses_selectors(a) || uses_conect(a)) {
    const EmotionLabel e_ano = require(p.sentiment, "sentiment", sample.id).predict(sample);
    if (uses_selectors(a)) {
      const auto selected = require(p.cause, "cause", sample.id).detect(sample, e_ano);
      s.cause = encode_utterances(selected, vocab, config.max_context_len);
    }
    if (uses_conect(a)) {
      const std::string prompt =
          build_conect_prompt(sample.history, e_ano, require(p.prompt, "prompt template", sample.id));
      if (p.llm == nullptr || p.cache == nullptr) {
        throw std::logic_error("featurize " + sample.id + ": no llm client/cache configured");
      }
      const ConectRecord rec = query_conect(prompt, *p.llm, *p.cache);
      s.conect = conect_token_ids(rec.response, vocab, config.max_conect_len);
    }
  }
  if (!sample.gold_response.empty()) {
    for (int id : vocab.encode(sample.gold_response)) {
      if (s.target.size() + 1 >= config.max_target_len) break;
      s.target.push_back(id);
    }
    s.target.push_back(special::eos);
  }
  s.emotion = sample.gold_emotion.index;
  return s;
}

std::vector<PreparedSample> featurize_all(const std::vector<DialogueSample>& samples, const Vocab& vocab,
                                          const ModelConfig& config, const ProviderSet& providers) {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(featurize(s, vocab, config, providers));
  return out;
}

bool covers(Ablation built, Ablation wanted) {
  return built == Ablation::full || built == wanted || wanted == Ablation::vanilla;
}

std::unique_ptr<KnowledgeStore> KnowledgeStore::load(const fs::path& dir) {
  auto store = std::unique_ptr<KnowledgeStore>(new KnowledgeStore());
  store->dir_ = dir;
  const json manifest = read_manifest(dir);
  store->built_for_ = parse_ablation(manifest.at("details").at("ablation").get<std::string>());
  const LabelSet& labels = LabelSet::empathetic_dialogues();

  store->commonsense_ = std::make_unique<FixtureCommonsenseProvider>(load_commonsense_records(dir / "commonsense.jsonl"));
  std::vector<SelectionRecord> selections;
  if (fs::exists(dir / "selections.jsonl")) selections = load_selection_records(dir / "selections.jsonl");
  store->sentiment_ = std::make_unique<FixtureSentimentPredictor>(selections, labels);
  store->cause_ = std::make_unique<FixtureCauseDetector>(selections);
  store->llm_ = std::make_unique<FixtureLlmClient>(
      fs::exists(dir / "conect_cache.jsonl") ? load_conect_records(dir / "conect_cache.jsonl")
                                             : std::vector<ConectRecord>{});
  store->cache_ = std::make_unique<ConectCache>();
  store->prompt_ = std::make_unique<PromptTemplate>(fs::exists(dir / "prompt_template.txt")
                                                        ? PromptTemplate::load(dir / "prompt_template.txt")
                                                        : PromptTemplate::default_template());
  return store;
}

ProviderSet KnowledgeStore::providers() {
  return {sentiment_.get(), cause_.get(), commonsense_.get(), llm_.get(), cache_.get(), prompt_.get()};
}

fs::path default_fixture_dir() { return LAMB_FIXTURE_DIR; }

LiveProviders::LiveProviders(const ProviderOptions& o, const std::vector<DialogueSample>& reference) {
  const LabelSet& labels = LabelSet::empathetic_dialogues();
  const fs::path dir = o.fixture_dir.empty() ? default_fixture_dir() : o.fixture_dir;
  std::vector<SelectionRecord> selections;
  const bool need_selections = o.sentiment == SentimentBackend::fixture || o.cause != CauseBackend::heuristic;
  if (need_selections) selections = load_selection_records(dir / "selections.jsonl");
  std::optional<EmotionLexicon> lexicon;
  if (o.sentiment == SentimentBackend::lexicon || o.cause == CauseBackend::heuristic) {
    lexicon = EmotionLexicon::load(dir / "lexicon.json", labels);
  }

  switch (o.sentiment) {
    case SentimentBackend::oracle: sentiment_ = std::make_unique<OracleSentimentPredictor>(); break;
    case SentimentBackend::lexicon: {
      const EmotionLabel fallback = reference.empty() ? labels.at(0) : majority_label(reference, labels);
      sentiment_ = std::make_unique<LexiconSentimentPredictor>(*lexicon, labels, fallback);
      break;
    }
    case SentimentBackend::fixture: sentiment_ = std::make_unique<FixtureSentimentPredictor>(selections, labels); break;
  }
  switch (o.cause) {
    case CauseBackend::oracle: {
      std::unordered_map<std::string, std::vector<int>> spans;
      for (const auto& r : selections) spans[r.id] = r.cause_turn_indices;
      cause_ = std::make_unique<OracleCauseDetector>(std::move(spans));
      break;
    }
    case CauseBackend::heuristic: cause_ = std::make_unique<HeuristicCauseDetector>(*lexicon); break;
    case CauseBackend::fixture: cause_ = std::make_unique<FixtureCauseDetector>(selections); break;
  }
  switch (o.commonsense) {
    case CommonsenseBackend::templated: commonsense_ = std::make_unique<TemplateCommonsenseProvider>(); break;
    case CommonsenseBackend::fixture:
      commonsense_ = std::make_unique<FixtureCommonsenseProvider>(load_commonsense_records(dir / "comet.jsonl"));
      break;
  }
  switch (o.llm) {
    case LlmBackend::echo: llm_ = std::make_unique<EchoLlmClient>(); break;
    case LlmBackend::fixture: llm_ = std::make_unique<FixtureLlmClient>(load_conect_records(dir / "conect.jsonl")); break;
    case LlmBackend::http: llm_ = std::make_unique<HttpLlmClient>(o.http); break;
  }
  prompt_ = std::make_unique<PromptTemplate>(o.prompt_template ? PromptTemplate::load(*o.prompt_template)
                                                               : PromptTemplate::default_template());
}

ProviderSet LiveProviders::providers(ConectCache* cache) {
  return {sentiment_.get(), cause_.get(), commonsense_.get(), llm_.get(), cache, prompt_.get()};
}

// ---------------------------------------------------------------------------
// Manifests

json RunManifest::to_json() const {
  return {{"command", command},        {"config_path", config_path}, {"config_hash", config_hash},
          {"seed", seed},              {"code_version", code_version()}, {"output_dir", output_dir},
          {"started_at", started_at},  {"finished_at", finished_at}, {"details", details}};
}

std::string code_version() { return LAMB_VERSION; }

std::string config_hash(const json& config) { return sha256_hex(config.dump()); }

void write_manifest(const fs::path& dir, const RunManifest& manifest) {
  fs::create_directories(dir);
  write_file(dir / "manifest.json", manifest.to_json().dump(2) + "\n");
}

json read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) throw std::runtime_error("no manifest.json in '" + dir.string() + "'");
  return json::parse(read_file(path));
}

// ---------------------------------------------------------------------------
// prepare-data

void prepare_data(const PrepareOptions& o) {
  const std::string started = current_timestamp();
  if (!fs::exists(o.input)) throw std::runtime_error("input corpus '" + o.input.string() + "' does not exist");
  const auto samples = load_dataset(o.input);
  if (samples.empty()) throw std::runtime_error("input corpus '" + o.input.string() + "' has no samples");
  const DatasetSplit split = split_dataset(samples, o.ratios, o.seed);
  const Vocab vocab = build_vocab(split.train, o.min_freq);

  fs::create_directories(o.out);
  save_dataset(o.out / "train.jsonl", split.train);
  save_dataset(o.out / "val.jsonl", split.val);
  save_dataset(o.out / "test.jsonl", split.test);
  vocab.save(o.out / "vocab.json");

  const json config = {{"input", o.input.filename().string()},
                       {"seed", o.seed},
                       {"min_freq", o.min_freq},
                       {"ratios", {o.ratios.train, o.ratios.val, o.ratios.test}}};
  RunManifest m;
  m.command = "prepare-data";
  m.config_hash = config_hash(config);
  m.seed = o.seed;
  m.output_dir = o.out.string();
  m.started_at = started;
  m.finished_at = current_timestamp();
  m.details = {{"config", config},
               {"train", split.train.size()},
               {"val", split.val.size()},
               {"test", split.test.size()},
               {"vocab_size", vocab.size()},
               {"input_sha256", sha256_hex(read_file(o.input))}};
  write_manifest(o.out, m);
}

const std::vector<DialogueSample>& DataSplits::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

DataSplits load_splits(const fs::path& dir) {
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "vocab.json"}) {
    if (!fs::exists(dir / f)) {
      throw std::runtime_error("data directory '" + dir.string() + "' lacks " + f + " (run prepare-data first)");
    }
  }
  DataSplits d{Vocab::load(dir / "vocab.json"), load_dataset(dir / "train.jsonl"), load_dataset(dir / "val.jsonl"),
               load_dataset(dir / "test.jsonl")};
  return d;
}

// ---------------------------------------------------------------------------
// build-knowledge

BuildKnowledgeResult build_knowledge(const BuildKnowledgeOptions& o) {
  if (o.ablation == Ablation::vanilla) {
    throw std::invalid_argument(
        "build-knowledge: nothing to build for the vanilla ablation; any other build already serves it");
  }
  const std::string started = current_timestamp();
  const DataSplits data = load_splits(o.data_dir);
  std::vector<const DialogueSample*> samples;
  for (const auto* split : {&data.train, &data.val, &data.test}) {
    for (const auto& s : *split) samples.push_back(&s);
  }
  fs::create_directories(o.out);

  // Previously built records, reused without provider calls.
  std::map<std::string, KnowledgeBundle> bundles;
  std::vector<std::string> bundle_order;
  if (fs::exists(o.out / "commonsense.jsonl")) {
    for (auto& r : load_commonsense_records(o.out / "commonsense.jsonl")) {
      if (bundles.emplace(r.utterance_hash, r.bundle).second) bundle_order.push_back(r.utterance_hash);
    }
  }
  std::map<std::string, SelectionRecord> selections;
  std::vector<std::string> selection_order;
  if (fs::exists(o.out / "selections.jsonl")) {
    for (auto& r : load_selection_records(o.out / "selections.jsonl")) {
      if (selections.emplace(r.id, r).second) selection_order.push_back(r.id);
    }
  }

  ConectCache cache(o.out / "conect_cache.jsonl");
  LiveProviders live(o.providers, data.train);
  const ProviderSet p = live.providers(&cache);
  const LabelSet& labels = LabelSet::empathetic_dialogues();
  const bool want_sentiment = uses_selectors(o.ablation) || uses_conect(o.ablation);

  std::mutex mutex;
  std::vector<SampleError> errors;
  std::atomic<bool> stop{false};

  auto work = [&](const DialogueSample& s) {
    std::string stage = "commonsense";
    try {
      const std::string& last = s.last_speaker_utterance().text;
      const std::string hash = sha256_hex(normalize_whitespace(last));
      bool have = false;
      {
        std::lock_guard lock(mutex);
        have = bundles.count(hash) != 0;
      }
      if (!have) {
        KnowledgeBundle b = p.commonsense->generate(last);
        std::lock_guard lock(mutex);
        if (bundles.emplace(hash, std::move(b)).second) bundle_order.push_back(hash);
      }
      if (!want_sentiment) return;

      SelectionRecord rec{s.id, "", {}};
      {
        std::lock_guard lock(mutex);
        if (auto it = selections.find(s.id); it != selections.end()) rec = it->second;
      }
      stage = "sentiment";
      if (rec.e_ano.empty()) rec.e_ano = p.sentiment->predict(s).name;
      const EmotionLabel e_ano = labels.find(rec.e_ano);
      stage = "cause";
      if (uses_selectors(o.ablation) && rec.cause_turn_indices.empty()) {
        rec.cause_turn_indices = history_indices(p.cause->detect(s, e_ano));
      }
      {
        std::lock_guard lock(mutex);
        auto [it, inserted] = selections.insert_or_assign(s.id, rec);
        if (inserted) selection_order.push_back(s.id);
      }
      stage = "conect";
      if (uses_conect(o.ablation)) query_conect(build_conect_prompt(s.history, e_ano, *p.prompt), *p.llm, cache);
    } catch (const std::exception& e) {
      std::lock_guard lock(mutex);
      errors.push_back({s.id, stage, e.what()});
      if (!o.continue_on_error) stop = true;
    }
  };

  const auto jobs = static_cast<std::size_t>(std::max(1, o.jobs));
  if (jobs == 1) {
    for (const auto* s : samples) {
      if (stop) break;
      work(*s);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(jobs, samples.size()); ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < samples.size() && !stop; i = next++) work(*samples[i]);
      });
    }
    for (auto& th : pool) th.join();
  }

  // Rewrite the record files in data order; earlier extra records follow.
  std::vector<CommonsenseRecord> cs;
  std::set<std::string> written;
  auto emit_bundle = [&](const std::string& hash) {
    if (auto it = bundles.find(hash); it != bundles.end() && written.insert(hash).second) cs.push_back({hash, it->second});
  };
  for (const auto* s : samples) emit_bundle(sha256_hex(normalize_whitespace(s->last_speaker_utterance().text)));
  for (const auto& h : bundle_order) emit_bundle(h);
  save_commonsense_records(o.out / "commonsense.jsonl", cs);
  if (want_sentiment || !selections.empty()) {
    std::vector<SelectionRecord> sel;
    std::set<std::string> seen;
    for (const auto* s : samples) {
      if (auto it = selections.find(s->id); it != selections.end() && seen.insert(s->id).second) sel.push_back(it->second);
    }
    for (const auto& id : selection_order) {
      if (seen.insert(id).second) sel.push_back(selections.at(id));
    }
    save_selection_records(o.out / "selections.jsonl", sel);
  }
  write_file(o.out / "prompt_template.txt", live.prompt().text());

  BuildKnowledgeResult result;
  result.samples = samples.size();
  result.calls = call_counts(p);
  std::sort(errors.begin(), errors.end(), [](const SampleError& a, const SampleError& b) { return a.id < b.id; });
  result.errors = errors;
  if (!errors.empty()) {
    std::string lines;
    for (const auto& e : errors) lines += json{{"id", e.id}, {"stage", e.stage}, {"message", e.message}}.dump() + "\n";
    write_file(o.out / "errors.jsonl", lines);
  } else if (fs::exists(o.out / "errors.jsonl")) {
    fs::remove(o.out / "errors.jsonl");
  }

  const json config = {{"ablation", ablation_name(o.ablation)},
                       {"sentiment_backend", backend_name(o.providers.sentiment)},
                       {"cause_backend", backend_name(o.providers.cause)},
                       {"commonsense_backend", backend_name(o.providers.commonsense)},
                       {"llm_backend", backend_name(o.providers.llm)},
                       {"llm_id", live.llm().id()},
                       {"prompt_version", live.prompt().version()}};
  RunManifest m;
  m.command = "build-knowledge";
  m.config_hash = config_hash(config);
  m.output_dir = o.out.string();
  m.started_at = started;
  m.finished_at = current_timestamp();
  m.details = config;
  m.details["samples"] = samples.size();
  m.details["calls"] = result.calls.to_json();
  m.details["errors"] = errors.size();
  write_manifest(o.out, m);

  if (!errors.empty() && !o.continue_on_error) {
    const auto& e = errors.front();
    throw std::runtime_error("build-knowledge failed on sample " + e.id + " (" + e.stage + "): " + e.message);
  }
  return result;
}

// ---------------------------------------------------------------------------
// train

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over (seed, stream).
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

std::unique_ptr<KnowledgeStore> load_store_for(const fs::path& dir, Ablation wanted) {
  auto store = KnowledgeStore::load(dir);
  if (!covers(store->built_for(), wanted)) {
    throw std::invalid_argument("knowledge in '" + dir.string() + "' was built for ablation '" +
                                std::string(ablation_name(store->built_for())) + "' and cannot serve '" +
                                std::string(ablation_name(wanted)) + "'");
  }
  return store;
}

}  // namespace

TrainOutcome train_command(const TrainOptions& o) {
  const std::string started = current_timestamp();
  const DataSplits data = load_splits(o.data_dir);
  TrainConfig cfg = o.config;
  cfg.model.vocab_size = data.vocab.size();
  cfg.validate();
  auto store = load_store_for(o.knowledge_dir, cfg.model.ablation);
  const ProviderSet providers = store->providers();
  const auto samples = featurize_all(data.train, data.vocab, cfg.model, providers);

  LambModel model(cfg.model, derive_seed(cfg.seed, 1));
  Trainer trainer(model, cfg);
  fs::create_directories(o.out);
  const fs::path ckpt_path = o.out / "checkpoint.bin";
  bool resumed = false;
  if (o.resume && fs::exists(ckpt_path)) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    if (config_hash(ckpt.config) != config_hash(cfg.to_json())) {
      throw std::invalid_argument("cannot resume: checkpoint config differs from the requested config");
    }
    apply_checkpoint(ckpt, model, &trainer.optimizer(), &trainer.rng());
    trainer.set_epochs_done(ckpt.epoch);
    resumed = true;
  }
  const auto mode = resumed ? std::ios::app : std::ios::trunc;
  std::ofstream step_log(o.out / "train_log.jsonl", std::ios::binary | mode);
  std::ofstream epoch_log(o.out / "epochs.jsonl", std::ios::binary | mode);

  TrainOutcome outcome;
  outcome.epochs = trainer.run(
      samples, [&](const StepLog& s) { step_log << s.to_json().dump() << '\n'; },
      [&](const EpochSummary& e) {
        epoch_log << e.to_json().dump() << '\n';
        step_log.flush();
        epoch_log.flush();
        save_checkpoint(ckpt_path, capture_checkpoint(trainer));
        if (!o.quiet) {
          std::cerr << "epoch " << e.epoch << ": total " << e.total << " (nll " << e.nll << ", emo " << e.emo
                    << "), train acc " << e.accuracy << "\n";
        }
      });
  if (!fs::exists(ckpt_path)) save_checkpoint(ckpt_path, capture_checkpoint(trainer));
  outcome.calls = call_counts(providers);

  RunManifest m;
  m.command = "train";
  m.config_path = o.config_path;
  m.config_hash = config_hash(cfg.to_json());
  m.seed = cfg.seed;
  m.output_dir = o.out.string();
  m.started_at = started;
  m.finished_at = current_timestamp();
  m.details = {{"config", cfg.to_json()},
               {"train_samples", samples.size()},
               {"parameters", model.parameters().scalar_count()},
               {"resumed", resumed},
               {"calls", outcome.calls.to_json()},
               {"data_dir", o.data_dir.string()},
               {"knowledge_dir", o.knowledge_dir.string()}};
  write_manifest(o.out, m);
  return outcome;
}

// ---------------------------------------------------------------------------
// evaluate

Evaluation evaluate_command(const EvaluateOptions& o) {
  const std::string started = current_timestamp();
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const TrainConfig cfg = checkpoint_config(ckpt);
  if (o.ablation && *o.ablation != cfg.model.ablation) {
    throw std::invalid_argument("ablation mismatch: checkpoint was trained as '" +
                                std::string(ablation_name(cfg.model.ablation)) + "' but '" +
                                std::string(ablation_name(*o.ablation)) + "' was requested");
  }
  const DataSplits data = load_splits(o.data_dir);
  if (data.vocab.size() != cfg.model.vocab_size) {
    throw std::invalid_argument("vocabulary in '" + o.data_dir.string() + "' has " + std::to_string(data.vocab.size()) +
                                " entries, checkpoint expects " + std::to_string(cfg.model.vocab_size));
  }
  auto store = load_store_for(o.knowledge_dir, cfg.model.ablation);
  LambModel model(cfg.model, 0);
  apply_checkpoint(ckpt, model);

  const auto& split = data.split(o.split);
  const auto samples = featurize_all(split, data.vocab, cfg.model, store->providers());
  EvalOptions eval = o.eval;
  eval.fingerprint = sha256_hex(read_file(o.checkpoint));
  Evaluation ev = evaluate(model, samples, reference_tokens(split), data.vocab, eval);

  fs::create_directories(o.out);
  write_file(o.out / "report.json", ev.report.to_json().dump(2) + "\n");
  write_file(o.out / "report.txt",
             render_table({{std::string(ablation_display(cfg.model.ablation)), ev.report}}));
  const LabelSet& labels = LabelSet::empathetic_dialogues();
  std::string lines;
  for (std::size_t i = 0; i < ev.samples.size(); ++i) {
    const auto& r = ev.samples[i];
    lines += json{{"id", r.id},
                  {"response", r.response.text},
                  {"reference", split[i].gold_response},
                  {"predicted_emotion", labels.at(r.predicted).name},
                  {"gold_emotion", split[i].gold_emotion.name}}
                 .dump() +
             "\n";
  }
  write_file(o.out / "responses.jsonl", lines);

  RunManifest m;
  m.command = "evaluate";
  m.config_hash = config_hash(cfg.to_json());
  m.seed = cfg.seed;
  m.output_dir = o.out.string();
  m.started_at = started;
  m.finished_at = current_timestamp();
  m.details = {{"checkpoint", o.checkpoint.string()},
               {"checkpoint_sha256", eval.fingerprint},
               {"split", o.split},
               {"samples", samples.size()},
               {"decode", {{"strategy", eval.decode.strategy == DecodeStrategy::greedy ? "greedy" : "beam"},
                           {"beam_size", eval.decode.beam_size},
                           {"max_gen_len", eval.decode.max_gen_len},
                           {"min_gen_len", eval.decode.min_gen_len}}}};
  write_manifest(o.out, m);
  return ev;
}

// ---------------------------------------------------------------------------
// generate

DialogueSample parse_dialogue_json(const json& j) {
  DialogueSample s;
  s.id = j.value("id", std::string("dialogue"));
  const LabelSet& labels = LabelSet::empathetic_dialogues();
  int turn = 0;
  for (const auto& u : j.at("history")) {
    Utterance utt;
    const std::string role = u.at("role").get<std::string>();
    if (role == "speaker") {
      utt.role = Role::speaker;
    } else if (role == "listener") {
      utt.role = Role::listener;
    } else {
      throw CorpusError("history[" + std::to_string(turn) + "].role must be speaker or listener (got '" + role + "')");
    }
    utt.text = normalize_whitespace(u.at("text").get<std::string>());
    utt.turn_index = turn++;
    s.history.push_back(std::move(utt));
  }
  if (j.contains("emotion")) s.gold_emotion = labels.find(j.at("emotion").get<std::string>());
  s.gold_response = j.value("response", std::string{});
  if (s.history.empty()) throw CorpusError("history must not be empty");
  if (s.history.size() % 2 == 0) {
    throw CorpusError("history length must be odd (got " + std::to_string(s.history.size()) + ")");
  }
  for (std::size_t i = 0; i < s.history.size(); ++i) {
    const Role expected = i % 2 == 0 ? Role::speaker : Role::listener;
    if (s.history[i].role != expected) {
      throw CorpusError("history[" + std::to_string(i) + "].role must be " + std::string(role_name(expected)));
    }
    if (s.history[i].text.empty()) throw CorpusError("history[" + std::to_string(i) + "].text is empty");
  }
  return s;
}

GenerateResult generate_command(const GenerateOptions& o) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const TrainConfig cfg = checkpoint_config(ckpt);
  const Vocab vocab = Vocab::load(o.vocab);
  if (vocab.size() != cfg.model.vocab_size) {
    throw std::invalid_argument("vocabulary '" + o.vocab.string() + "' does not match the checkpoint");
  }
  LambModel model(cfg.model, 0);
  apply_checkpoint(ckpt, model);
  DialogueSample sample = parse_dialogue_json(json::parse(read_file(o.dialogue)));
  sample.gold_response.clear();

  LiveProviders live(o.providers, {});
  ConectCache cache;
  const PreparedSample prepared = featurize(sample, vocab, cfg.model, live.providers(&cache));
  const ModelOutputs enc = model.encode(prepared);
  const Matrix& logits = enc.emotion_logits.value();
  GenerateResult r;
  r.response = generate(enc.memory, model.decoder(), o.decode, &vocab).text;
  r.emotion = LabelSet::empathetic_dialogues().at(
      argmax(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size()))));
  return r;
}

// ---------------------------------------------------------------------------
// ablate

std::vector<std::string> parameter_footprint(const LambModel& model, const PreparedSample& sample) {
  const SampleLoss l = model.loss(sample);
  const Tensor total = ag::add(l.nll.total, l.emo);
  std::set<const ag::Node*> reached;
  for (const ag::Node* n : ag::reachable_leaves(total)) reached.insert(n);
  std::vector<std::string> names;
  for (const auto& p : model.parameters().parameters()) {
    if (reached.count(p.tensor.node()) != 0) names.push_back(p.name);
  }
  return names;
}

AblateResult ablate_command(const AblateOptions& o) {
  const std::string started = current_timestamp();
  const DataSplits data = load_splits(o.data_dir);
  const auto refs = reference_tokens(data.test);
  AblateResult result;
  std::vector<std::pair<std::string, MetricReport>> table_rows;
  json rows_json = json::array();

  for (Ablation a : kAblations) {
    TrainConfig cfg = o.config;
    cfg.model.ablation = a;
    cfg.model.vocab_size = data.vocab.size();
    auto store = load_store_for(o.knowledge_dir, a);
    const ProviderSet providers = store->providers();
    const auto train = featurize_all(data.train, data.vocab, cfg.model, providers);
    const auto test = featurize_all(data.test, data.vocab, cfg.model, providers);

    AblationRow row;
    row.ablation = a;
    row.calls = call_counts(providers);
    LambModel model(cfg.model, derive_seed(cfg.seed, 1));
    Trainer trainer(model, cfg);
    row.epochs = trainer.run(train);
    row.footprint = parameter_footprint(model, train.front());
    EvalOptions eval = o.eval;
    eval.fingerprint = sha256_hex(serialize_checkpoint(capture_checkpoint(trainer)));
    row.report = evaluate(model, test, refs, data.vocab, eval).report;

    table_rows.emplace_back(std::string(ablation_display(a)), row.report);
    json epochs = json::array();
    for (const auto& e : row.epochs) epochs.push_back(e.to_json());
    rows_json.push_back({{"ablation", ablation_name(a)},
                         {"label", ablation_display(a)},
                         {"report", row.report.to_json()},
                         {"calls", row.calls.to_json()},
                         {"footprint_size", row.footprint.size()},
                         {"epochs", epochs}});
    result.rows.push_back(std::move(row));
  }
  result.table = render_table(table_rows);

  fs::create_directories(o.out);
  write_file(o.out / "ablation.json", json{{"rows", rows_json}}.dump(2) + "\n");
  write_file(o.out / "ablation_table.txt", result.table);
  RunManifest m;
  m.command = "ablate";
  m.config_path = o.config_path;
  m.config_hash = config_hash(o.config.to_json());
  m.seed = o.config.seed;
  m.output_dir = o.out.string();
  m.started_at = started;
  m.finished_at = current_timestamp();
  m.details = {{"config", o.config.to_json()}, {"rows", kAblations.size()}};
  write_manifest(o.out, m);
  return result;
}

}  // namespace lamb::pipeline
