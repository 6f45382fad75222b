#pragma once

// Stand-ins for the global-sentiment predictor and the emotion-cause
// detector. The rest of the pipeline only sees their input/output
// contracts: a label for the whole dialogue, and an ordered subset of its
// utterances.

#include "lamb/corpus.hpp"

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lamb {

class EmotionLexicon {
 public:
  EmotionLexicon() = default;
  // Throws std::invalid_argument if an emotion is not in `labels`.
  EmotionLexicon(const std::map<std::string, std::vector<std::string>>& entries,
                 const LabelSet& labels);

  static EmotionLexicon from_json(std::string_view json, const LabelSet& labels);
  static EmotionLexicon load(const std::filesystem::path& path, const LabelSet& labels);
  std::string to_json() const;

  // Label indices (ascending) associated with `word`; empty if none.
  const std::vector<int>& emotions_for(std::string_view word) const;
  bool word_signals(std::string_view word, int emotion_index) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, std::vector<int>> entries_;
  std::vector<std::string> label_names_;
};

enum class SentimentBackend { oracle, lexicon, fixture };
enum class CauseBackend { oracle, heuristic, fixture };

std::string_view backend_name(SentimentBackend b);
std::string_view backend_name(CauseBackend b);
SentimentBackend parse_sentiment_backend(std::string_view name);
CauseBackend parse_cause_backend(std::string_view name);

// One row of the selector fixture file.
struct SelectionRecord {
  std::string id;
  std::string e_ano;
  std::vector<int> cause_turn_indices;
};

std::vector<SelectionRecord> load_selection_records(const std::filesystem::path& path);
void save_selection_records(const std::filesystem::path& path,
                            const std::vector<SelectionRecord>& records);

class SentimentPredictor {
 public:
  virtual ~SentimentPredictor() = default;
  EmotionLabel predict(const DialogueSample& sample) const;
  virtual SentimentBackend backend() const = 0;
  std::size_t calls() const { return calls_.load(); }

 protected:
  virtual EmotionLabel do_predict(const DialogueSample& sample) const = 0;

 private:
  mutable std::atomic<std::size_t> calls_{0};
};

class OracleSentimentPredictor final : public SentimentPredictor {
 public:
  SentimentBackend backend() const override { return SentimentBackend::oracle; }

 protected:
  EmotionLabel do_predict(const DialogueSample& sample) const override;
};

// Word-vote over every utterance; ties go to the lowest label index and a
// dialogue without any lexicon hit gets `fallback`.
class LexiconSentimentPredictor final : public SentimentPredictor {
 public:
  LexiconSentimentPredictor(EmotionLexicon lexicon, const LabelSet& labels, EmotionLabel fallback);
  SentimentBackend backend() const override { return SentimentBackend::lexicon; }
  std::vector<long long> vote_counts(const std::vector<Utterance>& history) const;

 protected:
  EmotionLabel do_predict(const DialogueSample& sample) const override;

 private:
  EmotionLexicon lexicon_;
  const LabelSet* labels_;
  EmotionLabel fallback_;
};

class FixtureSentimentPredictor final : public SentimentPredictor {
 public:
  FixtureSentimentPredictor(const std::vector<SelectionRecord>& records, const LabelSet& labels);
  SentimentBackend backend() const override { return SentimentBackend::fixture; }

 protected:
  EmotionLabel do_predict(const DialogueSample& sample) const override;

 private:
  std::unordered_map<std::string, EmotionLabel> labels_by_id_;
};

// Most frequent gold label; ties to the lowest index.
EmotionLabel majority_label(const std::vector<DialogueSample>& samples, const LabelSet& labels);

class CauseDetector {
 public:
  virtual ~CauseDetector() = default;
  // Ordered, non-empty subset of sample.history.
  std::vector<Utterance> detect(const DialogueSample& sample, const EmotionLabel& e_ano) const;
  virtual CauseBackend backend() const = 0;
  std::size_t calls() const { return calls_.load(); }

 protected:
  // Returns history indices; an empty result triggers the S_N fallback.
  virtual std::vector<int> select(const DialogueSample& sample, const EmotionLabel& e_ano) const = 0;

 private:
  mutable std::atomic<std::size_t> calls_{0};
};

class HeuristicCauseDetector final : public CauseDetector {
 public:
  explicit HeuristicCauseDetector(EmotionLexicon lexicon) : lexicon_(std::move(lexicon)) {}
  CauseBackend backend() const override { return CauseBackend::heuristic; }

 protected:
  std::vector<int> select(const DialogueSample& sample, const EmotionLabel& e_ano) const override;

 private:
  EmotionLexicon lexicon_;
};

// Gold cause spans supplied by the data author; ids without spans fall back.
class OracleCauseDetector final : public CauseDetector {
 public:
  explicit OracleCauseDetector(std::unordered_map<std::string, std::vector<int>> spans)
      : spans_(std::move(spans)) {}
  CauseBackend backend() const override { return CauseBackend::oracle; }

 protected:
  std::vector<int> select(const DialogueSample& sample, const EmotionLabel& e_ano) const override;

 private:
  std::unordered_map<std::string, std::vector<int>> spans_;
};

// Replays recorded detector output; an unknown id is an error.
class FixtureCauseDetector final : public CauseDetector {
 public:
  explicit FixtureCauseDetector(const std::vector<SelectionRecord>& records);
  CauseBackend backend() const override { return CauseBackend::fixture; }

 protected:
  std::vector<int> select(const DialogueSample& sample, const EmotionLabel& e_ano) const override;

 private:
  std::unordered_map<std::string, std::vector<int>> spans_;
};

}  // namespace lamb
