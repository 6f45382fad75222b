#include "lamb/selectors.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lamb {

using nlohmann::json;

EmotionLexicon::EmotionLexicon(const std::map<std::string, std::vector<std::string>>& entries,
                               const LabelSet& labels)
    : label_names_(labels.names()) {
  for (const auto& [word, emotions] : entries) {
    std::vector<int> ids;
    for (const auto& e : emotions) {
      if (!labels.contains(e)) {
        throw std::invalid_argument("lexicon word '" + word + "' maps to unknown emotion '" + e + "'");
      }
      ids.push_back(labels.find(e).index);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    auto toks = tokenize(word);
    if (toks.size() != 1) throw std::invalid_argument("lexicon entry '" + word + "' is not a single token");
    entries_[toks.front()] = std::move(ids);
  }
}

EmotionLexicon EmotionLexicon::from_json(std::string_view text, const LabelSet& labels) {
  const json j = json::parse(text);
  if (!j.is_object()) throw std::invalid_argument("lexicon JSON must be an object");
  std::map<std::string, std::vector<std::string>> entries;
  for (auto it = j.begin(); it != j.end(); ++it) {
    entries[it.key()] = it.value().get<std::vector<std::string>>();
  }
  return EmotionLexicon(entries, labels);
}

EmotionLexicon EmotionLexicon::load(const std::filesystem::path& path, const LabelSet& labels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open lexicon '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str(), labels);
}

std::string EmotionLexicon::to_json() const {
  json j = json::object();
  for (const auto& [word, ids] : entries_) {
    json names = json::array();
    for (int id : ids) names.push_back(label_names_.at(static_cast<std::size_t>(id)));
    j[word] = std::move(names);
  }
  return j.dump(1) + "\n";
}

const std::vector<int>& EmotionLexicon::emotions_for(std::string_view word) const {
  static const std::vector<int> kNone;
  auto it = entries_.find(std::string(word));
  return it == entries_.end() ? kNone : it->second;
}

bool EmotionLexicon::word_signals(std::string_view word, int emotion_index) const {
  const auto& ids = emotions_for(word);
  return std::binary_search(ids.begin(), ids.end(), emotion_index);
}

std::string_view backend_name(SentimentBackend b) {
  switch (b) {
    case SentimentBackend::oracle: return "oracle";
    case SentimentBackend::lexicon: return "lexicon";
    case SentimentBackend::fixture: return "fixture";
  }
  return "?";
}

std::string_view backend_name(CauseBackend b) {
  switch (b) {
    case CauseBackend::oracle: return "oracle";
    case CauseBackend::heuristic: return "heuristic";
    case CauseBackend::fixture: return "fixture";
  }
  return "?";
}

SentimentBackend parse_sentiment_backend(std::string_view name) {
  if (name == "oracle") return SentimentBackend::oracle;
  if (name == "lexicon") return SentimentBackend::lexicon;
  if (name == "fixture") return SentimentBackend::fixture;
  throw std::invalid_argument("unknown sentiment backend '" + std::string(name) + "'");
}

CauseBackend parse_cause_backend(std::string_view name) {
  if (name == "oracle") return CauseBackend::oracle;
  if (name == "heuristic") return CauseBackend::heuristic;
  if (name == "fixture") return CauseBackend::fixture;
  throw std::invalid_argument("unknown cause backend '" + std::string(name) + "'");
}

std::vector<SelectionRecord> load_selection_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open selection fixture '" + path.string() + "'");
  std::vector<SelectionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("e_ano").get<std::string>(),
                     j.at("cause_turn_indices").get<std::vector<int>>()});
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void save_selection_records(const std::filesystem::path& path,
                            const std::vector<SelectionRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  for (const auto& r : records) {
    json j = {{"id", r.id}, {"e_ano", r.e_ano}, {"cause_turn_indices", r.cause_turn_indices}};
    out << j.dump() << '\n';
  }
}

EmotionLabel SentimentPredictor::predict(const DialogueSample& sample) const {
  if (sample.history.empty()) throw std::invalid_argument("predict_global_emotion: empty history");
  ++calls_;
  return do_predict(sample);
}

EmotionLabel OracleSentimentPredictor::do_predict(const DialogueSample& sample) const {
  return sample.gold_emotion;
}

LexiconSentimentPredictor::LexiconSentimentPredictor(EmotionLexicon lexicon, const LabelSet& labels,
                                                     EmotionLabel fallback)
    : lexicon_(std::move(lexicon)), labels_(&labels), fallback_(std::move(fallback)) {}

std::vector<long long> LexiconSentimentPredictor::vote_counts(
    const std::vector<Utterance>& history) const {
  std::vector<long long> votes(labels_->size(), 0);
  for (const auto& u : history) {
    for (const auto& tok : tokenize(u.text)) {
      for (int e : lexicon_.emotions_for(tok)) ++votes[static_cast<std::size_t>(e)];
    }
  }
  return votes;
}

EmotionLabel LexiconSentimentPredictor::do_predict(const DialogueSample& sample) const {
  const auto votes = vote_counts(sample.history);
  // max_element returns the first maximum, i.e. the lowest index on ties.
  const auto best = std::max_element(votes.begin(), votes.end());
  if (*best == 0) return fallback_;
  return labels_->at(static_cast<int>(best - votes.begin()));
}

FixtureSentimentPredictor::FixtureSentimentPredictor(const std::vector<SelectionRecord>& records,
                                                     const LabelSet& labels) {
  for (const auto& r : records) labels_by_id_[r.id] = labels.find(r.e_ano);
}

EmotionLabel FixtureSentimentPredictor::do_predict(const DialogueSample& sample) const {
  auto it = labels_by_id_.find(sample.id);
  if (it == labels_by_id_.end()) {
    throw std::out_of_range("sentiment fixture has no entry for id '" + sample.id + "'");
  }
  return it->second;
}

EmotionLabel majority_label(const std::vector<DialogueSample>& samples, const LabelSet& labels) {
  if (samples.empty()) throw std::invalid_argument("majority_label: no samples");
  std::vector<long long> counts(labels.size(), 0);
  for (const auto& s : samples) ++counts[static_cast<std::size_t>(s.gold_emotion.index)];
  const auto best = std::max_element(counts.begin(), counts.end());
  return labels.at(static_cast<int>(best - counts.begin()));
}

std::vector<Utterance> CauseDetector::detect(const DialogueSample& sample,
                                             const EmotionLabel& e_ano) const {
  if (sample.history.empty()) throw std::invalid_argument("detect_sensible: empty history");
  ++calls_;
  std::vector<int> idx = select(sample, e_ano);
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  std::vector<Utterance> out;
  for (int i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= sample.history.size()) {
      throw std::out_of_range("cause index " + std::to_string(i) + " outside the history of '" +
                              sample.id + "'");
    }
    out.push_back(sample.history[static_cast<std::size_t>(i)]);
  }
  if (out.empty()) out.push_back(sample.last_speaker_utterance());
  return out;
}

std::vector<int> HeuristicCauseDetector::select(const DialogueSample& sample,
                                                const EmotionLabel& e_ano) const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < sample.history.size(); ++i) {
    for (const auto& tok : tokenize(sample.history[i].text)) {
      if (lexicon_.word_signals(tok, e_ano.index)) {
        idx.push_back(static_cast<int>(i));
        break;
      }
    }
  }
  return idx;
}

std::vector<int> OracleCauseDetector::select(const DialogueSample& sample,
                                             const EmotionLabel& /*e_ano*/) const {
  auto it = spans_.find(sample.id);
  return it == spans_.end() ? std::vector<int>{} : it->second;
}

FixtureCauseDetector::FixtureCauseDetector(const std::vector<SelectionRecord>& records) {
  for (const auto& r : records) spans_[r.id] = r.cause_turn_indices;
}

std::vector<int> FixtureCauseDetector::select(const DialogueSample& sample,
                                              const EmotionLabel& /*e_ano*/) const {
  auto it = spans_.find(sample.id);
  if (it == spans_.end()) {
    throw std::out_of_range("cause fixture has no entry for id '" + sample.id + "'");
  }
  return it->second;
}

}  // namespace lamb
