#include "lamb/corpus.hpp"

#include "lamb/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace lamb {

using nlohmann::json;

std::string_view role_name(Role r) { return r == Role::speaker ? "speaker" : "listener"; }

namespace {

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_space(unsigned char c) { return std::isspace(c) != 0; }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

}  // namespace

LabelSet::LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    names_[i] = lowercase(names_[i]);
    if (!index_.emplace(names_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate emotion label: " + names_[i]);
    }
  }
}

const LabelSet& LabelSet::empathetic_dialogues() {
  static const LabelSet set({"surprised", "excited", "annoyed", "proud", "angry", "sad",
                             "grateful", "lonely", "impressed", "afraid", "disgusted",
                             "confident", "terrified", "hopeful", "anxious", "disappointed",
                             "joyful", "prepared", "guilty", "furious", "nostalgic", "jealous",
                             "anticipating", "embarrassed", "content", "devastated",
                             "sentimental", "caring", "trusting", "ashamed", "apprehensive",
                             "faithful"});
  return set;
}

EmotionLabel LabelSet::at(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= names_.size()) {
    throw std::out_of_range("emotion index " + std::to_string(index) + " out of range");
  }
  return {names_[static_cast<std::size_t>(index)], index};
}

EmotionLabel LabelSet::find(std::string_view name) const {
  auto it = index_.find(lowercase(name));
  if (it == index_.end()) {
    throw std::invalid_argument("unknown emotion label '" + std::string(name) + "'");
  }
  return {it->first, it->second};
}

bool LabelSet::contains(std::string_view name) const {
  return index_.count(lowercase(name)) != 0;
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char ch : text) {
    if (is_space(static_cast<unsigned char>(ch))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(ch);
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      tokens.emplace_back(1, ch);
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return tokens;
}

void validate_sample(const DialogueSample& sample, const LabelSet& labels) {
  if (sample.id.empty()) throw CorpusError("field 'id': must be non-empty");
  if (sample.history.empty()) throw CorpusError("history length must be odd (got 0)");
  if (sample.history.size() % 2 == 0) {
    throw CorpusError("history length must be odd (got " + std::to_string(sample.history.size()) +
                      ")");
  }
  for (std::size_t i = 0; i < sample.history.size(); ++i) {
    const Utterance& u = sample.history[i];
    const Role expected = i % 2 == 0 ? Role::speaker : Role::listener;
    if (u.role != expected) {
      throw CorpusError("history[" + std::to_string(i) + "].role: expected " +
                        std::string(role_name(expected)));
    }
    if (normalize_whitespace(u.text).empty()) {
      throw CorpusError("history[" + std::to_string(i) + "].text: empty after normalization");
    }
  }
  if (!labels.contains(sample.gold_emotion.name) ||
      labels.find(sample.gold_emotion.name).index != sample.gold_emotion.index) {
    throw CorpusError("field 'emotion': '" + sample.gold_emotion.name + "' is not in the label set");
  }
  if (normalize_whitespace(sample.gold_response).empty()) {
    throw CorpusError("field 'response': empty after normalization");
  }
}

DialogueSample parse_sample(std::string_view json_line, const LabelSet& labels, std::size_t line) {
  const std::string where = "line " + std::to_string(line) + ": ";
  json j;
  try {
    j = json::parse(json_line);
  } catch (const json::parse_error& e) {
    throw CorpusError(where + "malformed JSON (" + e.what() + ")");
  }
  auto field = [&](const char* name) -> const json& {
    if (!j.is_object() || !j.contains(name)) throw CorpusError(where + "missing field '" + name + "'");
    return j.at(name);
  };
  DialogueSample s;
  try {
    s.id = field("id").get<std::string>();
    const json& hist = field("history");
    if (!hist.is_array()) throw CorpusError(where + "field 'history' must be an array");
    int turn = 0;
    for (const json& u : hist) {
      Utterance utt;
      const std::string role = u.at("role").get<std::string>();
      if (role == "speaker") {
        utt.role = Role::speaker;
      } else if (role == "listener") {
        utt.role = Role::listener;
      } else {
        throw CorpusError(where + "history[" + std::to_string(turn) + "].role: unknown role '" +
                          role + "'");
      }
      utt.text = normalize_whitespace(u.at("text").get<std::string>());
      utt.turn_index = turn++;
      s.history.push_back(std::move(utt));
    }
    const std::string emotion = field("emotion").get<std::string>();
    if (!labels.contains(emotion)) {
      throw CorpusError(where + "field 'emotion': '" + emotion + "' is not in the label set");
    }
    s.gold_emotion = labels.find(emotion);
    s.gold_response = normalize_whitespace(field("response").get<std::string>());
  } catch (const json::exception& e) {
    throw CorpusError(where + "schema error (" + e.what() + ")");
  }
  try {
    validate_sample(s, labels);
  } catch (const CorpusError& e) {
    throw CorpusError(where + e.what());
  }
  return s;
}

std::string sample_to_json(const DialogueSample& sample) {
  json hist = json::array();
  for (const auto& u : sample.history) {
    hist.push_back({{"role", role_name(u.role)}, {"text", u.text}});
  }
  json j = {{"id", sample.id},
            {"history", std::move(hist)},
            {"emotion", sample.gold_emotion.name},
            {"response", sample.gold_response}};
  return j.dump();
}

std::vector<DialogueSample> load_dataset(const std::filesystem::path& path, const LabelSet& labels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open dataset '" + path.string() + "'");
  std::vector<DialogueSample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (normalize_whitespace(line).empty()) continue;
    samples.push_back(parse_sample(line, labels, line_no));
  }
  return samples;
}

void save_dataset(const std::filesystem::path& path, const std::vector<DialogueSample>& samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusError("cannot write dataset '" + path.string() + "'");
  for (const auto& s : samples) out << sample_to_json(s) << '\n';
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios) {
  const std::array<double, 3> r{ratios.train, ratios.val, ratios.test};
  for (double x : r) {
    if (!(x >= 0.0)) throw std::invalid_argument("split ratios must be non-negative");
  }
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) {
    throw std::invalid_argument("split ratios must sum to 1");
  }
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = r[k] * static_cast<double>(n);
    // Guard against 0.1 * 10 = 0.99999... style representation error.
    const double fl = std::floor(exact + 1e-9);
    sizes[k] = static_cast<std::size_t>(fl);
    frac[k] = exact - fl;
    assigned += sizes[k];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b] + 1e-12; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++sizes[order[i % 3]];
  return sizes;
}

DatasetSplit split_dataset(const std::vector<DialogueSample>& samples, const SplitRatios& ratios,
                           std::uint64_t seed) {
  if (samples.empty()) throw std::invalid_argument("split_dataset: no samples");
  const auto sizes = split_sizes(samples.size(), ratios);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  DatasetSplit out;
  std::size_t k = 0;
  for (; k < sizes[0]; ++k) out.train.push_back(samples[order[k]]);
  for (; k < sizes[0] + sizes[1]; ++k) out.val.push_back(samples[order[k]]);
  for (; k < samples.size(); ++k) out.test.push_back(samples[order[k]]);
  return out;
}

Vocab::Vocab() {
  for (auto tok : reserved_tokens()) add(std::string(tok));
}

const std::array<std::string_view, special::count>& Vocab::reserved_tokens() {
  static constexpr std::array<std::string_view, special::count> kReserved{
      "<pad>", "<bos>", "<eos>", "<unk>", "<sep>", "<cls>"};
  return kReserved;
}

int Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? special::unk : it->second;
}

bool Vocab::contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocab::add(const std::string& token) {
  auto [it, inserted] = ids_.emplace(token, size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::vector<int> Vocab::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& tok : tokenize(text)) ids.push_back(id(tok));
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id < special::count) continue;
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

std::string Vocab::to_json() const {
  json j = json::object();
  for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
  return j.dump(1) + "\n";
}

Vocab Vocab::from_json(std::string_view text) {
  json j = json::parse(text);
  if (!j.is_object()) throw CorpusError("vocab JSON must be an object");
  std::vector<std::string> by_id(j.size());
  std::vector<bool> seen(j.size(), false);
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto id = it.value().get<long long>();
    if (id < 0 || static_cast<std::size_t>(id) >= by_id.size() || seen[static_cast<std::size_t>(id)]) {
      throw CorpusError("vocab ids must be contiguous and unique (bad id for '" + it.key() + "')");
    }
    by_id[static_cast<std::size_t>(id)] = it.key();
    seen[static_cast<std::size_t>(id)] = true;
  }
  const auto& reserved = reserved_tokens();
  for (std::size_t i = 0; i < reserved.size(); ++i) {
    if (i >= by_id.size() || by_id[i] != reserved[i]) {
      throw CorpusError("vocab reserved token '" + std::string(reserved[i]) + "' must have id " +
                        std::to_string(i));
    }
  }
  Vocab v;
  for (std::size_t i = reserved.size(); i < by_id.size(); ++i) v.add(by_id[i]);
  return v;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusError("cannot write vocab '" + path.string() + "'");
  out << to_json();
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open vocab '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

Vocab build_vocab(const std::vector<DialogueSample>& samples, int min_freq) {
  if (samples.empty()) throw std::invalid_argument("build_vocab: no samples");
  if (min_freq < 1) throw std::invalid_argument("build_vocab: min_freq must be >= 1");
  std::map<std::string, long long> counts;
  auto count_text = [&](const std::string& text) {
    for (auto& tok : tokenize(text)) ++counts[tok];
  };
  for (const auto& s : samples) {
    for (const auto& u : s.history) count_text(u.text);
    count_text(s.gold_response);
  }
  std::vector<std::pair<std::string, long long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (const auto& [tok, n] : ranked) {
    if (n >= min_freq && !v.contains(tok)) v.add(tok);
  }
  return v;
}

TokenSequence encode_dialogue(const DialogueSample& sample, const Vocab& vocab,
                              std::size_t max_context_len) {
  TokenSequence body = encode_utterances(sample.history, vocab, std::numeric_limits<std::size_t>::max());
  TokenSequence out;
  out.ids.push_back(special::cls);
  const std::size_t budget = max_context_len > 0 ? max_context_len - 1 : 0;
  const std::size_t skip = body.ids.size() > budget ? body.ids.size() - budget : 0;
  out.ids.insert(out.ids.end(), body.ids.begin() + static_cast<std::ptrdiff_t>(skip), body.ids.end());
  return out;
}

TokenSequence encode_utterances(const std::vector<Utterance>& utterances, const Vocab& vocab,
                                std::size_t max_len) {
  TokenSequence out;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    if (i > 0) out.ids.push_back(special::sep);
    auto ids = vocab.encode(utterances[i].text);
    out.ids.insert(out.ids.end(), ids.begin(), ids.end());
  }
  if (out.ids.size() > max_len) {
    out.ids.erase(out.ids.begin(), out.ids.end() - static_cast<std::ptrdiff_t>(max_len));
  }
  return out;
}

}  // namespace lamb
