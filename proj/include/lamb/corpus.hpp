#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lamb {

enum class Role { speaker, listener };

std::string_view role_name(Role r);

struct Utterance {
  Role role = Role::speaker;
  std::string text;
  int turn_index = 0;
};

struct EmotionLabel {
  std::string name;
  int index = -1;

  friend bool operator==(const EmotionLabel&, const EmotionLabel&) = default;
};

// Bijective name <-> index table. The default set is the 32 emotions of the
// EmpatheticDialogues corpus in its conventional index order.
class LabelSet {
 public:
  explicit LabelSet(std::vector<std::string> names);
  static const LabelSet& empathetic_dialogues();

  std::size_t size() const { return names_.size(); }
  EmotionLabel at(int index) const;
  // Case-insensitive lookup; throws std::invalid_argument for unknown names.
  EmotionLabel find(std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
};

struct DialogueSample {
  std::string id;
  std::vector<Utterance> history;
  EmotionLabel gold_emotion;
  std::string gold_response;

  // N: number of speaker turns (history holds 2N - 1 utterances).
  int speaker_turns() const { return static_cast<int>(history.size() + 1) / 2; }
  const Utterance& last_speaker_utterance() const { return history.back(); }
};

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string normalize_whitespace(std::string_view text);

// Lowercased word-level tokens; punctuation marks become their own tokens.
std::vector<std::string> tokenize(std::string_view text);

// Checks the sample invariants, throwing CorpusError naming the field.
void validate_sample(const DialogueSample& sample, const LabelSet& labels);

// Parses one JSONL record. `line` is used in error messages only.
DialogueSample parse_sample(std::string_view json_line, const LabelSet& labels, std::size_t line);
std::string sample_to_json(const DialogueSample& sample);

std::vector<DialogueSample> load_dataset(const std::filesystem::path& path,
                                         const LabelSet& labels = LabelSet::empathetic_dialogues());
void save_dataset(const std::filesystem::path& path, const std::vector<DialogueSample>& samples);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<DialogueSample> train;
  std::vector<DialogueSample> val;
  std::vector<DialogueSample> test;
};

// Split sizes for n rows: largest-remainder allocation, ties to train.
std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios);
DatasetSplit split_dataset(const std::vector<DialogueSample>& samples, const SplitRatios& ratios,
                           std::uint64_t seed);

namespace special {
inline constexpr int pad = 0;
inline constexpr int bos = 1;
inline constexpr int eos = 2;
inline constexpr int unk = 3;
inline constexpr int sep = 4;
inline constexpr int cls = 5;
inline constexpr int count = 6;
}  // namespace special

class Vocab {
 public:
  Vocab();

  static const std::array<std::string_view, special::count>& reserved_tokens();

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(std::string_view token) const;  // <unk> when absent
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  int add(const std::string& token);

  std::vector<int> encode(std::string_view text) const;
  // Drops reserved tokens and joins the rest with single spaces.
  std::string decode(const std::vector<int>& ids) const;

  std::string to_json() const;
  static Vocab from_json(std::string_view json);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

Vocab build_vocab(const std::vector<DialogueSample>& samples, int min_freq);

struct TokenSequence {
  std::vector<int> ids;
  std::size_t length() const { return ids.size(); }
};

inline constexpr std::size_t kDefaultMaxContextLen = 256;

// [<cls>] S_1 <sep> L_1 <sep> ... S_N, suffix-truncated with <cls> kept.
TokenSequence encode_dialogue(const DialogueSample& sample, const Vocab& vocab,
                              std::size_t max_context_len = kDefaultMaxContextLen);

// Utterances joined by <sep>, no <cls> prefix.
TokenSequence encode_utterances(const std::vector<Utterance>& utterances, const Vocab& vocab,
                                std::size_t max_len = kDefaultMaxContextLen);

}  // namespace lamb
