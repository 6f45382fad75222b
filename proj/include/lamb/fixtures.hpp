#pragma once

// Offline test assets: a templated mini-corpus over the 32 labels with
// label-correlated cue words, the matching lexicon, and recorded outputs
// for every external provider.

#include "lamb/corpus.hpp"
#include "lamb/knowledge.hpp"
#include "lamb/selectors.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace lamb::fixtures {

inline constexpr std::uint64_t kDefaultSeed = 20240601;
inline constexpr std::size_t kDefaultSize = 200;
inline constexpr const char* kFixtureTimestamp = "2024-01-01T00:00:00Z";
inline constexpr const char* kFixtureLlmId = "fixture-v1";

// Three cue words per label, in label order.
const std::map<std::string, std::vector<std::string>>& cue_words();
EmotionLexicon default_lexicon(const LabelSet& labels = LabelSet::empathetic_dialogues());
std::string lexicon_json();

// Throws std::invalid_argument when size < 32.
std::vector<DialogueSample> generate_mini_corpus(std::uint64_t seed, std::size_t size);

// The worked case: three-turn dialogue labelled grateful with a recorded
// analysis paragraph.
DialogueSample appendix_case();
std::string appendix_conect_response();

// e_ano = gold label; causes = history turns carrying one of its cue words.
std::vector<SelectionRecord> make_selections(const std::vector<DialogueSample>& samples);
std::vector<CommonsenseRecord> make_commonsense(const std::vector<DialogueSample>& samples);
std::vector<ConectRecord> make_conect(const std::vector<DialogueSample>& samples,
                                      const std::vector<SelectionRecord>& selections,
                                      const PromptTemplate& tmpl = PromptTemplate::default_template());

// Writes mini_corpus.jsonl, appendix_case.jsonl, lexicon.json,
// selections.jsonl, comet.jsonl, conect.jsonl, prompts/*.txt and SHA256SUMS.
void write_fixture_set(const std::filesystem::path& dir, std::uint64_t seed = kDefaultSeed,
                       std::size_t size = kDefaultSize);

// "<sha256>  <name>" lines for every regular file under dir except SHA256SUMS.
std::string checksum_manifest(const std::filesystem::path& dir);

}  // namespace lamb::fixtures
