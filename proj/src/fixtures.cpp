#include "lamb/fixtures.hpp"

#include "lamb/digest.hpp"
#include "lamb/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace lamb::fixtures {

namespace {

using nlohmann::json;

const std::vector<std::string> kTopics{
    "new job",      "exam results", "family dinner", "road trip",   "old house",    "birthday party",
    "soccer game",  "job interview", "wedding",      "neighbor",    "car repair",   "vacation",
    "phone call",   "promotion",    "first date",    "garden",      "concert",      "hospital visit",
    "school play",  "moving day",   "dog",           "late train",  "cooking class", "reunion"};

const std::vector<std::string> kCueTemplates{
    "i felt so {cue} when the {topic} happened last week .",
    "the {topic} left me {cue} , i can not stop thinking about it .",
    "honestly i am {cue} about the {topic} .",
    "it was the {topic} and everything about it felt {cue} .",
    "when i think of the {topic} i get {cue} all over again ."};

const std::vector<std::string> kNeutralTemplates{
    "it was a long day at work and then the {topic} came up .",
    "i was telling my friend about the {topic} yesterday .",
    "so there was this {topic} on saturday .",
    "you know how it is with the {topic} ."};

const std::vector<std::string> kListenerTemplates{
    "oh really ? what happened with the {topic} ?",
    "that sounds like a lot . how did you handle it ?",
    "tell me more about the {topic} .",
    "i see . how long ago was that ?"};

const std::set<std::string> kPositive{"excited",  "proud",       "grateful",     "impressed", "confident",
                                      "hopeful",  "joyful",      "prepared",     "anticipating", "content",
                                      "sentimental", "caring",   "trusting",     "faithful",  "nostalgic"};
const std::set<std::string> kNeutral{"surprised"};

const std::vector<std::string> kPositiveOpenings{"that is wonderful !", "how nice !", "that is great news ."};
const std::vector<std::string> kNegativeOpenings{"i am so sorry to hear that .", "oh no , that sounds hard .",
                                                 "that must have been tough ."};
const std::vector<std::string> kNeutralOpenings{"wow , i did not see that coming .", "really ? that is something ."};

std::string fill(std::string tmpl, const std::string& topic, const std::string& cue = {}) {
  for (const auto& [key, value] : {std::pair<std::string, std::string>{"{topic}", topic}, {"{cue}", cue}}) {
    for (auto pos = tmpl.find(key); pos != std::string::npos; pos = tmpl.find(key, pos + value.size())) {
      tmpl.replace(pos, key.size(), value);
    }
  }
  return tmpl;
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[rng.below(v.size())];
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

std::string topic_of(const DialogueSample& s) {
  for (const auto& t : kTopics) {
    for (const auto& u : s.history) {
      if (u.text.find(t) != std::string::npos) return t;
    }
  }
  return "situation";
}

}  // namespace

const std::map<std::string, std::vector<std::string>>& cue_words() {
  static const std::map<std::string, std::vector<std::string>> kCues{
      {"surprised", {"shocked", "unexpected", "astonished"}},
      {"excited", {"thrilled", "pumped", "eager"}},
      {"annoyed", {"irritated", "bothered", "irked"}},
      {"proud", {"accomplished", "honored", "achievement"}},
      {"angry", {"mad", "outraged", "livid"}},
      {"sad", {"unhappy", "tearful", "gloomy"}},
      {"grateful", {"thankful", "blessed", "appreciate"}},
      {"lonely", {"alone", "isolated", "nobody"}},
      {"impressed", {"amazed", "remarkable", "admire"}},
      {"afraid", {"scared", "frightened", "fear"}},
      {"disgusted", {"gross", "revolting", "nauseated"}},
      {"confident", {"sure", "certain", "capable"}},
      {"terrified", {"horrified", "petrified", "panic"}},
      {"hopeful", {"optimistic", "wishing", "promising"}},
      {"anxious", {"nervous", "worried", "uneasy"}},
      {"disappointed", {"letdown", "underwhelmed", "failed"}},
      {"joyful", {"happy", "cheerful", "delighted"}},
      {"prepared", {"ready", "organized", "planned"}},
      {"guilty", {"regret", "remorse", "fault"}},
      {"furious", {"enraged", "seething", "fuming"}},
      {"nostalgic", {"memories", "remember", "childhood"}},
      {"jealous", {"envious", "envy", "resent"}},
      {"anticipating", {"awaiting", "upcoming", "countdown"}},
      {"embarrassed", {"awkward", "blushing", "humiliated"}},
      {"content", {"satisfied", "peaceful", "comfortable"}},
      {"devastated", {"heartbroken", "crushed", "shattered"}},
      {"sentimental", {"keepsake", "cherish", "tender"}},
      {"caring", {"supportive", "nurturing", "protective"}},
      {"trusting", {"trust", "rely", "depend"}},
      {"ashamed", {"shame", "disgraced", "dishonest"}},
      {"apprehensive", {"hesitant", "wary", "doubtful"}},
      {"faithful", {"loyal", "devoted", "committed"}}};
  return kCues;
}

namespace {

// word -> labels, the lexicon file layout.
std::map<std::string, std::vector<std::string>> lexicon_entries() {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& [label, words] : cue_words()) {
    for (const auto& w : words) out[w].push_back(label);
  }
  return out;
}

}  // namespace

EmotionLexicon default_lexicon(const LabelSet& labels) { return EmotionLexicon(lexicon_entries(), labels); }

std::string lexicon_json() {
  nlohmann::json j = lexicon_entries();
  return j.dump(2) + "\n";
}

std::vector<DialogueSample> generate_mini_corpus(std::uint64_t seed, std::size_t size) {
  const LabelSet& labels = LabelSet::empathetic_dialogues();
  if (size < labels.size()) {
    throw std::invalid_argument("generate_mini_corpus: size " + std::to_string(size) + " is below the " +
                                std::to_string(labels.size()) + " labels");
  }
  Rng rng(seed);
  std::vector<int> label_of(size);
  for (std::size_t i = 0; i < size; ++i) label_of[i] = static_cast<int>(i % labels.size());
  rng.shuffle(label_of);

  std::vector<DialogueSample> out;
  out.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    const EmotionLabel label = labels.at(label_of[i]);
    const auto& cues = cue_words().at(label.name);
    const std::string& topic = pick(rng, kTopics);
    const int n = 1 + static_cast<int>(rng.below(3));

    // Which speaker turns carry a cue word; at least one does.
    std::vector<bool> cued(static_cast<std::size_t>(n));
    bool any = false;
    for (auto&& c : cued) any |= (c = rng.uniform() < 0.7);
    if (!any) cued[rng.below(static_cast<std::uint64_t>(n))] = true;

    DialogueSample s;
    char id[32];
    std::snprintf(id, sizeof id, "mini-%03zu", i);
    s.id = id;
    s.gold_emotion = label;
    for (int t = 0; t < 2 * n - 1; ++t) {
      Utterance u;
      u.turn_index = t;
      if (t % 2 == 0) {
        u.role = Role::speaker;
        if (cued[static_cast<std::size_t>(t / 2)]) {
          u.text = fill(pick(rng, kCueTemplates), topic, pick(rng, cues));
        } else {
          u.text = fill(pick(rng, kNeutralTemplates), topic);
        }
      } else {
        u.role = Role::listener;
        u.text = fill(pick(rng, kListenerTemplates), topic);
      }
      s.history.push_back(std::move(u));
    }
    const auto& openings = kNeutral.count(label.name) != 0    ? kNeutralOpenings
                           : kPositive.count(label.name) != 0 ? kPositiveOpenings
                                                              : kNegativeOpenings;
    s.gold_response = pick(rng, openings) + " you must feel so " + label.name + " about the " + topic + " .";
    validate_sample(s, labels);
    out.push_back(std::move(s));
  }
  return out;
}

DialogueSample appendix_case() {
  DialogueSample s;
  s.id = "appendix-grateful";
  s.history = {
      {Role::speaker,
       "One of the times i remember feeling the most blissed out in life was right after the birth of my first "
       "child.",
       0},
      {Role::listener, "That is a very blessed day. It is something you will never forget.", 1},
      {Role::speaker,
       "Obviously there are the demands of a new child -- but that feeling of finally meeting someone you waited so "
       "long for, and the love surrounding the whole situation. truly something to remember.",
       2}};
  s.gold_emotion = LabelSet::empathetic_dialogues().find("grateful");
  s.gold_response = "Yes, I could not agree more. it is remarkable how your feeling suddenly change.";
  return s;
}

std::string appendix_conect_response() {
  return "Based on the content of the dialogue, it is clear that the speaker is expressing feelings of gratitude "
         "and contentment. The use of phrases such as \"most blissed out in life\" and \"something you will never "
         "forget\" suggest a strong positive emotion. Additionally, the speaker mentions the birth of their first "
         "child, which is a significant life event that can evoke powerful emotions. The sentiment label "
         "\"grateful\" accurately captures the speaker's emotional state. Overall, the causal link between the "
         "dialogue content and the sentiment label is strong and straightforward.";
}

std::vector<SelectionRecord> make_selections(const std::vector<DialogueSample>& samples) {
  const LabelSet& labels = LabelSet::empathetic_dialogues();
  const EmotionLexicon lexicon = default_lexicon(labels);
  std::vector<SelectionRecord> out;
  for (const auto& s : samples) {
    SelectionRecord r{s.id, s.gold_emotion.name, {}};
    for (std::size_t i = 0; i < s.history.size(); ++i) {
      for (const auto& tok : tokenize(s.history[i].text)) {
        if (lexicon.word_signals(tok, s.gold_emotion.index)) {
          r.cause_turn_indices.push_back(static_cast<int>(i));
          break;
        }
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<CommonsenseRecord> make_commonsense(const std::vector<DialogueSample>& samples) {
  const TemplateCommonsenseProvider provider;
  std::vector<CommonsenseRecord> out;
  std::set<std::string> seen;
  for (const auto& s : samples) {
    const std::string& text = s.last_speaker_utterance().text;
    CommonsenseRecord r{sha256_hex(normalize_whitespace(text)), provider.generate(text)};
    if (seen.insert(r.utterance_hash).second) out.push_back(std::move(r));
  }
  return out;
}

std::vector<ConectRecord> make_conect(const std::vector<DialogueSample>& samples,
                                      const std::vector<SelectionRecord>& selections, const PromptTemplate& tmpl) {
  const LabelSet& labels = LabelSet::empathetic_dialogues();
  std::map<std::string, const SelectionRecord*> by_id;
  for (const auto& r : selections) by_id[r.id] = &r;
  const std::string appendix_id = appendix_case().id;

  std::vector<ConectRecord> out;
  std::set<std::string> seen;
  for (const auto& s : samples) {
    const SelectionRecord* sel = by_id.at(s.id);
    const EmotionLabel e_ano = labels.find(sel->e_ano);
    ConectRecord r;
    r.prompt = build_conect_prompt(s.history, e_ano, tmpl);
    r.cache_key = sha256_hex(r.prompt);
    r.llm_id = kFixtureLlmId;
    r.created_at = kFixtureTimestamp;
    if (s.id == appendix_id) {
      r.response = appendix_conect_response();
    } else {
      std::string cues;
      for (int idx : sel->cause_turn_indices) {
        for (const auto& tok : tokenize(s.history[static_cast<std::size_t>(idx)].text)) {
          if (std::find(cue_words().at(e_ano.name).begin(), cue_words().at(e_ano.name).end(), tok) !=
              cue_words().at(e_ano.name).end()) {
            cues += (cues.empty() ? "" : " and ") + ("\"" + tok + "\"");
          }
        }
      }
      if (cues.empty()) cues = "the last turn";
      r.response = "Based on the dialogue, the speaker is talking about the " + topic_of(s) +
                   ". Words such as " + cues + " show how the speaker was affected. The sentiment label \"" +
                   e_ano.name + "\" fits: the speaker feels " + e_ano.name +
                   " because of what happened, and the listener should acknowledge that feeling.";
    }
    if (seen.insert(r.cache_key).second) out.push_back(std::move(r));
  }
  return out;
}

std::string checksum_manifest(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "SHA256SUMS") files.push_back(e.path());
  }
  std::vector<std::string> rel;
  for (const auto& f : files) rel.push_back(std::filesystem::relative(f, dir).generic_string());
  std::sort(rel.begin(), rel.end());
  std::string out;
  for (const auto& r : rel) {
    std::ifstream in(dir / r, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    out += sha256_hex(ss.str()) + "  " + r + "\n";
  }
  return out;
}

void write_fixture_set(const std::filesystem::path& dir, std::uint64_t seed, std::size_t size) {
  std::filesystem::create_directories(dir / "prompts");
  const auto corpus = generate_mini_corpus(seed, size);
  const DialogueSample appendix = appendix_case();
  std::vector<DialogueSample> all = corpus;
  all.push_back(appendix);

  save_dataset(dir / "mini_corpus.jsonl", corpus);
  save_dataset(dir / "appendix_case.jsonl", {appendix});
  write_text(dir / "lexicon.json", lexicon_json());

  const auto selections = make_selections(all);
  save_selection_records(dir / "selections.jsonl", selections);
  save_commonsense_records(dir / "comet.jsonl", make_commonsense(all));

  const PromptTemplate tmpl = PromptTemplate::default_template();
  const auto conect = make_conect(all, selections, tmpl);
  std::string lines;
  for (const auto& r : conect) lines += r.to_json() + "\n";
  write_text(dir / "conect.jsonl", lines);

  // Golden prompts for a few corpus dialogues of each length plus the worked case.
  std::map<std::string, const SelectionRecord*> sel_by_id;
  for (const auto& r : selections) sel_by_id[r.id] = &r;
  std::set<std::size_t> lengths_done;
  for (const auto& s : corpus) {
    if (!lengths_done.insert(s.history.size()).second) continue;
    write_text(dir / "prompts" / (s.id + ".txt"),
               build_conect_prompt(s.history, LabelSet::empathetic_dialogues().find(sel_by_id.at(s.id)->e_ano), tmpl));
  }
  write_text(dir / "prompts" / (appendix.id + ".txt"),
             build_conect_prompt(appendix.history, appendix.gold_emotion, tmpl));

  write_text(dir / "SHA256SUMS", checksum_manifest(dir));
}

}  // namespace lamb::fixtures
