#include "lamb/digest.hpp"
#include "lamb/fixtures.hpp"
#include "lamb/knowledge.hpp"
#include "lamb/selectors.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

using namespace lamb;

namespace {

const LabelSet& labels() { return LabelSet::empathetic_dialogues(); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Utterance> history(std::vector<std::string> turns) {
  std::vector<Utterance> out;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    out.push_back({i % 2 == 0 ? Role::speaker : Role::listener, turns[i], static_cast<int>(i)});
  }
  return out;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("lamb_knowledge_" + name);
  std::filesystem::remove_all(p);
  return p;
}

class CountingClient final : public LlmClient {
 public:
  LlmBackend backend() const override { return LlmBackend::echo; }
  std::string id() const override { return "counting"; }

 protected:
  std::string do_complete(const std::string& prompt) override { return "reply to " + sha256_hex(prompt); }
};

}  // namespace

TEST_CASE("template commonsense yields five non-empty relations, deterministically") {
  TemplateCommonsenseProvider p;
  const auto a = p.generate("I finally passed my driving test after three tries!");
  const auto b = p.generate("I finally passed my driving test after three tries!");
  for (std::size_t i = 0; i < kRelationCount; ++i) {
    CHECK_FALSE(a.texts[i].empty());
    CHECK(a.texts[i] == b.texts[i]);
  }
  CHECK(a.text(Relation::x_intent).find("passed") != std::string::npos);
  CHECK(p.calls() == 2);
  CHECK_THROWS_AS(p.generate("   "), std::invalid_argument);
}

TEST_CASE("relation names in order") {
  std::vector<std::string> names;
  for (auto r : kRelations) names.emplace_back(relation_name(r));
  CHECK(names == std::vector<std::string>{"xIntent", "xEffect", "xWant", "xReact", "xNeed"});
}

TEST_CASE("fixture commonsense serves the authored record") {
  const auto records = load_commonsense_records(LAMB_TEST_DATA "/authored/comet_authored.jsonl");
  REQUIRE(records.size() == 1);
  const std::string utterance = "I baked bread for my neighbours today.";
  CHECK(records[0].utterance_hash == sha256_hex(utterance));
  FixtureCommonsenseProvider p(records);
  const auto b = p.generate(utterance);
  CHECK(b.text(Relation::x_intent) == "to be kind to the people next door");
  CHECK(b.text(Relation::x_effect) == "gets thanked by the neighbours");
  CHECK(b.text(Relation::x_want) == "to bake again next week");
  CHECK(b.text(Relation::x_react) == "warm and useful");
  CHECK(b.text(Relation::x_need) == "to buy flour and yeast");
  CHECK_THROWS(p.generate("something nobody recorded"));
}

TEST_CASE("prompt has the three blocks and the label") {
  const auto h = history({"my cat got lost", "oh no", "she came back today"});
  const std::string prompt = build_conect_prompt(h, labels().find("joyful"));
  const auto character = prompt.find("### Character");
  const auto chain = prompt.find("### Causal Chain");
  const auto global = prompt.find("### Global Sentiment Label");
  REQUIRE(character != std::string::npos);
  REQUIRE(chain != std::string::npos);
  REQUIRE(global != std::string::npos);
  CHECK(character < chain);
  CHECK(chain < global);
  CHECK(prompt.find("Speaker: my cat got lost\nListener: oh no\nSpeaker: she came back today") != std::string::npos);
  CHECK(extract_sentiment_label(prompt) == std::optional<std::string>("joyful"));
  CHECK_THROWS_AS(build_conect_prompt({}, labels().find("joyful")), std::invalid_argument);
}

TEST_CASE("template placeholders are validated") {
  CHECK_THROWS_AS(PromptTemplate("no placeholders", "x"), std::invalid_argument);
  CHECK_THROWS_AS(PromptTemplate("{{dialogue}} {{label}} {{label}}", "x"), std::invalid_argument);
  const PromptTemplate t("[{{dialogue}}|{{label}}]", "t");
  // A dialogue that contains the placeholder literally stays intact.
  CHECK(t.render("say {{label}}", "sad") == "[say {{label}}|sad]");
}

TEST_CASE("golden prompts match byte for byte") {
  auto corpus = fixtures::generate_mini_corpus(fixtures::kDefaultSeed, fixtures::kDefaultSize);
  corpus.push_back(fixtures::appendix_case());
  const auto selections = load_selection_records(LAMB_TEST_DATA "/selections.jsonl");
  std::unordered_map<std::string, std::string> e_ano;
  for (const auto& r : selections) e_ano[r.id] = r.e_ano;
  for (const std::string id : {"mini-000", "mini-002", "mini-005", "appendix-grateful"}) {
    const auto it = std::find_if(corpus.begin(), corpus.end(), [&](const auto& s) { return s.id == id; });
    REQUIRE(it != corpus.end());
    const std::string golden = slurp(std::filesystem::path(LAMB_TEST_DATA) / "prompts" / (id + ".txt"));
    CHECK(build_conect_prompt(it->history, labels().find(e_ano.at(id))) == golden);
  }
}

TEST_CASE("appendix prompt assembled by hand") {
  const auto s = fixtures::appendix_case();
  std::string expected = slurp(std::filesystem::path(LAMB_ASSET_DIR) / "prompts" / "conect_v1.txt");
  std::string dialogue;
  for (std::size_t i = 0; i < s.history.size(); ++i) {
    dialogue += (i ? "\n" : "") + std::string(i % 2 ? "Listener: " : "Speaker: ") + normalize_whitespace(s.history[i].text);
  }
  expected.replace(expected.find("{{dialogue}}"), 12, dialogue);
  expected.replace(expected.find("{{label}}"), 9, "grateful");
  CHECK(build_conect_prompt(s.history, labels().find("grateful")) == expected);
}

TEST_CASE("distinct histories or labels give distinct prompts") {
  const auto corpus = fixtures::generate_mini_corpus(5, 120);
  std::set<std::string> prompts;
  std::set<std::pair<std::string, int>> inputs;
  for (const auto& s : corpus) {
    for (int l : {0, 7, 31}) {
      inputs.insert({render_dialogue(s.history), l});
      prompts.insert(build_conect_prompt(s.history, labels().at(l)));
    }
  }
  CHECK(prompts.size() == inputs.size());
}

TEST_CASE("echo client repeats the label and is deterministic") {
  EchoLlmClient echo;
  const std::string prompt = build_conect_prompt(history({"i lost my keys"}), labels().find("annoyed"));
  const std::string a = echo.complete(prompt);
  CHECK(a.find("annoyed") != std::string::npos);
  CHECK(a == echo.complete(prompt));
  CHECK(echo.calls() == 2);
}

TEST_CASE("fixture client replays the appendix analysis") {
  FixtureLlmClient client = FixtureLlmClient::load(LAMB_TEST_DATA "/conect.jsonl");
  const auto s = fixtures::appendix_case();
  const std::string out = client.complete(build_conect_prompt(s.history, labels().find("grateful")));
  CHECK(out.rfind("Based on the content of the dialogue", 0) == 0);
  CHECK(out == fixtures::appendix_conect_response());
  CHECK_THROWS(client.complete("unrecorded prompt"));
}

TEST_CASE("cache is idempotent and survives reload") {
  const auto dir = scratch("cache");
  std::filesystem::create_directories(dir);
  const auto path = dir / "conect_cache.jsonl";
  CountingClient client;
  const std::string prompt = "Sentiment label: sad\nwhat happened";
  {
    ConectCache cache(path);
    const auto first = query_conect(prompt, client, cache);
    const auto second = query_conect(prompt, client, cache);
    CHECK(client.calls() == 1);
    CHECK(first.response == second.response);
    CHECK(first.cache_key == sha256_hex(prompt));
    CHECK(cache.size() == 1);
  }
  ConectCache reloaded(path);
  CHECK(reloaded.size() == 1);
  query_conect(prompt, client, reloaded);
  CHECK(client.calls() == 1);
  CHECK_THROWS_AS(query_conect("", client, reloaded), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST_CASE("earlier cache record wins on duplicate insert") {
  ConectCache cache;
  const std::string key = sha256_hex("p");
  const auto a = cache.insert({"p", "first", key, "x", "t"});
  const auto b = cache.insert({"p", "second", key, "x", "t"});
  CHECK(a.response == "first");
  CHECK(b.response == "first");
  CHECK(cache.size() == 1);
}

TEST_CASE("concurrent readers see consistent records") {
  const auto dir = scratch("concurrent");
  std::filesystem::create_directories(dir);
  ConectCache cache(dir / "cache.jsonl");
  CountingClient client;
  std::vector<std::string> prompts;
  for (int i = 0; i < 64; ++i) prompts.push_back("Sentiment label: sad\nprompt " + std::to_string(i));
  for (const auto& p : prompts) query_conect(p, client, cache);
  std::atomic<int> mismatches{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < 8; ++t) {
    pool.emplace_back([&, t] {
      for (int round = 0; round < 50; ++round) {
        for (std::size_t i = static_cast<std::size_t>(t); i < prompts.size(); i += 3) {
          const auto hit = cache.find(sha256_hex(prompts[i]));
          if (!hit || hit->response != "reply to " + sha256_hex(prompts[i])) ++mismatches;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  CHECK(mismatches.load() == 0);
  CHECK(client.calls() == prompts.size());
  std::filesystem::remove_all(dir);
}

TEST_CASE("conect record JSON round-trips") {
  const std::string prompt = "prompt\nwith newline";
  const ConectRecord r{prompt, "resp \"quoted\"", sha256_hex(prompt), "echo-v1", "2024-01-01T00:00:00Z"};
  const auto back = ConectRecord::from_json(r.to_json());
  CHECK(back.prompt == r.prompt);
  CHECK(back.response == r.response);
  CHECK(back.cache_key == r.cache_key);
  ConectRecord forged = r;
  forged.cache_key = "abc";
  CHECK_THROWS(ConectRecord::from_json(forged.to_json()));
}

TEST_CASE("http request body carries model, sampling and the prompt") {
  HttpLlmConfig cfg;
  const auto body = HttpLlmClient::request_body(cfg, "hello");
  CHECK(body.find("\"model\":\"llama-2-13b-chat\"") != std::string::npos);
  CHECK(body.find("\"content\":\"hello\"") != std::string::npos);
  CHECK(body.find("\"temperature\":0.8") != std::string::npos);
  CHECK(body.find("\"top_p\":0.95") != std::string::npos);
}

TEST_CASE("http client retries with doubling backoff") {
  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    if (++hits < 3) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"analysis text"}}]})",
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  std::vector<double> sleeps;
  HttpLlmConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
  cfg.max_attempts = 3;
  cfg.initial_backoff_seconds = 0.5;
  cfg.timeout_seconds = 5;
  HttpLlmClient client(cfg, [&](std::chrono::duration<double> d) { sleeps.push_back(d.count()); });
  CHECK(client.complete("Sentiment label: sad") == "analysis text");
  CHECK(client.attempts() == 3);
  CHECK(sleeps == std::vector<double>{0.5, 1.0});

  hits = -10;  // keeps failing
  HttpLlmClient failing(cfg, [](std::chrono::duration<double>) {});
  CHECK_THROWS_WITH_AS(failing.complete("x"), doctest::Contains("503"), std::runtime_error);
  server.stop();
  th.join();
}
