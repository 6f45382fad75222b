// lamb: command-line front end for the experiment pipeline.
//
// Exit codes: 0 success, 1 failure, 2 usage error, 3 finished with per-sample
// errors (build-knowledge --continue-on-error).

#include "lamb/fixtures.hpp"
#include "lamb/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <unistd.h>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lamb;
using namespace lamb::pipeline;

namespace {

struct ProviderFlags {
  ProviderFlags() = default;
  ProviderFlags(std::string s, std::string c, std::string k, std::string l)
      : sentiment(std::move(s)), cause(std::move(c)), commonsense(std::move(k)), llm(std::move(l)) {}

  std::string sentiment = "fixture";
  std::string cause = "fixture";
  std::string commonsense = "fixture";
  std::string llm = "fixture";
  std::string fixture_dir;
  std::string prompt_template;
  std::string llm_url;
  std::string llm_model;

  void add(CLI::App* app) {
    app->add_option("--sentiment-backend", sentiment, "oracle|lexicon|fixture")->capture_default_str();
    app->add_option("--cause-backend", cause, "oracle|heuristic|fixture")->capture_default_str();
    app->add_option("--commonsense-backend", commonsense, "template|fixture")->capture_default_str();
    app->add_option("--llm-backend", llm, "echo|fixture|http")->capture_default_str();
    app->add_option("--fixture-dir", fixture_dir, "directory holding provider fixtures");
    app->add_option("--prompt-template", prompt_template, "CoNECT prompt template file");
    app->add_option("--llm-url", llm_url, "base URL of the http backend");
    app->add_option("--llm-model", llm_model, "model name sent to the http backend");
  }

  ProviderOptions resolve() const {
    ProviderOptions o;
    o.sentiment = parse_sentiment_backend(sentiment);
    o.cause = parse_cause_backend(cause);
    o.commonsense = parse_commonsense_backend(commonsense);
    o.llm = parse_llm_backend(llm);
    if (!fixture_dir.empty()) o.fixture_dir = fixture_dir;
    if (!prompt_template.empty()) o.prompt_template = fs::path(prompt_template);
    if (!llm_url.empty()) o.http.base_url = llm_url;
    if (!llm_model.empty()) o.http.model = llm_model;
    return o;
  }
};

struct ConfigFlags {
  std::string path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> ablation;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> lr;

  void add(CLI::App* app, bool with_ablation = true) {
    app->add_option("--config", path, "training config JSON");
    app->add_option("--seed", seed, "seed for every random stream");
    if (with_ablation) app->add_option("--ablation", ablation, "vanilla|self_pres|conect|full");
    app->add_option("--epochs", epochs);
    app->add_option("--batch-size", batch_size);
    app->add_option("--lr", lr);
  }

  TrainConfig resolve() const {
    TrainConfig c;
    if (!path.empty()) {
      std::ifstream in(path);
      if (!in) throw std::runtime_error("cannot open config '" + path + "'");
      c = TrainConfig::from_json(json::parse(in));
    }
    if (seed) c.seed = *seed;
    if (ablation) c.model.ablation = parse_ablation(*ablation);
    if (epochs) c.epochs = *epochs;
    if (batch_size) c.batch_size = *batch_size;
    if (lr) c.learning_rate = *lr;
    return c;
  }
};

struct DecodeFlags {
  std::string strategy = "greedy";
  int beam_size = 4;
  int max_len = 32;
  int min_len = 1;

  void add(CLI::App* app) {
    app->add_option("--decode", strategy, "greedy|beam")->capture_default_str();
    app->add_option("--beam-size", beam_size)->capture_default_str();
    app->add_option("--max-len", max_len, "maximum generated tokens")->capture_default_str();
    app->add_option("--min-len", min_len, "tokens before <eos> is allowed")->capture_default_str();
  }

  void apply(DecodeOptions& d) const {
    if (strategy == "greedy") {
      d.strategy = DecodeStrategy::greedy;
    } else if (strategy == "beam") {
      d.strategy = DecodeStrategy::beam;
    } else {
      throw std::invalid_argument("--decode must be greedy or beam");
    }
    d.beam_size = beam_size;
    d.max_gen_len = max_len;
    d.min_gen_len = min_len;
  }
};

// Alternating speaker/listener lines; the last one must be the speaker's.
json dialogue_from_lines(const std::vector<std::string>& lines) {
  json history = json::array();
  for (std::size_t i = 0; i < lines.size(); ++i) {
    history.push_back({{"role", i % 2 == 0 ? "speaker" : "listener"}, {"text", lines[i]}});
  }
  return {{"id", "chat"}, {"history", history}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lamb: empathetic response generation experiments"};
  app.require_subcommand(1);
  int exit_code = 0;

  // fixtures
  auto* fx = app.add_subcommand("fixtures", "write the offline fixture set");
  std::string fx_out;
  std::uint64_t fx_seed = fixtures::kDefaultSeed;
  std::size_t fx_size = fixtures::kDefaultSize;
  fx->add_option("--out", fx_out)->required();
  fx->add_option("--seed", fx_seed)->capture_default_str();
  fx->add_option("--size", fx_size)->capture_default_str();
  fx->callback([&] {
    fixtures::write_fixture_set(fx_out, fx_seed, fx_size);
    std::cout << "wrote fixtures to " << fx_out << "\n";
  });

  // prepare-data
  auto* prep = app.add_subcommand("prepare-data", "split a corpus and build the vocabulary");
  PrepareOptions prep_opts;
  std::string prep_in, prep_out;
  prep->add_option("--input", prep_in, "JSONL corpus")->required();
  prep->add_option("--out", prep_out)->required();
  prep->add_option("--seed", prep_opts.seed)->capture_default_str();
  prep->add_option("--min-freq", prep_opts.min_freq)->capture_default_str();
  prep->callback([&] {
    prep_opts.input = prep_in;
    prep_opts.out = prep_out;
    prepare_data(prep_opts);
    std::cout << "prepared " << prep_out << "\n";
  });

  // build-knowledge
  auto* bk = app.add_subcommand("build-knowledge", "precompute selections, commonsense and CoNECT caches");
  std::string bk_data, bk_out, bk_ablation = "full";
  ProviderFlags bk_providers;
  BuildKnowledgeOptions bk_opts;
  bk->add_option("--data", bk_data, "prepare-data output")->required();
  bk->add_option("--out", bk_out)->required();
  bk->add_option("--ablation", bk_ablation)->capture_default_str();
  bk->add_option("--jobs", bk_opts.jobs, "parallel provider calls")->capture_default_str();
  bk->add_flag("--continue-on-error", bk_opts.continue_on_error);
  bk_providers.add(bk);
  bk->callback([&] {
    bk_opts.data_dir = bk_data;
    bk_opts.out = bk_out;
    bk_opts.ablation = parse_ablation(bk_ablation);
    bk_opts.providers = bk_providers.resolve();
    const auto r = build_knowledge(bk_opts);
    std::cout << "knowledge for " << r.samples << " samples, calls " << r.calls.to_json().dump() << "\n";
    for (const auto& e : r.errors) std::cerr << "error: " << e.id << " (" << e.stage << "): " << e.message << "\n";
    if (!r.errors.empty()) exit_code = 3;
  });

  // train
  auto* tr = app.add_subcommand("train", "train one configuration");
  std::string tr_data, tr_knowledge, tr_out;
  ConfigFlags tr_cfg;
  TrainOptions tr_opts;
  bool tr_verbose = false;
  tr->add_option("--data", tr_data)->required();
  tr->add_option("--knowledge", tr_knowledge)->required();
  tr->add_option("--out", tr_out)->required();
  tr->add_flag("--resume", tr_opts.resume, "continue from out/checkpoint.bin");
  tr->add_flag("-v,--verbose", tr_verbose, "print per-epoch losses");
  tr_cfg.add(tr);
  tr->callback([&] {
    tr_opts.data_dir = tr_data;
    tr_opts.knowledge_dir = tr_knowledge;
    tr_opts.out = tr_out;
    tr_opts.config = tr_cfg.resolve();
    tr_opts.config_path = tr_cfg.path;
    tr_opts.quiet = !tr_verbose;
    const auto outcome = train_command(tr_opts);
    for (const auto& e : outcome.epochs) std::cout << e.to_json().dump() << "\n";
  });

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score a checkpoint on one split");
  std::string ev_ckpt, ev_data, ev_knowledge, ev_out;
  std::optional<std::string> ev_ablation;
  std::vector<std::string> ev_metrics;
  DecodeFlags ev_decode;
  EvaluateOptions ev_opts;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--knowledge", ev_knowledge)->required();
  ev->add_option("--out", ev_out)->required();
  ev->add_option("--split", ev_opts.split)->capture_default_str();
  ev->add_option("--ablation", ev_ablation, "must match the checkpoint");
  ev->add_option("--metric", ev_metrics, "columns to print (PPL, B-1, ..., Acc)");
  ev->add_option("--jobs", ev_opts.eval.jobs)->capture_default_str();
  ev->add_flag("--rouge-recall", ev_opts.eval.rouge_recall, "report ROUGE recall instead of F1");
  ev_decode.add(ev);
  ev->callback([&] {
    ev_opts.checkpoint = ev_ckpt;
    ev_opts.data_dir = ev_data;
    ev_opts.knowledge_dir = ev_knowledge;
    ev_opts.out = ev_out;
    if (ev_ablation) ev_opts.ablation = parse_ablation(*ev_ablation);
    ev_decode.apply(ev_opts.eval.decode);
    const Evaluation result = evaluate_command(ev_opts);
    std::cout << render_table({{std::string(ablation_display(parse_ablation(result.report.ablation))), result.report}}, ev_metrics);
  });

  // generate
  auto* gen = app.add_subcommand("generate", "respond to one dialogue JSON");
  std::string gen_ckpt, gen_vocab, gen_dialogue;
  ProviderFlags gen_providers{"lexicon", "heuristic", "template", "echo"};
  DecodeFlags gen_decode;
  gen->add_option("--checkpoint", gen_ckpt)->required();
  gen->add_option("--vocab", gen_vocab)->required();
  gen->add_option("--dialogue", gen_dialogue, "JSON object with a history array")->required();
  gen_providers.add(gen);
  gen_decode.add(gen);
  gen->callback([&] {
    GenerateOptions o;
    o.checkpoint = gen_ckpt;
    o.vocab = gen_vocab;
    o.dialogue = gen_dialogue;
    o.providers = gen_providers.resolve();
    gen_decode.apply(o.decode);
    const auto r = generate_command(o);
    std::cout << r.response << "\n" << "emotion: " << r.emotion.name << "\n";
  });

  // chat
  auto* chat = app.add_subcommand("chat", "respond to a dialogue read from stdin");
  std::string chat_ckpt, chat_vocab;
  bool chat_interactive = false;
  ProviderFlags chat_providers{"lexicon", "heuristic", "template", "echo"};
  DecodeFlags chat_decode;
  chat->add_option("--checkpoint", chat_ckpt)->required();
  chat->add_option("--vocab", chat_vocab)->required();
  chat->add_flag("--interactive", chat_interactive, "turn-by-turn prompt instead of one batch reply");
  chat_providers.add(chat);
  chat_decode.add(chat);
  chat->callback([&] {
    const fs::path tmp = fs::temp_directory_path() / ("lamb-chat-" + std::to_string(::getpid()) + ".json");
    auto reply = [&](const std::vector<std::string>& lines) {
      {
        std::ofstream out(tmp);
        out << dialogue_from_lines(lines).dump();
      }
      GenerateOptions o;
      o.checkpoint = chat_ckpt;
      o.vocab = chat_vocab;
      o.dialogue = tmp;
      o.providers = chat_providers.resolve();
      chat_decode.apply(o.decode);
      auto r = generate_command(o);
      fs::remove(tmp);
      return r;
    };
    std::vector<std::string> lines;
    std::string line;
    if (!chat_interactive) {
      while (std::getline(std::cin, line)) {
        if (!line.empty()) lines.push_back(line);
      }
      const auto r = reply(lines);
      std::cout << r.response << "\n" << "emotion: " << r.emotion.name << "\n";
      return;
    }
    std::cout << "you> " << std::flush;
    while (std::getline(std::cin, line)) {
      if (line.empty()) {
        std::cout << "you> " << std::flush;
        continue;
      }
      lines.push_back(line);
      const auto r = reply(lines);
      lines.push_back(r.response.empty() ? "..." : r.response);
      std::cout << "lamb [" << r.emotion.name << "]> " << r.response << "\nyou> " << std::flush;
    }
    std::cout << "\n";
  });

  // ablate
  auto* ab = app.add_subcommand("ablate", "train and evaluate the four ablation configurations");
  std::string ab_data, ab_knowledge, ab_out;
  ConfigFlags ab_cfg;
  DecodeFlags ab_decode;
  AblateOptions ab_opts;
  ab->add_option("--data", ab_data)->required();
  ab->add_option("--knowledge", ab_knowledge, "knowledge built for the full ablation")->required();
  ab->add_option("--out", ab_out)->required();
  ab->add_option("--jobs", ab_opts.eval.jobs)->capture_default_str();
  ab_cfg.add(ab, false);
  ab_decode.add(ab);
  ab->callback([&] {
    ab_opts.data_dir = ab_data;
    ab_opts.knowledge_dir = ab_knowledge;
    ab_opts.out = ab_out;
    ab_opts.config = ab_cfg.resolve();
    ab_opts.config_path = ab_cfg.path;
    ab_decode.apply(ab_opts.eval.decode);
    std::cout << ablate_command(ab_opts).table;
  });

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "finite-difference check on the micro model");
  std::uint64_t gc_seed = 1;
  double gc_tol = 1e-4;
  GradCheckOptions gc_opts;
  gc->add_option("--seed", gc_seed)->capture_default_str();
  gc->add_option("--tolerance", gc_tol)->capture_default_str();
  gc->add_option("--step", gc_opts.h, "central-difference step")->capture_default_str();
  gc->callback([&] {
    const auto report = run_model_grad_check(gc_seed, gc_opts);
    std::cout << report.to_json().dump(2) << "\n";
    if (!report.passed(gc_tol)) {
      std::cerr << "max relative error " << report.max_rel_error() << " exceeds " << gc_tol << "\n";
      exit_code = 1;
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and --version land here too and exit 0.
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "lamb: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
