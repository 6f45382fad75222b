#include "lamb/corpus.hpp"
#include "lamb/pipeline.hpp"
#include "lamb/training.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace lamb;

namespace {

struct Data {
  std::vector<DialogueSample> corpus;
  Vocab vocab;
};

const Data& data() {
  static const Data d = [] {
    Data out;
    out.corpus = load_dataset(LAMB_TEST_DATA "/mini_corpus.jsonl");
    out.vocab = build_vocab(out.corpus, 1);
    return out;
  }();
  return d;
}

ModelConfig small_model(Ablation a = Ablation::full) {
  ModelConfig c;
  c.vocab_size = data().vocab.size();
  c.d_model = 16;
  c.layers = 1;
  c.heads = 2;
  c.ffn_dim = 32;
  c.dropout = 0.0;
  c.ablation = a;
  return c;
}

std::vector<PreparedSample> prepared(const ModelConfig& cfg, std::size_t n, pipeline::CallCounts* calls = nullptr) {
  pipeline::ProviderOptions opts;
  opts.fixture_dir = LAMB_TEST_DATA;
  pipeline::LiveProviders live(opts, data().corpus);
  ConectCache cache;
  const auto ps = live.providers(&cache);
  const std::vector<DialogueSample> subset(data().corpus.begin(), data().corpus.begin() + static_cast<long>(n));
  auto out = pipeline::featurize_all(subset, data().vocab, cfg, ps);
  if (calls != nullptr) *calls = pipeline::call_counts(ps);
  return out;
}

std::vector<const PreparedSample*> pointers(const std::vector<PreparedSample>& v) {
  std::vector<const PreparedSample*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("lamb_training_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("batch loss is the token-mean nll plus the sample-mean emotion loss") {
  const auto cfg = small_model();
  const auto samples = prepared(cfg, 24);
  TrainConfig tc;
  tc.model = cfg;
  tc.batch_size = 4;
  tc.epochs = 50;
  tc.learning_rate = 1e-3;
  LambModel model(cfg, 3);
  Trainer trainer(model, tc);
  int steps = 0;
  // Sum of the parts, recomputed per sample, for every step over 50 epochs would be slow; check the logs.
  trainer.run(std::vector<PreparedSample>(samples.begin(), samples.begin() + 4), [&](const StepLog& log) {
    ++steps;
    CHECK(log.loss.total == doctest::Approx(log.loss.nll + log.loss.emo).epsilon(1e-14));
    CHECK(log.loss.nll == doctest::Approx(log.loss.nll_sum / static_cast<double>(log.loss.token_count)).epsilon(1e-14));
  });
  CHECK(steps == 50);

  // Independent recombination from per-sample losses.
  const auto batch = pointers(samples);
  const auto bl = batch_loss(model, batch, {}, false);
  double nll_sum = 0.0, emo_sum = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : samples) {
    const auto l = model.loss(s);
    nll_sum += l.nll.total.item();
    emo_sum += l.emo.item();
    tokens += l.nll.token_count();
  }
  CHECK(bl.breakdown.token_count == tokens);
  CHECK(bl.breakdown.nll_sum == doctest::Approx(nll_sum).epsilon(1e-12));
  CHECK(bl.breakdown.nll == doctest::Approx(nll_sum / static_cast<double>(tokens)).epsilon(1e-12));
  CHECK(bl.breakdown.emo == doctest::Approx(emo_sum / static_cast<double>(samples.size())).epsilon(1e-12));
  CHECK(bl.total.item() == doctest::Approx(bl.breakdown.nll + bl.breakdown.emo).epsilon(1e-14));

  const auto strict = batch_loss(model, batch, {}, true);
  CHECK(strict.breakdown.nll == doctest::Approx(nll_sum).epsilon(1e-12));
}

TEST_CASE("vanilla never calls the selectors or the llm") {
  const auto cfg = small_model(Ablation::vanilla);
  pipeline::CallCounts calls;
  const auto samples = prepared(cfg, 20, &calls);
  CHECK(calls.sentiment == 0);
  CHECK(calls.cause == 0);
  CHECK(calls.llm == 0);
  CHECK(calls.commonsense == 20);
  for (const auto& s : samples) {
    CHECK(s.cause.ids.empty());
    CHECK(s.conect.empty());
  }
  // Only the commonsense provider supplied: same features, same loss.
  pipeline::ProviderOptions opts;
  opts.fixture_dir = LAMB_TEST_DATA;
  pipeline::LiveProviders live(opts, data().corpus);
  pipeline::ProviderSet only;
  only.commonsense = live.providers(nullptr).commonsense;
  const std::vector<DialogueSample> subset(data().corpus.begin(), data().corpus.begin() + 20);
  const auto bare = pipeline::featurize_all(subset, data().vocab, cfg, only);
  LambModel model(cfg, 9);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(model.loss(samples[i]).nll.total.item() == model.loss(bare[i]).nll.total.item());
  }
}

TEST_CASE("full ablation calls every provider once per sample") {
  pipeline::CallCounts calls;
  prepared(small_model(Ablation::full), 12, &calls);
  CHECK(calls == pipeline::CallCounts{12, 12, 12, 12});
  prepared(small_model(Ablation::conect), 12, &calls);
  CHECK(calls == pipeline::CallCounts{12, 0, 12, 12});
  prepared(small_model(Ablation::self_pres), 12, &calls);
  CHECK(calls == pipeline::CallCounts{12, 12, 12, 0});
}

TEST_CASE("eight samples are memorized") {
  auto cfg = small_model();
  cfg.d_model = 32;
  cfg.ffn_dim = 64;
  const auto samples = prepared(cfg, 8);
  TrainConfig tc;
  tc.model = cfg;
  tc.batch_size = 8;
  tc.epochs = 200;
  tc.learning_rate = 3e-3;
  LambModel model(cfg, 5);
  Trainer trainer(model, tc);
  double first = 0.0, last = 0.0;
  trainer.run(samples, [&](const StepLog& log) {
    if (log.step == 1) first = log.loss.total;
    last = log.loss.total;
  });
  MESSAGE("overfit: " << first << " -> " << last);
  CHECK(last < 0.1 * first);
}

TEST_CASE("gradient check passes on the micro model and catches tampering") {
  const auto ok = run_model_grad_check(13);
  CHECK(ok.passed(1e-4));
  for (const char* g : {"embedding", "encoder", "relation_encoder", "fusion", "decoder", "emotion_head"}) {
    const auto* grp = ok.find(g);
    REQUIRE(grp != nullptr);
    CHECK(grp->entries > 0);
  }
  GradCheckOptions bad;
  bad.tamper = [](nn::ParameterStore& store) {
    Tensor* t = store.find("fusion.w_q");
    REQUIRE(t != nullptr);
    t->mutable_grad()(0, 0) += 1.0;
  };
  const auto report = run_model_grad_check(13, bad);
  CHECK(report.max_rel_error() > 1e-2);
  CHECK(report.find("fusion")->max_rel_error > 1e-2);

  nn::ParameterStore empty;
  const auto none = grad_check(empty, [] { return Tensor::constant(Matrix::Zero(1, 1)); });
  CHECK(none.passed());
}

TEST_CASE("checkpoint round-trips bit for bit") {
  const auto cfg = small_model();
  const auto samples = prepared(cfg, 8);
  TrainConfig tc;
  tc.model = cfg;
  tc.batch_size = 4;
  tc.epochs = 1;
  LambModel model(cfg, 1);
  Trainer trainer(model, tc);
  trainer.run(samples);
  const auto ckpt = capture_checkpoint(trainer);
  const std::string bytes = serialize_checkpoint(ckpt);
  CHECK(serialize_checkpoint(parse_checkpoint(bytes)) == bytes);

  LambModel fresh(cfg, 2);
  apply_checkpoint(parse_checkpoint(bytes), fresh);
  const auto& a = model.parameters().parameters();
  const auto& b = fresh.parameters().parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(a[i].tensor.value() == b[i].tensor.value());
  }

  const auto dir = scratch("ckpt");
  save_checkpoint(dir / "c.bin", ckpt);
  CHECK(serialize_checkpoint(load_checkpoint(dir / "c.bin")) == bytes);

  std::string truncated = bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(parse_checkpoint(truncated), CheckpointError);
  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x5a;
  CHECK_THROWS_AS(parse_checkpoint(flipped), CheckpointError);

  Checkpoint future = ckpt;
  future.version = kCheckpointVersion + 1;
  CHECK_THROWS_AS(parse_checkpoint(serialize_checkpoint(future)), CheckpointError);

  auto other = cfg;
  other.d_model = 8;
  LambModel wrong(other, 1);
  CHECK_THROWS_AS(apply_checkpoint(ckpt, wrong), CheckpointError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training logs are deterministic and resuming matches an uninterrupted run") {
  auto cfg = small_model();
  cfg.dropout = 0.1;
  const auto samples = prepared(cfg, 16);
  TrainConfig tc;
  tc.model = cfg;
  tc.batch_size = 4;
  tc.epochs = 3;
  tc.learning_rate = 1e-3;

  auto run_full = [&] {
    LambModel model(cfg, 7);
    Trainer trainer(model, tc);
    std::vector<std::string> log;
    trainer.run(samples, [&](const StepLog& s) { log.push_back(s.to_json().dump()); });
    return std::make_pair(log, serialize_checkpoint(capture_checkpoint(trainer)));
  };
  const auto a = run_full();
  const auto b = run_full();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);

  // Two epochs, checkpoint, then a fresh process resumes the third.
  std::string mid;
  {
    LambModel model(cfg, 7);
    TrainConfig two = tc;
    two.epochs = 2;
    Trainer trainer(model, two);
    trainer.run(samples);
    mid = serialize_checkpoint(capture_checkpoint(trainer));
  }
  LambModel model(cfg, 99);
  Trainer trainer(model, tc);
  const auto ck = parse_checkpoint(mid);
  apply_checkpoint(ck, model, &trainer.optimizer(), &trainer.rng());
  trainer.set_epochs_done(ck.epoch);
  std::vector<std::string> tail;
  trainer.run(samples, [&](const StepLog& s) { tail.push_back(s.to_json().dump()); });
  REQUIRE(tail.size() <= a.first.size());
  CHECK(std::equal(tail.begin(), tail.end(), a.first.end() - static_cast<long>(tail.size())));
  auto final_ck = capture_checkpoint(trainer);
  final_ck.config = parse_checkpoint(a.second).config;
  CHECK(serialize_checkpoint(final_ck) == a.second);
}

TEST_CASE("non-finite loss names the batch") {
  const auto cfg = small_model();
  const auto samples = prepared(cfg, 4);
  TrainConfig tc;
  tc.model = cfg;
  tc.batch_size = 2;
  tc.epochs = 1;
  LambModel model(cfg, 1);
  Tensor(*model.parameters().find("decoder.logits_bias")).mutable_value()(0, 7) = std::nan("");
  Trainer trainer(model, tc);
  CHECK_THROWS_WITH_AS(trainer.run(samples), doctest::Contains("batch 0"), TrainingError);
}
