#include "lamb/decoder.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <map>

using namespace lamb;

namespace {

Matrix random_matrix(Rng& rng, Index r, Index c) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return m;
}

RepMatrix rep(Rng& rng, Index rows, Index d, RepTag tag) { return {Tensor::constant(random_matrix(rng, rows, d)), tag}; }

struct Micro {
  nn::ParameterStore store;
  Rng rng;
  Tensor embedding;
  std::unique_ptr<TransformerDecoder> decoder;

  Micro(int vocab, Index d, int layers, int heads, std::uint64_t seed = 11) : rng(seed) {
    DecoderConfig cfg;
    cfg.vocab_size = vocab;
    cfg.d_model = d;
    cfg.layers = layers;
    cfg.heads = heads;
    cfg.ffn_dim = 2 * d;
    cfg.max_positions = 32;
    cfg.init_std = 0.3;
    embedding = store.add("tok", nn::normal_matrix(rng, vocab, d, cfg.init_std));
    decoder = std::make_unique<TransformerDecoder>(store, "dec", cfg, embedding, rng);
    // Non-trivial bias so the reference has to add it.
    Tensor(decoder->logits_bias()).mutable_value() = random_matrix(rng, 1, vocab);
  }
};

DecoderMemory memory_of(Rng& rng, Index g, Index c, Index m, Index d) {
  const auto r_g = rep(rng, g, d, RepTag::fused);
  const auto r_c = rep(rng, c, d, RepTag::commonsense);
  const auto r_m = rep(rng, m, d, RepTag::conect);
  return assemble_memory(r_g, r_c, m > 0 ? &r_m : nullptr);
}

// Scorer over ids 0..9 described by a table from prefix to log-probs.
class TableScorer final : public StepScorer {
 public:
  std::map<std::vector<int>, std::vector<double>> table;
  std::vector<double> fallback;

  std::vector<double> next_log_probs(std::span<const int> prefix) const override {
    auto it = table.find(std::vector<int>(prefix.begin(), prefix.end()));
    return it == table.end() ? fallback : it->second;
  }
};

std::vector<double> dist(std::initializer_list<std::pair<int, double>> probs) {
  std::vector<double> out(10, -std::numeric_limits<double>::infinity());
  for (auto [id, p] : probs) out[static_cast<std::size_t>(id)] = std::log(p);
  return out;
}

}  // namespace

TEST_CASE("memory concatenates the three streams with segment ids") {
  Rng rng(1);
  const auto r_g = rep(rng, 4, 6, RepTag::fused);
  const auto r_c = rep(rng, 20, 6, RepTag::commonsense);
  const auto r_m = rep(rng, 10, 6, RepTag::conect);
  const auto mem = assemble_memory(r_g, r_c, &r_m);
  CHECK(mem.length() == 34);
  CHECK(mem.segment_histogram() == std::array<Index, kSegmentCount>{4, 20, 10});
  CHECK(mem.segment(0) == r_g.values.value());
  CHECK(mem.segment(1) == r_c.values.value());
  CHECK(mem.segment(2) == r_m.values.value());
  CHECK(mem.values.value().topRows(4) == r_g.values.value());
  CHECK(mem.values.value().bottomRows(10) == r_m.values.value());

  const auto no_m = assemble_memory(r_g, r_c, nullptr);
  CHECK(no_m.length() == 24);
  CHECK(no_m.segment_histogram() == std::array<Index, kSegmentCount>{4, 20, 0});

  const auto narrow = rep(rng, 3, 5, RepTag::conect);
  CHECK_THROWS_AS(assemble_memory(r_g, r_c, &narrow), std::invalid_argument);
}

TEST_CASE("tagged memory adds one embedding per segment") {
  Micro m(10, 4, 1, 1);
  Rng rng(2);
  const auto mem = memory_of(rng, 2, 5, 3, 4);
  const Matrix tagged = m.decoder->tagged_memory(mem).value();
  for (Index i = 0; i < mem.length(); ++i) {
    const int s = mem.segment_ids[static_cast<std::size_t>(i)];
    const Matrix expected = mem.values.value().row(i) + m.decoder->segment_embeddings()[static_cast<std::size_t>(s)].value();
    CHECK((tagged.row(i) - expected).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("uniform logits give m ln|V| and a peaked model gives zero") {
  Micro m(10, 4, 1, 1);
  Rng rng(3);
  const auto mem = memory_of(rng, 2, 5, 3, 4);
  Tensor(m.embedding).mutable_value().setZero();
  Tensor(m.decoder->logits_bias()).mutable_value().setZero();
  const std::vector<int> target{7, 8, 9, special::eos};
  const auto nll = nll_loss(target, mem, *m.decoder);
  CHECK(nll.token_count() == 4);
  CHECK(nll.total.item() == doctest::Approx(4.0 * std::log(10.0)).epsilon(1e-12));

  Matrix bias = Matrix::Zero(1, 10);
  bias(0, 7) = 1000.0;
  Tensor(m.decoder->logits_bias()).mutable_value() = bias;
  CHECK(nll_loss(std::vector<int>{7, 7, 7}, mem, *m.decoder).total.item() == 0.0);
}

TEST_CASE("decoder logits and token nll match the loop reference") {
  for (auto [layers, heads] : {std::pair{1, 1}, std::pair{2, 2}}) {
    Micro m(10, 4, layers, heads, 20 + static_cast<std::uint64_t>(layers));
    Rng rng(4);
    const auto mem = memory_of(rng, 3, 10, 4, 4);
    const std::vector<int> target{6, 9, 7, special::eos};
    const std::vector<int> inputs{special::bos, 6, 9, 7};
    const Matrix logits = m.decoder->logits(inputs, mem).value();
    const auto ref = oracle::decoder_logits(*m.decoder, inputs, oracle::to_mat(m.decoder->tagged_memory(mem).value()));
    for (Index i = 0; i < logits.rows(); ++i) {
      for (Index j = 0; j < logits.cols(); ++j) CHECK(std::abs(logits(i, j) - ref[i][j]) < 1e-10);
    }
    const auto nll = nll_loss(target, mem, *m.decoder);
    double sum = 0.0;
    for (std::size_t t = 0; t < target.size(); ++t) {
      const double expected = -oracle::log_softmax(ref[t])[static_cast<std::size_t>(target[t])];
      CHECK(std::abs(nll.token_nll[t] - expected) < 1e-10);
      sum += expected;
    }
    CHECK(std::abs(nll.total.item() - sum) < 1e-10);
  }
}

TEST_CASE("decoder is causal") {
  Micro m(10, 4, 2, 2);
  Rng rng(5);
  const auto mem = memory_of(rng, 2, 5, 0, 4);
  const Matrix a = m.decoder->logits(std::vector<int>{special::bos, 6, 7, 8}, mem).value();
  const Matrix b = m.decoder->logits(std::vector<int>{special::bos, 6, 9, 9}, mem).value();
  CHECK((a.topRows(2) - b.topRows(2)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((a.row(2) - b.row(2)).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("step distributions sum to one") {
  Micro m(10, 4, 1, 2);
  Rng rng(6);
  const auto mem = memory_of(rng, 2, 5, 3, 4);
  DecoderStepScorer scorer(*m.decoder, mem);
  for (const auto& prefix : std::vector<std::vector<int>>{{special::bos}, {special::bos, 7}, {special::bos, 7, 8, 9}}) {
    double s = 0.0;
    for (double lp : scorer.next_log_probs(prefix)) s += std::exp(lp);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("eos first ends generation unless a minimum length is set") {
  TableScorer s;
  s.fallback = dist({{special::eos, 0.6}, {7, 0.3}, {8, 0.1}});
  DecodeOptions opt;
  opt.max_gen_len = 5;
  const auto r = generate(s, opt);
  CHECK(r.ids == std::vector<int>{special::eos});
  CHECK(r.finished());
  opt.min_gen_len = 1;
  const auto r2 = generate(s, opt);
  CHECK(r2.ids == std::vector<int>{7, special::eos});
  opt.banned_ids = {7};
  CHECK(generate(s, opt).ids == std::vector<int>{8, special::eos});
}

TEST_CASE("max length stops unfinished output") {
  TableScorer s;
  s.fallback = dist({{special::eos, 0.1}, {7, 0.9}});
  DecodeOptions opt;
  opt.max_gen_len = 3;
  const auto r = generate(s, opt);
  CHECK(r.ids == std::vector<int>{7, 7, 7});
  CHECK_FALSE(r.finished());
}

TEST_CASE("greedy equals beam of one") {
  Micro m(10, 4, 2, 2);
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const auto mem = memory_of(rng, 2, 5, 3, 4);
    DecodeOptions g;
    g.max_gen_len = 6;
    g.banned_ids = {special::pad, special::bos};
    DecodeOptions b = g;
    b.strategy = DecodeStrategy::beam;
    b.beam_size = 1;
    const auto rg = generate(mem, *m.decoder, g);
    const auto rb = generate(mem, *m.decoder, b);
    CHECK(rg.ids == rb.ids);
    CHECK(rg.score == rb.score);
  }
}

TEST_CASE("beam of three finds the best three-step sequence where greedy does not") {
  // Step 1: 6 (.5), 7 (.4), 8 (.1). Step 2 depends on step 1. Step 3: <eos>.
  TableScorer s;
  const int bos = special::bos, eos = special::eos;
  s.table[{bos}] = dist({{6, 0.5}, {7, 0.4}, {8, 0.1}});
  s.table[{bos, 6}] = dist({{6, 0.34}, {7, 0.33}, {8, 0.33}});
  s.table[{bos, 7}] = dist({{9, 0.9}, {6, 0.1}});
  s.table[{bos, 8}] = dist({{9, 0.99}, {6, 0.01}});
  s.fallback = dist({{eos, 1.0}});

  // Exhaustive search over every length-3 path.
  double best = -std::numeric_limits<double>::infinity();
  std::vector<int> best_ids;
  const auto first = s.next_log_probs(std::vector<int>{bos});
  for (int a = 0; a < 10; ++a) {
    if (std::isinf(first[static_cast<std::size_t>(a)])) continue;
    const auto second = s.next_log_probs(std::vector<int>{bos, a});
    for (int b = 0; b < 10; ++b) {
      if (std::isinf(second[static_cast<std::size_t>(b)])) continue;
      const double score = first[static_cast<std::size_t>(a)] + second[static_cast<std::size_t>(b)];
      if (score > best) {
        best = score;
        best_ids = {a, b, eos};
      }
    }
  }
  DecodeOptions opt;
  opt.strategy = DecodeStrategy::beam;
  opt.beam_size = 3;
  opt.max_gen_len = 3;
  const auto r = generate(s, opt);
  CHECK(r.ids == best_ids);
  CHECK(r.ids == std::vector<int>{7, 9, eos});
  CHECK(r.score == doctest::Approx(best).epsilon(1e-12));

  DecodeOptions greedy;
  greedy.max_gen_len = 3;
  CHECK(generate(s, greedy).ids == std::vector<int>{6, 6, eos});
}

TEST_CASE("generation is deterministic and decodes text") {
  Micro m(10, 4, 1, 1);
  Rng rng(8);
  const auto mem = memory_of(rng, 2, 5, 3, 4);
  Vocab v;
  for (int i = 0; i < 4; ++i) v.add("t" + std::to_string(i));
  DecodeOptions opt;
  opt.strategy = DecodeStrategy::beam;
  opt.beam_size = 3;
  opt.banned_ids = {special::pad, special::bos, special::unk, special::sep, special::cls};
  const auto a = generate(mem, *m.decoder, opt, &v);
  const auto b = generate(mem, *m.decoder, opt, &v);
  CHECK(a.ids == b.ids);
  CHECK(a.text == b.text);
  CHECK(a.text == v.decode(a.ids));
}
