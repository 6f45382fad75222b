#include "lamb/metrics.hpp"
#include "lamb/random.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace lamb;
using metrics::Tokens;

namespace {

Tokens words(const std::string& s) {
  Tokens out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

struct Corpus {
  std::vector<Tokens> hyps, refs;
  std::vector<double> nll;
  std::vector<int> pred, gold;
};

// Small alphabet so n-gram collisions are common.
Corpus random_corpus(Rng& rng) {
  static const std::vector<std::string> alphabet{"a", "b", "c", "d", "e", "the", "cat", "sat"};
  Corpus c;
  const auto n = 1 + rng.below(8);
  auto sentence = [&](std::size_t min_len) {
    Tokens t;
    const auto len = min_len + rng.below(9);
    for (std::size_t i = 0; i < len; ++i) t.push_back(alphabet[rng.below(alphabet.size())]);
    return t;
  };
  for (std::size_t i = 0; i < n; ++i) {
    c.hyps.push_back(sentence(2));
    c.refs.push_back(sentence(1));
    c.pred.push_back(static_cast<int>(rng.below(4)));
    c.gold.push_back(static_cast<int>(rng.below(4)));
  }
  const auto tokens = 1 + rng.below(40);
  for (std::size_t i = 0; i < tokens; ++i) c.nll.push_back(rng.uniform(0.0, 6.0));
  return c;
}

}  // namespace

TEST_CASE("perplexity of uniform and perfect models") {
  CHECK(metrics::perplexity(std::vector<double>(7, std::log(10.0))) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(metrics::perplexity(std::vector<double>(3, 0.0)) == 1.0);
  CHECK_THROWS(metrics::perplexity(std::vector<double>{}));
}

TEST_CASE("bleu on identical and disjoint corpora") {
  const std::vector<Tokens> refs{words("the cat sat on the mat"), words("a b c d")};
  for (int n = 1; n <= 4; ++n) CHECK(metrics::bleu(refs, refs, n) == doctest::Approx(1.0).epsilon(1e-12));
  const std::vector<Tokens> disjoint{words("x y z w q r"), words("k l m n")};
  CHECK(metrics::bleu(disjoint, refs, 1) < 1e-6);
  CHECK(metrics::bleu(disjoint, refs, 1, 0.0) == 0.0);
  CHECK_THROWS(metrics::bleu({words("a")}, refs, 1));
  CHECK_THROWS(metrics::bleu(refs, refs, 5));
}

TEST_CASE("rouge examples") {
  const auto same = metrics::rouge_n(words("a b c"), words("a b c"), 1);
  CHECK(same.f1 == doctest::Approx(1.0));
  CHECK(metrics::rouge_n(words("a b"), words("c d"), 1).f1 == 0.0);
  // Overlap {the, cat}: hyp has 4 unigrams, ref has 3.
  const auto r = metrics::rouge_n(words("the cat is here"), words("the cat sat"), 1);
  CHECK(r.precision == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r.f1 == doctest::Approx(4.0 / 7.0).epsilon(1e-15));
  const auto corpus = metrics::corpus_rouge({words("a"), words("b")}, {words("a"), Tokens{}}, 1);
  CHECK(corpus.empty_references == 1);
  CHECK(corpus.mean == doctest::Approx(0.5));
}

TEST_CASE("dist examples") {
  CHECK(metrics::dist_n({words("a a b")}, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  for (int m = 1; m <= 9; ++m) {
    CHECK(metrics::dist_n({Tokens(static_cast<std::size_t>(m), "z")}, 1) ==
          doctest::Approx(1.0 / m).epsilon(1e-15));
  }
  CHECK_THROWS(metrics::dist_n({words("a"), words("b")}, 2));
}

TEST_CASE("accuracy examples") {
  const std::vector<int> gold{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19};
  std::vector<int> pred = gold;
  CHECK(metrics::accuracy(pred, gold) == 1.0);
  for (int i = 13; i < 20; ++i) pred[static_cast<std::size_t>(i)] = -1;
  CHECK(metrics::accuracy(pred, gold) == doctest::Approx(0.65).epsilon(1e-15));
  for (auto& p : pred) p = -1;
  CHECK(metrics::accuracy(pred, gold) == 0.0);
  CHECK_THROWS(metrics::accuracy(std::vector<int>{1}, gold));
}

TEST_CASE("every metric equals its brute-force oracle on 100 random corpora") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const Corpus c = random_corpus(rng);
    for (int n = 1; n <= 4; ++n) {
      CHECK(std::abs(metrics::bleu(c.hyps, c.refs, n) - oracle::bleu(c.hyps, c.refs, n, metrics::kBleuEpsilon)) <
            1e-9);
    }
    for (int n = 1; n <= 2; ++n) {
      double f1 = 0.0, rec = 0.0;
      for (std::size_t i = 0; i < c.hyps.size(); ++i) {
        f1 += oracle::rouge_f1(c.hyps[i], c.refs[i], n);
        rec += oracle::rouge_recall(c.hyps[i], c.refs[i], n);
      }
      const double k = static_cast<double>(c.hyps.size());
      CHECK(std::abs(metrics::corpus_rouge(c.hyps, c.refs, n).mean - f1 / k) < 1e-9);
      CHECK(std::abs(metrics::corpus_rouge(c.hyps, c.refs, n, true).mean - rec / k) < 1e-9);
      CHECK(metrics::dist_n(c.hyps, n) == oracle::dist(c.hyps, n));
    }
    CHECK(std::abs(metrics::perplexity(c.nll) - oracle::perplexity(c.nll)) < 1e-9);
    CHECK(metrics::accuracy(c.pred, c.gold) == oracle::accuracy(c.pred, c.gold));
  }
}

TEST_CASE("corpus metrics are permutation invariant") {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    Corpus c = random_corpus(rng);
    const double b = metrics::bleu(c.hyps, c.refs, 4), d1 = metrics::dist_n(c.hyps, 1),
                 r1 = metrics::corpus_rouge(c.hyps, c.refs, 1).mean, p = metrics::perplexity(c.nll);
    std::vector<std::size_t> order(c.hyps.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    Corpus s;
    for (auto i : order) {
      s.hyps.push_back(c.hyps[i]);
      s.refs.push_back(c.refs[i]);
    }
    s.nll = c.nll;
    std::reverse(s.nll.begin(), s.nll.end());
    CHECK(metrics::bleu(s.hyps, s.refs, 4) == doctest::Approx(b).epsilon(1e-12));
    CHECK(metrics::dist_n(s.hyps, 1) == d1);
    CHECK(metrics::corpus_rouge(s.hyps, s.refs, 1).mean == doctest::Approx(r1).epsilon(1e-12));
    CHECK(metrics::perplexity(s.nll) == doctest::Approx(p).epsilon(1e-12));
  }
}

TEST_CASE("dist stays inside (0, 1]") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const Corpus c = random_corpus(rng);
    for (int n = 1; n <= 2; ++n) {
      const double d = metrics::dist_n(c.hyps, n);
      CHECK(d > 0.0);
      CHECK(d <= 1.0);
    }
  }
}
