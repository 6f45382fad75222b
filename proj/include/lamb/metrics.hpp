#pragma once

// Automatic text metrics over word-level token lists.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace lamb::metrics {

using Tokens = std::vector<std::string>;

// exp(mean per-token NLL). Throws on an empty list.
double perplexity(std::span<const double> token_nll);

inline constexpr double kBleuEpsilon = 1e-9;

// Corpus-level BLEU: clipped n-gram matches and hypothesis n-gram totals
// are pooled over the corpus for each order, a zero match count is
// replaced by `epsilon`, orders 1..max_n are combined with uniform weights
// and the pooled lengths give the brevity penalty.
double bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references, int max_n,
            double epsilon = kBleuEpsilon);

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Sentence-level ROUGE-N with clipped overlap. An empty reference scores 0.
RougeScore rouge_n(const Tokens& hypothesis, const Tokens& reference, int n);

struct CorpusRouge {
  double mean = 0.0;
  std::size_t empty_references = 0;
};

// Mean of per-pair F1 (or recall when recall_only).
CorpusRouge corpus_rouge(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references, int n,
                         bool recall_only = false);

// Distinct n-grams over total n-grams across the corpus. Throws when the
// corpus contains no n-gram of order n.
double dist_n(const std::vector<Tokens>& hypotheses, int n);

double accuracy(std::span<const int> predicted, std::span<const int> gold);

}  // namespace lamb::metrics
