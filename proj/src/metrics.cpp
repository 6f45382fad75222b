#include "lamb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

namespace lamb::metrics {

namespace {

using NGram = std::vector<std::string>;

std::map<NGram, std::size_t> ngram_counts(const Tokens& tokens, int n) {
  std::map<NGram, std::size_t> counts;
  const auto un = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + un <= tokens.size(); ++i) {
    ++counts[NGram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                   tokens.begin() + static_cast<std::ptrdiff_t>(i + un))];
  }
  return counts;
}

std::size_t ngram_total(const Tokens& tokens, int n) {
  const auto un = static_cast<std::size_t>(n);
  return tokens.size() >= un ? tokens.size() - un + 1 : 0;
}

std::size_t clipped_overlap(const std::map<NGram, std::size_t>& hyp, const std::map<NGram, std::size_t>& ref) {
  std::size_t overlap = 0;
  for (const auto& [g, c] : hyp) {
    if (auto it = ref.find(g); it != ref.end()) overlap += std::min(c, it->second);
  }
  return overlap;
}

void check_pairs(std::size_t h, std::size_t r, const char* what) {
  if (h != r) {
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(h) + " hypotheses vs " +
                                std::to_string(r) + " references");
  }
}

}  // namespace

double perplexity(std::span<const double> token_nll) {
  if (token_nll.empty()) throw std::invalid_argument("perplexity: no tokens");
  double sum = 0.0;
  for (double v : token_nll) sum += v;
  return std::exp(sum / static_cast<double>(token_nll.size()));
}

double bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references, int max_n,
            double epsilon) {
  check_pairs(hypotheses.size(), references.size(), "bleu");
  if (max_n < 1 || max_n > 4) throw std::invalid_argument("bleu: max_n must lie in 1..4");
  if (hypotheses.empty()) throw std::invalid_argument("bleu: empty corpus");

  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    std::size_t matches = 0, total = 0;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
      matches += clipped_overlap(ngram_counts(hypotheses[i], n), ngram_counts(references[i], n));
      total += ngram_total(hypotheses[i], n);
    }
    const double num = matches > 0 ? static_cast<double>(matches) : epsilon;
    const double p = num / static_cast<double>(std::max<std::size_t>(total, 1));
    log_sum += std::log(p);
  }
  std::size_t c = 0, r = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    c += hypotheses[i].size();
    r += references[i].size();
  }
  double bp = 1.0;
  if (c == 0) {
    bp = 0.0;
  } else if (c <= r) {
    bp = std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  }
  return bp * std::exp(log_sum / static_cast<double>(max_n));
}

RougeScore rouge_n(const Tokens& hypothesis, const Tokens& reference, int n) {
  if (n < 1) throw std::invalid_argument("rouge_n: n must be positive");
  RougeScore s;
  const std::size_t hyp_total = ngram_total(hypothesis, n);
  const std::size_t ref_total = ngram_total(reference, n);
  if (hyp_total == 0 || ref_total == 0) return s;
  const std::size_t overlap = clipped_overlap(ngram_counts(hypothesis, n), ngram_counts(reference, n));
  if (overlap == 0) return s;
  s.precision = static_cast<double>(overlap) / static_cast<double>(hyp_total);
  s.recall = static_cast<double>(overlap) / static_cast<double>(ref_total);
  s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

CorpusRouge corpus_rouge(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references, int n,
                         bool recall_only) {
  check_pairs(hypotheses.size(), references.size(), "rouge");
  if (hypotheses.empty()) throw std::invalid_argument("rouge: empty corpus");
  CorpusRouge out;
  double sum = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    if (references[i].empty()) ++out.empty_references;
    const RougeScore s = rouge_n(hypotheses[i], references[i], n);
    sum += recall_only ? s.recall : s.f1;
  }
  out.mean = sum / static_cast<double>(hypotheses.size());
  return out;
}

double dist_n(const std::vector<Tokens>& hypotheses, int n) {
  if (n < 1) throw std::invalid_argument("dist_n: n must be positive");
  std::set<NGram> distinct;
  std::size_t total = 0;
  for (const auto& h : hypotheses) {
    for (const auto& [g, c] : ngram_counts(h, n)) {
      distinct.insert(g);
      total += c;
    }
  }
  if (total == 0) {
    throw std::invalid_argument("dist_n: no hypothesis has " + std::to_string(n) + " or more tokens");
  }
  return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

double accuracy(std::span<const int> predicted, std::span<const int> gold) {
  if (predicted.size() != gold.size()) {
    throw std::invalid_argument("accuracy: " + std::to_string(predicted.size()) + " predictions vs " +
                                std::to_string(gold.size()) + " labels");
  }
  if (gold.empty()) throw std::invalid_argument("accuracy: no labels");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hit += predicted[i] == gold[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(gold.size());
}

}  // namespace lamb::metrics
