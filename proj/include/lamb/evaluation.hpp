#pragma once

#include "lamb/metrics.hpp"
#include "lamb/model.hpp"

#include <json.hpp>

#include <array>
#include <string>
#include <utility>
#include <vector>

namespace lamb {

// Scores are fractions; tables multiply everything except PPL by 100.
struct MetricReport {
  double ppl = 0.0;
  std::array<double, 4> bleu{};
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double dist1 = 0.0;
  double dist2 = 0.0;
  double acc = 0.0;
  std::size_t sample_count = 0;
  std::size_t empty_references = 0;
  std::string ablation;
  std::string fingerprint;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

// PPL, B-1..B-4, R-1, R-2, Dist-1, Dist-2, Acc.
const std::array<std::string_view, 10>& report_columns();
std::array<double, 10> display_values(const MetricReport& r);
// `columns` selects a subset (report_columns() names, case-insensitive);
// empty means all. Unknown names throw std::invalid_argument.
std::string render_table(const std::vector<std::pair<std::string, MetricReport>>& rows,
                         const std::vector<std::string>& columns = {});

// Metric computation from already-decoded material.
MetricReport compute_report(const std::vector<metrics::Tokens>& hypotheses,
                            const std::vector<metrics::Tokens>& references, std::span<const double> token_nll,
                            std::span<const int> predicted, std::span<const int> gold, bool rouge_recall = false);

struct EvalOptions {
  DecodeOptions decode{DecodeStrategy::greedy, 4, 32, 1,
                       {special::pad, special::bos, special::sep, special::cls}};
  int jobs = 1;
  bool rouge_recall = false;
  std::string fingerprint;
};

struct SampleResult {
  std::string id;
  GeneratedResponse response;
  metrics::Tokens hypothesis;
  std::vector<double> token_nll;
  int predicted = -1;
  int gold = -1;
};

struct Evaluation {
  MetricReport report;
  std::vector<SampleResult> samples;
};

// Word tokens of a generated response: every id but <eos>, through the vocab.
metrics::Tokens hypothesis_tokens(const GeneratedResponse& r, const Vocab& vocab);

Evaluation evaluate(const LambModel& model, const std::vector<PreparedSample>& samples,
                    const std::vector<metrics::Tokens>& references, const Vocab& vocab, const EvalOptions& options);

// Fraction of samples whose argmax emotion equals the gold label.
double emotion_accuracy(const LambModel& model, const std::vector<PreparedSample>& samples);

}  // namespace lamb
