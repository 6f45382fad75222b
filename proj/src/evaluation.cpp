#include "lamb/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace lamb {

using nlohmann::json;

json MetricReport::to_json() const {
  return {{"ppl", ppl},
          {"bleu1", bleu[0]},
          {"bleu2", bleu[1]},
          {"bleu3", bleu[2]},
          {"bleu4", bleu[3]},
          {"rouge1", rouge1},
          {"rouge2", rouge2},
          {"dist1", dist1},
          {"dist2", dist2},
          {"acc", acc},
          {"sample_count", sample_count},
          {"empty_references", empty_references},
          {"ablation", ablation},
          {"fingerprint", fingerprint}};
}

MetricReport MetricReport::from_json(const json& j) {
  MetricReport r;
  r.ppl = j.at("ppl").get<double>();
  for (int n = 0; n < 4; ++n) r.bleu[static_cast<std::size_t>(n)] = j.at("bleu" + std::to_string(n + 1)).get<double>();
  r.rouge1 = j.at("rouge1").get<double>();
  r.rouge2 = j.at("rouge2").get<double>();
  r.dist1 = j.at("dist1").get<double>();
  r.dist2 = j.at("dist2").get<double>();
  r.acc = j.at("acc").get<double>();
  r.sample_count = j.value("sample_count", std::size_t{0});
  r.empty_references = j.value("empty_references", std::size_t{0});
  r.ablation = j.value("ablation", std::string{});
  r.fingerprint = j.value("fingerprint", std::string{});
  return r;
}

const std::array<std::string_view, 10>& report_columns() {
  static constexpr std::array<std::string_view, 10> kCols{"PPL",  "B-1",  "B-2",    "B-3",    "B-4",
                                                          "R-1",  "R-2",  "Dist-1", "Dist-2", "Acc"};
  return kCols;
}

std::array<double, 10> display_values(const MetricReport& r) {
  return {r.ppl,          100 * r.bleu[0], 100 * r.bleu[1], 100 * r.bleu[2], 100 * r.bleu[3],
          100 * r.rouge1, 100 * r.rouge2,  100 * r.dist1,   100 * r.dist2,   100 * r.acc};
}

namespace {

bool same_name(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

}  // namespace

std::string render_table(const std::vector<std::pair<std::string, MetricReport>>& rows,
                         const std::vector<std::string>& columns) {
  const auto& all = report_columns();
  std::vector<std::size_t> picked;
  if (columns.empty()) {
    for (std::size_t i = 0; i < all.size(); ++i) picked.push_back(i);
  } else {
    // Keep the canonical order whatever order the filter lists.
    for (std::size_t i = 0; i < all.size(); ++i) {
      for (const auto& c : columns) {
        if (same_name(c, all[i])) {
          picked.push_back(i);
          break;
        }
      }
    }
    for (const auto& c : columns) {
      if (std::none_of(all.begin(), all.end(), [&](std::string_view a) { return same_name(a, c); })) {
        throw std::invalid_argument("unknown metric column '" + c + "'");
      }
    }
  }
  std::size_t label_width = 6;
  for (const auto& [label, _] : rows) label_width = std::max(label_width, label.size());
  std::string out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(label_width), "Model");
  out += buf;
  for (std::size_t i : picked) {
    std::snprintf(buf, sizeof buf, " %8.*s", static_cast<int>(all[i].size()), all[i].data());
    out += buf;
  }
  out += "\n";
  for (const auto& [label, report] : rows) {
    std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(label_width), label.c_str());
    out += buf;
    const auto values = display_values(report);
    for (std::size_t i : picked) {
      std::snprintf(buf, sizeof buf, " %8.2f", values[i]);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

MetricReport compute_report(const std::vector<metrics::Tokens>& hypotheses,
                            const std::vector<metrics::Tokens>& references, std::span<const double> token_nll,
                            std::span<const int> predicted, std::span<const int> gold, bool rouge_recall) {
  MetricReport r;
  r.sample_count = hypotheses.size();
  r.ppl = metrics::perplexity(token_nll);
  for (int n = 1; n <= 4; ++n) r.bleu[static_cast<std::size_t>(n - 1)] = metrics::bleu(hypotheses, references, n);
  const auto r1 = metrics::corpus_rouge(hypotheses, references, 1, rouge_recall);
  const auto r2 = metrics::corpus_rouge(hypotheses, references, 2, rouge_recall);
  r.rouge1 = r1.mean;
  r.rouge2 = r2.mean;
  r.empty_references = r1.empty_references;
  r.dist1 = metrics::dist_n(hypotheses, 1);
  r.dist2 = metrics::dist_n(hypotheses, 2);
  r.acc = metrics::accuracy(predicted, gold);
  return r;
}

metrics::Tokens hypothesis_tokens(const GeneratedResponse& r, const Vocab& vocab) {
  metrics::Tokens out;
  for (int id : r.ids) {
    if (id != special::eos) out.push_back(vocab.token(id));
  }
  return out;
}

Evaluation evaluate(const LambModel& model, const std::vector<PreparedSample>& samples,
                    const std::vector<metrics::Tokens>& references, const Vocab& vocab, const EvalOptions& options) {
  if (samples.size() != references.size()) {
    throw std::invalid_argument("evaluate: " + std::to_string(samples.size()) + " samples vs " +
                                std::to_string(references.size()) + " references");
  }
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");

  Evaluation ev;
  ev.samples.resize(samples.size());
  auto work = [&](std::size_t i) {
    const PreparedSample& s = samples[i];
    const ModelOutputs enc = model.encode(s);
    SampleResult& out = ev.samples[i];
    out.id = s.id;
    out.gold = s.emotion;
    const Matrix& logits = enc.emotion_logits.value();
    out.predicted = argmax(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())));
    out.token_nll = nll_loss(s.target, enc.memory, model.decoder()).token_nll;
    out.response = generate(enc.memory, model.decoder(), options.decode, &vocab);
    out.hypothesis = hypothesis_tokens(out.response, vocab);
  };

  const auto jobs = static_cast<std::size_t>(std::max(1, options.jobs));
  if (jobs == 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(jobs, samples.size()); ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < samples.size(); i = next++) {
          try {
            work(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }

  std::vector<metrics::Tokens> hyps;
  std::vector<double> nll;
  std::vector<int> pred, gold;
  for (const auto& r : ev.samples) {
    hyps.push_back(r.hypothesis);
    nll.insert(nll.end(), r.token_nll.begin(), r.token_nll.end());
    pred.push_back(r.predicted);
    gold.push_back(r.gold);
  }
  ev.report = compute_report(hyps, references, nll, pred, gold, options.rouge_recall);
  ev.report.ablation = std::string(ablation_name(model.config().ablation));
  ev.report.fingerprint = options.fingerprint;
  return ev;
}

double emotion_accuracy(const LambModel& model, const std::vector<PreparedSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("emotion_accuracy: no samples");
  std::size_t hit = 0;
  for (const auto& s : samples) {
    const auto p = model.emotion_probs(s);
    hit += argmax(p) == s.emotion ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(samples.size());
}

}  // namespace lamb
