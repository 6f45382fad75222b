#include "lamb/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace lamb {

std::array<Index, kSegmentCount> DecoderMemory::segment_histogram() const {
  std::array<Index, kSegmentCount> h{};
  for (int s : segment_ids) ++h.at(static_cast<std::size_t>(s));
  return h;
}

Matrix DecoderMemory::segment(int id) const {
  const auto h = segment_histogram();
  Matrix out(h.at(static_cast<std::size_t>(id)), values.cols());
  Index r = 0;
  for (Index i = 0; i < static_cast<Index>(segment_ids.size()); ++i) {
    if (segment_ids[static_cast<std::size_t>(i)] == id) out.row(r++) = values.value().row(i);
  }
  return out;
}

DecoderMemory assemble_memory(const RepMatrix& r_g, const RepMatrix& r_c, const RepMatrix* r_m) {
  const Index d = r_g.width();
  if (r_c.width() != d || (r_m != nullptr && r_m->width() != d)) {
    throw std::invalid_argument("assemble_memory: width mismatch (R_G has d = " + std::to_string(d) +
                                ", R_C has " + std::to_string(r_c.width()) +
                                (r_m != nullptr ? ", R_M has " + std::to_string(r_m->width()) : "") +
                                ")");
  }
  std::vector<Tensor> parts{r_g.values, r_c.values};
  DecoderMemory mem;
  mem.segment_ids.insert(mem.segment_ids.end(), static_cast<std::size_t>(r_g.length()), 0);
  mem.segment_ids.insert(mem.segment_ids.end(), static_cast<std::size_t>(r_c.length()), 1);
  if (r_m != nullptr) {
    parts.push_back(r_m->values);
    mem.segment_ids.insert(mem.segment_ids.end(), static_cast<std::size_t>(r_m->length()), 2);
  }
  mem.values = ag::concat_rows(parts);
  return mem;
}

TransformerDecoder::TransformerDecoder(nn::ParameterStore& store, const std::string& name,
                                       const DecoderConfig& cfg, Tensor token_embedding, Rng& rng)
    : cfg_(cfg),
      token_embedding_(std::move(token_embedding)),
      positions_(store.add(name + ".positions",
                           nn::normal_matrix(rng, cfg.max_positions, cfg.d_model, cfg.init_std))),
      embed_norm_(store, name + ".embed_norm", cfg.d_model) {
  if (token_embedding_.cols() != cfg.d_model || token_embedding_.rows() != cfg.vocab_size) {
    throw std::invalid_argument(name + ": token embedding shape differs from (vocab, d_model)");
  }
  for (int s = 0; s < kSegmentCount; ++s) {
    segments_[static_cast<std::size_t>(s)] =
        store.add(name + ".segment." + std::to_string(s), nn::normal_matrix(rng, 1, cfg.d_model, cfg.init_std));
  }
  for (int l = 0; l < cfg.layers; ++l) {
    layers_.emplace_back(store, name + ".layers." + std::to_string(l), cfg.d_model, cfg.heads,
                         cfg.ffn_dim, rng, cfg.init_std);
  }
  logits_bias_ = store.add(name + ".logits_bias", Matrix::Zero(1, cfg.vocab_size));
}

Tensor TransformerDecoder::tagged_memory(const DecoderMemory& memory) const {
  if (memory.length() == 0) throw std::invalid_argument("decoder: empty memory");
  if (static_cast<Index>(memory.segment_ids.size()) != memory.length()) {
    throw std::invalid_argument("decoder: segment ids do not cover the memory");
  }
  std::vector<Tensor> rows;
  Index begin = 0;
  // Add each segment embedding to its contiguous block.
  while (begin < memory.length()) {
    const int seg = memory.segment_ids[static_cast<std::size_t>(begin)];
    Index end = begin;
    while (end < memory.length() && memory.segment_ids[static_cast<std::size_t>(end)] == seg) ++end;
    rows.push_back(ag::add_row(ag::slice_rows(memory.values, begin, end - begin),
                               segments_.at(static_cast<std::size_t>(seg))));
    begin = end;
  }
  return ag::concat_rows(rows);
}

Tensor TransformerDecoder::logits(std::span<const int> inputs, const Tensor& tagged_memory,
                                  const nn::ForwardContext& ctx) const {
  if (inputs.empty()) throw std::invalid_argument("decoder: empty input");
  if (static_cast<Index>(inputs.size()) > positions_.rows()) {
    throw std::invalid_argument("decoder: input of " + std::to_string(inputs.size()) +
                                " tokens exceeds " + std::to_string(positions_.rows()) + " positions");
  }
  const Tensor tokens = ag::gather_rows(token_embedding_, inputs);
  const Tensor pos = ag::slice_rows(positions_, 0, static_cast<Index>(inputs.size()));
  Tensor h = ctx.apply_dropout(embed_norm_(ag::add(tokens, pos)));
  for (const auto& layer : layers_) h = layer(h, tagged_memory, ctx);
  return ag::add_row(ag::matmul_nt(h, token_embedding_), logits_bias_);
}

NllResult nll_loss(std::span<const int> target, const DecoderMemory& memory,
                   const TransformerDecoder& decoder, const nn::ForwardContext& ctx) {
  if (target.empty()) throw std::invalid_argument("nll_loss: empty target");
  std::vector<int> inputs;
  inputs.reserve(target.size());
  inputs.push_back(special::bos);
  inputs.insert(inputs.end(), target.begin(), target.end() - 1);
  const Tensor per_token = ag::nll_rows(decoder.logits(inputs, memory, ctx), target);
  NllResult out;
  out.total = ag::sum(per_token);
  out.token_nll.assign(per_token.value().data(), per_token.value().data() + per_token.rows());
  return out;
}

DecoderStepScorer::DecoderStepScorer(const TransformerDecoder& decoder, const DecoderMemory& memory)
    : decoder_(decoder), tagged_(decoder.tagged_memory(memory)) {}

std::vector<double> DecoderStepScorer::next_log_probs(std::span<const int> prefix) const {
  const Matrix logits = decoder_.logits(prefix, tagged_, {}).value();
  const auto last = logits.row(logits.rows() - 1);
  const double mx = last.maxCoeff();
  const double lse = mx + std::log((last.array() - mx).exp().sum());
  std::vector<double> out(static_cast<std::size_t>(last.size()));
  for (Index i = 0; i < last.size(); ++i) out[static_cast<std::size_t>(i)] = last(i) - lse;
  return out;
}

namespace {

struct Hypothesis {
  std::vector<int> ids;
  std::vector<double> log_probs;
  double score = 0.0;
};

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> step_scores(const StepScorer& scorer, const Hypothesis& h, const DecodeOptions& opt) {
  std::vector<int> prefix{special::bos};
  prefix.insert(prefix.end(), h.ids.begin(), h.ids.end());
  auto lp = scorer.next_log_probs(prefix);
  if (static_cast<int>(h.ids.size()) < opt.min_gen_len && special::eos < static_cast<int>(lp.size())) {
    lp[special::eos] = kNegInf;
  }
  for (int id : opt.banned_ids) {
    if (id >= 0 && id < static_cast<int>(lp.size())) lp[static_cast<std::size_t>(id)] = kNegInf;
  }
  return lp;
}

GeneratedResponse finish(Hypothesis h, const Vocab* vocab) {
  GeneratedResponse r;
  r.ids = std::move(h.ids);
  r.log_probs = std::move(h.log_probs);
  r.score = h.score;
  if (vocab != nullptr) r.text = vocab->decode(r.ids);
  return r;
}

}  // namespace

GeneratedResponse generate(const StepScorer& scorer, const DecodeOptions& options, const Vocab* vocab) {
  if (options.max_gen_len < 1) throw std::invalid_argument("generate: max_gen_len must be >= 1");
  const int k = options.strategy == DecodeStrategy::greedy ? 1 : options.beam_size;
  if (k < 1) throw std::invalid_argument("generate: beam size must be >= 1");

  std::vector<Hypothesis> alive{Hypothesis{}};
  std::vector<Hypothesis> finished;

  struct Candidate {
    double score;
    std::size_t hyp;
    int token;
    double lp;
  };

  for (int step = 0; step < options.max_gen_len && !alive.empty(); ++step) {
    std::vector<Candidate> cands;
    for (std::size_t h = 0; h < alive.size(); ++h) {
      const auto lp = step_scores(scorer, alive[h], options);
      for (std::size_t t = 0; t < lp.size(); ++t) {
        if (lp[t] == kNegInf) continue;
        cands.push_back({alive[h].score + lp[t], h, static_cast<int>(t), lp[t]});
      }
    }
    // Highest score first; ties go to the earlier hypothesis, then the lower id.
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k), cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.hyp != b.hyp) return a.hyp < b.hyp;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      Hypothesis h = alive[cands[i].hyp];
      h.ids.push_back(cands[i].token);
      h.log_probs.push_back(cands[i].lp);
      h.score = cands[i].score;
      (cands[i].token == special::eos ? finished : next).push_back(std::move(h));
    }
    alive = std::move(next);
    if (static_cast<int>(finished.size()) >= k) break;
  }

  finished.insert(finished.end(), std::make_move_iterator(alive.begin()), std::make_move_iterator(alive.end()));
  if (finished.empty()) return finish({}, vocab);
  std::size_t best = 0;
  double best_norm = kNegInf;
  for (std::size_t i = 0; i < finished.size(); ++i) {
    const double norm = finished[i].score / static_cast<double>(std::max<std::size_t>(1, finished[i].ids.size()));
    if (norm > best_norm) {
      best_norm = norm;
      best = i;
    }
  }
  return finish(std::move(finished[best]), vocab);
}

GeneratedResponse generate(const DecoderMemory& memory, const TransformerDecoder& decoder,
                           const DecodeOptions& options, const Vocab* vocab) {
  const DecoderStepScorer scorer(decoder, memory);
  return generate(scorer, options, vocab);
}

}  // namespace lamb
