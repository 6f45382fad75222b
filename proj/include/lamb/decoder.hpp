#pragma once

#include "lamb/corpus.hpp"
#include "lamb/encoder.hpp"
#include "lamb/nn.hpp"

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lamb {

inline constexpr int kSegmentCount = 3;  // R_G, R_C, R_M

struct DecoderMemory {
  Tensor values;
  std::vector<int> segment_ids;

  Index length() const { return values.rows(); }
  std::array<Index, kSegmentCount> segment_histogram() const;
  // Rows belonging to one segment, in memory order.
  Matrix segment(int id) const;
};

// Rows of R_G, then R_C, then R_M (if given). Throws on width mismatch.
DecoderMemory assemble_memory(const RepMatrix& r_g, const RepMatrix& r_c, const RepMatrix* r_m);

struct DecoderConfig {
  int vocab_size = 0;
  Index d_model = 64;
  int layers = 2;
  int heads = 4;
  Index ffn_dim = 256;
  int max_positions = 256;
  double init_std = 0.02;
};

// Causal decoder with cross-attention over the segment-tagged memory and an
// output projection tied to the token embedding plus a free logits bias.
class TransformerDecoder {
 public:
  TransformerDecoder(nn::ParameterStore& store, const std::string& name, const DecoderConfig& cfg,
                     Tensor token_embedding, Rng& rng);

  // Memory with its segment embeddings added.
  Tensor tagged_memory(const DecoderMemory& memory) const;
  // (T x |V|) logits for each input position.
  Tensor logits(std::span<const int> inputs, const Tensor& tagged_memory,
                const nn::ForwardContext& ctx) const;
  Tensor logits(std::span<const int> inputs, const DecoderMemory& memory,
                const nn::ForwardContext& ctx = {}) const {
    return logits(inputs, tagged_memory(memory), ctx);
  }

  const DecoderConfig& config() const { return cfg_; }
  const Tensor& token_embedding() const { return token_embedding_; }
  const Tensor& logits_bias() const { return logits_bias_; }
  const std::array<Tensor, kSegmentCount>& segment_embeddings() const { return segments_; }
  const Tensor& positions() const { return positions_; }
  const nn::LayerNorm& embedding_norm() const { return embed_norm_; }
  const std::vector<nn::DecoderLayer>& layers() const { return layers_; }

 private:
  DecoderConfig cfg_;
  Tensor token_embedding_;
  Tensor positions_;
  nn::LayerNorm embed_norm_;
  std::array<Tensor, kSegmentCount> segments_;
  std::vector<nn::DecoderLayer> layers_;
  Tensor logits_bias_;
};

struct NllResult {
  Tensor total;                        // 1x1, sum over target positions
  std::vector<double> token_nll;       // per target position
  std::size_t token_count() const { return token_nll.size(); }
};

// Teacher forcing: inputs are [<bos>] + target[0..m-2], labels are target.
// The caller includes <eos> in `target` when it should be scored.
NllResult nll_loss(std::span<const int> target, const DecoderMemory& memory,
                   const TransformerDecoder& decoder, const nn::ForwardContext& ctx = {});

// ---------------------------------------------------------------------------
// Generation

// Next-token log-probabilities given a prefix that starts with <bos>.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::vector<double> next_log_probs(std::span<const int> prefix) const = 0;
};

class DecoderStepScorer final : public StepScorer {
 public:
  DecoderStepScorer(const TransformerDecoder& decoder, const DecoderMemory& memory);
  std::vector<double> next_log_probs(std::span<const int> prefix) const override;

 private:
  const TransformerDecoder& decoder_;
  Tensor tagged_;
};

enum class DecodeStrategy { greedy, beam };

struct DecodeOptions {
  DecodeStrategy strategy = DecodeStrategy::greedy;
  int beam_size = 4;
  int max_gen_len = 32;
  // <eos> is suppressed until this many tokens have been produced.
  int min_gen_len = 0;
  // Never emitted (e.g. <pad>, <bos>).
  std::vector<int> banned_ids;
};

struct GeneratedResponse {
  std::vector<int> ids;  // excludes <bos>; ends with <eos> unless max_gen_len was hit
  std::string text;      // detokenized without specials (empty if no vocab given)
  std::vector<double> log_probs;
  double score = 0.0;    // summed log-prob

  bool finished() const { return !ids.empty() && ids.back() == special::eos; }
};

GeneratedResponse generate(const StepScorer& scorer, const DecodeOptions& options,
                           const Vocab* vocab = nullptr);
GeneratedResponse generate(const DecoderMemory& memory, const TransformerDecoder& decoder,
                           const DecodeOptions& options, const Vocab* vocab = nullptr);

}  // namespace lamb
