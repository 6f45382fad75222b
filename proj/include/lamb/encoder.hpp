#pragma once

// Representation producers: the shared transformer encoder used for the
// context, the sensible (cause) utterances and the chain-of-thought text;
// the per-relation commonsense encoding; and the single-head fusion
// attention that mixes context queries with cause keys/values.

#include "lamb/corpus.hpp"
#include "lamb/knowledge.hpp"
#include "lamb/nn.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace lamb {

enum class RepTag { context, cause, fused, commonsense, conect };

std::string_view rep_tag_name(RepTag tag);

// (length x d) representation matrix.
struct RepMatrix {
  Tensor values;
  RepTag tag = RepTag::context;

  Index length() const { return values.rows(); }
  Index width() const { return values.cols(); }
};

struct EncoderConfig {
  int vocab_size = 0;
  Index d_model = 64;
  int layers = 2;
  int heads = 4;
  Index ffn_dim = 256;
  int max_positions = 256;
  double init_std = 0.02;
};

// Token embedding (shared table) + learned positions + embedding norm +
// post-norm self-attention layers.
class TransformerEncoder {
 public:
  TransformerEncoder(nn::ParameterStore& store, const std::string& name, const EncoderConfig& cfg,
                     Tensor token_embedding, Rng& rng);

  // Throws std::invalid_argument on empty/over-long input and
  // std::out_of_range on ids outside the vocabulary.
  Tensor forward(std::span<const int> ids, const nn::ForwardContext& ctx) const;

  const EncoderConfig& config() const { return cfg_; }
  const Tensor& token_embedding() const { return token_embedding_; }
  const Tensor& positions() const { return positions_; }
  const nn::LayerNorm& embedding_norm() const { return embed_norm_; }
  const std::vector<nn::EncoderLayer>& layers() const { return layers_; }

 private:
  EncoderConfig cfg_;
  Tensor token_embedding_;
  Tensor positions_;
  nn::LayerNorm embed_norm_;
  std::vector<nn::EncoderLayer> layers_;
};

// W_q, W_k, W_v of the sensible-rational fusion; no biases.
class FusionAttention {
 public:
  FusionAttention(nn::ParameterStore& store, const std::string& name, Index d_model, Rng& rng);

  const Tensor& w_q() const { return w_q_; }
  const Tensor& w_k() const { return w_k_; }
  const Tensor& w_v() const { return w_v_; }
  Index width() const { return w_q_.rows(); }

 private:
  Tensor w_q_, w_k_, w_v_;
};

RepMatrix encode_context(const TokenSequence& ids, const TransformerEncoder& encoder,
                         const nn::ForwardContext& ctx = {});
RepMatrix encode_cause(const TokenSequence& ids, const TransformerEncoder& encoder,
                       const nn::ForwardContext& ctx = {});

// R_G = softmax((R_U W_q)(R_D W_k)^T / sqrt(2d)) (R_D W_v), softmax over the
// cause positions of each context row. `attention`, when given, receives
// the (l_U x l_D) weight matrix.
RepMatrix fuse_sensible(const RepMatrix& context, const RepMatrix& cause,
                        const FusionAttention& params, Matrix* attention = nullptr);

// Per-relation token ids, each prefixed with <cls>, in kRelations order.
std::array<std::vector<int>, kRelationCount> relation_token_ids(const KnowledgeBundle& bundle,
                                                                const Vocab& vocab,
                                                                std::size_t max_relation_len = 64);

struct RelationEncoding {
  RepMatrix rep;
  std::array<Index, kRelationCount> cls_rows{};
};

RelationEncoding encode_relations(const std::array<std::vector<int>, kRelationCount>& ids,
                                  const TransformerEncoder& relation_encoder,
                                  const nn::ForwardContext& ctx = {});
RelationEncoding encode_relations(const KnowledgeBundle& bundle, const TransformerEncoder& relation_encoder,
                                  const Vocab& vocab, const nn::ForwardContext& ctx = {});

inline constexpr std::size_t kDefaultMaxConectLen = 128;

// [<cls>] + tokens, truncated to max_len (the <cls> counts toward it).
std::vector<int> conect_token_ids(std::string_view text, const Vocab& vocab,
                                  std::size_t max_len = kDefaultMaxConectLen);
RepMatrix encode_conect(std::string_view text, const TransformerEncoder& encoder, const Vocab& vocab,
                        std::size_t max_len = kDefaultMaxConectLen,
                        const nn::ForwardContext& ctx = {});
RepMatrix encode_conect_ids(std::span<const int> ids, const TransformerEncoder& encoder,
                            const nn::ForwardContext& ctx = {});

}  // namespace lamb
