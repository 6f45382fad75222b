#include "lamb/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace lamb {

std::string_view rep_tag_name(RepTag tag) {
  switch (tag) {
    case RepTag::context: return "R_U";
    case RepTag::cause: return "R_D";
    case RepTag::fused: return "R_G";
    case RepTag::commonsense: return "R_C";
    case RepTag::conect: return "R_M";
  }
  return "?";
}

TransformerEncoder::TransformerEncoder(nn::ParameterStore& store, const std::string& name,
                                       const EncoderConfig& cfg, Tensor token_embedding, Rng& rng)
    : cfg_(cfg),
      token_embedding_(std::move(token_embedding)),
      positions_(store.add(name + ".positions",
                           nn::normal_matrix(rng, cfg.max_positions, cfg.d_model, cfg.init_std))),
      embed_norm_(store, name + ".embed_norm", cfg.d_model) {
  if (token_embedding_.cols() != cfg.d_model) {
    throw std::invalid_argument(name + ": embedding width differs from d_model");
  }
  for (int l = 0; l < cfg.layers; ++l) {
    layers_.emplace_back(store, name + ".layers." + std::to_string(l), cfg.d_model, cfg.heads,
                         cfg.ffn_dim, rng, cfg.init_std);
  }
}

Tensor TransformerEncoder::forward(std::span<const int> ids, const nn::ForwardContext& ctx) const {
  if (ids.empty()) throw std::invalid_argument("encoder: empty token sequence");
  if (static_cast<Index>(ids.size()) > positions_.rows()) {
    throw std::invalid_argument("encoder: sequence of " + std::to_string(ids.size()) +
                                " tokens exceeds " + std::to_string(positions_.rows()) + " positions");
  }
  const Tensor tokens = ag::gather_rows(token_embedding_, ids);
  const Tensor pos = ag::slice_rows(positions_, 0, static_cast<Index>(ids.size()));
  Tensor h = ctx.apply_dropout(embed_norm_(ag::add(tokens, pos)));
  for (const auto& layer : layers_) h = layer(h, ctx);
  return h;
}

FusionAttention::FusionAttention(nn::ParameterStore& store, const std::string& name, Index d_model,
                                 Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_model));
  w_q_ = store.add(name + ".w_q", nn::uniform_matrix(rng, d_model, d_model, bound));
  w_k_ = store.add(name + ".w_k", nn::uniform_matrix(rng, d_model, d_model, bound));
  w_v_ = store.add(name + ".w_v", nn::uniform_matrix(rng, d_model, d_model, bound));
}

RepMatrix encode_context(const TokenSequence& ids, const TransformerEncoder& encoder,
                         const nn::ForwardContext& ctx) {
  return {encoder.forward(ids.ids, ctx), RepTag::context};
}

RepMatrix encode_cause(const TokenSequence& ids, const TransformerEncoder& encoder,
                       const nn::ForwardContext& ctx) {
  return {encoder.forward(ids.ids, ctx), RepTag::cause};
}

RepMatrix fuse_sensible(const RepMatrix& context, const RepMatrix& cause,
                        const FusionAttention& params, Matrix* attention) {
  const Index d = params.width();
  if (context.width() != d || cause.width() != d) {
    throw std::invalid_argument("fuse_sensible: representation width differs from d = " +
                                std::to_string(d));
  }
  const Tensor q = ag::matmul(context.values, params.w_q());
  const Tensor k = ag::matmul(cause.values, params.w_k());
  const Tensor v = ag::matmul(cause.values, params.w_v());
  const double inv_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(d));
  const Tensor weights = ag::softmax_rows(ag::scale(ag::matmul_nt(q, k), inv_scale));
  if (attention != nullptr) *attention = weights.value();
  return {ag::matmul(weights, v), RepTag::fused};
}

std::array<std::vector<int>, kRelationCount> relation_token_ids(const KnowledgeBundle& bundle,
                                                                const Vocab& vocab,
                                                                std::size_t max_relation_len) {
  std::array<std::vector<int>, kRelationCount> out;
  for (std::size_t r = 0; r < kRelationCount; ++r) {
    out[r].push_back(special::cls);
    for (int id : vocab.encode(bundle.texts[r])) {
      if (out[r].size() >= max_relation_len) break;
      out[r].push_back(id);
    }
  }
  return out;
}

RelationEncoding encode_relations(const std::array<std::vector<int>, kRelationCount>& ids,
                                  const TransformerEncoder& relation_encoder,
                                  const nn::ForwardContext& ctx) {
  std::vector<Tensor> parts;
  RelationEncoding out;
  Index row = 0;
  for (std::size_t r = 0; r < kRelationCount; ++r) {
    if (ids[r].empty() || ids[r].front() != special::cls) {
      throw std::invalid_argument("encode_relations: relation sequence must start with <cls>");
    }
    out.cls_rows[r] = row;
    parts.push_back(relation_encoder.forward(ids[r], ctx));
    row += static_cast<Index>(ids[r].size());
  }
  out.rep = {ag::concat_rows(parts), RepTag::commonsense};
  return out;
}

RelationEncoding encode_relations(const KnowledgeBundle& bundle, const TransformerEncoder& relation_encoder,
                                  const Vocab& vocab, const nn::ForwardContext& ctx) {
  bundle.validate();
  return encode_relations(relation_token_ids(bundle, vocab), relation_encoder, ctx);
}

std::vector<int> conect_token_ids(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  if (normalize_whitespace(text).empty()) throw std::invalid_argument("encode_conect: empty text");
  if (max_len == 0) throw std::invalid_argument("encode_conect: max_len must be positive");
  std::vector<int> ids{special::cls};
  for (int id : vocab.encode(text)) {
    if (ids.size() >= max_len) break;
    ids.push_back(id);
  }
  return ids;
}

RepMatrix encode_conect(std::string_view text, const TransformerEncoder& encoder, const Vocab& vocab,
                        std::size_t max_len, const nn::ForwardContext& ctx) {
  const auto ids = conect_token_ids(text, vocab, max_len);
  return encode_conect_ids(ids, encoder, ctx);
}

RepMatrix encode_conect_ids(std::span<const int> ids, const TransformerEncoder& encoder,
                            const nn::ForwardContext& ctx) {
  return {encoder.forward(ids, ctx), RepTag::conect};
}

}  // namespace lamb
