#include "lamb/model.hpp"

#include <stdexcept>

namespace lamb {

using nlohmann::json;

std::string_view ablation_name(Ablation a) {
  switch (a) {
    case Ablation::vanilla: return "vanilla";
    case Ablation::self_pres: return "self_pres";
    case Ablation::conect: return "conect";
    case Ablation::full: return "full";
  }
  return "?";
}

std::string_view ablation_display(Ablation a) {
  switch (a) {
    case Ablation::vanilla: return "Vanilla";
    case Ablation::self_pres: return "Vanilla+Self-pres";
    case Ablation::conect: return "Vanilla+CoNECT";
    case Ablation::full: return "Lamb";
  }
  return "?";
}

Ablation parse_ablation(std::string_view name) {
  for (Ablation a : kAblations) {
    if (ablation_name(a) == name) return a;
  }
  throw std::invalid_argument("unknown ablation '" + std::string(name) +
                              "' (expected vanilla, self_pres, conect or full)");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("model config: ") + what);
  };
  require(vocab_size > special::count, "vocab_size must exceed the special tokens");
  require(num_emotions > 0, "num_emotions must be positive");
  require(d_model > 0 && layers >= 0 && heads > 0 && ffn_dim > 0, "dimensions must be positive");
  require(d_model % heads == 0, "d_model must be divisible by heads");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(max_positions > 0, "max_positions must be positive");
  require(max_context_len > 0 && static_cast<int>(max_context_len) <= max_positions,
          "max_context_len must lie in (0, max_positions]");
  require(max_target_len > 0 && static_cast<int>(max_target_len) <= max_positions,
          "max_target_len must lie in (0, max_positions]");
  require(max_relation_len > 0 && static_cast<int>(max_relation_len) <= max_positions,
          "max_relation_len must lie in (0, max_positions]");
  require(max_conect_len > 0 && static_cast<int>(max_conect_len) <= max_positions,
          "max_conect_len must lie in (0, max_positions]");
  require(init_std > 0.0, "init_std must be positive");
}

json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size},
          {"num_emotions", num_emotions},
          {"d_model", d_model},
          {"layers", layers},
          {"heads", heads},
          {"ffn_dim", ffn_dim},
          {"dropout", dropout},
          {"max_positions", max_positions},
          {"max_context_len", max_context_len},
          {"max_target_len", max_target_len},
          {"max_relation_len", max_relation_len},
          {"max_conect_len", max_conect_len},
          {"init_std", init_std},
          {"share_relation_encoder", share_relation_encoder},
          {"classifier_bias", classifier_bias},
          {"ablation", ablation_name(ablation)}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.num_emotions = j.value("num_emotions", c.num_emotions);
  c.d_model = j.value("d_model", c.d_model);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.dropout = j.value("dropout", c.dropout);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.max_context_len = j.value("max_context_len", c.max_context_len);
  c.max_target_len = j.value("max_target_len", c.max_target_len);
  c.max_relation_len = j.value("max_relation_len", c.max_relation_len);
  c.max_conect_len = j.value("max_conect_len", c.max_conect_len);
  c.init_std = j.value("init_std", c.init_std);
  c.share_relation_encoder = j.value("share_relation_encoder", c.share_relation_encoder);
  c.classifier_bias = j.value("classifier_bias", c.classifier_bias);
  if (j.contains("ablation")) c.ablation = parse_ablation(j.at("ablation").get<std::string>());
  return c;
}

LambModel::LambModel(const ModelConfig& config, std::uint64_t init_seed) : cfg_(config) {
  cfg_.validate();
  Rng rng(init_seed);
  token_embedding_ = store_.add("shared.token_embedding",
                                nn::normal_matrix(rng, cfg_.vocab_size, cfg_.d_model, cfg_.init_std));
  EncoderConfig ec;
  ec.vocab_size = cfg_.vocab_size;
  ec.d_model = cfg_.d_model;
  ec.layers = cfg_.layers;
  ec.heads = cfg_.heads;
  ec.ffn_dim = cfg_.ffn_dim;
  ec.max_positions = cfg_.max_positions;
  ec.init_std = cfg_.init_std;
  encoder_ = std::make_unique<TransformerEncoder>(store_, "encoder", ec, token_embedding_, rng);
  if (!cfg_.share_relation_encoder) {
    relation_encoder_ = std::make_unique<TransformerEncoder>(store_, "relation_encoder", ec, token_embedding_, rng);
  }
  fusion_ = std::make_unique<FusionAttention>(store_, "fusion", cfg_.d_model, rng);
  DecoderConfig dc;
  dc.vocab_size = cfg_.vocab_size;
  dc.d_model = cfg_.d_model;
  dc.layers = cfg_.layers;
  dc.heads = cfg_.heads;
  dc.ffn_dim = cfg_.ffn_dim;
  dc.max_positions = cfg_.max_positions;
  dc.init_std = cfg_.init_std;
  decoder_ = std::make_unique<TransformerDecoder>(store_, "decoder", dc, token_embedding_, rng);
  emotion_head_ = std::make_unique<EmotionHead>(store_, "emotion_head", cfg_.d_model, cfg_.num_emotions, rng,
                                                cfg_.init_std, cfg_.classifier_bias);
}

ModelOutputs LambModel::encode(const PreparedSample& s, const nn::ForwardContext& ctx) const {
  ModelOutputs out;
  out.r_u = encode_context(s.context, *encoder_, ctx);
  if (uses_selectors(cfg_.ablation)) {
    if (s.cause.ids.empty()) throw std::invalid_argument("sample " + s.id + ": no cause tokens for " +
                                                         std::string(ablation_name(cfg_.ablation)));
    out.r_d = encode_cause(s.cause, *encoder_, ctx);
    out.r_g = fuse_sensible(out.r_u, *out.r_d, *fusion_);
  } else {
    out.r_g = {out.r_u.values, RepTag::fused};
  }
  out.r_c = encode_relations(s.relations, relation_encoder(), ctx);
  if (uses_conect(cfg_.ablation)) {
    if (s.conect.empty()) throw std::invalid_argument("sample " + s.id + ": no chain-of-thought tokens for " +
                                                      std::string(ablation_name(cfg_.ablation)));
    out.r_m = encode_conect_ids(s.conect, *encoder_, ctx);
  }
  const RepMatrix* r_m = out.r_m ? &*out.r_m : nullptr;
  out.memory = assemble_memory(out.r_g, out.r_c.rep, r_m);
  out.p_k = pool_knowledge(out.r_c.rep);
  out.fused = fuse_features(out.r_g, r_m, out.p_k);
  out.emotion_logits = emotion_head_->logits(out.fused);
  return out;
}

SampleLoss LambModel::loss(const PreparedSample& s, const nn::ForwardContext& ctx) const {
  if (s.target.empty()) throw std::invalid_argument("sample " + s.id + ": empty target");
  const ModelOutputs enc = encode(s, ctx);
  SampleLoss out;
  out.nll = nll_loss(s.target, enc.memory, *decoder_, ctx);
  out.emo = emotion_loss(enc.emotion_logits, s.emotion);
  out.emotion_logits = enc.emotion_logits;
  return out;
}

std::vector<double> LambModel::emotion_probs(const PreparedSample& sample) const {
  const Matrix l = encode(sample).emotion_logits.value();
  return softmax(std::span<const double>(l.data(), static_cast<std::size_t>(l.size())));
}

GeneratedResponse LambModel::respond(const PreparedSample& sample, const DecodeOptions& options,
                                     const Vocab* vocab) const {
  const ModelOutputs enc = encode(sample);
  return generate(enc.memory, *decoder_, options, vocab);
}

std::string parameter_group(std::string_view name) {
  if (name.starts_with("shared.")) return "embedding";
  const auto dot = name.find('.');
  return std::string(name.substr(0, dot));
}

}  // namespace lamb
