#pragma once

// The assembled model: shared token embedding, context/cause encoder,
// relation encoder, sensible fusion, tri-stream decoder and emotion head,
// wired according to the ablation setting.

#include "lamb/decoder.hpp"
#include "lamb/emotion.hpp"
#include "lamb/encoder.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace lamb {

enum class Ablation { vanilla, self_pres, conect, full };

inline constexpr std::array<Ablation, 4> kAblations{Ablation::vanilla, Ablation::self_pres,
                                                    Ablation::conect, Ablation::full};

std::string_view ablation_name(Ablation a);     // "vanilla", ...
std::string_view ablation_display(Ablation a);  // table row label
Ablation parse_ablation(std::string_view name);

inline bool uses_selectors(Ablation a) { return a == Ablation::self_pres || a == Ablation::full; }
inline bool uses_conect(Ablation a) { return a == Ablation::conect || a == Ablation::full; }

struct ModelConfig {
  int vocab_size = 0;
  int num_emotions = 32;
  Index d_model = 64;
  int layers = 2;
  int heads = 4;
  Index ffn_dim = 256;
  double dropout = 0.1;
  int max_positions = 256;
  std::size_t max_context_len = 256;
  std::size_t max_target_len = 32;  // including <eos>
  std::size_t max_relation_len = 64;
  std::size_t max_conect_len = 128;
  double init_std = 0.02;
  bool share_relation_encoder = false;
  bool classifier_bias = true;
  Ablation ablation = Ablation::full;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Token-level inputs for one dialogue. Streams an ablation does not use may
// be left empty.
struct PreparedSample {
  std::string id;
  TokenSequence context;                                    // <cls> + history
  TokenSequence cause;                                      // selected utterances
  std::array<std::vector<int>, kRelationCount> relations;   // each <cls>-prefixed
  std::vector<int> conect;                                  // <cls>-prefixed
  std::vector<int> target;                                  // response + <eos>
  int emotion = -1;                                         // e_tar
};

struct ModelOutputs {
  RepMatrix r_u;
  std::optional<RepMatrix> r_d;
  RepMatrix r_g;
  RelationEncoding r_c;
  std::optional<RepMatrix> r_m;
  DecoderMemory memory;
  Tensor p_k;
  Tensor fused;
  Tensor emotion_logits;
};

struct SampleLoss {
  NllResult nll;
  Tensor emo;  // 1x1
  Tensor emotion_logits;
};

class LambModel {
 public:
  LambModel(const ModelConfig& config, std::uint64_t init_seed);
  LambModel(const LambModel&) = delete;
  LambModel& operator=(const LambModel&) = delete;

  ModelOutputs encode(const PreparedSample& sample, const nn::ForwardContext& ctx = {}) const;
  SampleLoss loss(const PreparedSample& sample, const nn::ForwardContext& ctx = {}) const;
  std::vector<double> emotion_probs(const PreparedSample& sample) const;
  GeneratedResponse respond(const PreparedSample& sample, const DecodeOptions& options,
                            const Vocab* vocab = nullptr) const;

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }

  const TransformerEncoder& encoder() const { return *encoder_; }
  const TransformerEncoder& relation_encoder() const { return relation_encoder_ ? *relation_encoder_ : *encoder_; }
  const FusionAttention& fusion() const { return *fusion_; }
  const TransformerDecoder& decoder() const { return *decoder_; }
  const EmotionHead& emotion_head() const { return *emotion_head_; }

 private:
  ModelConfig cfg_;
  nn::ParameterStore store_;
  Tensor token_embedding_;
  std::unique_ptr<TransformerEncoder> encoder_;
  std::unique_ptr<TransformerEncoder> relation_encoder_;
  std::unique_ptr<FusionAttention> fusion_;
  std::unique_ptr<TransformerDecoder> decoder_;
  std::unique_ptr<EmotionHead> emotion_head_;
};

// Group a parameter name belongs to: embedding, encoder, relation_encoder,
// fusion, decoder or emotion_head.
std::string parameter_group(std::string_view name);

}  // namespace lamb
