#pragma once

#include "lamb/encoder.hpp"
#include "lamb/nn.hpp"

#include <span>
#include <vector>

namespace lamb {

// Column mean of R_C: (1 x d). Throws on an empty matrix.
Tensor pool_knowledge(const RepMatrix& r_c);

// R_G[0] ++ R_M[0] ++ p_k: (1 x 3d). A null r_m contributes zeros.
Tensor fuse_features(const RepMatrix& r_g, const RepMatrix* r_m, const Tensor& p_k);

class EmotionHead {
 public:
  EmotionHead(nn::ParameterStore& store, const std::string& name, Index d_model, int num_labels,
              Rng& rng, double init_std, bool bias = true);

  // (1 x q) unnormalized scores.
  Tensor logits(const Tensor& fused) const;
  const nn::Linear& projection() const { return proj_; }
  int num_labels() const { return num_labels_; }

 private:
  nn::Linear proj_;
  int num_labels_;
};

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> classify_emotion(const Tensor& fused, const EmotionHead& head);
int argmax(std::span<const double> values);  // lowest index on ties

// -log P(target); throws std::out_of_range for a bad index.
double emotion_loss(std::span<const double> probs, int target);
// Log-domain cross-entropy from logits (1x1, differentiable).
Tensor emotion_loss(const Tensor& logits, int target);

}  // namespace lamb
