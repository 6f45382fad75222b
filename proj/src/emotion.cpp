#include "lamb/emotion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lamb {

Tensor pool_knowledge(const RepMatrix& r_c) {
  if (r_c.length() == 0) throw std::invalid_argument("pool_knowledge: empty R_C");
  return ag::mean_rows(r_c.values);
}

Tensor fuse_features(const RepMatrix& r_g, const RepMatrix* r_m, const Tensor& p_k) {
  const Index d = r_g.width();
  if (p_k.cols() != d || p_k.rows() != 1 || (r_m != nullptr && r_m->width() != d)) {
    throw std::invalid_argument("fuse_features: width mismatch against d = " + std::to_string(d));
  }
  const Tensor m0 = r_m != nullptr ? ag::slice_rows(r_m->values, 0, 1) : Tensor::constant(Matrix::Zero(1, d));
  const Tensor parts[] = {ag::slice_rows(r_g.values, 0, 1), m0, p_k};
  return ag::concat_cols(parts);
}

EmotionHead::EmotionHead(nn::ParameterStore& store, const std::string& name, Index d_model,
                         int num_labels, Rng& rng, double init_std, bool bias)
    : proj_(store, name, 3 * d_model, num_labels, rng, init_std, bias), num_labels_(num_labels) {}

Tensor EmotionHead::logits(const Tensor& fused) const { return proj_(fused); }

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) return {};
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (out[i] = std::exp(logits[i] - mx));
  for (double& p : out) p /= z;
  return out;
}

std::vector<double> classify_emotion(const Tensor& fused, const EmotionHead& head) {
  const Matrix l = head.logits(fused).value();
  return softmax(std::span<const double>(l.data(), static_cast<std::size_t>(l.size())));
}

int argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax: empty input");
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

double emotion_loss(std::span<const double> probs, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= probs.size()) {
    throw std::out_of_range("emotion_loss: label index " + std::to_string(target) + " outside [0, " +
                            std::to_string(probs.size()) + ")");
  }
  return -std::log(probs[static_cast<std::size_t>(target)]);
}

Tensor emotion_loss(const Tensor& logits, int target) {
  if (target < 0 || target >= logits.cols()) {
    throw std::out_of_range("emotion_loss: label index " + std::to_string(target) + " outside [0, " +
                            std::to_string(logits.cols()) + ")");
  }
  const int t[] = {target};
  return ag::nll_rows(logits, t);
}

}  // namespace lamb
