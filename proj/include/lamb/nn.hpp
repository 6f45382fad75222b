#pragma once

#include "lamb/random.hpp"
#include "lamb/tensor.hpp"

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lamb::nn {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

// Owns every trainable leaf of a model under a stable dotted name. The
// insertion order is the serialization and optimizer order.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Tensor add(std::string name, Matrix init);
  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::vector<NamedParameter>& parameters() { return params_; }
  const Tensor* find(std::string_view name) const;
  Tensor* find(std::string_view name);
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<NamedParameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Dropout is active iff rng != nullptr and rate > 0.
struct ForwardContext {
  double dropout = 0.0;
  Rng* rng = nullptr;

  bool training() const { return rng != nullptr && dropout > 0.0; }
  Tensor apply_dropout(const Tensor& x) const;
};

Matrix normal_matrix(Rng& rng, Index rows, Index cols, double stddev);
Matrix uniform_matrix(Rng& rng, Index rows, Index cols, double bound);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, Index in, Index out, Rng& rng,
         double init_std, bool bias = true);

  Tensor operator()(const Tensor& x) const;
  const Tensor& weight() const { return weight_; }
  bool has_bias() const { return bias_.defined(); }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor weight_;  // in x out
  Tensor bias_;    // 1 x out
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, Index dim);
  Tensor operator()(const Tensor& x) const;
  const Tensor& gamma() const { return gamma_; }
  const Tensor& beta() const { return beta_; }

 private:
  Tensor gamma_;
  Tensor beta_;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& name, Index d_model, int heads,
                     Rng& rng, double init_std);

  Tensor operator()(const Tensor& query, const Tensor& memory, bool causal,
                    const ForwardContext& ctx) const;

  int heads() const { return heads_; }
  const Linear& q_proj() const { return q_; }
  const Linear& k_proj() const { return k_; }
  const Linear& v_proj() const { return v_; }
  const Linear& out_proj() const { return o_; }

 private:
  int heads_ = 1;
  Linear q_, k_, v_, o_;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterStore& store, const std::string& name, Index d_model, Index hidden,
              Rng& rng, double init_std);
  Tensor operator()(const Tensor& x, const ForwardContext& ctx) const;
  const Linear& fc1() const { return fc1_; }
  const Linear& fc2() const { return fc2_; }

 private:
  Linear fc1_, fc2_;
};

// Post-norm layers in the BART arrangement.
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(ParameterStore& store, const std::string& name, Index d_model, int heads,
               Index ffn_dim, Rng& rng, double init_std);
  Tensor operator()(const Tensor& x, const ForwardContext& ctx) const;

  const MultiHeadAttention& self_attention() const { return self_attn_; }
  const LayerNorm& self_attention_norm() const { return self_norm_; }
  const FeedForward& feed_forward() const { return ffn_; }
  const LayerNorm& feed_forward_norm() const { return ffn_norm_; }

 private:
  MultiHeadAttention self_attn_;
  LayerNorm self_norm_;
  FeedForward ffn_;
  LayerNorm ffn_norm_;
};

class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(ParameterStore& store, const std::string& name, Index d_model, int heads,
               Index ffn_dim, Rng& rng, double init_std);
  Tensor operator()(const Tensor& x, const Tensor& memory, const ForwardContext& ctx) const;

  const MultiHeadAttention& self_attention() const { return self_attn_; }
  const LayerNorm& self_attention_norm() const { return self_norm_; }
  const MultiHeadAttention& cross_attention() const { return cross_attn_; }
  const LayerNorm& cross_attention_norm() const { return cross_norm_; }
  const FeedForward& feed_forward() const { return ffn_; }
  const LayerNorm& feed_forward_norm() const { return ffn_norm_; }

 private:
  MultiHeadAttention self_attn_;
  LayerNorm self_norm_;
  MultiHeadAttention cross_attn_;
  LayerNorm cross_norm_;
  FeedForward ffn_;
  LayerNorm ffn_norm_;
};

}  // namespace lamb::nn
