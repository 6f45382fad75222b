#include "lamb/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace lamb::nn {

Tensor ParameterStore::add(std::string name, Matrix init) {
  if (index_.count(name) != 0) {
    throw std::logic_error("duplicate parameter name: " + name);
  }
  Tensor t = Tensor::leaf(std::move(init));
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), t});
  return t;
}

const Tensor* ParameterStore::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &params_[it->second].tensor;
}

Tensor* ParameterStore::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &params_[it->second].tensor;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.tensor.value().size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Tensor ForwardContext::apply_dropout(const Tensor& x) const {
  if (!training()) return x;
  return ag::dropout(x, dropout, *rng);
}

Matrix normal_matrix(Rng& rng, Index rows, Index cols, double stddev) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
  return m;
}

Matrix uniform_matrix(Rng& rng, Index rows, Index cols, double bound) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

Linear::Linear(ParameterStore& store, const std::string& name, Index in, Index out, Rng& rng,
               double init_std, bool bias)
    : weight_(store.add(name + ".weight", normal_matrix(rng, in, out, init_std))) {
  if (bias) bias_ = store.add(name + ".bias", Matrix::Zero(1, out));
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = ag::matmul(x, weight_);
  return bias_.defined() ? ag::add_row(y, bias_) : y;
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, Index dim)
    : gamma_(store.add(name + ".gamma", Matrix::Ones(1, dim))),
      beta_(store.add(name + ".beta", Matrix::Zero(1, dim))) {}

Tensor LayerNorm::operator()(const Tensor& x) const { return ag::layer_norm(x, gamma_, beta_); }

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& name,
                                       Index d_model, int heads, Rng& rng, double init_std)
    : heads_(heads),
      q_(store, name + ".q", d_model, d_model, rng, init_std),
      k_(store, name + ".k", d_model, d_model, rng, init_std),
      v_(store, name + ".v", d_model, d_model, rng, init_std),
      o_(store, name + ".out", d_model, d_model, rng, init_std) {
  if (heads <= 0 || d_model % heads != 0) {
    throw std::invalid_argument(name + ": d_model must be divisible by the head count");
  }
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& memory, bool causal,
                                      const ForwardContext& ctx) const {
  const Tensor q = q_(query);
  const Tensor k = k_(memory);
  const Tensor v = v_(memory);
  const Index head_dim = q.cols() / heads_;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> outputs;
  outputs.reserve(static_cast<std::size_t>(heads_));
  for (int h = 0; h < heads_; ++h) {
    const Index off = h * head_dim;
    Tensor scores = ag::scale(
        ag::matmul_nt(ag::slice_cols(q, off, head_dim), ag::slice_cols(k, off, head_dim)),
        inv_scale);
    Tensor probs = ctx.apply_dropout(ag::softmax_rows(scores, causal));
    outputs.push_back(ag::matmul(probs, ag::slice_cols(v, off, head_dim)));
  }
  const Tensor merged = heads_ == 1 ? outputs.front() : ag::concat_cols(outputs);
  return o_(merged);
}

FeedForward::FeedForward(ParameterStore& store, const std::string& name, Index d_model,
                         Index hidden, Rng& rng, double init_std)
    : fc1_(store, name + ".fc1", d_model, hidden, rng, init_std),
      fc2_(store, name + ".fc2", hidden, d_model, rng, init_std) {}

Tensor FeedForward::operator()(const Tensor& x, const ForwardContext& ctx) const {
  return fc2_(ctx.apply_dropout(ag::gelu(fc1_(x))));
}

EncoderLayer::EncoderLayer(ParameterStore& store, const std::string& name, Index d_model,
                           int heads, Index ffn_dim, Rng& rng, double init_std)
    : self_attn_(store, name + ".self_attn", d_model, heads, rng, init_std),
      self_norm_(store, name + ".self_attn_norm", d_model),
      ffn_(store, name + ".ffn", d_model, ffn_dim, rng, init_std),
      ffn_norm_(store, name + ".ffn_norm", d_model) {}

Tensor EncoderLayer::operator()(const Tensor& x, const ForwardContext& ctx) const {
  Tensor h = self_norm_(ag::add(x, ctx.apply_dropout(self_attn_(x, x, false, ctx))));
  return ffn_norm_(ag::add(h, ctx.apply_dropout(ffn_(h, ctx))));
}

DecoderLayer::DecoderLayer(ParameterStore& store, const std::string& name, Index d_model,
                           int heads, Index ffn_dim, Rng& rng, double init_std)
    : self_attn_(store, name + ".self_attn", d_model, heads, rng, init_std),
      self_norm_(store, name + ".self_attn_norm", d_model),
      cross_attn_(store, name + ".cross_attn", d_model, heads, rng, init_std),
      cross_norm_(store, name + ".cross_attn_norm", d_model),
      ffn_(store, name + ".ffn", d_model, ffn_dim, rng, init_std),
      ffn_norm_(store, name + ".ffn_norm", d_model) {}

Tensor DecoderLayer::operator()(const Tensor& x, const Tensor& memory,
                                const ForwardContext& ctx) const {
  Tensor h = self_norm_(ag::add(x, ctx.apply_dropout(self_attn_(x, x, true, ctx))));
  h = cross_norm_(ag::add(h, ctx.apply_dropout(cross_attn_(h, memory, false, ctx))));
  return ffn_norm_(ag::add(h, ctx.apply_dropout(ffn_(h, ctx))));
}

}  // namespace lamb::nn
