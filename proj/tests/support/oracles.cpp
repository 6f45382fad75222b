#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace oracle {

Mat to_mat(const lamb::Matrix& m) {
  Mat out(static_cast<std::size_t>(m.rows()), Vec(static_cast<std::size_t>(m.cols())));
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  }
  return out;
}

Vec row(const lamb::Matrix& m, int r) { return to_mat(m)[static_cast<std::size_t>(r)]; }

Mat matmul(const Mat& a, const Mat& b) {
  const std::size_t n = a.size(), k = b.size(), m = b.empty() ? 0 : b[0].size();
  Mat out(n, Vec(m, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i].size() != k) throw std::invalid_argument("oracle::matmul shape");
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a[i][t] * b[t][j];
      out[i][j] = s;
    }
  }
  return out;
}

Mat transpose(const Mat& a) {
  if (a.empty()) return {};
  Mat out(a[0].size(), Vec(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[0].size(); ++j) out[j][i] = a[i][j];
  }
  return out;
}

Vec softmax(const Vec& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  Vec e(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(x[i] - mx);
    z += e[i];
  }
  for (double& v : e) v /= z;
  return e;
}

Vec log_softmax(const Vec& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : x) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
  return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Mat layer_norm(const Mat& x, const Vec& gamma, const Vec& beta, double eps) {
  Mat out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mu = 0.0;
    for (double v : x[i]) mu += v;
    mu /= n;
    double var = 0.0;
    for (double v : x[i]) var += (v - mu) * (v - mu);
    var /= n;
    for (std::size_t j = 0; j < x[i].size(); ++j) {
      out[i][j] = (x[i][j] - mu) / std::sqrt(var + eps) * gamma[j] + beta[j];
    }
  }
  return out;
}

Mat add(const Mat& a, const Mat& b) {
  Mat out = a;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) out[i][j] += b[i][j];
  }
  return out;
}

Mat linear(const Mat& x, const lamb::nn::Linear& l) {
  Mat out = matmul(x, to_mat(l.weight().value()));
  if (l.has_bias()) {
    const Vec b = row(l.bias().value(), 0);
    for (auto& r : out) {
      for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
    }
  }
  return out;
}

Mat attention(const Mat& query, const Mat& memory, const lamb::nn::MultiHeadAttention& mha, bool causal) {
  const Mat q = linear(query, mha.q_proj());
  const Mat k = linear(memory, mha.k_proj());
  const Mat v = linear(memory, mha.v_proj());
  const std::size_t d = q[0].size();
  const std::size_t hd = d / static_cast<std::size_t>(mha.heads());
  Mat merged(query.size(), Vec(d, 0.0));
  for (int h = 0; h < mha.heads(); ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * hd;
    for (std::size_t i = 0; i < query.size(); ++i) {
      Vec scores;
      for (std::size_t j = 0; j < memory.size(); ++j) {
        if (causal && j > i) break;
        double s = 0.0;
        for (std::size_t t = 0; t < hd; ++t) s += q[i][off + t] * k[j][off + t];
        scores.push_back(s / std::sqrt(static_cast<double>(hd)));
      }
      const Vec p = softmax(scores);
      for (std::size_t j = 0; j < p.size(); ++j) {
        for (std::size_t t = 0; t < hd; ++t) merged[i][off + t] += p[j] * v[j][off + t];
      }
    }
  }
  return linear(merged, mha.out_proj());
}

namespace {

Mat norm(const Mat& x, const lamb::nn::LayerNorm& ln) {
  return layer_norm(x, row(ln.gamma().value(), 0), row(ln.beta().value(), 0));
}

Mat ffn(const Mat& x, const lamb::nn::FeedForward& f) {
  Mat h = linear(x, f.fc1());
  for (auto& r : h) {
    for (double& v : r) v = gelu(v);
  }
  return linear(h, f.fc2());
}

Mat embed(const lamb::Tensor& table, const lamb::Tensor& positions, const lamb::nn::LayerNorm& ln,
          const std::vector<int>& ids) {
  Mat x;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Vec r = row(table.value(), ids[i]);
    const Vec p = row(positions.value(), static_cast<int>(i));
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += p[j];
    x.push_back(r);
  }
  return norm(x, ln);
}

}  // namespace

Mat encoder_forward(const lamb::TransformerEncoder& enc, const std::vector<int>& ids) {
  Mat h = embed(enc.token_embedding(), enc.positions(), enc.embedding_norm(), ids);
  for (const auto& layer : enc.layers()) {
    h = norm(add(h, attention(h, h, layer.self_attention(), false)), layer.self_attention_norm());
    h = norm(add(h, ffn(h, layer.feed_forward())), layer.feed_forward_norm());
  }
  return h;
}

Mat decoder_logits(const lamb::TransformerDecoder& dec, const std::vector<int>& inputs, const Mat& memory) {
  Mat h = embed(dec.token_embedding(), dec.positions(), dec.embedding_norm(), inputs);
  for (const auto& layer : dec.layers()) {
    h = norm(add(h, attention(h, h, layer.self_attention(), true)), layer.self_attention_norm());
    h = norm(add(h, attention(h, memory, layer.cross_attention(), false)), layer.cross_attention_norm());
    h = norm(add(h, ffn(h, layer.feed_forward())), layer.feed_forward_norm());
  }
  Mat logits = matmul(h, transpose(to_mat(dec.token_embedding().value())));
  const Vec b = row(dec.logits_bias().value(), 0);
  for (auto& r : logits) {
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
  }
  return logits;
}

Mat fusion(const Mat& r_u, const Mat& r_d, const Mat& wq, const Mat& wk, const Mat& wv, Mat* weights) {
  const Mat q = matmul(r_u, wq), k = matmul(r_d, wk), v = matmul(r_d, wv);
  const double scale = std::sqrt(2.0 * static_cast<double>(wq.size()));
  Mat out(r_u.size(), Vec(v[0].size(), 0.0));
  if (weights != nullptr) weights->clear();
  for (std::size_t i = 0; i < q.size(); ++i) {
    Vec s(k.size());
    for (std::size_t j = 0; j < k.size(); ++j) {
      double dot = 0.0;
      for (std::size_t t = 0; t < q[i].size(); ++t) dot += q[i][t] * k[j][t];
      s[j] = dot / scale;
    }
    const Vec p = softmax(s);
    if (weights != nullptr) weights->push_back(p);
    for (std::size_t j = 0; j < p.size(); ++j) {
      for (std::size_t t = 0; t < v[j].size(); ++t) out[i][t] += p[j] * v[j][t];
    }
  }
  return out;
}

namespace {

using Counts = std::unordered_map<std::string, long>;

Counts ngrams(const Tokens& t, int n) {
  Counts c;
  for (int i = 0; i + n <= static_cast<int>(t.size()); ++i) {
    std::string key;
    for (int j = 0; j < n; ++j) {
      if (j != 0) key += '\x1f';
      key += t[static_cast<std::size_t>(i + j)];
    }
    ++c[key];
  }
  return c;
}

long total(const Counts& c) {
  long s = 0;
  for (const auto& kv : c) s += kv.second;
  return s;
}

long clipped_overlap(const Counts& h, const Counts& r) {
  long s = 0;
  for (const auto& [k, v] : h) {
    auto it = r.find(k);
    if (it != r.end()) s += std::min(v, it->second);
  }
  return s;
}

}  // namespace

double bleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, int max_n, double eps) {
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    long match = 0, tot = 0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      const Counts h = ngrams(hyps[i], n);
      match += clipped_overlap(h, ngrams(refs[i], n));
      tot += total(h);
    }
    const double p = (match > 0 ? static_cast<double>(match) : eps) / static_cast<double>(std::max(tot, 1L));
    log_sum += std::log(p) / max_n;
  }
  long c = 0, r = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    c += static_cast<long>(hyps[i].size());
    r += static_cast<long>(refs[i].size());
  }
  double bp = 1.0;
  if (c == 0) {
    bp = 0.0;
  } else if (c <= r) {
    bp = std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  }
  return bp * std::exp(log_sum);
}

double rouge_f1(const Tokens& hyp, const Tokens& ref, int n) {
  const Counts h = ngrams(hyp, n), r = ngrams(ref, n);
  const long ov = clipped_overlap(h, r);
  if (ov == 0) return 0.0;
  const double p = static_cast<double>(ov) / static_cast<double>(total(h));
  const double rc = static_cast<double>(ov) / static_cast<double>(total(r));
  return 2.0 * p * rc / (p + rc);
}

double rouge_recall(const Tokens& hyp, const Tokens& ref, int n) {
  const Counts h = ngrams(hyp, n), r = ngrams(ref, n);
  if (total(r) == 0) return 0.0;
  return static_cast<double>(clipped_overlap(h, r)) / static_cast<double>(total(r));
}

double dist(const std::vector<Tokens>& hyps, int n) {
  std::unordered_set<std::string> distinct;
  long tot = 0;
  for (const auto& h : hyps) {
    for (const auto& [k, v] : ngrams(h, n)) {
      distinct.insert(k);
      tot += v;
    }
  }
  return static_cast<double>(distinct.size()) / static_cast<double>(tot);
}

double perplexity(const Vec& nll) {
  double s = 0.0;
  for (double v : nll) s += v;
  return std::exp(s / static_cast<double>(nll.size()));
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& gold) {
  int hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == gold[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace oracle
