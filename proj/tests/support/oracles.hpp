#pragma once

// Independent reference computations for the tests: plain loops over
// nested vectors, no Eigen expressions and no library helpers.

#include "lamb/decoder.hpp"
#include "lamb/encoder.hpp"
#include "lamb/nn.hpp"

#include <string>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;
using Tokens = std::vector<std::string>;

Mat to_mat(const lamb::Matrix& m);
Vec row(const lamb::Matrix& m, int r);

Mat matmul(const Mat& a, const Mat& b);
Mat transpose(const Mat& a);
Vec softmax(const Vec& x);
Vec log_softmax(const Vec& x);
double gelu(double x);
Mat layer_norm(const Mat& x, const Vec& gamma, const Vec& beta, double eps = 1e-5);
Mat add(const Mat& a, const Mat& b);

Mat linear(const Mat& x, const lamb::nn::Linear& l);
Mat attention(const Mat& query, const Mat& memory, const lamb::nn::MultiHeadAttention& mha, bool causal);
Mat encoder_forward(const lamb::TransformerEncoder& enc, const std::vector<int>& ids);
// Logits rows for decoder inputs against an already tagged memory.
Mat decoder_logits(const lamb::TransformerDecoder& dec, const std::vector<int>& inputs, const Mat& tagged_memory);

// softmax(R_U Wq (R_D Wk)^T / sqrt(2d)) R_D Wv, entry by entry.
Mat fusion(const Mat& r_u, const Mat& r_d, const Mat& wq, const Mat& wk, const Mat& wv, Mat* weights = nullptr);

// Metrics by brute force. N-grams are joined into "\x1f"-separated keys
// and counted in hash maps.
double bleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, int max_n, double eps);
double rouge_f1(const Tokens& hyp, const Tokens& ref, int n);
double rouge_recall(const Tokens& hyp, const Tokens& ref, int n);
double dist(const std::vector<Tokens>& hyps, int n);
double perplexity(const Vec& nll);
double accuracy(const std::vector<int>& pred, const std::vector<int>& gold);

}  // namespace oracle
