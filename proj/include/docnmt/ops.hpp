#pragma once

// Differentiable primitives. Shapes must match exactly: the only implicit
// broadcast is tensor-with-scalar (scale, add_scalar). Row-wise bias
// addition is spelled out with add_rowwise.

#include <cstdint>
#include <span>
#include <vector>

#include "docnmt/random.hpp"
#include "docnmt/tensor.hpp"

namespace docnmt {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }

// x[..., d] + bias[d]
Tensor add_rowwise(const Tensor& x, const Tensor& bias);

// a[m, k] * b[k, n]
Tensor matmul(const Tensor& a, const Tensor& b);
// a[..., m, k] * b[..., k, n] (or b[..., n, k]ᵀ), leading axes equal.
Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
// x[..., in] * w[in, out] + b[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
inline Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);

Tensor mean(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps);

// Inverted dropout. Identity (the same tensor) when !train or p == 0.
Tensor dropout(const Tensor& x, double p, bool train, Rng& rng);

// table[V, d], ids of length n -> [n, d]
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

// Keep-mask over [batch, queries, keys]; shared by every head.
struct AttentionMask {
  std::size_t batch = 0;
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<std::uint8_t> keep;

  bool allowed(std::size_t b, std::size_t q, std::size_t k) const {
    return keep[(b * queries + q) * keys + k] != 0;
  }

  // Keys at positions >= key_lengths[b] are padding.
  static AttentionMask padding(std::span<const std::size_t> key_lengths,
                               std::size_t queries, std::size_t keys);
  // Padding plus k <= q.
  static AttentionMask causal(std::span<const std::size_t> key_lengths,
                              std::size_t length);
};

// scores[batch, heads, queries, keys]; disallowed entries become -inf.
Tensor masked_fill(const Tensor& scores, const AttentionMask& mask);

// Mean over non-pad rows of the cross-entropy against
// (1 - eps) * onehot(target) + eps / V.
Tensor cross_entropy_label_smoothed(const Tensor& logits,
                                    std::span<const int> targets,
                                    double label_smoothing, int pad_id);

}  // namespace docnmt
