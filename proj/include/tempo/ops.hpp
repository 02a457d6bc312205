#pragma once

// Differentiable tensor operations. Every op here is instantiated for float
// (training) and double (gradient verification) and has a finite-difference
// test in tests/test_tensor.cpp.

#include <cstdint>
#include <span>
#include <vector>

#include "tempo/tensor.hpp"

namespace tempo {

// [m×k] × [k×n] -> [m×n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Elementwise with numpy-style right-aligned broadcasting.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis);
template <typename T>
Tensor<T> mean_all(const Tensor<T>& x);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1);
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis = -1);

// Softmax over the last axis restricted to entries where mask != 0; masked
// entries come out as exactly zero. Every row needs at least one live entry.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, std::span<const std::uint8_t> mask);

// Mean over unmasked rows of -log softmax(logits)[target].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                        std::span<const std::uint8_t> mask);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);

// Rows of `weight` [V×d] selected by `ids`.
template <typename T>
Tensor<T> embedding(const Tensor<T>& weight, std::span<const int> ids);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows);

// out[rows[i]] += src[i] into a zero tensor with `num_rows` rows.
template <typename T>
Tensor<T> scatter_add_rows(const Tensor<T>& src, std::span<const std::size_t> rows,
                           std::size_t num_rows);

struct AttentionMask {
  bool causal = false;
  // When both are non-empty, query i may only see key j if the groups match.
  std::vector<int> query_groups;
  std::vector<int> key_groups;

  bool allows(std::size_t query, std::size_t key) const;
};

// Multi-head scaled dot-product attention core: q [Lq×d], k,v [Lk×d], d split
// evenly into `heads`. Returns [Lq×d]. When `probs_out` is set it receives
// the weights laid out [heads×Lq×Lk].
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::size_t heads, const AttentionMask& mask = {},
                    std::vector<T>* probs_out = nullptr);

}  // namespace tempo
