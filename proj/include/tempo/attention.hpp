#pragma once

#include <span>
#include <vector>

#include "tempo/nn.hpp"

namespace tempo {

struct AttentionBlockConfig {
  std::size_t model_dim = 64;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 256;
  bool causal = false;

  void validate() const;
};

// Per-thread counters so tests can verify which blocks actually ran.
struct AttentionCounters {
  std::size_t self_attention = 0;
  std::size_t cross_attention = 0;
};
AttentionCounters& attention_counters();

// Sinusoidal table: even dims sin(pos / 10000^(2i/d)), odd dims cos(...).
template <typename T>
Tensor<T> positional_encoding(std::size_t length, std::size_t dim);

// Same encoding evaluated at arbitrary (possibly fractional) positions.
template <typename T>
Tensor<T> positional_encoding_at(std::span<const double> positions, std::size_t dim);

template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(const AttentionBlockConfig& cfg, Rng& rng);

  // queries [Lq×d], context [Lk×d] -> [Lq×d]
  Tensor<T> operator()(const Tensor<T>& queries, const Tensor<T>& context,
                       const AttentionMask& mask = {}, std::vector<T>* probs = nullptr) const;
  void collect(ParameterList<T>& out, const std::string& prefix) const;

  std::size_t heads() const { return heads_; }

 private:
  std::size_t heads_ = 1;
  Linear<T> query_, key_, value_, output_;
};

template <typename T>
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(std::size_t dim, std::size_t hidden, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const { return down_(gelu(up_(x))); }
  void collect(ParameterList<T>& out, const std::string& prefix) const;

 private:
  Linear<T> up_, down_;
};

// Pre-norm residual self-attention: x + Attn(LN(x), LN(x)).
template <typename T>
class SelfAttentionBlock {
 public:
  SelfAttentionBlock() = default;
  SelfAttentionBlock(const AttentionBlockConfig& cfg, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x, std::vector<T>* probs = nullptr) const;
  void collect(ParameterList<T>& out, const std::string& prefix) const;

  const AttentionBlockConfig& config() const { return cfg_; }

 private:
  AttentionBlockConfig cfg_;
  LayerNorm<T> norm_;
  MultiHeadAttention<T> attn_;
};

// Pre-norm residual cross-attention: q + Attn(LN(q), context).
template <typename T>
class CrossAttentionBlock {
 public:
  CrossAttentionBlock() = default;
  CrossAttentionBlock(const AttentionBlockConfig& cfg, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& queries, const Tensor<T>& context,
                       const AttentionMask& mask = {}, std::vector<T>* probs = nullptr) const;
  void collect(ParameterList<T>& out, const std::string& prefix) const;

 private:
  AttentionBlockConfig cfg_;
  LayerNorm<T> norm_;
  MultiHeadAttention<T> attn_;
};

// Pre-norm residual feed-forward: x + FFN(LN(x)).
template <typename T>
class FeedForwardBlock {
 public:
  FeedForwardBlock() = default;
  FeedForwardBlock(const AttentionBlockConfig& cfg, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const { return add(x, ffn_(norm_(x))); }
  void collect(ParameterList<T>& out, const std::string& prefix) const;

 private:
  LayerNorm<T> norm_;
  FeedForward<T> ffn_;
};

}  // namespace tempo
