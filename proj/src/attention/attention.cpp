#include "tempo/attention.hpp"

#include <cmath>

namespace tempo {

void AttentionBlockConfig::validate() const {
  if (model_dim == 0 || num_heads == 0 || ffn_dim == 0) {
    throw ValidationError("attention block dimensions must be positive");
  }
  if (model_dim % num_heads != 0) {
    throw ValidationError("model_dim " + std::to_string(model_dim) + " not divisible by " +
                          std::to_string(num_heads) + " heads");
  }
}

AttentionCounters& attention_counters() {
  thread_local AttentionCounters counters;
  return counters;
}

template <typename T>
Tensor<T> positional_encoding_at(std::span<const double> positions, std::size_t dim) {
  if (positions.empty() || dim == 0) throw DimensionError("positional encoding of an empty table");
  std::vector<T> data(positions.size() * dim);
  for (std::size_t p = 0; p < positions.size(); ++p) {
    for (std::size_t c = 0; c < dim; ++c) {
      const double pair = static_cast<double>(c / 2 * 2);
      const double angle = positions[p] / std::pow(10000.0, pair / static_cast<double>(dim));
      data[p * dim + c] = static_cast<T>(c % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor<T>({positions.size(), dim}, std::move(data));
}

template <typename T>
Tensor<T> positional_encoding(std::size_t length, std::size_t dim) {
  std::vector<double> positions(length);
  for (std::size_t i = 0; i < length; ++i) positions[i] = static_cast<double>(i);
  return positional_encoding_at<T>(positions, dim);
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(const AttentionBlockConfig& cfg, Rng& rng)
    : heads_(cfg.num_heads),
      query_(cfg.model_dim, cfg.model_dim, rng),
      key_(cfg.model_dim, cfg.model_dim, rng),
      value_(cfg.model_dim, cfg.model_dim, rng),
      output_(cfg.model_dim, cfg.model_dim, rng) {
  cfg.validate();
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::operator()(const Tensor<T>& queries, const Tensor<T>& context,
                                            const AttentionMask& mask,
                                            std::vector<T>* probs) const {
  auto q = query_(queries);
  auto k = key_(context);
  auto v = value_(context);
  return output_(attention(q, k, v, heads_, mask, probs));
}

template <typename T>
void MultiHeadAttention<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
  query_.collect(out, prefix + ".query");
  key_.collect(out, prefix + ".key");
  value_.collect(out, prefix + ".value");
  output_.collect(out, prefix + ".output");
}

template <typename T>
FeedForward<T>::FeedForward(std::size_t dim, std::size_t hidden, Rng& rng)
    : up_(dim, hidden, rng), down_(hidden, dim, rng) {}

template <typename T>
void FeedForward<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
  up_.collect(out, prefix + ".up");
  down_.collect(out, prefix + ".down");
}

template <typename T>
SelfAttentionBlock<T>::SelfAttentionBlock(const AttentionBlockConfig& cfg, Rng& rng)
    : cfg_(cfg), norm_(cfg.model_dim), attn_(cfg, rng) {}

template <typename T>
Tensor<T> SelfAttentionBlock<T>::operator()(const Tensor<T>& x, std::vector<T>* probs) const {
  if (x.rank() != 2 || x.dim(1) != cfg_.model_dim) {
    throw DimensionError("self-attention expects [Lx" + std::to_string(cfg_.model_dim) + "], got " +
                         shape_str(x.shape()));
  }
  ++attention_counters().self_attention;
  auto h = norm_(x);
  AttentionMask mask;
  mask.causal = cfg_.causal;
  return add(x, attn_(h, h, mask, probs));
}

template <typename T>
void SelfAttentionBlock<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
  norm_.collect(out, prefix + ".norm");
  attn_.collect(out, prefix + ".attn");
}

template <typename T>
CrossAttentionBlock<T>::CrossAttentionBlock(const AttentionBlockConfig& cfg, Rng& rng)
    : cfg_(cfg), norm_(cfg.model_dim), attn_(cfg, rng) {}

template <typename T>
Tensor<T> CrossAttentionBlock<T>::operator()(const Tensor<T>& queries, const Tensor<T>& context,
                                             const AttentionMask& mask,
                                             std::vector<T>* probs) const {
  if (queries.rank() != 2 || context.rank() != 2 || queries.dim(1) != cfg_.model_dim ||
      context.dim(1) != cfg_.model_dim) {
    throw DimensionError("cross-attention expects queries and context of width " +
                         std::to_string(cfg_.model_dim) + ", got " + shape_str(queries.shape()) +
                         " and " + shape_str(context.shape()));
  }
  ++attention_counters().cross_attention;
  return add(queries, attn_(norm_(queries), context, mask, probs));
}

template <typename T>
void CrossAttentionBlock<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
  norm_.collect(out, prefix + ".norm");
  attn_.collect(out, prefix + ".attn");
}

template <typename T>
FeedForwardBlock<T>::FeedForwardBlock(const AttentionBlockConfig& cfg, Rng& rng)
    : norm_(cfg.model_dim), ffn_(cfg.model_dim, cfg.ffn_dim, rng) {}

template <typename T>
void FeedForwardBlock<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
  norm_.collect(out, prefix + ".norm");
  ffn_.collect(out, prefix + ".ffn");
}

#define TEMPO_INSTANTIATE_ATTENTION(T)                                               \
  template Tensor<T> positional_encoding<T>(std::size_t, std::size_t);              \
  template Tensor<T> positional_encoding_at<T>(std::span<const double>, std::size_t); \
  template class MultiHeadAttention<T>;                                             \
  template class FeedForward<T>;                                                    \
  template class SelfAttentionBlock<T>;                                             \
  template class CrossAttentionBlock<T>;                                            \
  template class FeedForwardBlock<T>;

TEMPO_INSTANTIATE_ATTENTION(float)
TEMPO_INSTANTIATE_ATTENTION(double)

}  // namespace tempo
