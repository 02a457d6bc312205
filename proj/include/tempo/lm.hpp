#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tempo/attention.hpp"
#include "tempo/moe.hpp"

namespace tempo {

struct LMConfig {
  std::size_t layers = 4;
  std::size_t model_dim = 128;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 512;
  std::size_t max_sequence_length = 192;
  std::size_t vocab_size = 0;

  // "small" (4×128) or "large" (6×192).
  static LMConfig preset(const std::string& name, std::size_t vocab_size);
  void validate() const;
};

// Decoder-only LM. The visual prefix occupies the first Q' positions (the
// reserved VIS slots) and is spliced in as embeddings; text tokens follow.
template <typename T>
class ToyLM {
 public:
  ToyLM(const LMConfig& cfg, Rng& rng, const std::optional<MoEConfig>& moe = std::nullopt);

  // visual [Q'×d] (or undefined for no prefix) followed by ids -> logits
  // [(Q'+n)×V]. Throws ValidationError when the sequence is too long.
  Tensor<T> logits(const Tensor<T>& visual, std::span<const int> ids) const;

  // Mean cross-entropy over the target tokens and the closing EOS. The
  // sequence is [VIS×Q'] BOS prompt target EOS.
  Tensor<T> loss(const Tensor<T>& visual, std::span<const int> prompt, std::span<const int> target) const;

  // Greedy decoding after [VIS×Q'] BOS prompt; stops at EOS (not returned)
  // or after max_new tokens.
  std::vector<int> generate(const Tensor<T>& visual, std::span<const int> prompt, std::size_t max_new) const;

  void collect(ParameterList<T>& out, const std::string& prefix) const;
  const LMConfig& config() const { return cfg_; }
  const Tensor<T>& token_embedding() const { return embed_; }
  bool uses_moe() const { return !moe_.empty(); }
  const std::vector<MoEBlock<T>>& moe_blocks() const { return moe_; }

 private:
  Tensor<T> hidden(const Tensor<T>& visual, std::span<const int> ids) const;

  LMConfig cfg_;
  Tensor<T> embed_;  // [V×d]
  std::vector<SelfAttentionBlock<T>> attn_;
  std::vector<FeedForwardBlock<T>> ffn_;
  std::vector<MoEBlock<T>> moe_;
  LayerNorm<T> final_norm_;
  Linear<T> head_;
};

}  // namespace tempo
