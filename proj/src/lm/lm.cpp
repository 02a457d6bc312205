#include "tempo/lm.hpp"

#include <algorithm>

#include "tempo/tokenizer.hpp"

namespace tempo {

LMConfig LMConfig::preset(const std::string& name, std::size_t vocab_size) {
  LMConfig cfg;
  cfg.vocab_size = vocab_size;
  if (name == "small") return cfg;
  if (name == "large") {
    cfg.layers = 6;
    cfg.model_dim = 192;
    cfg.num_heads = 6;
    cfg.ffn_dim = 768;
    return cfg;
  }
  throw ValidationError("unknown LM preset '" + name + "' (expected small or large)");
}

void LMConfig::validate() const {
  if (layers == 0) throw ValidationError("LM needs at least one layer");
  if (vocab_size <= static_cast<std::size_t>(Tokenizer::kVis)) throw ValidationError("LM vocabulary too small");
  if (max_sequence_length == 0) throw ValidationError("max_sequence_length must be positive");
  AttentionBlockConfig{model_dim, num_heads, ffn_dim, true}.validate();
}

template <typename T>
ToyLM<T>::ToyLM(const LMConfig& cfg, Rng& rng, const std::optional<MoEConfig>& moe) : cfg_(cfg) {
  cfg_.validate();
  const AttentionBlockConfig block{cfg_.model_dim, cfg_.num_heads, cfg_.ffn_dim, true};
  embed_ = normal_tensor<T>({cfg_.vocab_size, cfg_.model_dim}, 1.0, rng);
  const bool use_moe = moe && moe->placement == MoEPlacement::llm;
  for (std::size_t i = 0; i < cfg_.layers; ++i) {
    attn_.emplace_back(block, rng);
    if (use_moe) {
      moe_.emplace_back(block, *moe, rng);
    } else {
      ffn_.emplace_back(block, rng);
    }
  }
  final_norm_ = LayerNorm<T>(cfg_.model_dim);
  head_ = Linear<T>(cfg_.model_dim, cfg_.vocab_size, rng);
}

template <typename T>
Tensor<T> ToyLM<T>::hidden(const Tensor<T>& visual, std::span<const int> ids) const {
  const std::size_t prefix = visual.defined() ? visual.dim(0) : 0;
  const std::size_t length = prefix + ids.size();
  if (length == 0) throw ValidationError("empty LM input");
  if (length > cfg_.max_sequence_length) {
    throw ValidationError("sequence of " + std::to_string(length) + " tokens exceeds max_sequence_length " +
                          std::to_string(cfg_.max_sequence_length));
  }
  if (visual.defined() && (visual.rank() != 2 || visual.dim(1) != cfg_.model_dim)) {
    throw DimensionError("visual prefix must be [Q'x" + std::to_string(cfg_.model_dim) + "], got " +
                         shape_str(visual.shape()));
  }
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) {
      throw ValidationError("token id " + std::to_string(id) + " outside the vocabulary");
    }
  }
  Tensor<T> x;
  if (prefix && !ids.empty()) {
    x = concat(std::vector<Tensor<T>>{visual, embedding(embed_, ids)}, 0);
  } else {
    x = prefix ? visual : embedding(embed_, ids);
  }
  x = add(x, positional_encoding<T>(length, cfg_.model_dim));
  for (std::size_t i = 0; i < cfg_.layers; ++i) {
    x = attn_[i](x);
    x = moe_.empty() ? ffn_[i](x) : moe_[i](x);
  }
  return final_norm_(x);
}

template <typename T>
Tensor<T> ToyLM<T>::logits(const Tensor<T>& visual, std::span<const int> ids) const {
  return head_(hidden(visual, ids));
}

template <typename T>
Tensor<T> ToyLM<T>::loss(const Tensor<T>& visual, std::span<const int> prompt, std::span<const int> target) const {
  std::vector<int> ids;
  ids.reserve(prompt.size() + target.size() + 1);
  ids.push_back(Tokenizer::kBos);
  ids.insert(ids.end(), prompt.begin(), prompt.end());
  ids.insert(ids.end(), target.begin(), target.end());
  std::vector<int> labels(target.begin(), target.end());
  labels.push_back(Tokenizer::kEos);

  const std::size_t prefix = visual.defined() ? visual.dim(0) : 0;
  auto h = hidden(visual, ids);
  // Row prefix + prompt.size() is BOS-or-last-prompt-token; it predicts target[0].
  auto rows = slice(h, 0, prefix + prompt.size(), labels.size());
  std::vector<std::uint8_t> mask(labels.size(), 1);
  return cross_entropy(head_(rows), labels, mask);
}

template <typename T>
std::vector<int> ToyLM<T>::generate(const Tensor<T>& visual, std::span<const int> prompt,
                                    std::size_t max_new) const {
  NoGradGuard guard;
  std::vector<int> ids;
  ids.push_back(Tokenizer::kBos);
  ids.insert(ids.end(), prompt.begin(), prompt.end());
  const std::size_t prefix = visual.defined() ? visual.dim(0) : 0;
  std::vector<int> out;
  while (out.size() < max_new && prefix + ids.size() <= cfg_.max_sequence_length) {
    auto h = hidden(visual, ids);
    auto last = head_(slice(h, 0, h.dim(0) - 1, 1));
    auto d = last.data();
    const int next = static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin());
    if (next == Tokenizer::kEos) break;
    out.push_back(next);
    ids.push_back(next);
  }
  return out;
}

template <typename T>
void ToyLM<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
  out.add(prefix + ".embed", embed_);
  for (std::size_t i = 0; i < cfg_.layers; ++i) {
    const auto p = prefix + ".layer" + std::to_string(i);
    attn_[i].collect(out, p + ".self");
    if (moe_.empty()) {
      ffn_[i].collect(out, p + ".ffn");
    } else {
      moe_[i].collect(out, p + ".moe");
    }
  }
  final_norm_.collect(out, prefix + ".final_norm");
  head_.collect(out, prefix + ".head");
}

template class ToyLM<float>;
template class ToyLM<double>;

}  // namespace tempo
