#include "tempo/interface.hpp"

#include <algorithm>

#include "tempo/optim.hpp"

namespace tempo {

std::string to_string(InterfaceVariant v) {
  switch (v) {
    case InterfaceVariant::linear: return "linear";
    case InterfaceVariant::qformer_sa: return "qformer_sa";
    default: return "qformer_nosa";
  }
}

std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::none: return "none";
    case Aggregation::mean_pool: return "mean_pool";
    case Aggregation::adaptive_pool: return "adaptive_pool";
    default: return "esa";
  }
}

InterfaceVariant parse_interface_variant(const std::string& s) {
  if (s == "linear") return InterfaceVariant::linear;
  if (s == "qformer_sa") return InterfaceVariant::qformer_sa;
  if (s == "qformer_nosa") return InterfaceVariant::qformer_nosa;
  throw ValidationError("unknown interface variant '" + s + "'");
}

Aggregation parse_aggregation(const std::string& s) {
  if (s == "none" || s.empty()) return Aggregation::none;
  if (s == "mean_pool") return Aggregation::mean_pool;
  if (s == "adaptive_pool") return Aggregation::adaptive_pool;
  if (s == "esa") return Aggregation::esa;
  throw ValidationError("unknown aggregation '" + s + "'");
}

void InterfaceConfig::validate() const {
  block_config().validate();
  if (visual_dim == 0) throw ValidationError("visual_dim must be positive");
  switch (variant) {
    case InterfaceVariant::linear:
      if (aggregation != Aggregation::none && aggregation != Aggregation::mean_pool) {
        throw ValidationError("the linear interface only supports mean_pool aggregation");
      }
      if (moe && moe->placement == MoEPlacement::qformer) {
        throw ValidationError("Q-Former MoE placement needs a Q-Former interface");
      }
      return;
    case InterfaceVariant::qformer_sa:
      if (aggregation != Aggregation::none) {
        throw ValidationError("qformer_sa models time internally and takes no aggregation head");
      }
      break;
    case InterfaceVariant::qformer_nosa:
      if (aggregation == Aggregation::none) {
        throw ValidationError("qformer_nosa needs an aggregation head (mean_pool, adaptive_pool, esa)");
      }
      break;
  }
  if (submodules < 1 || submodules > 12) {
    throw ValidationError("submodule count S=" + std::to_string(submodules) + " outside [1, 12]");
  }
  if (num_query_tokens == 0) throw ValidationError("num_query_tokens must be positive");
  if (aggregation == Aggregation::esa && esa_depth == 0) throw ValidationError("esa_depth must be positive");
  if (moe) moe->validate();
}

AttentionBlockConfig InterfaceConfig::block_config() const {
  return AttentionBlockConfig{model_dim, num_heads, ffn_dim, false};
}

template <typename T>
QFormer<T>::QFormer(const InterfaceConfig& cfg, Rng& rng)
    : cfg_(cfg),
      visual_proj_(cfg.visual_dim, cfg.model_dim, rng),
      context_norm_(cfg.model_dim),
      queries_(normal_tensor<T>({cfg.num_query_tokens, cfg.model_dim}, 0.1, rng)) {
  const auto block = cfg.block_config();
  const bool use_moe = cfg.moe && cfg.moe->placement == MoEPlacement::qformer;
  for (std::size_t i = 0; i < cfg.submodules; ++i) {
    QFormerLayer<T> layer;
    layer.cross = CrossAttentionBlock<T>(block, rng);
    if (cfg.variant == InterfaceVariant::qformer_sa) layer.self.emplace(block, rng);
    if (use_moe) {
      layer.moe.emplace(block, *cfg.moe, rng);
    } else {
      layer.ffn.emplace(block, rng);
    }
    layers_.push_back(std::move(layer));
  }
}

template <typename T>
Tensor<T> QFormer<T>::embed_context(const Tensor<T>& context, std::span<const double> positions) const {
  auto h = visual_proj_(context);
  if (!positions.empty()) {
    if (positions.size() != context.dim(0)) {
      throw DimensionError("need one position per context row: " + std::to_string(positions.size()) +
                           " for " + shape_str(context.shape()));
    }
    h = add(h, positional_encoding_at<T>(positions, cfg_.model_dim));
  }
  return context_norm_(h);
}

template <typename T>
Tensor<T> QFormer<T>::run_layers(Tensor<T> q, const Tensor<T>& context, const AttentionMask& mask) const {
  for (const auto& layer : layers_) {
    q = layer.cross(q, context, mask);
    if (layer.self) q = (*layer.self)(q);
    q = layer.ffn ? (*layer.ffn)(q) : (*layer.moe)(q);
  }
  return q;
}

template <typename T>
Tensor<T> QFormer<T>::forward(const Tensor<T>& context, std::span<const double> positions) const {
  if (context.rank() != 2 || context.dim(1) != cfg_.visual_dim) {
    throw DimensionError("Q-Former context must be [Lx" + std::to_string(cfg_.visual_dim) +
                         "], got " + shape_str(context.shape()));
  }
  return run_layers(queries_, embed_context(context, positions), {});
}

template <typename T>
Tensor<T> QFormer<T>::forward_grouped(const Tensor<T>& context, std::span<const int> groups,
                                      std::size_t num_groups) const {
  if (cfg_.variant == InterfaceVariant::qformer_sa) {
    throw ValidationError("grouped Q-Former evaluation needs a Q-Former without self-attention");
  }
  if (context.rank() != 2 || context.dim(1) != cfg_.visual_dim || groups.size() != context.dim(0)) {
    throw DimensionError("grouped Q-Former context/group mismatch for " + shape_str(context.shape()));
  }
  const std::size_t q = cfg_.num_query_tokens;
  AttentionMask mask;
  mask.key_groups.assign(groups.begin(), groups.end());
  for (std::size_t g = 0; g < num_groups; ++g)
    for (std::size_t i = 0; i < q; ++i) mask.query_groups.push_back(static_cast<int>(g));
  auto tiled = num_groups == 1 ? queries_ : concat(std::vector<Tensor<T>>(num_groups, queries_), 0);
  auto out = run_layers(tiled, embed_context(context, {}), mask);
  return reshape(out, {num_groups, q, cfg_.model_dim});
}

template <typename T>
void QFormer<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
  visual_proj_.collect(out, prefix + ".visual_proj");
  context_norm_.collect(out, prefix + ".context_norm");
  out.add(prefix + ".queries", queries_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto p = prefix + ".layer" + std::to_string(i);
    layers_[i].cross.collect(out, p + ".cross");
    if (layers_[i].self) layers_[i].self->collect(out, p + ".self");
    if (layers_[i].ffn) layers_[i].ffn->collect(out, p + ".ffn");
    if (layers_[i].moe) layers_[i].moe->collect(out, p + ".moe");
  }
}

template <typename T>
Aggregator<T>::Aggregator(Aggregation mode, const InterfaceConfig& cfg, Rng& rng)
    : mode_(mode), positional_(cfg.positional_encoding) {
  if (mode == Aggregation::adaptive_pool) gate_ = Linear<T>(cfg.model_dim, 1, rng);
  if (mode == Aggregation::esa) {
    for (std::size_t i = 0; i < cfg.esa_depth; ++i) esa_.emplace_back(cfg.block_config(), rng);
  }
}

template <typename T>
Tensor<T> Aggregator<T>::operator()(const Tensor<T>& per_frame,
                                    std::span<const double> frame_positions) const {
  if (per_frame.rank() != 3) {
    throw DimensionError("aggregation expects [F×Q×d], got " + shape_str(per_frame.shape()));
  }
  const std::size_t f = per_frame.dim(0), q = per_frame.dim(1), d = per_frame.dim(2);
  switch (mode_) {
    case Aggregation::mean_pool:
      return mean(per_frame, 0);
    case Aggregation::adaptive_pool: {
      auto scores = mean(reshape(gate_(reshape(per_frame, {f * q, d})), {f, q}), 1);
      auto alpha = softmax(reshape(scores, {f, 1, 1}), 0);
      return scale(mean(mul(per_frame, alpha), 0), static_cast<T>(f));
    }
    case Aggregation::esa: {
      auto flat = reshape(per_frame, {f * q, d});
      if (positional_) {
        if (frame_positions.size() != f) throw DimensionError("ESA needs one position per frame");
        std::vector<double> pos;
        for (double p : frame_positions) pos.insert(pos.end(), q, p);
        flat = add(flat, positional_encoding_at<T>(pos, d));
      }
      for (const auto& block : esa_) flat = block(flat);
      return mean(reshape(flat, {f, q, d}), 0);
    }
    default:
      throw ValidationError("invalid aggregation mode");
  }
}

template <typename T>
void Aggregator<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
  if (mode_ == Aggregation::adaptive_pool) gate_.collect(out, prefix + ".gate");
  for (std::size_t i = 0; i < esa_.size(); ++i) esa_[i].collect(out, prefix + ".esa" + std::to_string(i));
}

template <typename T>
VisionLanguageInterface<T>::VisionLanguageInterface(const InterfaceConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.variant == InterfaceVariant::linear) {
    linear_ = Linear<T>(cfg_.visual_dim, cfg_.model_dim, rng);
    return;
  }
  qformer_.emplace(cfg_, rng);
  if (cfg_.variant == InterfaceVariant::qformer_nosa) aggregator_.emplace(cfg_.aggregation, cfg_, rng);
  if (cfg_.pretrained_init) pretrain_qformer_blocks(*qformer_, cfg_, rng());
}

template <typename T>
Tensor<T> VisionLanguageInterface<T>::forward(const Tensor<T>& frames,
                                              std::span<const long> frame_numbers,
                                              MemoryBank<T>* bank) const {
  if (frames.rank() != 3 || frames.dim(2) != cfg_.visual_dim) {
    throw DimensionError("interface expects frames [FxPx" + std::to_string(cfg_.visual_dim) +
                         "], got " + shape_str(frames.shape()));
  }
  const std::size_t f = frames.dim(0), p = frames.dim(1), dv = frames.dim(2);
  if (frame_numbers.size() != f) throw DimensionError("need one frame number per frame");

  if (cfg_.variant == InterfaceVariant::linear) {
    if (bank) throw ValidationError("a memory bank cannot be combined with the linear interface");
    auto tokens = linear_(reshape(frames, {f * p, dv}));
    if (cfg_.aggregation == Aggregation::mean_pool) return mean(reshape(tokens, {f, p, cfg_.model_dim}), 0);
    return tokens;
  }

  Tensor<T> context;
  std::vector<double> token_positions, unit_positions;
  std::vector<int> groups;
  if (bank) {
    for (std::size_t i = 0; i < f; ++i) bank->ingest(reshape(slice(frames, 0, i, 1), {p, dv}), frame_numbers[i]);
    auto readout = bank->read();
    context = readout.context;
    token_positions = std::move(readout.token_positions);
    unit_positions = std::move(readout.entry_positions);
    for (std::size_t e = 0; e < unit_positions.size(); ++e) groups.insert(groups.end(), p, static_cast<int>(e));
  } else {
    context = reshape(frames, {f * p, dv});
    for (std::size_t i = 0; i < f; ++i) {
      const double pos = static_cast<double>(frame_numbers[i]);
      unit_positions.push_back(pos);
      token_positions.insert(token_positions.end(), p, pos);
      groups.insert(groups.end(), p, static_cast<int>(i));
    }
  }

  if (cfg_.variant == InterfaceVariant::qformer_sa) {
    if (!cfg_.positional_encoding) token_positions.clear();
    return qformer_->forward(context, token_positions);
  }
  auto per_unit = qformer_->forward_grouped(context, groups, unit_positions.size());
  return (*aggregator_)(per_unit, unit_positions);
}

template <typename T>
std::size_t VisionLanguageInterface<T>::output_tokens(std::size_t frames, std::size_t patches) const {
  if (cfg_.variant != InterfaceVariant::linear) return cfg_.num_query_tokens;
  return cfg_.aggregation == Aggregation::mean_pool ? patches : frames * patches;
}

template <typename T>
void VisionLanguageInterface<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
  if (cfg_.variant == InterfaceVariant::linear) {
    linear_.collect(out, prefix + ".linear");
    return;
  }
  qformer_->collect(out, prefix + ".qformer");
  if (aggregator_) aggregator_->collect(out, prefix + ".aggregate");
}

template <typename T>
double pretrain_qformer_blocks(QFormer<T>& qformer, const InterfaceConfig& cfg, std::uint64_t seed) {
  constexpr std::size_t kSymbols = 24;
  constexpr std::size_t kLength = 16;
  constexpr std::size_t kBatch = 8;
  constexpr int kMask = static_cast<int>(kSymbols);
  Rng rng(seed);
  const auto block = cfg.block_config();
  const std::size_t d = cfg.model_dim;

  // Sparse Markov chain: every symbol has three preferred successors.
  std::vector<std::array<int, 3>> successors(kSymbols);
  std::uniform_int_distribution<int> pick_symbol(0, kSymbols - 1);
  for (auto& s : successors)
    for (auto& n : s) n = pick_symbol(rng);

  auto embed = normal_tensor<T>({kSymbols + 1, d}, 1.0, rng);
  std::vector<SelfAttentionBlock<T>> self_blocks;
  std::vector<FeedForwardBlock<T>> ffn_blocks;
  for (std::size_t i = 0; i < cfg.submodules; ++i) {
    self_blocks.emplace_back(block, rng);
    ffn_blocks.emplace_back(block, rng);
  }
  LayerNorm<T> final_norm(d);
  Linear<T> head(d, kSymbols, rng);

  ParameterList<T> params;
  params.add("embed", embed);
  for (std::size_t i = 0; i < cfg.submodules; ++i) {
    const auto p = "layer" + std::to_string(i);
    self_blocks[i].collect(params, p + ".self");
    ffn_blocks[i].collect(params, p + ".ffn");
  }
  final_norm.collect(params, "final_norm");
  head.collect(params, "head");

  AdamW<T> opt(AdamWOptions{1e-3, 0.9, 0.999, 1e-8, 0.0});
  const auto pe = positional_encoding<T>(kLength, d);
  std::uniform_int_distribution<int> pick_next(0, 2);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  // Mean loss over the final steps; a single sequence is too noisy to report.
  const std::size_t tail = std::min<std::size_t>(cfg.pretrain_steps, 25);
  double tail_loss = 0;
  for (std::size_t step = 0; step < cfg.pretrain_steps; ++step) {
    Tensor<T> loss;
    for (std::size_t b = 0; b < kBatch; ++b) {
      std::vector<int> tokens(kLength), inputs(kLength);
      std::vector<std::uint8_t> masked(kLength, 0);
      tokens[0] = pick_symbol(rng);
      for (std::size_t t = 1; t < kLength; ++t) tokens[t] = successors[tokens[t - 1]][pick_next(rng)];
      for (std::size_t t = 0; t < kLength; ++t) masked[t] = coin(rng) < 0.2 ? 1 : 0;
      masked[std::uniform_int_distribution<std::size_t>(1, kLength - 1)(rng)] = 1;
      for (std::size_t t = 0; t < kLength; ++t) inputs[t] = masked[t] ? kMask : tokens[t];

      auto h = add(embedding(embed, inputs), pe);
      for (std::size_t i = 0; i < cfg.submodules; ++i) h = ffn_blocks[i](self_blocks[i](h));
      auto l = scale(cross_entropy(head(final_norm(h)), tokens, masked), T(1) / T(kBatch));
      loss = b == 0 ? l : add(loss, l);
    }
    if (step + tail >= cfg.pretrain_steps) tail_loss += static_cast<double>(loss.item());
    backward(loss);
    opt.step(params);
    params.zero_grad();
  }

  ParameterList<T> target;
  for (std::size_t i = 0; i < qformer.layers().size(); ++i) {
    const auto p = "layer" + std::to_string(i);
    const auto& layer = qformer.layers()[i];
    if (layer.self) layer.self->collect(target, p + ".self");
    if (layer.ffn) layer.ffn->collect(target, p + ".ffn");
  }
  copy_matching(params, target);
  return tail > 0 ? tail_loss / static_cast<double>(tail) : 0.0;
}

template class QFormer<float>;
template class QFormer<double>;
template class Aggregator<float>;
template class Aggregator<double>;
template class VisionLanguageInterface<float>;
template class VisionLanguageInterface<double>;
template double pretrain_qformer_blocks(QFormer<float>&, const InterfaceConfig&, std::uint64_t);
template double pretrain_qformer_blocks(QFormer<double>&, const InterfaceConfig&, std::uint64_t);

}  // namespace tempo
