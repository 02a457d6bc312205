#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tempo/attention.hpp"
#include "tempo/memory_bank.hpp"
#include "tempo/moe.hpp"

namespace tempo {

enum class InterfaceVariant { linear, qformer_sa, qformer_nosa };
enum class Aggregation { none, mean_pool, adaptive_pool, esa };

std::string to_string(InterfaceVariant v);
std::string to_string(Aggregation a);
InterfaceVariant parse_interface_variant(const std::string& s);
Aggregation parse_aggregation(const std::string& s);

struct InterfaceConfig {
  InterfaceVariant variant = InterfaceVariant::qformer_sa;
  std::size_t submodules = 2;  // S, ignored by the linear variant
  // Required for qformer_nosa; linear optionally accepts mean_pool (temporal
  // average of the projected frame tokens); qformer_sa takes none.
  Aggregation aggregation = Aggregation::none;
  std::size_t num_query_tokens = 8;
  bool pretrained_init = false;
  std::optional<MoEConfig> moe;  // used when placement == qformer
  bool positional_encoding = true;
  std::size_t esa_depth = 1;
  std::size_t pretrain_steps = 600;

  std::size_t visual_dim = 32;
  std::size_t model_dim = 128;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 512;

  void validate() const;
  bool is_qformer() const { return variant != InterfaceVariant::linear; }
  AttentionBlockConfig block_config() const;
};

// One Q-Former submodule: cross-attention, optional self-attention over the
// queries, then a feed-forward or MoE block.
template <typename T>
struct QFormerLayer {
  CrossAttentionBlock<T> cross;
  std::optional<SelfAttentionBlock<T>> self;
  std::optional<FeedForwardBlock<T>> ffn;
  std::optional<MoEBlock<T>> moe;
};

template <typename T>
class QFormer {
 public:
  QFormer(const InterfaceConfig& cfg, Rng& rng);

  // context [L×d_v] -> [Q×d]. `positions` holds one frame position per
  // context row; empty means no positional encoding.
  Tensor<T> forward(const Tensor<T>& context, std::span<const double> positions) const;

  // Runs an independent copy of the query set per group in one pass: query
  // copy g only attends to context rows whose group is g. Returns [G×Q×d].
  // Only valid without self-attention.
  Tensor<T> forward_grouped(const Tensor<T>& context, std::span<const int> groups,
                            std::size_t num_groups) const;

  void collect(ParameterList<T>& out, const std::string& prefix) const;

  const Tensor<T>& queries() const { return queries_; }
  const std::vector<QFormerLayer<T>>& layers() const { return layers_; }
  std::vector<QFormerLayer<T>>& layers() { return layers_; }
  const Linear<T>& visual_projection() const { return visual_proj_; }
  const LayerNorm<T>& context_norm() const { return context_norm_; }

  // Applies the submodule stack to already-embedded queries and context.
  Tensor<T> run_layers(Tensor<T> queries, const Tensor<T>& context, const AttentionMask& mask) const;
  Tensor<T> embed_context(const Tensor<T>& context, std::span<const double> positions) const;

 private:
  InterfaceConfig cfg_;
  Linear<T> visual_proj_;
  LayerNorm<T> context_norm_;
  Tensor<T> queries_;  // [Q×d]
  std::vector<QFormerLayer<T>> layers_;
};

// Folds per-frame query states [F×Q×d] into [Q×d].
template <typename T>
class Aggregator {
 public:
  Aggregator(Aggregation mode, const InterfaceConfig& cfg, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& per_frame, std::span<const double> frame_positions) const;
  void collect(ParameterList<T>& out, const std::string& prefix) const;

  Aggregation mode() const { return mode_; }

 private:
  Aggregation mode_;
  bool positional_;
  Linear<T> gate_;                            // adaptive_pool
  std::vector<SelfAttentionBlock<T>> esa_;    // esa
};

template <typename T>
class VisionLanguageInterface {
 public:
  VisionLanguageInterface(const InterfaceConfig& cfg, Rng& rng);

  // frames [F×P×d_v]; frame_numbers carries each frame's 1-based index in
  // the source clip (used for positional encoding and bank spans). With a
  // bank, frames are ingested one at a time and the Q-Former reads the bank.
  Tensor<T> forward(const Tensor<T>& frames, std::span<const long> frame_numbers,
                    MemoryBank<T>* bank = nullptr) const;

  std::size_t output_tokens(std::size_t frames, std::size_t patches) const;
  void collect(ParameterList<T>& out, const std::string& prefix) const;

  const InterfaceConfig& config() const { return cfg_; }
  const QFormer<T>& qformer() const { return *qformer_; }
  QFormer<T>& qformer() { return *qformer_; }
  const Linear<T>& linear() const { return linear_; }
  const std::optional<Aggregator<T>>& aggregator() const { return aggregator_; }

 private:
  InterfaceConfig cfg_;
  Linear<T> linear_;
  std::optional<QFormer<T>> qformer_;
  std::optional<Aggregator<T>> aggregator_;
};

// Trains a throwaway text encoder made of the same self-attention and
// feed-forward blocks on masked-symbol prediction over a synthetic Markov
// language, then copies those blocks into the Q-Former. Stands in for
// initializing from a pretrained text encoder. Returns the mean aux loss over the last 25 steps.
template <typename T>
double pretrain_qformer_blocks(QFormer<T>& qformer, const InterfaceConfig& cfg, std::uint64_t seed);

}  // namespace tempo
