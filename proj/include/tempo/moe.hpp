#pragma once

#include <span>
#include <string>
#include <vector>

#include "tempo/attention.hpp"

namespace tempo {

enum class MoEMode { dense, sparse };
enum class MoEPlacement { qformer, llm };

struct MoEConfig {
  std::size_t num_experts = 4;
  MoEMode mode = MoEMode::sparse;
  std::size_t top_k = 1;  // sparse only
  MoEPlacement placement = MoEPlacement::qformer;

  void validate() const;
};

std::string to_string(MoEMode mode);
std::string to_string(MoEPlacement placement);
MoEMode parse_moe_mode(const std::string& s);
MoEPlacement parse_moe_placement(const std::string& s);

struct RouterDecision {
  std::vector<double> probabilities;  // full softmax over all experts
  std::vector<std::size_t> selected;  // ascending expert index
  std::vector<double> weights;        // parallel to `selected`, sums to 1
};

// Selection and combine weights from raw router logits. Sparse mode keeps
// the top_k largest logits (ties go to the lower index) and renormalizes
// the softmax over them.
RouterDecision route_logits(std::span<const double> logits, const MoEConfig& cfg);

std::vector<std::uint8_t> selection_mask(std::span<const double> logits, const MoEConfig& cfg);

struct LoadStats {
  std::vector<double> assignment_fraction;  // selections per token, per expert
  std::vector<double> mean_probability;
  std::size_t tokens = 0;
};

LoadStats load_stats(std::span<const RouterDecision> decisions, std::size_t num_experts);

template <typename T>
class MixtureOfExperts {
 public:
  MixtureOfExperts() = default;
  MixtureOfExperts(std::size_t dim, std::size_t hidden, const MoEConfig& cfg, Rng& rng);

  // tokens [N×d] -> [N×d]; only selected experts run on each token.
  Tensor<T> operator()(const Tensor<T>& tokens) const;

  RouterDecision route(const Tensor<T>& token) const;

  void collect(ParameterList<T>& out, const std::string& prefix) const;

  const MoEConfig& config() const { return cfg_; }
  const FeedForward<T>& expert(std::size_t i) const { return experts_.at(i); }
  const Linear<T>& router() const { return router_; }

  // Token-expert evaluations since construction or the last reset.
  std::size_t expert_invocations() const { return invocations_; }
  void reset_invocations() const { invocations_ = 0; }

  // When enabled, every forward appends its per-token decisions.
  void record_decisions(bool on) const { record_ = on; }
  const std::vector<RouterDecision>& decisions() const { return decisions_; }
  void clear_decisions() const { decisions_.clear(); }

 private:
  MoEConfig cfg_;
  Linear<T> router_;
  std::vector<FeedForward<T>> experts_;
  mutable std::size_t invocations_ = 0;
  mutable bool record_ = false;
  mutable std::vector<RouterDecision> decisions_;
};

// Pre-norm residual wrapper: x + MoE(LN(x)). Drop-in for FeedForwardBlock.
template <typename T>
class MoEBlock {
 public:
  MoEBlock() = default;
  MoEBlock(const AttentionBlockConfig& block, const MoEConfig& cfg, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const { return add(x, moe_(norm_(x))); }
  void collect(ParameterList<T>& out, const std::string& prefix) const;

  const MixtureOfExperts<T>& moe() const { return moe_; }

 private:
  LayerNorm<T> norm_;
  MixtureOfExperts<T> moe_;
};

}  // namespace tempo
