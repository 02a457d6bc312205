#pragma once

#include <span>
#include <vector>

#include "tempo/nn.hpp"

namespace tempo {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <typename T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;
  long updates = 0;  // per-parameter count, drives bias correction
};

// One decoupled-weight-decay Adam update of `param` in place. `step` is the
// 1-based update count used for bias correction.
template <typename T>
void adamw_update(std::span<T> param, std::span<const T> grad, AdamMoments<T>& state,
                  const AdamWOptions& options, long step);

// Global L2 norm over every gradient in `params`; rescales them when it
// exceeds `max_norm` (max_norm <= 0 disables clipping). Returns the pre-clip norm.
template <typename T>
double clip_grad_norm(ParameterList<T>& params, double max_norm);

template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : options_(options) {}

  // Updates every parameter carrying a gradient. Throws TrainingDivergence
  // before touching anything if a gradient is NaN or infinite.
  void step(ParameterList<T>& params);

  long steps() const { return steps_; }
  AdamWOptions& options() { return options_; }

  // Optimizer state as named tensors for checkpointing: "optim.step" plus
  // "optim.m/<param>", "optim.v/<param>" and "optim.t/<param>" for each
  // parameter with state.
  std::vector<NamedParameter<T>> state_tensors(const ParameterList<T>& params) const;
  void load_state(const ParameterList<T>& params, const std::vector<NamedParameter<T>>& tensors);

 private:
  AdamWOptions options_;
  long steps_ = 0;
  std::vector<AdamMoments<T>> moments_;  // parallel to the parameter list
};

}  // namespace tempo
