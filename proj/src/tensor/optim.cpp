#include "tempo/optim.hpp"

#include <cmath>
#include <map>

namespace tempo {

template <typename T>
void adamw_update(std::span<T> param, std::span<const T> grad, AdamMoments<T>& state,
                  const AdamWOptions& options, long step) {
  if (grad.size() != param.size()) throw DimensionError("adamw_update: grad/param size mismatch");
  if (state.m.empty()) state.m.assign(param.size(), T(0));
  if (state.v.empty()) state.v.assign(param.size(), T(0));
  if (state.m.size() != param.size() || state.v.size() != param.size()) {
    throw DimensionError("adamw_update: optimizer state size mismatch");
  }
  const T b1 = static_cast<T>(options.beta1);
  const T b2 = static_cast<T>(options.beta2);
  const T lr = static_cast<T>(options.lr);
  const T wd = static_cast<T>(options.weight_decay);
  const T eps = static_cast<T>(options.eps);
  const T c1 = T(1) - static_cast<T>(std::pow(options.beta1, static_cast<double>(step)));
  const T c2 = T(1) - static_cast<T>(std::pow(options.beta2, static_cast<double>(step)));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const T mhat = state.m[i] / c1;
    const T vhat = state.v[i] / c2;
    param[i] -= lr * wd * param[i];
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <typename T>
double clip_grad_norm(ParameterList<T>& params, double max_norm) {
  double total = 0;
  for (const auto& p : params.items())
    for (T g : p.tensor.grad()) total += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(total);
  if (max_norm > 0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / (norm + 1e-12));
    for (const auto& p : params.items()) {
      auto t = p.tensor;
      if (!t.has_grad()) continue;
      for (auto& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

template <typename T>
void AdamW<T>::step(ParameterList<T>& params) {
  for (const auto& p : params.items()) {
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(g)) {
        throw TrainingDivergence("non-finite gradient in '" + p.name + "' at optimizer step " +
                                 std::to_string(steps_ + 1));
      }
    }
  }
  if (moments_.size() != params.size()) moments_.resize(params.size());
  ++steps_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto t = params.items()[i].tensor;
    if (!t.has_grad()) continue;
    auto& mom = moments_[i];
    adamw_update<T>(t.mutable_data(), t.grad(), mom, options_, ++mom.updates);
  }
}

template <typename T>
std::vector<NamedParameter<T>> AdamW<T>::state_tensors(const ParameterList<T>& params) const {
  std::vector<NamedParameter<T>> out;
  out.push_back({"optim.step", Tensor<T>::scalar(static_cast<T>(steps_))});
  for (std::size_t i = 0; i < moments_.size() && i < params.size(); ++i) {
    const auto& mom = moments_[i];
    if (mom.m.empty()) continue;
    const auto& p = params.items()[i];
    out.push_back({"optim.m/" + p.name, Tensor<T>(p.tensor.shape(), mom.m)});
    out.push_back({"optim.v/" + p.name, Tensor<T>(p.tensor.shape(), mom.v)});
    out.push_back({"optim.t/" + p.name, Tensor<T>::scalar(static_cast<T>(mom.updates))});
  }
  return out;
}

template <typename T>
void AdamW<T>::load_state(const ParameterList<T>& params,
                          const std::vector<NamedParameter<T>>& tensors) {
  std::map<std::string, const Tensor<T>*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.tensor;
  auto step_it = by_name.find("optim.step");
  if (step_it == by_name.end()) throw ValidationError("checkpoint has no optimizer state");
  steps_ = static_cast<long>(step_it->second->item());
  moments_.assign(params.size(), {});
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params.items()[i];
    auto m = by_name.find("optim.m/" + p.name);
    auto v = by_name.find("optim.v/" + p.name);
    auto t = by_name.find("optim.t/" + p.name);
    if (m == by_name.end() || v == by_name.end() || t == by_name.end()) continue;
    if (m->second->numel() != p.tensor.numel() || v->second->numel() != p.tensor.numel()) {
      throw DimensionError("optimizer state for '" + p.name + "' has the wrong size");
    }
    moments_[i].m.assign(m->second->data().begin(), m->second->data().end());
    moments_[i].v.assign(v->second->data().begin(), v->second->data().end());
    moments_[i].updates = static_cast<long>(t->second->item());
  }
}

#define TEMPO_INSTANTIATE_OPTIM(T)                                                               \
  template void adamw_update<T>(std::span<T>, std::span<const T>, AdamMoments<T>&,               \
                                const AdamWOptions&, long);                                      \
  template double clip_grad_norm<T>(ParameterList<T>&, double);                                  \
  template class AdamW<T>;

TEMPO_INSTANTIATE_OPTIM(float)
TEMPO_INSTANTIATE_OPTIM(double)

}  // namespace tempo
