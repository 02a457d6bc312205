#include "tempo/nn.hpp"

#include <algorithm>
#include <cmath>

namespace tempo {

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
std::size_t ParameterList<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.tensor.numel();
  return n;
}

template <typename T>
const Tensor<T>* ParameterList<T>::find(const std::string& name) const {
  for (const auto& p : items_)
    if (p.name == name) return &p.tensor;
  return nullptr;
}

template <typename T>
void ParameterList<T>::zero_grad() {
  for (auto& p : items_) p.tensor.zero_grad();
}

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng, bool bias)
    : weight_(normal_tensor<T>({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng)) {
  if (bias) bias_ = Tensor<T>::zeros({out}, true);
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  if (x.rank() != 2 || x.dim(1) != weight_.dim(0)) {
    throw DimensionError("linear layer expects [*x" + std::to_string(weight_.dim(0)) + "], got " +
                         shape_str(x.shape()));
  }
  auto y = matmul(x, weight_);
  return bias_.defined() ? add(y, bias_) : y;
}

template <typename T>
void Linear<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
  out.add(prefix + ".weight", weight_);
  if (bias_.defined()) out.add(prefix + ".bias", bias_);
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t dim)
    : gamma_(Tensor<T>::full({dim}, T(1), true)), beta_(Tensor<T>::zeros({dim}, true)) {}

template <typename T>
void LayerNorm<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
  out.add(prefix + ".gamma", gamma_);
  out.add(prefix + ".beta", beta_);
}

template <typename T>
std::size_t copy_matching(const ParameterList<T>& from, const ParameterList<T>& to) {
  std::size_t copied = 0;
  for (const auto& dst : to.items()) {
    const Tensor<T>* src = from.find(dst.name);
    if (!src || src->shape() != dst.tensor.shape()) continue;
    auto target = dst.tensor;
    std::copy(src->data().begin(), src->data().end(), target.mutable_data().begin());
    ++copied;
  }
  return copied;
}

#define TEMPO_INSTANTIATE_NN(T)                                                      \
  template Tensor<T> normal_tensor<T>(Shape, double, Rng&, bool);                   \
  template class ParameterList<T>;                                                  \
  template class Linear<T>;                                                         \
  template class LayerNorm<T>;                                                      \
  template std::size_t copy_matching(const ParameterList<T>&, const ParameterList<T>&);

TEMPO_INSTANTIATE_NN(float)
TEMPO_INSTANTIATE_NN(double)

}  // namespace tempo
