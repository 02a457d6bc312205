#pragma once

#include <random>
#include <string>
#include <vector>

#include "tempo/ops.hpp"
#include "tempo/tensor.hpp"

namespace tempo {

using Rng = std::mt19937_64;

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng, bool requires_grad = true);

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

// Ordered view of a model's trainable tensors. Entries share storage with
// the owning module.
template <typename T>
class ParameterList {
 public:
  void add(std::string name, Tensor<T> tensor) { items_.push_back({std::move(name), std::move(tensor)}); }
  void append(const ParameterList& other) {
    items_.insert(items_.end(), other.items_.begin(), other.items_.end());
  }
  const std::vector<NamedParameter<T>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;
  const Tensor<T>* find(const std::string& name) const;
  void zero_grad();

 private:
  std::vector<NamedParameter<T>> items_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true);

  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(ParameterList<T>& out, const std::string& prefix) const;

  std::size_t in_features() const { return weight_.dim(0); }
  std::size_t out_features() const { return weight_.dim(1); }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  const Tensor<T>& weight() const { return weight_; }
  const Tensor<T>& bias() const { return bias_; }

 private:
  Tensor<T> weight_;  // [in×out]
  Tensor<T> bias_;    // [out], undefined when disabled
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma_, beta_); }
  void collect(ParameterList<T>& out, const std::string& prefix) const;

 private:
  Tensor<T> gamma_;
  Tensor<T> beta_;
};

// Copies values between parameter lists with matching names and shapes.
// Returns the number of tensors copied.
template <typename T>
std::size_t copy_matching(const ParameterList<T>& from, const ParameterList<T>& to);

}  // namespace tempo
