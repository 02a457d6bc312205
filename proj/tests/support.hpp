#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "tempo/nn.hpp"

namespace tempo::testing {

// ||a - b|| / max(||a||, ||b||, floor). The floor turns the comparison
// absolute for gradients that are zero in exact arithmetic (a key bias
// shifts every score of a row equally, so its true gradient is 0 and both
// estimates are rounding noise).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-3) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(std::max(na, nb)), floor);
}

struct GradCheck {
  double worst = 0;        // max relative error over inputs
  std::size_t checked = 0; // coordinates compared
};

// Compares backward() against central differences for every tensor in
// `inputs`. Large tensors are probed at `max_coords` random coordinates.
inline GradCheck check_gradients(const std::function<Tensor<double>()>& loss_fn,
                                 std::vector<Tensor<double>> inputs, std::uint64_t seed = 0,
                                 std::size_t max_coords = 24, double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  backward(loss_fn());
  std::mt19937_64 rng(seed);
  GradCheck out;
  for (auto& t : inputs) {
    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    std::vector<double> analytic, numeric;
    auto data = t.mutable_data();
    for (auto i : coords) {
      analytic.push_back(t.has_grad() ? t.grad()[i] : 0.0);
      const double keep = data[i];
      NoGradGuard guard;
      data[i] = keep + h;
      const double up = loss_fn().item();
      data[i] = keep - h;
      const double down = loss_fn().item();
      data[i] = keep;
      numeric.push_back((up - down) / (2 * h));
    }
    out.worst = std::max(out.worst, relative_error(analytic, numeric));
    out.checked += coords.size();
  }
  return out;
}

inline std::vector<Tensor<double>> tensors_of(const ParameterList<double>& params) {
  std::vector<Tensor<double>> out;
  for (const auto& p : params.items()) out.push_back(p.tensor);
  return out;
}

// sum(x ⊙ w) for a fixed random w, so every output element gets a distinct weight.
inline Tensor<double> probe(const Tensor<double>& x, std::uint64_t seed) {
  Rng rng(seed ^ 0x9b05688c2b3e6c1fULL);
  return sum(mul(x, normal_tensor<double>(x.shape(), 1.0, rng, false)));
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = true) {
  return normal_tensor<double>(std::move(shape), stddev, rng, requires_grad);
}

}  // namespace tempo::testing
