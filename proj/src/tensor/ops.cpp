#include "tempo/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace tempo {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
NodePtr<T> make_output(Shape shape, std::vector<T> data, const char* op,
                       std::initializer_list<const Tensor<T>*> inputs) {
  auto out = std::make_shared<Node<T>>();
  out->shape = std::move(shape);
  out->data = std::move(data);
  out->op = op;
  if (grad_enabled()) {
    for (const Tensor<T>* in : inputs) {
      if (in->requires_grad()) out->requires_grad = true;
    }
  }
  if (out->requires_grad) {
    out->leaf = false;
    for (const Tensor<T>* in : inputs) out->parents.push_back(in->node());
  }
  return out;
}

template <typename T>
NodePtr<T> make_output(Shape shape, std::vector<T> data, const char* op,
                       const std::vector<Tensor<T>>& inputs) {
  auto out = std::make_shared<Node<T>>();
  out->shape = std::move(shape);
  out->data = std::move(data);
  out->op = op;
  if (grad_enabled()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) out->requires_grad = true;
    }
  }
  if (out->requires_grad) {
    out->leaf = false;
    for (const auto& in : inputs) out->parents.push_back(in.node());
  }
  return out;
}

void require_matrix(const Shape& s, const char* op) {
  if (s.size() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(s));
}

// Splits `shape` around `axis` into (outer, length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  int r = static_cast<int>(rank);
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

template <typename T, std::size_t R, std::size_t W, bool Full>
void gemm_tile(std::size_t rows, std::size_t cols, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  if constexpr (Full) {
    rows = R;
    cols = W;
  }
  // Accumulators stay in registers for full tiles; each C element still sums
  // over p in order, so results match the plain triple loop bit for bit.
  T acc[R][W] = {};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) acc[r][j] = c[r * n + j];
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n;
    for (std::size_t r = 0; r < rows; ++r) {
      const T av = a[r * k + p];
      for (std::size_t j = 0; j < cols; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) c[r * n + j] = acc[r][j];
}

// C[m×n] += A[m×k] · B[k×n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  constexpr std::size_t R = 4, W = 128 / sizeof(T);
  for (std::size_t i = 0; i < m; i += R) {
    const std::size_t rows = std::min(R, m - i);
    for (std::size_t j = 0; j < n; j += W) {
      const std::size_t cols = std::min(W, n - j);
      if (rows == R && cols == W) {
        gemm_tile<T, R, W, true>(R, W, n, k, a + i * k, b + j, c + i * n + j);
      } else {
        gemm_tile<T, R, W, false>(rows, cols, n, k, a + i * k, b + j, c + i * n + j);
      }
    }
  }
}

template <typename T>
std::vector<T> transposed(const T* x, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = x[i * cols + j];
  return out;
}

struct Broadcast {
  Shape out;
  bool same = false;
  std::vector<std::size_t> a_index, b_index;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
  Broadcast plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));
  plan.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    plan.out[i] = std::max(pa[i], pb[i]);
  }
  std::size_t n = shape_numel(plan.out);
  plan.a_index.resize(n);
  plan.b_index.resize(n);
  std::vector<std::size_t> sa(rank), sb(rank);
  std::size_t acc_a = 1, acc_b = 1;
  for (std::size_t i = rank; i-- > 0;) {
    sa[i] = pa[i] == 1 ? 0 : acc_a;
    sb[i] = pb[i] == 1 ? 0 : acc_b;
    acc_a *= pa[i];
    acc_b *= pb[i];
  }
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      ia += idx[d] * sa[d];
      ib += idx[d] * sb[d];
    }
    plan.a_index[flat] = ia;
    plan.b_index[flat] = ib;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < plan.out[d]) break;
      idx[d] = 0;
    }
  }
  return plan;
}

enum class BinaryKind { add, sub, mul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind) {
  auto plan = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape()));
  std::size_t n = shape_numel(plan->out);
  std::vector<T> out(n);
  auto ad = a.data();
  auto bd = b.data();
  auto op = [kind](T x, T y) {
    switch (kind) {
      case BinaryKind::add: return x + y;
      case BinaryKind::sub: return x - y;
      default: return x * y;
    }
  };
  if (plan->same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = op(ad[i], bd[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = op(ad[plan->a_index[i]], bd[plan->b_index[i]]);
  }
  const char* name = kind == BinaryKind::add ? "add" : kind == BinaryKind::sub ? "sub" : "mul";
  auto node = make_output<T>(plan->out, std::move(out), name, {&a, &b});
  if (node->requires_grad) {
    node->backward_fn = [plan, kind](Node<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      const auto& g = self.grad;
      std::size_t n = g.size();
      auto ai = [&](std::size_t i) { return plan->same ? i : plan->a_index[i]; };
      auto bi = [&](std::size_t i) { return plan->same ? i : plan->b_index[i]; };
      if (pa.requires_grad) {
        auto& ga = pa.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          T d = kind == BinaryKind::mul ? g[i] * pb.data[bi(i)] : g[i];
          ga[ai(i)] += d;
        }
      }
      if (pb.requires_grad) {
        auto& gb = pb.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          T d = kind == BinaryKind::mul   ? g[i] * pa.data[ai(i)]
                : kind == BinaryKind::sub ? -g[i]
                                          : g[i];
          gb[bi(i)] += d;
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

}  // namespace

bool AttentionMask::allows(std::size_t query, std::size_t key) const {
  if (causal && key > query) return false;
  if (!query_groups.empty() && !key_groups.empty() && query_groups[query] != key_groups[key]) {
    return false;
  }
  return true;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a.shape(), "matmul");
  require_matrix(b.shape(), "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<T> out(m * n, T(0));
  gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  auto node = make_output<T>({m, n}, std::move(out), "matmul", {&a, &b});
  if (node->requires_grad) {
    node->backward_fn = [m, n, k](Node<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) {
        auto bt = transposed(pb.data.data(), k, n);
        gemm_nn(m, k, n, self.grad.data(), bt.data(), pa.ensure_grad().data());
      }
      if (pb.requires_grad) {
        auto at = transposed(pa.data.data(), m, k);
        gemm_nn(k, n, m, at.data(), self.grad.data(), pb.ensure_grad().data());
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::add);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::sub);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::mul);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  auto node = make_output<T>(x.shape(), std::move(out), "scale", {&x});
  if (node->requires_grad) {
    node->backward_fn = [factor](Node<T>& self) {
      auto& gx = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * factor;
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  auto node = make_output<T>({1}, {total}, "sum", {&x});
  if (node->requires_grad) {
    node->backward_fn = [](Node<T>& self) {
      auto& gx = self.parents[0]->ensure_grad();
      for (auto& g : gx) g += self.grad[0];
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("mean axis out of range for " + shape_str(x.shape()));
  auto split = split_axis(x.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.dim(i));
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<T> out(split.outer * split.inner, T(0));
  auto xd = x.data();
  const T inv = T(1) / static_cast<T>(split.length);
  for (std::size_t o = 0; o < split.outer; ++o) {
    T* dst = out.data() + o * split.inner;
    for (std::size_t l = 0; l < split.length; ++l) {
      const T* src = xd.data() + (o * split.length + l) * split.inner;
      for (std::size_t i = 0; i < split.inner; ++i) dst[i] += src[i];
    }
    for (std::size_t i = 0; i < split.inner; ++i) dst[i] *= inv;
  }
  auto node = make_output<T>(out_shape, std::move(out), "mean", {&x});
  if (node->requires_grad) {
    node->backward_fn = [split, inv](Node<T>& self) {
      auto& gx = self.parents[0]->ensure_grad();
      for (std::size_t o = 0; o < split.outer; ++o)
        for (std::size_t l = 0; l < split.length; ++l)
          for (std::size_t i = 0; i < split.inner; ++i)
            gx[(o * split.length + l) * split.inner + i] += self.grad[o * split.inner + i] * inv;
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  auto split = split_axis(x.shape(), normalize_axis(axis, x.rank()));
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t i = 0; i < split.inner; ++i) {
      auto at = [&](std::size_t l) { return (o * split.length + l) * split.inner + i; };
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < split.length; ++l) mx = std::max(mx, xd[at(l)]);
      T total = 0;
      for (std::size_t l = 0; l < split.length; ++l) {
        out[at(l)] = std::exp(xd[at(l)] - mx);
        total += out[at(l)];
      }
      for (std::size_t l = 0; l < split.length; ++l) out[at(l)] /= total;
    }
  }
  auto node = make_output<T>(x.shape(), std::move(out), "softmax", {&x});
  if (node->requires_grad) {
    node->backward_fn = [split](Node<T>& self) {
      auto& gx = self.parents[0]->ensure_grad();
      const auto& y = self.data;
      const auto& g = self.grad;
      for (std::size_t o = 0; o < split.outer; ++o) {
        for (std::size_t i = 0; i < split.inner; ++i) {
          auto at = [&](std::size_t l) { return (o * split.length + l) * split.inner + i; };
          T dot = 0;
          for (std::size_t l = 0; l < split.length; ++l) dot += g[at(l)] * y[at(l)];
          for (std::size_t l = 0; l < split.length; ++l) gx[at(l)] += y[at(l)] * (g[at(l)] - dot);
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis) {
  auto split = split_axis(x.shape(), normalize_axis(axis, x.rank()));
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t i = 0; i < split.inner; ++i) {
      auto at = [&](std::size_t l) { return (o * split.length + l) * split.inner + i; };
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < split.length; ++l) mx = std::max(mx, xd[at(l)]);
      T total = 0;
      for (std::size_t l = 0; l < split.length; ++l) total += std::exp(xd[at(l)] - mx);
      T lse = mx + std::log(total);
      for (std::size_t l = 0; l < split.length; ++l) out[at(l)] = xd[at(l)] - lse;
    }
  }
  auto node = make_output<T>(x.shape(), std::move(out), "log_softmax", {&x});
  if (node->requires_grad) {
    node->backward_fn = [split](Node<T>& self) {
      auto& gx = self.parents[0]->ensure_grad();
      const auto& y = self.data;
      const auto& g = self.grad;
      for (std::size_t o = 0; o < split.outer; ++o) {
        for (std::size_t i = 0; i < split.inner; ++i) {
          auto at = [&](std::size_t l) { return (o * split.length + l) * split.inner + i; };
          T gsum = 0;
          for (std::size_t l = 0; l < split.length; ++l) gsum += g[at(l)];
          for (std::size_t l = 0; l < split.length; ++l)
            gx[at(l)] += g[at(l)] - std::exp(y[at(l)]) * gsum;
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, std::span<const std::uint8_t> mask) {
  if (mask.size() != x.numel()) {
    throw DimensionError("masked_softmax mask has " + std::to_string(mask.size()) +
                         " entries for " + shape_str(x.shape()));
  }
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  auto xd = x.data();
  std::vector<T> out(xd.size(), T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < cols; ++c) {
      if (mask[base + c]) {
        mx = std::max(mx, xd[base + c]);
        any = true;
      }
    }
    if (!any) throw ValidationError("masked_softmax row " + std::to_string(r) + " is fully masked");
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (mask[base + c]) {
        out[base + c] = std::exp(xd[base + c] - mx);
        total += out[base + c];
      }
    }
    for (std::size_t c = 0; c < cols; ++c) out[base + c] /= total;
  }
  auto node = make_output<T>(x.shape(), std::move(out), "masked_softmax", {&x});
  if (node->requires_grad) {
    node->backward_fn = [rows, cols](Node<T>& self) {
      auto& gx = self.parents[0]->ensure_grad();
      const auto& y = self.data;
      const auto& g = self.grad;
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * cols;
        T dot = 0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[base + c] * y[base + c];
        for (std::size_t c = 0; c < cols; ++c) gx[base + c] += y[base + c] * (g[base + c] - dot);
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                        std::span<const std::uint8_t> mask) {
  require_matrix(logits.shape(), "cross_entropy");
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != rows || mask.size() != rows) {
    throw DimensionError("cross_entropy needs one target and mask entry per row of " +
                         shape_str(logits.shape()));
  }
  std::size_t live = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    ++live;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw ValidationError("target id " + std::to_string(targets[r]) + " at row " +
                            std::to_string(r) + " outside vocabulary of " + std::to_string(vocab));
    }
  }
  if (live == 0) throw ValidationError("cross_entropy with every position masked");

  auto ld = logits.data();
  auto probs = std::make_shared<std::vector<T>>(ld.size(), T(0));
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    const T* row = ld.data() + r * vocab;
    T mx = *std::max_element(row, row + vocab);
    T z = 0;
    for (std::size_t c = 0; c < vocab; ++c) {
      (*probs)[r * vocab + c] = std::exp(row[c] - mx);
      z += (*probs)[r * vocab + c];
    }
    for (std::size_t c = 0; c < vocab; ++c) (*probs)[r * vocab + c] /= z;
    total += -(row[targets[r]] - mx - std::log(z));
  }
  const T inv = T(1) / static_cast<T>(live);
  auto node = make_output<T>({1}, {total * inv}, "cross_entropy", {&logits});
  if (node->requires_grad) {
    std::vector<int> tgt(targets.begin(), targets.end());
    std::vector<std::uint8_t> msk(mask.begin(), mask.end());
    node->backward_fn = [probs, tgt = std::move(tgt), msk = std::move(msk), rows, vocab,
                         inv](Node<T>& self) {
      auto& gx = self.parents[0]->ensure_grad();
      const T g = self.grad[0] * inv;
      for (std::size_t r = 0; r < rows; ++r) {
        if (!msk[r]) continue;
        for (std::size_t c = 0; c < vocab; ++c) gx[r * vocab + c] += g * (*probs)[r * vocab + c];
        gx[r * vocab + static_cast<std::size_t>(tgt[r])] -= g;
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t cols = x.shape().back();
  if (gamma.numel() != cols || beta.numel() != cols) {
    throw DimensionError("layer_norm affine parameters do not match " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / cols;
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  auto xhat = std::make_shared<std::vector<T>>(xd.size());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * cols;
    T mu = 0;
    for (std::size_t c = 0; c < cols; ++c) mu += row[c];
    mu /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<T>(cols);
    T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < cols; ++c) {
      T h = (row[c] - mu) * rs;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = h * gd[c] + bd[c];
    }
  }
  auto node = make_output<T>(x.shape(), std::move(out), "layer_norm", {&x, &gamma, &beta});
  if (node->requires_grad) {
    node->backward_fn = [xhat, rstd, rows, cols](Node<T>& self) {
      auto& px = *self.parents[0];
      auto& pg = *self.parents[1];
      auto& pb = *self.parents[2];
      const auto& g = self.grad;
      if (pg.requires_grad) {
        auto& gg = pg.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) gg[c] += g[r * cols + c] * (*xhat)[r * cols + c];
      }
      if (pb.requires_grad) {
        auto& gb = pb.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
      }
      if (px.requires_grad) {
        auto& gx = px.ensure_grad();
        const T n = static_cast<T>(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          T sum_d = 0, sum_dh = 0;
          for (std::size_t c = 0; c < cols; ++c) {
            T d = g[r * cols + c] * pg.data[c];
            sum_d += d;
            sum_dh += d * (*xhat)[r * cols + c];
          }
          for (std::size_t c = 0; c < cols; ++c) {
            T d = g[r * cols + c] * pg.data[c];
            gx[r * cols + c] += (*rstd)[r] / n * (n * d - sum_d - (*xhat)[r * cols + c] * sum_dh);
          }
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = T(0.5) * xd[i] * (T(1) + std::erf(xd[i] * inv_sqrt2));
  auto node = make_output<T>(x.shape(), std::move(out), "gelu", {&x});
  if (node->requires_grad) {
    node->backward_fn = [inv_sqrt2](Node<T>& self) {
      auto& px = *self.parents[0];
      auto& gx = px.ensure_grad();
      const T inv_sqrt2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<T>;
      for (std::size_t i = 0; i < gx.size(); ++i) {
        T v = px.data[i];
        T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
        gx[i] += self.grad[i] * (cdf + v * pdf);
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > T(0) ? xd[i] : T(0);
  auto node = make_output<T>(x.shape(), std::move(out), "relu", {&x});
  if (node->requires_grad) {
    node->backward_fn = [](Node<T>& self) {
      auto& px = *self.parents[0];
      auto& gx = px.ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (px.data[i] > T(0)) gx[i] += self.grad[i];
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& weight, std::span<const int> ids) {
  require_matrix(weight.shape(), "embedding");
  const std::size_t vocab = weight.dim(0), d = weight.dim(1);
  if (ids.empty()) throw DimensionError("embedding lookup of zero ids");
  std::vector<T> out(ids.size() * d);
  auto wd = weight.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ValidationError("token id " + std::to_string(ids[i]) + " outside embedding table of " +
                            std::to_string(vocab));
    }
    std::copy_n(wd.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  auto node = make_output<T>({ids.size(), d}, std::move(out), "embedding", {&weight});
  if (node->requires_grad) {
    std::vector<int> saved(ids.begin(), ids.end());
    node->backward_fn = [saved = std::move(saved), d](Node<T>& self) {
      auto& gw = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < saved.size(); ++i) {
        T* dst = gw.data() + static_cast<std::size_t>(saved[i]) * d;
        const T* src = self.grad.data() + i * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw DimensionError("concat axis out of range for " + shape_str(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw DimensionError("concat rank mismatch: " + shape_str(p.shape()));
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (i != axis && p.dim(i) != ref[i]) {
        throw DimensionError("concat shape mismatch: " + shape_str(ref) + " vs " +
                             shape_str(p.shape()));
      }
    }
    out_shape[axis] += p.dim(axis);
  }
  auto split = split_axis(out_shape, axis);
  std::vector<T> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t len = p.dim(axis);
    auto pd = p.data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(pd.data() + o * len * split.inner, len * split.inner,
                  out.data() + (o * split.length + offset) * split.inner);
    }
    offset += len;
  }
  auto node = make_output<T>(out_shape, std::move(out), "concat", parts);
  if (node->requires_grad) {
    node->backward_fn = [split, offsets, axis](Node<T>& self) {
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        auto& p = *self.parents[k];
        if (!p.requires_grad) continue;
        const std::size_t len = p.shape[axis];
        auto& gp = p.ensure_grad();
        for (std::size_t o = 0; o < split.outer; ++o) {
          const T* src = self.grad.data() + (o * split.length + offsets[k]) * split.inner;
          T* dst = gp.data() + o * len * split.inner;
          for (std::size_t i = 0; i < len * split.inner; ++i) dst[i] += src[i];
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  require_matrix(x.shape(), "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  auto node = make_output<T>({c, r}, transposed(x.data().data(), r, c), "transpose", {&x});
  if (node->requires_grad) {
    node->backward_fn = [r, c](Node<T>& self) {
      auto& gx = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += self.grad[j * r + i];
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  auto node = make_output<T>(std::move(shape), std::move(out), "reshape", {&x});
  if (node->requires_grad) {
    node->backward_fn = [](Node<T>& self) {
      auto& gx = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || length == 0 || start + length > x.dim(axis)) {
    throw DimensionError("slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                         ") on axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  auto split = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<T> out(shape_numel(out_shape));
  auto xd = x.data();
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(xd.data() + (o * split.length + start) * split.inner, length * split.inner,
                out.data() + o * length * split.inner);
  }
  auto node = make_output<T>(out_shape, std::move(out), "slice", {&x});
  if (node->requires_grad) {
    node->backward_fn = [split, start, length](Node<T>& self) {
      auto& gx = self.parents[0]->ensure_grad();
      for (std::size_t o = 0; o < split.outer; ++o) {
        T* dst = gx.data() + (o * split.length + start) * split.inner;
        const T* src = self.grad.data() + o * length * split.inner;
        for (std::size_t i = 0; i < length * split.inner; ++i) dst[i] += src[i];
      }
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  if (x.rank() < 1 || rows.empty()) throw DimensionError("gather_rows needs rows to gather");
  const std::size_t width = x.numel() / x.dim(0);
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  std::vector<T> out(rows.size() * width);
  auto xd = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.dim(0)) throw DimensionError("gather_rows index out of range");
    std::copy_n(xd.data() + rows[i] * width, width, out.data() + i * width);
  }
  auto node = make_output<T>(out_shape, std::move(out), "gather_rows", {&x});
  if (node->requires_grad) {
    std::vector<std::size_t> saved(rows.begin(), rows.end());
    node->backward_fn = [saved = std::move(saved), width](Node<T>& self) {
      auto& gx = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < saved.size(); ++i)
        for (std::size_t c = 0; c < width; ++c) gx[saved[i] * width + c] += self.grad[i * width + c];
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> scatter_add_rows(const Tensor<T>& src, std::span<const std::size_t> rows,
                           std::size_t num_rows) {
  if (rows.size() != src.dim(0)) throw DimensionError("scatter_add_rows needs one index per row");
  const std::size_t width = src.numel() / src.dim(0);
  Shape out_shape = src.shape();
  out_shape[0] = num_rows;
  std::vector<T> out(num_rows * width, T(0));
  auto sd = src.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= num_rows) throw DimensionError("scatter_add_rows index out of range");
    for (std::size_t c = 0; c < width; ++c) out[rows[i] * width + c] += sd[i * width + c];
  }
  auto node = make_output<T>(out_shape, std::move(out), "scatter_add_rows", {&src});
  if (node->requires_grad) {
    std::vector<std::size_t> saved(rows.begin(), rows.end());
    node->backward_fn = [saved = std::move(saved), width](Node<T>& self) {
      auto& gs = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < saved.size(); ++i)
        for (std::size_t c = 0; c < width; ++c) gs[i * width + c] += self.grad[saved[i] * width + c];
    };
  }
  return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                    const AttentionMask& mask, std::vector<T>* probs_out) {
  require_matrix(q.shape(), "attention");
  require_matrix(k.shape(), "attention");
  require_matrix(v.shape(), "attention");
  const std::size_t lq = q.dim(0), lk = k.dim(0), d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != lk) {
    throw DimensionError("attention shapes disagree: q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("model dim " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  if (mask.causal && lq != lk) throw DimensionError("causal attention needs Lq == Lk");
  if (!mask.query_groups.empty() &&
      (mask.query_groups.size() != lq || mask.key_groups.size() != lk)) {
    throw DimensionError("attention group mask sizes do not match the inputs");
  }
  const std::size_t dh = d / heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(dh));
  auto qd = q.data();
  auto kd = k.data();
  auto vd = v.data();
  auto probs = std::make_shared<std::vector<T>>(heads * lq * lk, T(0));
  std::vector<T> out(lq * d, T(0));
  std::vector<T> scores(lk);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < lq; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      const T* qi = qd.data() + i * d + off;
      for (std::size_t j = 0; j < lk; ++j) {
        if (!mask.allows(i, j)) continue;
        const T* kj = kd.data() + j * d + off;
        T s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
        scores[j] = s * scale_factor;
        mx = std::max(mx, scores[j]);
      }
      if (mx == -std::numeric_limits<T>::infinity()) {
        throw ValidationError("attention query " + std::to_string(i) + " has no visible keys");
      }
      T* p = probs->data() + (h * lq + i) * lk;
      T total = 0;
      for (std::size_t j = 0; j < lk; ++j) {
        if (!mask.allows(i, j)) continue;
        p[j] = std::exp(scores[j] - mx);
        total += p[j];
      }
      T* oi = out.data() + i * d + off;
      for (std::size_t j = 0; j < lk; ++j) {
        if (p[j] == T(0)) continue;
        p[j] /= total;
        const T* vj = vd.data() + j * d + off;
        for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
      }
    }
  }
  if (probs_out) *probs_out = *probs;
  auto node = make_output<T>({lq, d}, std::move(out), "attention", {&q, &k, &v});
  if (node->requires_grad) {
    node->backward_fn = [probs, heads, lq, lk, d, dh, scale_factor](Node<T>& self) {
      auto& pq = *self.parents[0];
      auto& pk = *self.parents[1];
      auto& pv = *self.parents[2];
      const auto& g = self.grad;
      std::vector<T> dp(lk);
      T* gq = pq.requires_grad ? pq.ensure_grad().data() : nullptr;
      T* gk = pk.requires_grad ? pk.ensure_grad().data() : nullptr;
      T* gv = pv.requires_grad ? pv.ensure_grad().data() : nullptr;
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < lq; ++i) {
          const T* p = probs->data() + (h * lq + i) * lk;
          const T* gi = g.data() + i * d + off;
          T dot = 0;
          for (std::size_t j = 0; j < lk; ++j) {
            if (p[j] == T(0)) {
              dp[j] = 0;
              continue;
            }
            const T* vj = pv.data.data() + j * d + off;
            T s = 0;
            for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
            dp[j] = s;
            dot += s * p[j];
            if (gv) {
              T* gvj = gv + j * d + off;
              for (std::size_t c = 0; c < dh; ++c) gvj[c] += p[j] * gi[c];
            }
          }
          const T* qi = pq.data.data() + i * d + off;
          for (std::size_t j = 0; j < lk; ++j) {
            if (p[j] == T(0)) continue;
            const T ds = p[j] * (dp[j] - dot) * scale_factor;
            const T* kj = pk.data.data() + j * d + off;
            if (gq) {
              T* gqi = gq + i * d + off;
              for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
            }
            if (gk) {
              T* gkj = gk + j * d + off;
              for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
            }
          }
        }
      }
    };
  }
  return Tensor<T>::from_node(node);
}

#define TEMPO_INSTANTIATE_OPS(T)                                                               \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&, std::size_t);                                      \
  template Tensor<T> mean_all(const Tensor<T>&);                                               \
  template Tensor<T> softmax(const Tensor<T>&, int);                                           \
  template Tensor<T> log_softmax(const Tensor<T>&, int);                                       \
  template Tensor<T> masked_softmax(const Tensor<T>&, std::span<const std::uint8_t>);          \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>,                     \
                                   std::span<const std::uint8_t>);                             \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);      \
  template Tensor<T> gelu(const Tensor<T>&);                                                   \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const int>);                        \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                       \
  template Tensor<T> transpose(const Tensor<T>&);                                              \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);           \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);              \
  template Tensor<T> scatter_add_rows(const Tensor<T>&, std::span<const std::size_t>,          \
                                      std::size_t);                                            \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                               std::size_t, const AttentionMask&, std::vector<T>*);

TEMPO_INSTANTIATE_OPS(float)
TEMPO_INSTANTIATE_OPS(double)

}  // namespace tempo
