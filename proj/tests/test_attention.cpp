#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "tempo/attention.hpp"

using namespace tempo;
using testing::check_gradients;
using testing::probe;
using testing::random_tensor;

namespace {

// Per-head softmax(q kᵀ / sqrt(dh)) v written out with plain loops.
std::vector<double> naive_attention(const Tensor<double>& q, const Tensor<double>& k, const Tensor<double>& v,
                                    std::size_t heads, bool causal) {
  const std::size_t lq = q.dim(0), lk = k.dim(0), d = q.dim(1), dh = d / heads;
  std::vector<double> out(lq * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < lq; ++i) {
      std::vector<double> s(lk, -INFINITY);
      double mx = -INFINITY;
      for (std::size_t j = 0; j < lk; ++j) {
        if (causal && j > i) continue;
        double dot = 0;
        for (std::size_t c = 0; c < dh; ++c) dot += q.at(i, h * dh + c) * k.at(j, h * dh + c);
        s[j] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (auto& e : s) z += (e = std::exp(e - mx));
      for (std::size_t j = 0; j < lk; ++j)
        for (std::size_t c = 0; c < dh; ++c) out[i * d + h * dh + c] += s[j] / z * v.at(j, h * dh + c);
    }
  }
  return out;
}

AttentionBlockConfig small_block(bool causal = false) { return {8, 2, 16, causal}; }

}  // namespace

TEST_CASE("attention core matches the loop oracle") {
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto q = random_tensor({4, 12}, rng, 1.0, false);
    auto k = random_tensor({6, 12}, rng, 1.0, false);
    auto v = random_tensor({6, 12}, rng, 1.0, false);
    for (std::size_t heads : {1, 3, 4}) {
      auto got = attention(q, k, v, heads);
      auto want = naive_attention(q, k, v, heads, false);
      for (std::size_t i = 0; i < want.size(); ++i) CHECK(got.data()[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
    auto s = random_tensor({5, 12}, rng, 1.0, false);
    AttentionMask causal;
    causal.causal = true;
    auto got = attention(s, s, s, 3, causal);
    auto want = naive_attention(s, s, s, 3, true);
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(got.data()[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("attention probabilities are row-stochastic and respect the mask") {
  Rng rng(11);
  auto q = random_tensor({3, 8}, rng, 30.0, false);
  auto k = random_tensor({5, 8}, rng, 30.0, false);
  AttentionMask grouped;
  grouped.query_groups = {0, 1, 2};
  grouped.key_groups = {0, 1, 1, 2, 2};
  std::vector<double> probs;
  attention(q, k, k, 2, grouped, &probs);
  REQUIRE(probs.size() == 2 * 3 * 5);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 5; ++j) {
        const double p = probs[(h * 3 + i) * 5 + j];
        if (!grouped.allows(i, j)) CHECK(p == 0.0);
        s += p;
      }
      CHECK(std::abs(s - 1) < 1e-12);
    }
}

TEST_CASE("causal self-attention ignores future positions") {
  Rng rng(12);
  SelfAttentionBlock<double> block(small_block(true), rng);
  auto x = random_tensor({6, 8}, rng, 1.0, false);
  auto y = block(x);
  auto changed = x.detach();
  for (std::size_t c = 0; c < 8; ++c) changed.mutable_data()[5 * 8 + c] += 3.0;
  auto y2 = block(changed);
  for (std::size_t i = 0; i < 5 * 8; ++i) CHECK(y.data()[i] == y2.data()[i]);
  bool last_moved = false;
  for (std::size_t c = 0; c < 8; ++c) last_moved |= y.data()[40 + c] != y2.data()[40 + c];
  CHECK(last_moved);
}

TEST_CASE("non-causal self-attention is permutation equivariant") {
  Rng rng(13);
  SelfAttentionBlock<double> block(small_block(), rng);
  auto x = random_tensor({5, 8}, rng, 1.0, false);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  auto y = block(x);
  auto yp = block(gather_rows(x, perm));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 8; ++c) CHECK(yp.at(i, c) == doctest::Approx(y.at(perm[i], c)).epsilon(1e-12));
}

TEST_CASE("cross-attention is invariant to context order") {
  Rng rng(14);
  CrossAttentionBlock<double> block(small_block(), rng);
  auto q = random_tensor({3, 8}, rng, 1.0, false);
  auto ctx = random_tensor({6, 8}, rng, 1.0, false);
  const std::vector<std::size_t> perm = {5, 2, 0, 1, 4, 3};
  auto a = block(q, ctx);
  auto b = block(q, gather_rows(ctx, perm));
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
}

TEST_CASE("sinusoidal positional encoding values") {
  auto pe = positional_encoding<double>(4, 6);
  CHECK(pe.at(0, 0) == 0.0);
  CHECK(pe.at(0, 1) == 1.0);
  CHECK(pe.at(3, 0) == doctest::Approx(std::sin(3.0)));
  CHECK(pe.at(3, 1) == doctest::Approx(std::cos(3.0)));
  CHECK(pe.at(2, 2) == doctest::Approx(std::sin(2.0 / std::pow(10000.0, 2.0 / 6))));
  CHECK(pe.at(2, 5) == doctest::Approx(std::cos(2.0 / std::pow(10000.0, 4.0 / 6))));
  std::vector<double> at = {0, 3};
  auto pa = positional_encoding_at<double>(at, 6);
  for (std::size_t c = 0; c < 6; ++c) CHECK(pa.at(1, c) == doctest::Approx(pe.at(3, c)));
}

TEST_CASE("block configs are validated") {
  CHECK_THROWS_AS((AttentionBlockConfig{10, 3, 16, false}.validate()), ValidationError);
  CHECK_THROWS_AS((AttentionBlockConfig{0, 1, 16, false}.validate()), ValidationError);
  CHECK_NOTHROW((AttentionBlockConfig{12, 3, 16, false}.validate()));
}

TEST_CASE("attention counters track which blocks ran") {
  Rng rng(15);
  SelfAttentionBlock<double> self(small_block(), rng);
  CrossAttentionBlock<double> cross(small_block(), rng);
  auto x = random_tensor({2, 8}, rng, 1.0, false);
  const auto before = attention_counters();
  self(x);
  cross(x, x);
  cross(x, x);
  CHECK(attention_counters().self_attention == before.self_attention + 1);
  CHECK(attention_counters().cross_attention == before.cross_attention + 2);
}

TEST_CASE("attention block gradients match finite differences") {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(500 + seed);
    SelfAttentionBlock<double> self(small_block(seed % 2 == 0), rng);
    CrossAttentionBlock<double> cross(small_block(), rng);
    FeedForwardBlock<double> ffn(small_block(), rng);
    ParameterList<double> params;
    self.collect(params, "self");
    cross.collect(params, "cross");
    ffn.collect(params, "ffn");
    auto x = random_tensor({4, 8}, rng);
    auto ctx = random_tensor({5, 8}, rng);
    auto inputs = testing::tensors_of(params);
    inputs.push_back(x);
    inputs.push_back(ctx);
    auto r = check_gradients([&] { return probe(ffn(cross(self(x), ctx)), seed); }, inputs, seed);
    CHECK(r.worst < 1e-6);
  }
}
