#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "tempo/moe.hpp"

using namespace tempo;
using testing::check_gradients;
using testing::probe;
using testing::random_tensor;

TEST_CASE("MoE config validation") {
  CHECK_THROWS_AS((MoEConfig{0, MoEMode::dense, 1, MoEPlacement::qformer}.validate()), ValidationError);
  CHECK_THROWS_AS((MoEConfig{4, MoEMode::sparse, 5, MoEPlacement::qformer}.validate()), ValidationError);
  CHECK_THROWS_AS((MoEConfig{4, MoEMode::sparse, 0, MoEPlacement::qformer}.validate()), ValidationError);
  CHECK_NOTHROW((MoEConfig{4, MoEMode::dense, 0, MoEPlacement::llm}.validate()));
  CHECK(parse_moe_mode("dense") == MoEMode::dense);
  CHECK_THROWS_AS(parse_moe_mode("soft"), ValidationError);
  CHECK(parse_moe_placement(to_string(MoEPlacement::llm)) == MoEPlacement::llm);
}

TEST_CASE("router selection: top-k, renormalized weights, ties to the lower index") {
  MoEConfig sparse2{4, MoEMode::sparse, 2, MoEPlacement::qformer};
  std::vector<double> logits = {0.5, 2.0, -1.0, 1.0};
  auto d = route_logits(logits, sparse2);
  CHECK(d.selected == std::vector<std::size_t>{1, 3});
  const double z = std::exp(2.0) + std::exp(1.0);
  CHECK(d.weights[0] == doctest::Approx(std::exp(2.0) / z));
  CHECK(d.weights[1] == doctest::Approx(std::exp(1.0) / z));
  double zall = 0;
  for (double l : logits) zall += std::exp(l);
  CHECK(d.probabilities[2] == doctest::Approx(std::exp(-1.0) / zall));

  std::vector<double> tied = {1.0, 3.0, 3.0, 3.0};
  auto t = route_logits(tied, MoEConfig{4, MoEMode::sparse, 2, MoEPlacement::qformer});
  CHECK(t.selected == std::vector<std::size_t>{1, 2});

  auto dense = route_logits(logits, MoEConfig{4, MoEMode::dense, 0, MoEPlacement::qformer});
  CHECK(dense.selected.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(dense.weights[i] == doctest::Approx(dense.probabilities[i]));

  std::vector<double> wrong = {1.0, 2.0};
  CHECK_THROWS_AS(route_logits(wrong, sparse2), DimensionError);
}

TEST_CASE("combine weights sum to one for extreme logits") {
  Rng rng(21);
  std::uniform_real_distribution<double> wide(-800, 800);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> l(8);
    for (auto& x : l) x = wide(rng);
    for (std::size_t k : {1, 2, 8}) {
      auto d = route_logits(l, MoEConfig{8, MoEMode::sparse, k, MoEPlacement::qformer});
      double s = 0;
      for (double w : d.weights) s += w;
      CHECK(std::abs(s - 1) < 1e-12);
    }
  }
}

TEST_CASE("a single expert is exactly its feed-forward network") {
  Rng rng(22);
  for (auto mode : {MoEMode::dense, MoEMode::sparse}) {
    MixtureOfExperts<float> moe(8, 16, MoEConfig{1, mode, 1, MoEPlacement::qformer}, rng);
    auto x = normal_tensor<float>({5, 8}, 1.0, rng, false);
    auto a = moe(x), b = moe.expert(0)(x);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
  }
}

TEST_CASE("sparse top_k = E agrees with dense") {
  Rng rng(23);
  MixtureOfExperts<double> dense(8, 16, MoEConfig{4, MoEMode::dense, 0, MoEPlacement::qformer}, rng);
  MixtureOfExperts<double> sparse(8, 16, MoEConfig{4, MoEMode::sparse, 4, MoEPlacement::qformer}, rng);
  ParameterList<double> from, to;
  dense.collect(from, "m");
  sparse.collect(to, "m");
  CHECK(copy_matching(from, to) == from.size());
  auto x = random_tensor({7, 8}, rng, 1.0, false);
  auto a = dense(x), b = sparse(x);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) < 1e-12);
}

TEST_CASE("sparse k=1 returns the argmax expert's output exactly") {
  Rng rng(24);
  MixtureOfExperts<float> moe(8, 16, MoEConfig{4, MoEMode::sparse, 1, MoEPlacement::qformer}, rng);
  auto x = normal_tensor<float>({12, 8}, 1.0, rng, false);
  auto y = moe(x);
  for (std::size_t r = 0; r < 12; ++r) {
    auto row = slice(x, 0, r, 1);
    const auto d = moe.route(row);
    const auto best = static_cast<std::size_t>(
        std::max_element(d.probabilities.begin(), d.probabilities.end()) - d.probabilities.begin());
    auto expert = moe.expert(best)(row);
    for (std::size_t c = 0; c < 8; ++c) CHECK(y.at(r, c) == expert.at(c));
  }
}

TEST_CASE("sparse MoE evaluates exactly N·k experts") {
  Rng rng(25);
  for (std::size_t k : {1, 2, 3}) {
    MixtureOfExperts<float> moe(8, 16, MoEConfig{4, MoEMode::sparse, k, MoEPlacement::qformer}, rng);
    auto x = normal_tensor<float>({9, 8}, 1.0, rng, false);
    moe.reset_invocations();
    moe(x);
    CHECK(moe.expert_invocations() == 9 * k);
  }
  MixtureOfExperts<float> dense(8, 16, MoEConfig{3, MoEMode::dense, 0, MoEPlacement::qformer}, rng);
  dense(normal_tensor<float>({5, 8}, 1.0, rng, false));
  CHECK(dense.expert_invocations() == 15);
}

TEST_CASE("load statistics from recorded decisions") {
  MoEConfig cfg{3, MoEMode::sparse, 1, MoEPlacement::qformer};
  std::vector<RouterDecision> ds = {route_logits(std::vector<double>{3, 0, 0}, cfg),
                                    route_logits(std::vector<double>{0, 3, 0}, cfg),
                                    route_logits(std::vector<double>{4, 0, 0}, cfg)};
  auto s = load_stats(ds, 3);
  CHECK(s.tokens == 3);
  CHECK(s.assignment_fraction[0] == doctest::Approx(2.0 / 3));
  CHECK(s.assignment_fraction[1] == doctest::Approx(1.0 / 3));
  CHECK(s.assignment_fraction[2] == 0.0);
  const double expect0 = (ds[0].probabilities[0] + ds[1].probabilities[0] + ds[2].probabilities[0]) / 3;
  CHECK(s.mean_probability[0] == doctest::Approx(expect0));
  CHECK_THROWS_AS(load_stats(std::vector<RouterDecision>{}, 3), ValidationError);

  Rng rng(26);
  MixtureOfExperts<float> moe(8, 16, MoEConfig{4, MoEMode::sparse, 2, MoEPlacement::qformer}, rng);
  moe.record_decisions(true);
  moe(normal_tensor<float>({6, 8}, 1.0, rng, false));
  REQUIRE(moe.decisions().size() == 6);
  auto live = load_stats(moe.decisions(), 4);
  double total = 0;
  for (double f : live.assignment_fraction) total += f;
  CHECK(total == doctest::Approx(2.0));
}

TEST_CASE("MoE block gradients match finite differences") {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(600 + seed);
    const auto mode = seed % 2 ? MoEMode::dense : MoEMode::sparse;
    MoEBlock<double> block({8, 2, 16, false}, MoEConfig{4, mode, 2, MoEPlacement::qformer}, rng);
    ParameterList<double> params;
    block.collect(params, "b");
    auto x = random_tensor({5, 8}, rng);
    auto inputs = testing::tensors_of(params);
    inputs.push_back(x);
    CHECK(check_gradients([&] { return probe(block(x), seed); }, inputs, seed).worst < 1e-6);
  }
}
