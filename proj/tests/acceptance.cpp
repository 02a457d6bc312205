// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Every tolerance and threshold is pinned below.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "support.hpp"
#include "tempo/recipe.hpp"

using namespace tempo;
using testing::check_gradients;
using testing::probe;
using testing::random_tensor;

namespace {

constexpr int kGradSeeds = 10;
constexpr double kGradTol = 1e-5;
constexpr double kGradSeconds = 120;
constexpr int kNormInputs = 1000;
constexpr double kNormTol = 1e-6;
constexpr double kSparseDenseTol = 1e-6;
constexpr int kBankSequences = 200;
constexpr std::uint64_t kRunSeeds[] = {1, 2, 3, 4, 5};
constexpr double kInterfaceMargin = 0.10;
constexpr double kInterfaceSeconds = 30 * 60;
constexpr double kTemporalMargin = 0.05;
constexpr double kBankMargin = 0.10;
constexpr double kOverfitLoss = 0.1;
constexpr std::size_t kOverfitSteps = 1000;
constexpr double kOverfitSeconds = 10 * 60;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fixed(double v, int precision) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os.setf(std::ios::scientific);
  os.precision(2);
  os << v;
  return os.str();
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0 : s / static_cast<double>(v.size());
}

// Runs every config on all hardware threads; order of results follows input.
std::vector<EvalReport> run_all(const std::vector<RecipeConfig>& configs) {
  std::vector<EvalReport> out(configs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  auto work = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      try {
        out[i] = run_step(configs[i]);
      } catch (...) {
        std::lock_guard lock(m);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < std::min(n, configs.size()); ++i) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::vector<double> accuracies(const std::vector<EvalReport>& reports) {
  std::vector<double> out;
  for (const auto& r : reports) out.push_back(r.qa.accuracy);
  return out;
}

std::string percent_list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fixed(100 * x, 1);
  return s;
}

// ---------------------------------------------------------------- 1

struct GradCase {
  std::string name;
  std::function<double(int)> worst;  // seed -> worst relative error
};

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;
  auto push = [&](std::string name, std::function<double(int)> f) { cases.push_back({std::move(name), std::move(f)}); };

  push("add/sub/mul (broadcast)", [](int seed) {
    Rng rng(100 + seed);
    auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    auto row = random_tensor({4}, rng), col = random_tensor({3, 1}, rng);
    return std::max({check_gradients([&] { return probe(add(a, row), seed); }, {a, row}, seed).worst,
                     check_gradients([&] { return probe(sub(a, col), seed); }, {a, col}, seed).worst,
                     check_gradients([&] { return probe(mul(a, b), seed); }, {a, b}, seed).worst,
                     check_gradients([&] { return probe(mul(a, col), seed); }, {a, col}, seed).worst});
  });
  push("scale/sum/mean", [](int seed) {
    Rng rng(110 + seed);
    auto a = random_tensor({3, 4}, rng), b = random_tensor({2, 2}, rng);
    return std::max({check_gradients([&] { return probe(scale(a, 0.37), seed); }, {a}, seed).worst,
                     check_gradients([&] { return mul(sum(a), sum(b)); }, {a, b}, seed).worst,
                     check_gradients([&] { return probe(mean(a, 0), seed); }, {a}, seed).worst,
                     check_gradients([&] { return probe(mean(a, 1), seed); }, {a}, seed).worst,
                     check_gradients([&] { return mul(mean_all(a), mean_all(b)); }, {a, b}, seed).worst});
  });
  push("gelu/relu", [](int seed) {
    Rng rng(120 + seed);
    auto a = random_tensor({4, 5}, rng);
    for (auto& v : a.mutable_data())
      if (std::abs(v) < 1e-3) v = 0.5;  // keep relu away from its kink
    return std::max(check_gradients([&] { return probe(gelu(a), seed); }, {a}, seed).worst,
                    check_gradients([&] { return probe(relu(a), seed); }, {a}, seed).worst);
  });
  push("matmul", [](int seed) {
    Rng rng(130 + seed);
    auto a = random_tensor({3, 5}, rng), b = random_tensor({5, 2}, rng);
    return check_gradients([&] { return probe(matmul(a, b), seed); }, {a, b}, seed).worst;
  });
  push("softmax/log_softmax/masked_softmax", [](int seed) {
    Rng rng(140 + seed);
    auto x = random_tensor({4, 6}, rng);
    std::vector<std::uint8_t> mask(24, 1);
    for (std::size_t i = 0; i < 24; i += 3) mask[i] = 0;
    return std::max({check_gradients([&] { return probe(softmax(x, -1), seed); }, {x}, seed).worst,
                     check_gradients([&] { return probe(softmax(x, 0), seed); }, {x}, seed).worst,
                     check_gradients([&] { return probe(log_softmax(x, -1), seed); }, {x}, seed).worst,
                     check_gradients([&] { return probe(masked_softmax(x, mask), seed); }, {x}, seed).worst});
  });
  push("cross_entropy", [](int seed) {
    Rng rng(150 + seed);
    auto x = random_tensor({4, 6}, rng);
    std::vector<int> targets = {0, 5, 2, 3};
    std::vector<std::uint8_t> rows = {1, 0, 1, 1};
    return check_gradients([&] { return cross_entropy(x, targets, rows); }, {x}, seed).worst;
  });
  push("layer_norm", [](int seed) {
    Rng rng(160 + seed);
    auto x = random_tensor({4, 6}, rng), g = random_tensor({6}, rng), b = random_tensor({6}, rng);
    return check_gradients([&] { return probe(layer_norm(x, g, b), seed); }, {x, g, b}, seed).worst;
  });
  push("embedding/gather/scatter", [](int seed) {
    Rng rng(170 + seed);
    auto w = random_tensor({7, 3}, rng), x = random_tensor({4, 6}, rng);
    std::vector<int> ids = {3, 0, 3, 6};
    std::vector<std::size_t> pick = {2, 0, 2};
    return std::max({check_gradients([&] { return probe(embedding(w, ids), seed); }, {w}, seed).worst,
                     check_gradients([&] { return probe(gather_rows(x, pick), seed); }, {x}, seed).worst,
                     check_gradients([&] { return probe(scatter_add_rows(gather_rows(x, pick), pick, 4), seed); },
                                     {x}, seed).worst});
  });
  push("concat/transpose/reshape/slice", [](int seed) {
    Rng rng(180 + seed);
    auto a = random_tensor({3, 5}, rng), t3 = random_tensor({2, 3, 4}, rng);
    return std::max({check_gradients([&] { return probe(concat<double>({a, scale(a, 2.0)}, 0), seed); }, {a}, seed)
                         .worst,
                     check_gradients([&] { return probe(concat<double>({t3, t3}, 2), seed); }, {t3}, seed).worst,
                     check_gradients([&] { return probe(transpose(a), seed); }, {a}, seed).worst,
                     check_gradients([&] { return probe(reshape(t3, {6, 4}), seed); }, {t3}, seed).worst,
                     check_gradients([&] { return probe(slice(t3, 1, 1, 2), seed); }, {t3}, seed).worst});
  });
  push("attention (plain/causal/grouped)", [](int seed) {
    Rng rng(190 + seed);
    auto q = random_tensor({3, 8}, rng), k = random_tensor({5, 8}, rng), v = random_tensor({5, 8}, rng);
    auto s = random_tensor({4, 8}, rng);
    AttentionMask causal;
    causal.causal = true;
    AttentionMask grouped;
    grouped.query_groups = {0, 1, 1};
    grouped.key_groups = {0, 0, 1, 1, 1};
    return std::max(
        {check_gradients([&] { return probe(attention(q, k, v, 2), seed); }, {q, k, v}, seed).worst,
         check_gradients([&] { return probe(attention(s, s, s, 4, causal), seed); }, {s}, seed).worst,
         check_gradients([&] { return probe(attention(q, k, v, 1, grouped), seed); }, {q, k, v}, seed).worst});
  });
  push("self/cross/feed-forward blocks", [](int seed) {
    Rng rng(200 + seed);
    const AttentionBlockConfig cfg{8, 2, 16, seed % 2 == 0};
    SelfAttentionBlock<double> self(cfg, rng);
    CrossAttentionBlock<double> cross({8, 2, 16, false}, rng);
    FeedForwardBlock<double> ffn(cfg, rng);
    ParameterList<double> params;
    self.collect(params, "s");
    cross.collect(params, "c");
    ffn.collect(params, "f");
    auto x = random_tensor({4, 8}, rng), ctx = random_tensor({5, 8}, rng);
    auto inputs = testing::tensors_of(params);
    inputs.push_back(x);
    inputs.push_back(ctx);
    return check_gradients([&] { return probe(ffn(cross(self(x), ctx)), seed); }, inputs, seed).worst;
  });
  push("Q-Former submodule", [](int seed) {
    Rng rng(210 + seed);
    InterfaceConfig cfg;
    cfg.variant = InterfaceVariant::qformer_sa;
    cfg.submodules = 1;
    cfg.num_query_tokens = 3;
    cfg.visual_dim = 5;
    cfg.model_dim = 8;
    cfg.num_heads = 2;
    cfg.ffn_dim = 16;
    QFormer<double> qf(cfg, rng);
    ParameterList<double> params;
    qf.collect(params, "q");
    auto ctx = random_tensor({6, 5}, rng);
    std::vector<double> pos = {1, 1, 2, 2, 3, 3};
    auto inputs = testing::tensors_of(params);
    inputs.push_back(ctx);
    return check_gradients([&] { return probe(qf.forward(ctx, pos), seed); }, inputs, seed).worst;
  });
  push("MoE layer (sparse/dense)", [](int seed) {
    Rng rng(220 + seed);
    const auto mode = seed % 2 ? MoEMode::dense : MoEMode::sparse;
    MixtureOfExperts<double> moe(8, 16, MoEConfig{4, mode, 2, MoEPlacement::qformer}, rng);
    MoEBlock<double> block({8, 2, 16, false}, MoEConfig{3, mode, 1, MoEPlacement::llm}, rng);
    ParameterList<double> params;
    moe.collect(params, "m");
    block.collect(params, "b");
    auto x = random_tensor({5, 8}, rng);
    auto inputs = testing::tensors_of(params);
    inputs.push_back(x);
    return check_gradients([&] { return probe(block(moe(x)), seed); }, inputs, seed).worst;
  });
  push("bank-in-the-loop interface forward", [](int seed) {
    Rng rng(230 + seed);
    InterfaceConfig cfg;
    cfg.variant = seed % 2 ? InterfaceVariant::qformer_sa : InterfaceVariant::qformer_nosa;
    cfg.aggregation = seed % 2 ? Aggregation::none : (seed % 4 ? Aggregation::adaptive_pool : Aggregation::esa);
    cfg.submodules = 1;
    cfg.num_query_tokens = 2;
    cfg.visual_dim = 5;
    cfg.model_dim = 8;
    cfg.num_heads = 2;
    cfg.ffn_dim = 16;
    VisionLanguageInterface<double> iface(cfg, rng);
    ParameterList<double> params;
    iface.collect(params, "i");
    auto frames = random_tensor({5, 2, 5}, rng);
    const std::vector<long> n = {1, 2, 3, 4, 5};
    auto inputs = testing::tensors_of(params);
    inputs.push_back(frames);
    return check_gradients(
               [&] {
                 MemoryBank<double> bank(3);
                 return probe(iface.forward(frames, n, &bank), seed);
               },
               inputs, seed)
        .worst;
  });
  push("full model loss", [](int seed) {
    ModelConfig cfg;
    cfg.interface.variant = InterfaceVariant::qformer_sa;
    cfg.interface.submodules = 1;
    cfg.interface.num_query_tokens = 2;
    cfg.interface.visual_dim = 4;
    cfg.interface.model_dim = 8;
    cfg.interface.num_heads = 2;
    cfg.interface.ffn_dim = 16;
    cfg.lm = {1, 8, 2, 16, 48, 12};
    cfg.bank_capacity = 3;
    cfg.moe = MoEConfig{3, MoEMode::sparse, 2, seed % 2 ? MoEPlacement::llm : MoEPlacement::qformer};
    VideoLanguageModel<double> model(cfg, 240 + static_cast<std::uint64_t>(seed));
    Rng rng(250 + seed);
    auto frames = random_tensor({5, 2, 4}, rng, 1.0, false);
    const std::vector<long> n = {1, 2, 4, 5, 7};
    const std::vector<int> prompt = {4, 5, 6}, target = {7, 8};
    return check_gradients([&] { return model.loss(frames, n, prompt, target); },
                           testing::tensors_of(model.parameters()), seed, 12)
        .worst;
  });
  return cases;
}

Outcome gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::string worst_case;
  const auto cases = gradient_cases();
  for (const auto& c : cases)
    for (int seed = 0; seed < kGradSeeds; ++seed) {
      const double w = c.worst(seed);
      if (!(w <= worst)) {
        worst = w;
        worst_case = c.name;
      }
    }
  const double secs = seconds_since(t0);
  return {worst < kGradTol && secs < kGradSeconds,
          std::to_string(cases.size()) + " cases x " + std::to_string(kGradSeeds) + " seeds; worst rel err " +
              sci(worst) + " (" + worst_case + ") vs " + sci(kGradTol) + "; " + fixed(secs, 1) + " s vs " +
              fixed(kGradSeconds, 0) + " s"};
}

// ---------------------------------------------------------------- 2

Outcome normalization() {
  Rng rng(2);
  std::uniform_real_distribution<double> log_scale(-3, 3);
  double worst = 0;
  bool finite = true;
  for (int i = 0; i < kNormInputs; ++i) {
    const double s = std::pow(10.0, log_scale(rng)) * (i % 10 == 0 ? 1e3 : 1.0);
    const std::size_t lq = 1 + i % 5, lk = 1 + (i / 5) % 7;
    auto q = random_tensor({lq, 8}, rng, s, false), k = random_tensor({lk, 8}, rng, s, false);
    AttentionMask mask;
    if (i % 3 == 1 && lq == lk) mask.causal = true;
    std::vector<double> probs;
    attention(q, k, k, 2, mask, &probs);
    for (std::size_t row = 0; row < 2 * lq; ++row) {
      double sum = 0;
      for (std::size_t j = 0; j < lk; ++j) {
        finite &= std::isfinite(probs[row * lk + j]);
        sum += probs[row * lk + j];
      }
      worst = std::max(worst, std::abs(sum - 1));
    }

    std::vector<double> logits(8);
    for (auto& l : logits) l = std::normal_distribution<double>(0, 1)(rng) * s * 10;
    for (std::size_t k : {1, 2, 8}) {
      auto d = route_logits(logits, MoEConfig{8, MoEMode::sparse, k, MoEPlacement::qformer});
      double sum = 0;
      for (double w : d.weights) {
        finite &= std::isfinite(w);
        sum += w;
      }
      worst = std::max(worst, std::abs(sum - 1));
    }
    auto dense = route_logits(logits, MoEConfig{8, MoEMode::dense, 0, MoEPlacement::qformer});
    double dsum = 0;
    for (double w : dense.weights) dsum += w;
    worst = std::max(worst, std::abs(dsum - 1));
  }
  // Live routers on extreme token magnitudes.
  Rng mrng(3);
  MixtureOfExperts<float> moe(8, 16, MoEConfig{4, MoEMode::sparse, 2, MoEPlacement::qformer}, mrng);
  for (int i = 0; i < 100; ++i) {
    auto tok = normal_tensor<float>({1, 8}, i % 2 ? 1e4 : 1.0, mrng, false);
    auto d = moe.route(tok);
    double sum = 0;
    for (double w : d.weights) sum += w;
    worst = std::max(worst, std::abs(sum - 1));
  }
  return {finite && worst <= kNormTol, std::to_string(kNormInputs) + " random inputs (scales 1e-3..1e6); max |sum-1| " +
                                           sci(worst) + " vs " + sci(kNormTol) + (finite ? "" : "; non-finite value")};
}

// ---------------------------------------------------------------- 3

Outcome moe_identities() {
  bool single = true, argmax = true, counts = true;
  double sparse_dense = 0;
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(300 + seed);
    for (auto mode : {MoEMode::dense, MoEMode::sparse}) {
      MixtureOfExperts<float> one(8, 16, MoEConfig{1, mode, 1, MoEPlacement::qformer}, rng);
      auto x = normal_tensor<float>({6, 8}, 1.0, rng, false);
      auto a = one(x), b = one.expert(0)(x);
      single &= std::equal(a.data().begin(), a.data().end(), b.data().begin());
    }

    MixtureOfExperts<double> dense(8, 16, MoEConfig{4, MoEMode::dense, 0, MoEPlacement::qformer}, rng);
    MixtureOfExperts<double> sparse(8, 16, MoEConfig{4, MoEMode::sparse, 4, MoEPlacement::qformer}, rng);
    ParameterList<double> from, to;
    dense.collect(from, "m");
    sparse.collect(to, "m");
    copy_matching(from, to);
    auto x = random_tensor({7, 8}, rng, 1.0, false);
    auto yd = dense(x), ys = sparse(x);
    for (std::size_t i = 0; i < yd.numel(); ++i)
      sparse_dense = std::max(sparse_dense, std::abs(yd.data()[i] - ys.data()[i]));

    MixtureOfExperts<float> top1(8, 16, MoEConfig{4, MoEMode::sparse, 1, MoEPlacement::qformer}, rng);
    auto xf = normal_tensor<float>({10, 8}, 1.0, rng, false);
    auto y = top1(xf);
    for (std::size_t r = 0; r < 10; ++r) {
      auto row = slice(xf, 0, r, 1);
      const auto d = top1.route(row);
      const auto best = static_cast<std::size_t>(
          std::max_element(d.probabilities.begin(), d.probabilities.end()) - d.probabilities.begin());
      // All-experts oracle: evaluate every expert, keep the argmax one.
      std::vector<Tensor<float>> every;
      for (std::size_t e = 0; e < 4; ++e) every.push_back(top1.expert(e)(row));
      for (std::size_t c = 0; c < 8; ++c) argmax &= y.at(r, c) == every[best].at(c);
    }

    for (std::size_t k = 1; k <= 4; ++k) {
      MixtureOfExperts<float> m(8, 16, MoEConfig{4, MoEMode::sparse, k, MoEPlacement::qformer}, rng);
      const std::size_t n = 3 + static_cast<std::size_t>(seed) % 9;
      m.reset_invocations();
      m(normal_tensor<float>({n, 8}, 1.0, rng, false));
      counts &= m.expert_invocations() == n * k;
    }
  }
  const bool pass = single && argmax && counts && sparse_dense <= kSparseDenseTol;
  return {pass, std::string("E=1 bitwise ") + (single ? "yes" : "NO") + "; sparse k=E vs dense max diff " +
                    sci(sparse_dense) + " vs " + sci(kSparseDenseTol) + "; k=1 exact argmax " +
                    (argmax ? "yes" : "NO") + "; invocations N*k " + (counts ? "yes" : "NO") + " (20 seeds)"};
}

// ---------------------------------------------------------------- 4

double ref_similarity(const std::vector<double>& a, const std::vector<double>& b, std::size_t patches) {
  const std::size_t d = a.size() / patches;
  double total = 0;
  for (std::size_t p = 0; p < patches; ++p) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t c = 0; c < d; ++c) {
      dot += a[p * d + c] * b[p * d + c];
      na += a[p * d + c] * a[p * d + c];
      nb += b[p * d + c] * b[p * d + c];
    }
    total += dot / std::sqrt(na * nb);
  }
  return total / static_cast<double>(patches);
}

Outcome bank_oracle() {
  struct Ref {
    std::vector<double> feature;
    std::size_t weight;
    long first, last;
  };
  Rng rng(4);
  std::size_t merges = 0, mismatches = 0, violations = 0;
  for (int seq = 0; seq < kBankSequences; ++seq) {
    const std::size_t capacity = 1 + rng() % 8, frames = 1 + rng() % 40;
    const std::size_t patches = 1 + rng() % 3, dim = 2 + rng() % 5;
    MemoryBank<double> bank(capacity);
    std::vector<Ref> ref;
    long index = 0;
    for (std::size_t f = 0; f < frames; ++f) {
      index += 1 + static_cast<long>(rng() % 3);
      auto frame = random_tensor({patches, dim}, rng, 1.0, false);
      bank.ingest(frame, index);
      ref.push_back({std::vector<double>(frame.data().begin(), frame.data().end()), 1, index, index});
      if (ref.size() > capacity) {
        std::size_t best = 0;
        double best_sim = -INFINITY;
        for (std::size_t i = 0; i + 1 < ref.size(); ++i) {
          const double s = ref_similarity(ref[i].feature, ref[i + 1].feature, patches);
          if (s > best_sim) {
            best_sim = s;
            best = i;
          }
        }
        auto& l = ref[best];
        const auto& r = ref[best + 1];
        const double wl = static_cast<double>(l.weight), wr = static_cast<double>(r.weight);
        for (std::size_t i = 0; i < l.feature.size(); ++i)
          l.feature[i] = (wl * l.feature[i] + wr * r.feature[i]) / (wl + wr);
        l.weight += r.weight;
        l.last = r.last;
        ref.erase(ref.begin() + static_cast<std::ptrdiff_t>(best) + 1);
        ++merges;
        if (bank.merges().empty() || bank.merges().back().left != best) ++mismatches;
      }
      try {
        bank.check_invariants();
      } catch (const std::exception&) {
        ++violations;
      }
      std::size_t weight = 0;
      for (const auto& e : bank.entries()) weight += e.weight;
      if (bank.size() > capacity || weight != f + 1 || bank.size() != ref.size()) ++violations;
    }
    for (std::size_t i = 0; i < std::min(ref.size(), bank.size()); ++i) {
      const auto& e = bank.entries()[i];
      if (e.weight != ref[i].weight || e.first != ref[i].first || e.last != ref[i].last) ++violations;
    }
  }

  // B >= F: the bank path is the no-bank path, bit for bit.
  bool identical = true;
  for (int seed = 0; seed < 10; ++seed) {
    Rng r(400 + seed);
    InterfaceConfig cfg;
    cfg.variant = seed % 3 == 0 ? InterfaceVariant::qformer_sa : InterfaceVariant::qformer_nosa;
    cfg.aggregation = seed % 3 == 0 ? Aggregation::none : (seed % 3 == 1 ? Aggregation::mean_pool : Aggregation::esa);
    cfg.visual_dim = 6;
    cfg.model_dim = 8;
    cfg.num_heads = 2;
    cfg.ffn_dim = 16;
    cfg.num_query_tokens = 3;
    VisionLanguageInterface<float> iface(cfg, r);
    const std::size_t f = 2 + static_cast<std::size_t>(seed);
    auto frames = normal_tensor<float>({f, 3, 6}, 1.0, r, false);
    std::vector<long> n(f);
    for (std::size_t i = 0; i < f; ++i) n[i] = static_cast<long>(2 * i + 1);
    auto plain = iface.forward(frames, n);
    for (std::size_t cap : {f, f + 1, 4 * f}) {
      MemoryBank<float> bank(cap);
      auto banked = iface.forward(frames, n, &bank);
      identical &= banked.shape() == plain.shape() &&
                   std::equal(plain.data().begin(), plain.data().end(), banked.data().begin());
    }
  }
  return {mismatches == 0 && violations == 0 && identical && merges > 0,
          std::to_string(kBankSequences) + " sequences, " + std::to_string(merges) + " merges; oracle mismatches " +
              std::to_string(mismatches) + "; invariant violations " + std::to_string(violations) +
              "; B>=F bit-identical " + (identical ? "yes" : "NO")};
}

// ---------------------------------------------------------------- 5

Outcome prompt_fidelity() {
  VideoClip clip;
  clip.clip_id = "beach";
  clip.num_frames = 8;
  clip.events = {{1, 4, "woman in long white dress walking up a hillside path"},
                 {5, 8, "a woman sitting on the beach with long hair"}};
  clip.global_caption = "a woman walks up a hill and then sits on the beach";
  std::vector<std::pair<std::string, std::string>> expect = {
      {build_sample(clip, Scheme::VC).prompt, "What does the video describe?"},
      {build_sample(clip, Scheme::VC).target, clip.global_caption},
      {build_sample(clip, Scheme::MC, 0).prompt, "Explain what happened from frame 1 to frame 4 in the video."},
      {build_sample(clip, Scheme::MC, 0).target, "woman in long white dress walking up a hillside path."},
      {build_sample(clip, Scheme::MG, 0).prompt,
       "During which frames in the video can we observe ''woman in long white dress walking up a hillside path``?"},
      {build_sample(clip, Scheme::MG, 0).target, "from frame 1 to frame 4"},
      {build_sample(clip, Scheme::DC).prompt,
       "Can you give me a breakdown of the occurrences at different timestamps in the video?"},
      {build_sample(clip, Scheme::MG, 1).target, "from frame 5 to frame 8"},
      {build_sample(clip, Scheme::DC).target,
       "woman in long white dress walking up a hillside path, from 1 to 4. "
       "a woman sitting on the beach with long hair, from 5 to 8."},
  };
  std::size_t ok = 0;
  std::string first_bad;
  for (const auto& [got, want] : expect) {
    if (got == want) {
      ++ok;
    } else if (first_bad.empty()) {
      first_bad = "; mismatch: \"" + got + "\"";
    }
  }
  return {ok == expect.size(), std::to_string(ok) + "/" + std::to_string(expect.size()) + " strings byte-exact" + first_bad};
}

// ---------------------------------------------------------------- 6, 7

RecipeConfig interface_base(InterfaceVariant v, Aggregation a, std::uint64_t seed) {
  RecipeConfig c;
  c.name = "interface";
  c.step = 1;
  c.seed = seed;
  c.interface.variant = v;
  c.interface.aggregation = a;
  c.interface.submodules = 2;
  c.interface.num_query_tokens = 8;
  c.lm_preset = "small";
  c.finetune.suite = SuiteKind::order;
  c.finetune.steps = 120;
  c.finetune.lr = 1e-3;
  c.eval.clips = 500;
  return c;
}

std::vector<double> sa_baseline;  // reused by criterion 7

Outcome interface_ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<RecipeConfig> configs;
  for (auto s : kRunSeeds) configs.push_back(interface_base(InterfaceVariant::qformer_sa, Aggregation::none, s));
  for (auto s : kRunSeeds) configs.push_back(interface_base(InterfaceVariant::linear, Aggregation::mean_pool, s));
  for (auto s : kRunSeeds) configs.push_back(interface_base(InterfaceVariant::qformer_nosa, Aggregation::mean_pool, s));
  const auto acc = accuracies(run_all(configs));
  const std::size_t n = std::size(kRunSeeds);
  sa_baseline.assign(acc.begin(), acc.begin() + n);
  const std::vector<double> linear(acc.begin() + n, acc.begin() + 2 * n), nosa(acc.begin() + 2 * n, acc.end());
  const double sa = mean_of(sa_baseline), lin = mean_of(linear), no = mean_of(nosa);
  const double secs = seconds_since(t0);
  return {sa - lin >= kInterfaceMargin && sa > no && secs < kInterfaceSeconds,
          "Q-Former w/ SA " + fixed(100 * sa, 1) + "% [" + percent_list(sa_baseline) + "], linear+mean-pool " +
              fixed(100 * lin, 1) + "% [" + percent_list(linear) + "], Q-Former w/o SA+mean-pool " +
              fixed(100 * no, 1) + "% [" + percent_list(nosa) + "]; gap " + fixed(100 * (sa - lin), 1) +
              " pts vs >= " + fixed(100 * kInterfaceMargin, 0) + "; " + fixed(secs / 60, 1) + " min"};
}

Outcome temporal_stage() {
  std::vector<RecipeConfig> configs;
  for (auto s : kRunSeeds) {
    auto c = interface_base(InterfaceVariant::qformer_sa, Aggregation::none, s);
    c.name = "temporal";
    c.step = 2;
    c.schemes = {Scheme::VC, Scheme::MC, Scheme::MG, Scheme::DC};
    c.temporal.clips = 2000;
    c.temporal.steps = 300;
    c.temporal.lr = 1e-3;
    configs.push_back(c);
  }
  const auto acc = accuracies(run_all(configs));
  const double with = mean_of(acc), without = mean_of(sa_baseline);
  return {!sa_baseline.empty() && with - without >= kTemporalMargin,
          "VC+MC+MG+DC stage " + fixed(100 * with, 1) + "% [" + percent_list(acc) + "] vs none " +
              fixed(100 * without, 1) + "%; gain " + fixed(100 * (with - without), 1) + " pts vs >= " +
              fixed(100 * kTemporalMargin, 0)};
}

// ---------------------------------------------------------------- 8

RecipeConfig long_clip_base(std::uint64_t seed) {
  RecipeConfig c;
  c.name = "long";
  c.seed = seed;
  c.interface.variant = InterfaceVariant::qformer_sa;
  c.interface.submodules = 2;
  c.interface.num_query_tokens = 8;
  c.schemes = {Scheme::VC, Scheme::MC, Scheme::MG, Scheme::DC};
  c.temporal.clips = 500;
  c.temporal.steps = 60;
  c.finetune.suite = SuiteKind::long_clips;
  c.finetune.steps = 150;
  c.eval.clips = 500;
  return c;
}

Outcome memory_bank_vs_sampling() {
  std::vector<RecipeConfig> configs;
  for (auto s : kRunSeeds) {
    auto c = long_clip_base(s);
    c.step = 3;
    c.bank_capacity = 16;
    configs.push_back(c);
  }
  for (auto s : kRunSeeds) {
    auto c = long_clip_base(s);
    c.step = 2;
    c.finetune.sampling = {FrameSampling::Mode::random, 16};
    configs.push_back(c);
  }
  const auto acc = accuracies(run_all(configs));
  const std::size_t n = std::size(kRunSeeds);
  const std::vector<double> bank(acc.begin(), acc.begin() + n), sampled(acc.begin() + n, acc.end());
  const double b = mean_of(bank), s = mean_of(sampled);
  return {b - s >= kBankMargin, "bank B=16 " + fixed(100 * b, 1) + "% [" + percent_list(bank) + "] vs random 16 frames " +
                                    fixed(100 * s, 1) + "% [" + percent_list(sampled) + "]; gap " +
                                    fixed(100 * (b - s), 1) + " pts vs >= " + fixed(100 * kBankMargin, 0)};
}

// ---------------------------------------------------------------- 9

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism() {
  const auto root = std::filesystem::temp_directory_path() / "tempo-acceptance-determinism";
  std::filesystem::remove_all(root);
  RecipeConfig c;
  c.name = "det";
  c.step = 4;
  c.interface.submodules = 2;
  c.interface.num_query_tokens = 4;
  c.schemes = {Scheme::VC, Scheme::MG};
  c.bank_capacity = 6;
  c.moe = MoEConfig{4, MoEMode::sparse, 1, MoEPlacement::qformer};
  c.temporal.clips = 20;
  c.temporal.steps = 5;
  c.finetune.train_clips = 20;
  c.finetune.steps = 5;
  c.finetune.sampling = {FrameSampling::Mode::random, 8};
  c.eval.clips = 20;
  c.eval.caption_clips = 4;

  std::vector<Json> reports;
  std::vector<std::string> checkpoints;
  for (const char* sub : {"a", "b"}) {
    auto run = c;
    run.output_dir = (root / sub).string();
    auto r = run_recipe(run).report;
    auto j = r.deterministic_json();
    j.erase("checkpoint");
    reports.push_back(j);
    checkpoints.push_back(file_bytes(r.checkpoint));
  }
  const bool same_report = reports[0] == reports[1];
  const bool same_ckpt = !checkpoints[0].empty() && checkpoints[0] == checkpoints[1];

  // Resume: 3 steps, checkpoint to disk, fresh process state, 3 more steps.
  const auto tok = recipe_tokenizer();
  const auto clips = temporal_corpus(c, 1);
  std::vector<Example> examples;
  for (const auto& s : scheme_samples(clips, c.schemes)) {
    const auto it = std::find_if(clips.begin(), clips.end(), [&](const VideoClip& v) { return v.clip_id == s.clip_id; });
    examples.push_back({&*it, tok.encode(s.prompt), tok.encode(s.target)});
  }
  TrainOptions opts;
  opts.steps = 6;
  opts.batch_size = 4;
  opts.seed = 11;
  opts.warmup_steps = 2;
  opts.sampling = {FrameSampling::Mode::random, 8};
  const auto mcfg = c.model_config(tok.size());

  VideoLanguageModel<float> full_model(mcfg, 3);
  Trainer full(full_model, opts);
  const auto straight = full.run(examples);

  VideoLanguageModel<float> first_model(mcfg, 3);
  Trainer first(first_model, opts);
  std::vector<double> resumed;
  for (int i = 0; i < 3; ++i) resumed.push_back(first.step(examples));
  const auto path = root / "resume.ckpt";
  write_checkpoint(path, first.state());

  VideoLanguageModel<float> second_model(mcfg, 99);
  Trainer second(second_model, opts);
  second.load_state(read_checkpoint(path));
  for (int i = 0; i < 3; ++i) resumed.push_back(second.step(examples));
  const bool same_losses = resumed == straight;
  const bool same_state = encode_checkpoint(second.state()) == encode_checkpoint(full.state());

  return {same_report && same_ckpt && same_losses && same_state,
          std::string("reports identical ") + (same_report ? "yes" : "NO") + "; checkpoints bit-identical " +
              (same_ckpt ? "yes" : "NO") + "; resumed losses identical " + (same_losses ? "yes" : "NO") +
              "; resumed state bit-identical " + (same_state ? "yes" : "NO")};
}

// ---------------------------------------------------------------- 10

Outcome overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  CorpusOptions co;
  co.seed = 5;
  co.num_clips = 12;
  const auto corpus = generate_corpus(co);
  const std::vector<Scheme> order = {Scheme::VC, Scheme::MC, Scheme::MG, Scheme::DC};
  std::vector<TrainingSample> samples;
  for (std::size_t i = 0; samples.size() < 32; ++i) {
    const auto& clip = corpus[i % corpus.size()];
    const Scheme s = order[i % 4];
    std::optional<std::size_t> ev;
    if (s == Scheme::MC || s == Scheme::MG) ev = i % clip.events.size();
    samples.push_back(build_sample(clip, s, ev));
  }
  std::vector<std::string> texts;
  for (const auto& s : samples) {
    texts.push_back(s.prompt);
    texts.push_back(s.target);
  }
  const auto tok = Tokenizer::fit(texts);
  std::vector<Example> examples;
  for (const auto& s : samples) {
    const auto it = std::find_if(corpus.begin(), corpus.end(), [&](const VideoClip& v) { return v.clip_id == s.clip_id; });
    examples.push_back({&*it, tok.encode(s.prompt), tok.encode(s.target)});
  }

  ModelConfig mc;  // default interface: Q-Former with self-attention, S=2
  mc.lm = LMConfig::preset("small", tok.size());
  mc.bank_capacity = 8;
  mc.moe = MoEConfig{4, MoEMode::sparse, 1, MoEPlacement::qformer};
  VideoLanguageModel<float> model(mc, 1);
  TrainOptions opts;
  opts.steps = kOverfitSteps;
  opts.seed = 1;
  Trainer trainer(model, opts);

  auto corpus_loss = [&] {
    NoGradGuard guard;
    double total = 0;
    for (const auto& ex : examples) {
      const auto used = select_frames(*ex.clip, {}, 0);
      total += static_cast<double>(model.loss(gather_frames<float>(*ex.clip, used), used, ex.prompt, ex.target).item());
    }
    return total / static_cast<double>(examples.size());
  };
  double loss = corpus_loss();
  std::size_t step = 0;
  while (step < kOverfitSteps && loss >= kOverfitLoss) {
    trainer.step(examples);
    ++step;
    if (step % 10 == 0) loss = corpus_loss();
  }
  const double secs = seconds_since(t0);
  return {loss < kOverfitLoss && secs < kOverfitSeconds,
          "32-sample corpus mean loss " + fixed(loss, 4) + " after " + std::to_string(step) + " steps vs < " +
              fixed(kOverfitLoss, 1) + " within " + std::to_string(kOverfitSteps) + "; " + fixed(secs, 1) + " s"};
}

}  // namespace

// Optional arguments pick criteria by number; default is all of them.
int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient oracle", gradient_oracle},
      {"normalization invariants", normalization},
      {"MoE identities", moe_identities},
      {"memory-bank oracle", bank_oracle},
      {"prompt fidelity", prompt_fidelity},
      {"interface ordering", interface_ordering},
      {"temporal-oriented stage", temporal_stage},
      {"memory bank vs frame sampling", memory_bank_vs_sampling},
      {"determinism and persistence", determinism},
      {"overfit smoke test", overfit},
  };
  std::vector<std::size_t> chosen;
  for (int a = 1; a < argc; ++a) chosen.push_back(std::stoul(argv[a]));
  int failed = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!chosen.empty() && std::find(chosen.begin(), chosen.end(), i + 1) == chosen.end()) continue;
    ++ran;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("criterion %2zu %s  %s: %s [%.1f s]\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
