#include "tempo/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tempo {

void MoEConfig::validate() const {
  if (num_experts == 0) throw ValidationError("MoE needs at least one expert");
  if (mode == MoEMode::sparse && (top_k < 1 || top_k > num_experts)) {
    throw ValidationError("sparse MoE top_k " + std::to_string(top_k) + " outside [1, " +
                          std::to_string(num_experts) + "]");
  }
}

std::string to_string(MoEMode mode) { return mode == MoEMode::dense ? "dense" : "sparse"; }
std::string to_string(MoEPlacement placement) {
  return placement == MoEPlacement::qformer ? "qformer" : "llm";
}

MoEMode parse_moe_mode(const std::string& s) {
  if (s == "dense") return MoEMode::dense;
  if (s == "sparse") return MoEMode::sparse;
  throw ValidationError("unknown MoE mode '" + s + "'");
}

MoEPlacement parse_moe_placement(const std::string& s) {
  if (s == "qformer") return MoEPlacement::qformer;
  if (s == "llm") return MoEPlacement::llm;
  throw ValidationError("unknown MoE placement '" + s + "'");
}

std::vector<std::uint8_t> selection_mask(std::span<const double> logits, const MoEConfig& cfg) {
  const std::size_t e = logits.size();
  std::vector<std::uint8_t> mask(e, cfg.mode == MoEMode::dense ? 1 : 0);
  if (cfg.mode == MoEMode::dense) return mask;
  std::vector<std::size_t> order(e);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  for (std::size_t i = 0; i < std::min(cfg.top_k, e); ++i) mask[order[i]] = 1;
  return mask;
}

RouterDecision route_logits(std::span<const double> logits, const MoEConfig& cfg) {
  cfg.validate();
  if (logits.size() != cfg.num_experts) {
    throw DimensionError("router produced " + std::to_string(logits.size()) + " logits for " +
                         std::to_string(cfg.num_experts) + " experts");
  }
  RouterDecision d;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (double l : logits) z += std::exp(l - mx);
  for (double l : logits) d.probabilities.push_back(std::exp(l - mx) / z);

  auto mask = selection_mask(logits, cfg);
  double sel_max = -INFINITY;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) sel_max = std::max(sel_max, logits[i]);
  double sel_z = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) sel_z += std::exp(logits[i] - sel_max);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    d.selected.push_back(i);
    d.weights.push_back(std::exp(logits[i] - sel_max) / sel_z);
  }
  return d;
}

LoadStats load_stats(std::span<const RouterDecision> decisions, std::size_t num_experts) {
  if (decisions.empty()) throw ValidationError("load_stats needs at least one routing decision");
  LoadStats s;
  s.tokens = decisions.size();
  s.assignment_fraction.assign(num_experts, 0.0);
  s.mean_probability.assign(num_experts, 0.0);
  for (const auto& d : decisions) {
    for (auto e : d.selected) s.assignment_fraction.at(e) += 1.0;
    for (std::size_t e = 0; e < num_experts && e < d.probabilities.size(); ++e)
      s.mean_probability[e] += d.probabilities[e];
  }
  const double n = static_cast<double>(decisions.size());
  for (std::size_t e = 0; e < num_experts; ++e) {
    s.assignment_fraction[e] /= n;
    s.mean_probability[e] /= n;
  }
  return s;
}

template <typename T>
MixtureOfExperts<T>::MixtureOfExperts(std::size_t dim, std::size_t hidden, const MoEConfig& cfg,
                                      Rng& rng)
    : cfg_(cfg), router_(dim, cfg.num_experts, rng) {
  cfg_.validate();
  for (std::size_t i = 0; i < cfg_.num_experts; ++i) experts_.emplace_back(dim, hidden, rng);
}

template <typename T>
RouterDecision MixtureOfExperts<T>::route(const Tensor<T>& token) const {
  NoGradGuard guard;
  auto row = token.rank() == 1 ? reshape(token, {1, token.numel()}) : token;
  auto logits = router_(row);
  std::vector<double> l(logits.data().begin(), logits.data().end());
  return route_logits(l, cfg_);
}

template <typename T>
Tensor<T> MixtureOfExperts<T>::operator()(const Tensor<T>& tokens) const {
  if (tokens.rank() != 2) throw DimensionError("MoE expects [N×d] tokens, got " + shape_str(tokens.shape()));
  const std::size_t n = tokens.dim(0), e = cfg_.num_experts;
  auto logits = router_(tokens);
  std::vector<std::uint8_t> mask(n * e);
  auto ld = logits.data();
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> row(ld.begin() + static_cast<std::ptrdiff_t>(r * e),
                            ld.begin() + static_cast<std::ptrdiff_t>((r + 1) * e));
    auto m = selection_mask(row, cfg_);
    std::copy(m.begin(), m.end(), mask.begin() + static_cast<std::ptrdiff_t>(r * e));
    if (record_) decisions_.push_back(route_logits(row, cfg_));
  }
  auto weights = masked_softmax(logits, mask);

  Tensor<T> out;
  for (std::size_t x = 0; x < e; ++x) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < n; ++r)
      if (mask[r * e + x]) rows.push_back(r);
    if (rows.empty()) continue;
    invocations_ += rows.size();
    auto y = experts_[x](gather_rows(tokens, rows));
    auto w = gather_rows(slice(weights, 1, x, 1), rows);
    auto contribution = scatter_add_rows(mul(y, w), rows, n);
    out = out.defined() ? add(out, contribution) : contribution;
  }
  return out;
}

template <typename T>
void MixtureOfExperts<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
  router_.collect(out, prefix + ".router");
  for (std::size_t i = 0; i < experts_.size(); ++i)
    experts_[i].collect(out, prefix + ".expert" + std::to_string(i));
}

template <typename T>
MoEBlock<T>::MoEBlock(const AttentionBlockConfig& block, const MoEConfig& cfg, Rng& rng)
    : norm_(block.model_dim), moe_(block.model_dim, block.ffn_dim, cfg, rng) {}

template <typename T>
void MoEBlock<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
  norm_.collect(out, prefix + ".norm");
  moe_.collect(out, prefix + ".moe");
}

template class MixtureOfExperts<float>;
template class MixtureOfExperts<double>;
template class MoEBlock<float>;
template class MoEBlock<double>;

}  // namespace tempo
