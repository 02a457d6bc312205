#include "tempo/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace tempo {

void ModelConfig::validate() const {
  interface.validate();
  lm.validate();
  if (interface.model_dim != lm.model_dim) {
    throw ValidationError("interface model_dim " + std::to_string(interface.model_dim) + " != LM model_dim " +
                          std::to_string(lm.model_dim));
  }
  if (bank_capacity > 0 && !interface.is_qformer()) {
    throw ValidationError("a memory bank cannot be combined with the linear interface");
  }
  if (moe) {
    moe->validate();
    if (moe->placement == MoEPlacement::qformer && !interface.is_qformer()) {
      throw ValidationError("Q-Former MoE placement needs a Q-Former interface");
    }
  }
}

template <typename T>
VideoLanguageModel<T>::VideoLanguageModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.moe && cfg_.moe->placement == MoEPlacement::qformer) cfg_.interface.moe = cfg_.moe;
  cfg_.validate();
  Rng rng(seed);
  interface_ = std::make_unique<VisionLanguageInterface<T>>(cfg_.interface, rng);
  lm_ = std::make_unique<ToyLM<T>>(cfg_.lm, rng, cfg_.moe);
  interface_->collect(params_, "interface");
  lm_->collect(params_, "lm");
}

template <typename T>
Tensor<T> VideoLanguageModel<T>::visual_tokens(const Tensor<T>& frames, std::span<const long> frame_numbers) const {
  if (cfg_.bank_capacity == 0) return interface_->forward(frames, frame_numbers);
  MemoryBank<T> bank(cfg_.bank_capacity);
  return interface_->forward(frames, frame_numbers, &bank);
}

template <typename T>
Tensor<T> VideoLanguageModel<T>::loss(const Tensor<T>& frames, std::span<const long> frame_numbers,
                                      std::span<const int> prompt, std::span<const int> target) const {
  return lm_->loss(visual_tokens(frames, frame_numbers), prompt, target);
}

template <typename T>
std::vector<int> VideoLanguageModel<T>::generate(const Tensor<T>& frames, std::span<const long> frame_numbers,
                                                 std::span<const int> prompt, std::size_t max_new) const {
  NoGradGuard guard;
  return lm_->generate(visual_tokens(frames, frame_numbers), prompt, max_new);
}

std::string to_string(FrameSampling::Mode m) {
  switch (m) {
    case FrameSampling::Mode::all: return "all";
    case FrameSampling::Mode::uniform: return "uniform";
    default: return "random";
  }
}

FrameSampling::Mode parse_frame_sampling(const std::string& s) {
  if (s == "all") return FrameSampling::Mode::all;
  if (s == "uniform") return FrameSampling::Mode::uniform;
  if (s == "random") return FrameSampling::Mode::random;
  throw ValidationError("unknown frame sampling '" + s + "'");
}

std::vector<long> select_frames(const VideoClip& clip, const FrameSampling& sampling, std::uint64_t draw) {
  const long f = static_cast<long>(clip.num_frames);
  std::vector<long> all(static_cast<std::size_t>(f));
  std::iota(all.begin(), all.end(), 1L);
  if (sampling.mode == FrameSampling::Mode::all || sampling.count >= clip.num_frames) return all;
  if (sampling.count == 0) throw ValidationError("frame sampling count must be positive");
  std::vector<long> out;
  if (sampling.mode == FrameSampling::Mode::uniform) {
    const double stride = static_cast<double>(f) / static_cast<double>(sampling.count);
    for (std::size_t i = 0; i < sampling.count; ++i) {
      out.push_back(1 + static_cast<long>(std::floor((static_cast<double>(i) + 0.5) * stride)));
    }
    return out;
  }
  Rng rng(draw);
  for (std::size_t i = 0; i < sampling.count; ++i) {
    std::swap(all[i], all[std::uniform_int_distribution<std::size_t>(i, all.size() - 1)(rng)]);
  }
  out.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(sampling.count));
  std::sort(out.begin(), out.end());
  return out;
}

template <typename T>
Tensor<T> gather_frames(const VideoClip& clip, std::span<const long> frame_numbers) {
  const auto& shape = clip.frames.shape();
  const std::size_t per = shape[1] * shape[2];
  auto src = clip.frames.data();
  std::vector<T> data;
  data.reserve(frame_numbers.size() * per);
  for (long n : frame_numbers) {
    if (n < 1 || n > static_cast<long>(clip.num_frames)) throw ValidationError("frame number out of range");
    auto begin = src.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(n - 1) * per);
    data.insert(data.end(), begin, begin + static_cast<std::ptrdiff_t>(per));
  }
  return Tensor<T>({frame_numbers.size(), shape[1], shape[2]}, std::move(data));
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double TrainOptions::learning_rate(long step) const {
  const double s = static_cast<double>(step);
  if (warmup_steps > 0 && step < static_cast<long>(warmup_steps)) {
    return adam.lr * (s + 1.0) / static_cast<double>(warmup_steps);
  }
  if (steps <= warmup_steps) return adam.lr;
  const double span = static_cast<double>(steps - warmup_steps);
  const double progress = std::min(1.0, (s - static_cast<double>(warmup_steps)) / span);
  const double cosine = 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
  return adam.lr * (min_lr_ratio + (1.0 - min_lr_ratio) * cosine);
}

Trainer::Trainer(VideoLanguageModel<float>& model, TrainOptions options)
    : model_(model), options_(options), optimizer_(options.adam) {
  if (options_.batch_size == 0) throw ValidationError("batch_size must be positive");
}

double Trainer::step(const std::vector<Example>& data) {
  if (data.empty()) throw ValidationError("no training examples");
  auto& params = model_.parameters();
  params.zero_grad();
  const std::uint64_t step_seed = mix_seed(options_.seed, static_cast<std::uint64_t>(global_step_));
  Rng rng(step_seed);
  double total = 0;
  const float inv = 1.0f / static_cast<float>(options_.batch_size);
  for (std::size_t b = 0; b < options_.batch_size; ++b) {
    const auto& ex = data[std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng)];
    const auto frames_used = select_frames(*ex.clip, options_.sampling, rng());
    auto frames = gather_frames<float>(*ex.clip, frames_used);
    auto loss = model_.loss(frames, frames_used, ex.prompt, ex.target);
    total += static_cast<double>(loss.item());
    backward(scale(loss, inv));
  }
  clip_grad_norm(params, options_.clip_norm);
  optimizer_.options().lr = options_.learning_rate(global_step_);
  optimizer_.step(params);
  ++global_step_;
  return total / static_cast<double>(options_.batch_size);
}

std::vector<double> Trainer::run(const std::vector<Example>& data) {
  std::vector<double> losses;
  losses.reserve(options_.steps);
  for (std::size_t i = 0; i < options_.steps; ++i) losses.push_back(step(data));
  return losses;
}

NamedTensors Trainer::state() const {
  NamedTensors out;
  for (const auto& p : model_.parameters().items()) out.push_back({p.name, p.tensor.detach()});
  auto opt = optimizer_.state_tensors(model_.parameters());
  out.insert(out.end(), opt.begin(), opt.end());
  out.push_back({"trainer.step", Tensor<float>::scalar(static_cast<float>(global_step_))});
  return out;
}

void Trainer::load_state(const NamedTensors& tensors) {
  load_parameters(model_.parameters(), tensors);
  std::vector<NamedParameter<float>> opt;
  bool have_step = false;
  for (const auto& t : tensors) {
    if (t.name.rfind("optim.", 0) == 0) opt.push_back(t);
    if (t.name == "trainer.step") {
      global_step_ = static_cast<long>(t.tensor.item());
      have_step = true;
    }
  }
  if (!have_step) throw CheckpointError("checkpoint lacks trainer.step");
  optimizer_.load_state(model_.parameters(), opt);
}

std::string answer(const VideoLanguageModel<float>& model, const Tokenizer& tokenizer, const VideoClip& clip,
                   const std::vector<int>& prompt, const FrameSampling& sampling, std::uint64_t draw,
                   std::size_t max_new) {
  const auto frames_used = select_frames(clip, sampling, draw);
  auto frames = gather_frames<float>(clip, frames_used);
  return tokenizer.decode(model.generate(frames, frames_used, prompt, max_new));
}

template class VideoLanguageModel<float>;
template class VideoLanguageModel<double>;
template Tensor<float> gather_frames(const VideoClip&, std::span<const long>);
template Tensor<double> gather_frames(const VideoClip&, std::span<const long>);

}  // namespace tempo
