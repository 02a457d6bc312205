#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tempo/checkpoint.hpp"
#include "tempo/data.hpp"
#include "tempo/interface.hpp"
#include "tempo/lm.hpp"
#include "tempo/optim.hpp"
#include "tempo/tokenizer.hpp"

namespace tempo {

struct ModelConfig {
  InterfaceConfig interface;
  LMConfig lm;
  std::size_t bank_capacity = 0;  // 0 = no memory bank
  std::optional<MoEConfig> moe;   // routed to the interface or the LM by placement

  void validate() const;
};

// Visual features -> interface -> toy LM.
template <typename T>
class VideoLanguageModel {
 public:
  VideoLanguageModel(const ModelConfig& cfg, std::uint64_t seed);

  // frames [F×P×d_v]; frame_numbers are the 1-based source positions. A
  // fresh bank is built per call when bank_capacity > 0.
  Tensor<T> visual_tokens(const Tensor<T>& frames, std::span<const long> frame_numbers) const;

  Tensor<T> loss(const Tensor<T>& frames, std::span<const long> frame_numbers, std::span<const int> prompt,
                 std::span<const int> target) const;
  std::vector<int> generate(const Tensor<T>& frames, std::span<const long> frame_numbers,
                            std::span<const int> prompt, std::size_t max_new) const;

  const ParameterList<T>& parameters() const { return params_; }
  ParameterList<T>& parameters() { return params_; }
  const ModelConfig& config() const { return cfg_; }
  const VisionLanguageInterface<T>& interface() const { return *interface_; }
  const ToyLM<T>& lm() const { return *lm_; }

 private:
  ModelConfig cfg_;
  std::unique_ptr<VisionLanguageInterface<T>> interface_;
  std::unique_ptr<ToyLM<T>> lm_;
  ParameterList<T> params_;
};

// Which frames of a clip the model sees.
struct FrameSampling {
  enum class Mode { all, uniform, random } mode = Mode::all;
  std::size_t count = 16;
};
std::string to_string(FrameSampling::Mode m);
FrameSampling::Mode parse_frame_sampling(const std::string& s);

// Sorted 1-based frame numbers. `draw` seeds the random mode.
std::vector<long> select_frames(const VideoClip& clip, const FrameSampling& sampling, std::uint64_t draw);
// Rows of clip.frames at the given 1-based frame numbers.
template <typename T>
Tensor<T> gather_frames(const VideoClip& clip, std::span<const long> frame_numbers);

struct Example {
  const VideoClip* clip = nullptr;
  std::vector<int> prompt;
  std::vector<int> target;
};

struct TrainOptions {
  std::size_t steps = 0;
  std::size_t batch_size = 8;
  AdamWOptions adam{1e-3, 0.9, 0.999, 1e-8, 0.0};
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  FrameSampling sampling;
  // Linear warmup, then cosine decay to min_lr_ratio·lr at `steps`.
  std::size_t warmup_steps = 20;
  double min_lr_ratio = 0.1;

  double learning_rate(long step) const;
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// Mini-batch trainer. Batch b of step s is a pure function of (seed, s), so
// a resumed run sees the same batches as an uninterrupted one.
class Trainer {
 public:
  Trainer(VideoLanguageModel<float>& model, TrainOptions options);

  // Runs one optimizer step over the examples picked for `global_step`.
  double step(const std::vector<Example>& data);
  // Runs options.steps steps; returns the per-step mean losses.
  std::vector<double> run(const std::vector<Example>& data);

  long global_step() const { return global_step_; }
  AdamW<float>& optimizer() { return optimizer_; }

  NamedTensors state() const;
  void load_state(const NamedTensors& tensors);

 private:
  VideoLanguageModel<float>& model_;
  TrainOptions options_;
  AdamW<float> optimizer_;
  long global_step_ = 0;
};

// Greedy answer for one example, decoded to text.
std::string answer(const VideoLanguageModel<float>& model, const Tokenizer& tokenizer, const VideoClip& clip,
                   const std::vector<int>& prompt, const FrameSampling& sampling, std::uint64_t draw,
                   std::size_t max_new);

}  // namespace tempo
