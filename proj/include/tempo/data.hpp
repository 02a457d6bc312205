#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tempo/tensor.hpp"

namespace tempo {

struct Event {
  long start = 1;  // 1-based inclusive frame span
  long end = 1;
  std::string caption;

  bool operator==(const Event&) const = default;
};

// How frame features are rendered from an event script.
struct RenderOptions {
  std::size_t patches = 4;     // P
  std::size_t visual_dim = 32; // d_v
  double event_jitter = 0.3;   // per-event offset around the caption signature
  double frame_noise = 0.3;    // per-frame iid noise

  bool operator==(const RenderOptions&) const = default;
};

struct VideoClip {
  std::string clip_id;
  double fps = 1.0;
  std::size_t num_frames = 0;  // F
  std::vector<Event> events;
  std::string global_caption;
  std::uint64_t feature_seed = 0;
  Tensor<float> frames;  // [F×P×d_v]

  // Throws ValidationError if spans are out of range, overlapping or unordered.
  void validate() const;
  // 1-based index of the event covering `frame`, or nullopt.
  std::optional<std::size_t> event_at(long frame) const;
};

std::vector<std::string> default_event_vocabulary();

// Gaussian [P×d_v] signature, a pure function of the caption text.
Tensor<float> caption_signature(const std::string& caption, const RenderOptions& render);

// Fills clip.frames from its event script and feature_seed.
void render_frames(VideoClip& clip, const RenderOptions& render);

struct CorpusOptions {
  std::uint64_t seed = 0;
  std::size_t num_clips = 0;
  std::size_t min_frames = 8;
  std::size_t max_frames = 16;
  std::size_t min_events = 2;
  std::size_t max_events = 3;
  // When set, the first event lasts between first..second frames.
  std::optional<std::pair<std::size_t, std::size_t>> first_event_frames;
  double fps = 1.0;
  std::vector<std::string> vocabulary = default_event_vocabulary();
  RenderOptions render;

  void validate() const;
};

// Each clip is a random sequence of distinct events that partition its frames.
std::vector<VideoClip> generate_corpus(const CorpusOptions& options);

// (floor(start_s·fps)+1, min(F, floor(end_s·fps)+1)).
std::pair<long, long> timestamps_to_frames(double start_s, double end_s, double fps, long num_frames);

enum class Scheme { VC, MC, MG, DC };
std::string to_string(Scheme s);
Scheme parse_scheme(const std::string& s);

struct TrainingSample {
  std::string clip_id;
  Scheme scheme = Scheme::VC;
  std::string prompt;
  std::string target;
};

// event_index is 0-based and required for MC and MG.
TrainingSample build_sample(const VideoClip& clip, Scheme scheme,
                            std::optional<std::size_t> event_index = std::nullopt);

// Inverse of the MG target: "from frame {s} to frame {e}" -> (s, e).
std::optional<std::pair<long, long>> parse_grounding_target(const std::string& target);

// Line-delimited JSON, one clip per line. Frames are not stored; they are
// re-rendered from feature_seed on load.
std::string clip_to_json_line(const VideoClip& clip);
VideoClip clip_from_json_line(const std::string& line, const RenderOptions& render);
void write_corpus(const std::filesystem::path& path, const std::vector<VideoClip>& clips);
std::vector<VideoClip> read_corpus(const std::filesystem::path& path, const RenderOptions& render);

bool same_clip(const VideoClip& a, const VideoClip& b);

// Synthetic VideoQA suites. Answers are read off the event script.
enum class SuiteKind { order, short_clips, long_clips };
std::string to_string(SuiteKind k);
SuiteKind parse_suite(const std::string& s);

struct QAItem {
  std::size_t clip = 0;  // index into QASuite::clips
  std::string kind;      // "first", "before", "recall", "count"
  std::string question;
  std::string answer;
};

struct QASuite {
  SuiteKind kind = SuiteKind::order;
  std::vector<VideoClip> clips;
  std::vector<QAItem> items;
};

// One question per clip.
QASuite generate_suite(SuiteKind kind, std::uint64_t seed, std::size_t num_clips,
                       const RenderOptions& render = {});

// Whitespace-collapsed and trimmed; used for exact-match scoring.
std::string normalize_answer(const std::string& s);

}  // namespace tempo
