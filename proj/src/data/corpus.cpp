#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "tempo/data.hpp"

namespace tempo {
namespace {

using Rng = std::mt19937_64;
using json = nlohmann::json;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string join_captions(const std::vector<Event>& events) {
  std::string out;
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (i) out += " then ";
    out += events[i].caption;
  }
  return out;
}

}  // namespace

void VideoClip::validate() const {
  if (num_frames == 0) throw ValidationError(clip_id + ": clip has no frames");
  if (!(fps > 0)) throw ValidationError(clip_id + ": fps must be positive");
  long prev_end = 0;
  for (const auto& e : events) {
    if (e.start < 1 || e.end < e.start || e.end > static_cast<long>(num_frames)) {
      throw ValidationError(clip_id + ": event span " + std::to_string(e.start) + ".." + std::to_string(e.end) +
                            " outside 1.." + std::to_string(num_frames));
    }
    if (e.start <= prev_end) throw ValidationError(clip_id + ": events overlap or are out of order");
    prev_end = e.end;
  }
}

std::optional<std::size_t> VideoClip::event_at(long frame) const {
  for (std::size_t i = 0; i < events.size(); ++i)
    if (events[i].start <= frame && frame <= events[i].end) return i + 1;
  return std::nullopt;
}

std::vector<std::string> default_event_vocabulary() {
  return {"dog running",   "man cooking",    "woman dancing", "bird flying",
          "child swimming", "cat sleeping",  "boy jumping",   "girl singing",
          "horse galloping", "chef chopping", "baby crawling", "car driving"};
}

Tensor<float> caption_signature(const std::string& caption, const RenderOptions& render) {
  Rng rng(fnv1a(caption));
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<float> data(render.patches * render.visual_dim);
  for (auto& v : data) v = normal(rng);
  return Tensor<float>({render.patches, render.visual_dim}, std::move(data));
}

void render_frames(VideoClip& clip, const RenderOptions& render) {
  clip.validate();
  const std::size_t per_frame = render.patches * render.visual_dim;
  std::vector<float> data(clip.num_frames * per_frame, 0.0f);
  Rng rng(clip.feature_seed);
  std::normal_distribution<float> jitter(0.0f, static_cast<float>(render.event_jitter));
  std::normal_distribution<float> noise(0.0f, static_cast<float>(render.frame_noise));
  for (const auto& e : clip.events) {
    auto base = caption_signature(e.caption, render);
    std::vector<float> centre(base.data().begin(), base.data().end());
    for (auto& v : centre) v += jitter(rng);
    for (long f = e.start; f <= e.end; ++f) {
      float* out = data.data() + static_cast<std::size_t>(f - 1) * per_frame;
      for (std::size_t i = 0; i < per_frame; ++i) out[i] = centre[i] + noise(rng);
    }
  }
  clip.frames = Tensor<float>({clip.num_frames, render.patches, render.visual_dim}, std::move(data));
}

void CorpusOptions::validate() const {
  if (min_frames < 1 || min_frames > max_frames) throw ValidationError("invalid frame range");
  if (min_events < 1 || min_events > max_events) throw ValidationError("invalid event-count range");
  if (max_events > vocabulary.size()) throw ValidationError("more events per clip than event types");
  if (min_events > min_frames) throw ValidationError("min_events exceeds min_frames");
  if (vocabulary.size() < 2) throw ValidationError("event vocabulary needs at least two types");
  if (!(fps > 0)) throw ValidationError("fps must be positive");
  if (first_event_frames) {
    auto [lo, hi] = *first_event_frames;
    if (lo < 1 || lo > hi || hi + max_events - 1 > min_frames) {
      throw ValidationError("first_event_frames does not fit the frame range");
    }
  }
}

std::vector<VideoClip> generate_corpus(const CorpusOptions& options) {
  options.validate();
  Rng rng(options.seed);
  std::vector<VideoClip> clips;
  clips.reserve(options.num_clips);
  for (std::size_t i = 0; i < options.num_clips; ++i) {
    VideoClip clip;
    clip.clip_id = "clip-" + std::to_string(options.seed) + "-" + std::to_string(i);
    clip.fps = options.fps;
    clip.num_frames = std::uniform_int_distribution<std::size_t>(options.min_frames, options.max_frames)(rng);
    const std::size_t n_events = std::uniform_int_distribution<std::size_t>(
        options.min_events, std::min(options.max_events, clip.num_frames))(rng);

    auto pool = options.vocabulary;
    for (std::size_t k = 0; k < n_events; ++k) {
      std::swap(pool[k], pool[std::uniform_int_distribution<std::size_t>(k, pool.size() - 1)(rng)]);
    }

    long first_end = 0;
    std::size_t remaining_events = n_events;
    if (options.first_event_frames && n_events > 1) {
      auto [lo, hi] = *options.first_event_frames;
      first_end = static_cast<long>(std::uniform_int_distribution<std::size_t>(lo, hi)(rng));
      remaining_events = n_events - 1;
    }
    // Cut the remaining frames into contiguous non-empty spans.
    const long rest = static_cast<long>(clip.num_frames) - first_end;
    std::vector<long> cuts;
    for (long c = 1; c < rest; ++c) cuts.push_back(c);
    for (std::size_t k = 0; k + 1 < remaining_events; ++k) {
      std::swap(cuts[k], cuts[std::uniform_int_distribution<std::size_t>(k, cuts.size() - 1)(rng)]);
    }
    cuts.resize(remaining_events - 1);
    std::sort(cuts.begin(), cuts.end());

    std::vector<long> bounds;
    if (first_end > 0) bounds.push_back(first_end);
    for (long c : cuts) bounds.push_back(first_end + c);
    bounds.push_back(static_cast<long>(clip.num_frames));
    long start = 1;
    for (std::size_t k = 0; k < n_events; ++k) {
      clip.events.push_back({start, bounds[k], pool[k]});
      start = bounds[k] + 1;
    }
    clip.global_caption = join_captions(clip.events);
    clip.feature_seed = splitmix(options.seed ^ splitmix(i + 1));
    render_frames(clip, options.render);
    clips.push_back(std::move(clip));
  }
  return clips;
}

std::pair<long, long> timestamps_to_frames(double start_s, double end_s, double fps, long num_frames) {
  if (!(start_s >= 0) || !(end_s >= 0)) throw ValidationError("timestamps must be non-negative");
  if (start_s > end_s) {
    throw ValidationError("start timestamp " + std::to_string(start_s) + " is after end " + std::to_string(end_s));
  }
  if (!(fps > 0) || num_frames < 1) throw ValidationError("fps and frame count must be positive");
  const long s = static_cast<long>(std::floor(start_s * fps)) + 1;
  const long e = std::min(num_frames, static_cast<long>(std::floor(end_s * fps)) + 1);
  return {std::min(s, e), e};
}

std::string clip_to_json_line(const VideoClip& clip) {
  json events = json::array();
  for (const auto& e : clip.events) events.push_back({{"start", e.start}, {"end", e.end}, {"caption", e.caption}});
  json j = {{"clip_id", clip.clip_id},
            {"fps", clip.fps},
            {"F", clip.num_frames},
            {"events", events},
            {"global_caption", clip.global_caption},
            {"feature_seed", clip.feature_seed}};
  return j.dump();
}

VideoClip clip_from_json_line(const std::string& line, const RenderOptions& render) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("malformed record: ") + e.what());
  }
  VideoClip clip;
  try {
    clip.clip_id = j.at("clip_id").get<std::string>();
    clip.fps = j.at("fps").get<double>();
    const long f = j.at("F").get<long>();
    if (f < 1) throw ValidationError("F must be positive");
    clip.num_frames = static_cast<std::size_t>(f);
    for (const auto& e : j.at("events")) {
      Event ev;
      ev.caption = e.at("caption").get<std::string>();
      if (e.contains("start")) {
        ev.start = e.at("start").get<long>();
        ev.end = e.at("end").get<long>();
      } else {
        std::tie(ev.start, ev.end) =
            timestamps_to_frames(e.at("start_s").get<double>(), e.at("end_s").get<double>(), clip.fps, f);
      }
      clip.events.push_back(std::move(ev));
    }
    clip.global_caption = j.contains("global_caption") ? j.at("global_caption").get<std::string>()
                                                       : join_captions(clip.events);
    clip.feature_seed = j.at("feature_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad record: ") + e.what());
  }
  render_frames(clip, render);
  return clip;
}

void write_corpus(const std::filesystem::path& path, const std::vector<VideoClip>& clips) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& c : clips) out << clip_to_json_line(c) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<VideoClip> read_corpus(const std::filesystem::path& path, const RenderOptions& render) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<VideoClip> clips;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      clips.push_back(clip_from_json_line(line, render));
    } catch (const std::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return clips;
}

bool same_clip(const VideoClip& a, const VideoClip& b) {
  if (a.clip_id != b.clip_id || a.fps != b.fps || a.num_frames != b.num_frames || a.events != b.events ||
      a.global_caption != b.global_caption || a.feature_seed != b.feature_seed) {
    return false;
  }
  if (a.frames.defined() != b.frames.defined()) return false;
  if (!a.frames.defined()) return true;
  return a.frames.shape() == b.frames.shape() &&
         std::equal(a.frames.data().begin(), a.frames.data().end(), b.frames.data().begin());
}

}  // namespace tempo
