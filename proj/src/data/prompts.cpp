#include <regex>

#include "tempo/data.hpp"

namespace tempo {

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::VC: return "VC";
    case Scheme::MC: return "MC";
    case Scheme::MG: return "MG";
    default: return "DC";
  }
}

Scheme parse_scheme(const std::string& s) {
  if (s == "VC") return Scheme::VC;
  if (s == "MC") return Scheme::MC;
  if (s == "MG") return Scheme::MG;
  if (s == "DC") return Scheme::DC;
  throw ValidationError("unknown training scheme '" + s + "'");
}

TrainingSample build_sample(const VideoClip& clip, Scheme scheme, std::optional<std::size_t> event_index) {
  TrainingSample out;
  out.clip_id = clip.clip_id;
  out.scheme = scheme;
  const Event* event = nullptr;
  if (scheme == Scheme::MC || scheme == Scheme::MG) {
    if (!event_index) throw ValidationError(to_string(scheme) + " needs an event index");
    if (*event_index >= clip.events.size()) {
      throw ValidationError("event index " + std::to_string(*event_index) + " out of range for " + clip.clip_id);
    }
    event = &clip.events[*event_index];
  }
  const auto s = event ? std::to_string(event->start) : std::string();
  const auto e = event ? std::to_string(event->end) : std::string();
  switch (scheme) {
    case Scheme::VC:
      out.prompt = "What does the video describe?";
      out.target = clip.global_caption;
      break;
    case Scheme::MC:
      out.prompt = "Explain what happened from frame " + s + " to frame " + e + " in the video.";
      out.target = event->caption + ".";
      break;
    case Scheme::MG:
      out.prompt = "During which frames in the video can we observe ''" + event->caption + "``?";
      out.target = "from frame " + s + " to frame " + e;
      break;
    case Scheme::DC:
      out.prompt = "Can you give me a breakdown of the occurrences at different timestamps in the video?";
      for (std::size_t i = 0; i < clip.events.size(); ++i) {
        const auto& ev = clip.events[i];
        if (i) out.target += " ";
        out.target += ev.caption + ", from " + std::to_string(ev.start) + " to " + std::to_string(ev.end) + ".";
      }
      break;
  }
  return out;
}

std::optional<std::pair<long, long>> parse_grounding_target(const std::string& target) {
  static const std::regex pattern(R"(^from frame ([1-9][0-9]*) to frame ([1-9][0-9]*)$)");
  std::smatch m;
  if (!std::regex_match(target, m, pattern)) return std::nullopt;
  return std::make_pair(std::stol(m[1].str()), std::stol(m[2].str()));
}

}  // namespace tempo
