#include <random>
#include <sstream>

#include "tempo/data.hpp"

namespace tempo {

std::string to_string(SuiteKind k) {
  switch (k) {
    case SuiteKind::order: return "order";
    case SuiteKind::short_clips: return "short";
    default: return "long";
  }
}

SuiteKind parse_suite(const std::string& s) {
  if (s == "order") return SuiteKind::order;
  if (s == "short") return SuiteKind::short_clips;
  if (s == "long") return SuiteKind::long_clips;
  throw ValidationError("unknown QA suite '" + s + "'");
}

QASuite generate_suite(SuiteKind kind, std::uint64_t seed, std::size_t num_clips, const RenderOptions& render) {
  CorpusOptions opts;
  opts.seed = seed;
  opts.num_clips = num_clips;
  opts.render = render;
  switch (kind) {
    case SuiteKind::order:
    case SuiteKind::short_clips:
      opts.min_frames = 8;
      opts.max_frames = 16;
      opts.min_events = 2;
      opts.max_events = 3;
      break;
    case SuiteKind::long_clips:
      opts.min_frames = opts.max_frames = 64;
      opts.min_events = 4;
      opts.max_events = 6;
      opts.first_event_frames = std::make_pair(std::size_t{1}, std::size_t{3});
      break;
  }
  QASuite suite;
  suite.kind = kind;
  suite.clips = generate_corpus(opts);
  std::mt19937_64 rng(seed ^ 0x5151515151515151ULL);
  for (std::size_t c = 0; c < suite.clips.size(); ++c) {
    const auto& clip = suite.clips[c];
    const auto& ev = clip.events;
    QAItem item;
    item.clip = c;
    if (kind == SuiteKind::order) {
      if (std::uniform_int_distribution<int>(0, 1)(rng) == 0) {
        item.kind = "first";
        item.question = "What happens first in the video?";
        item.answer = ev.front().caption;
      } else {
        std::size_t i = std::uniform_int_distribution<std::size_t>(0, ev.size() - 2)(rng);
        std::size_t j = std::uniform_int_distribution<std::size_t>(i + 1, ev.size() - 1)(rng);
        if (std::uniform_int_distribution<int>(0, 1)(rng) == 0) std::swap(i, j);
        item.kind = "before";
        item.question = "Does " + ev[i].caption + " happen before " + ev[j].caption + "?";
        item.answer = i < j ? "yes" : "no";
      }
    } else if (kind == SuiteKind::short_clips) {
      if (std::uniform_int_distribution<int>(0, 1)(rng) == 0) {
        const auto& e = ev[std::uniform_int_distribution<std::size_t>(0, ev.size() - 1)(rng)];
        item.kind = "recall";
        item.question = "What happens from frame " + std::to_string(e.start) + " to frame " + std::to_string(e.end) + "?";
        item.answer = e.caption;
      } else {
        item.kind = "count";
        item.question = "How many events happen in the video?";
        item.answer = std::to_string(ev.size());
      }
    } else {
      item.kind = "first";
      item.question = "What happens first in the video?";
      item.answer = ev.front().caption;
    }
    suite.items.push_back(std::move(item));
  }
  return suite;
}

std::string normalize_answer(const std::string& s) {
  std::istringstream in(s);
  std::string word, out;
  while (in >> word) {
    if (!out.empty()) out += ' ';
    out += word;
  }
  return out;
}

}  // namespace tempo
