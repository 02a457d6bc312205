#include <chrono>
#include <fstream>
#include <set>

#include "tempo/recipe.hpp"

namespace tempo {

namespace {

constexpr std::uint64_t kCaptionSalt = 0xca97104ca97104caULL;

std::vector<const MixtureOfExperts<float>*> moe_layers(const VideoLanguageModel<float>& model) {
  std::vector<const MixtureOfExperts<float>*> out;
  if (model.interface().config().is_qformer()) {
    for (const auto& layer : model.interface().qformer().layers()) {
      if (layer.moe) out.push_back(&layer.moe->moe());
    }
  }
  for (const auto& block : model.lm().moe_blocks()) out.push_back(&block.moe());
  return out;
}

Json load_stats_json(const LoadStats& s) {
  return {{"assignment_fraction", s.assignment_fraction},
          {"mean_probability", s.mean_probability},
          {"tokens", s.tokens}};
}

LoadStats load_stats_from_json(const Json& j) {
  LoadStats s;
  s.assignment_fraction = j.at("assignment_fraction").get<std::vector<double>>();
  s.mean_probability = j.at("mean_probability").get<std::vector<double>>();
  s.tokens = j.at("tokens").get<std::size_t>();
  return s;
}

TrainOptions train_options(const RecipeConfig& cfg, std::size_t steps, double lr, std::size_t batch,
                           std::uint64_t seed) {
  TrainOptions t;
  t.steps = steps;
  t.batch_size = batch;
  t.adam.lr = lr;
  t.adam.weight_decay = cfg.finetune.weight_decay;
  t.clip_norm = cfg.finetune.clip_norm;
  t.seed = seed;
  t.sampling = cfg.finetune.sampling;
  t.warmup_steps = cfg.finetune.warmup_steps;
  return t;
}

}  // namespace

Tokenizer recipe_tokenizer(const std::vector<std::string>& event_vocabulary) {
  std::vector<std::string> texts;
  for (const auto& c : event_vocabulary) texts.push_back(c);
  CorpusOptions opts;
  opts.seed = 0;
  opts.num_clips = 32;
  opts.vocabulary = event_vocabulary;
  opts.render.patches = 1;
  opts.render.visual_dim = 1;
  const auto clips = generate_corpus(opts);
  for (const auto& s : scheme_samples(clips, {Scheme::VC, Scheme::MC, Scheme::MG, Scheme::DC})) {
    texts.push_back(s.prompt);
    texts.push_back(s.target);
  }
  RenderOptions tiny;
  tiny.patches = 1;
  tiny.visual_dim = 1;
  for (auto kind : {SuiteKind::order, SuiteKind::short_clips, SuiteKind::long_clips}) {
    for (const auto& item : generate_suite(kind, 0, 64, tiny).items) {
      texts.push_back(item.question);
      texts.push_back(item.answer);
    }
  }
  return Tokenizer::fit(texts);
}

std::vector<VideoClip> temporal_corpus(const RecipeConfig& config, std::uint64_t seed) {
  if (config.step < 2) return {};
  if (!config.temporal.corpus_path.empty()) return read_corpus(config.temporal.corpus_path, config.render);
  CorpusOptions opts;
  opts.seed = mix_seed(config.data_seed, seed);
  opts.num_clips = config.temporal.clips;
  opts.render = config.render;
  return generate_corpus(opts);
}

std::vector<TrainingSample> scheme_samples(const std::vector<VideoClip>& clips, const std::vector<Scheme>& schemes) {
  std::vector<TrainingSample> out;
  for (const auto& clip : clips) {
    for (auto scheme : schemes) {
      if (scheme == Scheme::VC || scheme == Scheme::DC) {
        out.push_back(build_sample(clip, scheme));
      } else {
        for (std::size_t e = 0; e < clip.events.size(); ++e) out.push_back(build_sample(clip, scheme, e));
      }
    }
  }
  return out;
}

QAScore score_answers(const QASuite& suite, const Answerer& answerer) {
  if (suite.items.empty()) throw ValidationError("cannot score an empty QA suite");
  QAScore score;
  std::map<std::string, std::size_t> correct;
  std::size_t total_correct = 0;
  for (const auto& item : suite.items) {
    const bool ok = normalize_answer(answerer(item, suite.clips.at(item.clip))) == normalize_answer(item.answer);
    total_correct += ok;
    correct[item.kind] += ok;
    ++score.count_by_kind[item.kind];
  }
  score.questions = suite.items.size();
  score.accuracy = static_cast<double>(total_correct) / static_cast<double>(score.questions);
  for (const auto& [kind, n] : score.count_by_kind) {
    score.by_kind[kind] = static_cast<double>(correct[kind]) / static_cast<double>(n);
  }
  return score;
}

QAScore evaluate_qa(const VideoLanguageModel<float>& model, const Tokenizer& tokenizer, const QASuite& suite,
                    const FrameSampling& sampling, std::size_t max_new_tokens, std::uint64_t draw_seed) {
  const QAItem* first = suite.items.empty() ? nullptr : &suite.items.front();
  return score_answers(suite, [&](const QAItem& item, const VideoClip& clip) {
    const auto index = static_cast<std::uint64_t>(&item - first);
    return answer(model, tokenizer, clip, tokenizer.encode(item.question), sampling, mix_seed(draw_seed, index),
                  max_new_tokens);
  });
}

double caption_token_accuracy(const VideoLanguageModel<float>& model, const Tokenizer& tokenizer,
                              const std::vector<VideoClip>& clips, const FrameSampling& sampling,
                              std::size_t max_new_tokens, std::uint64_t draw_seed) {
  if (clips.empty()) return 0.0;
  double total = 0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto sample = build_sample(clips[i], Scheme::VC);
    const auto reference = tokenizer.encode(sample.target);
    const auto used = select_frames(clips[i], sampling, mix_seed(draw_seed, i));
    const auto frames = gather_frames<float>(clips[i], used);
    const auto produced =
        model.generate(frames, used, tokenizer.encode(sample.prompt), std::max(max_new_tokens, reference.size()));
    std::size_t hits = 0;
    for (std::size_t t = 0; t < reference.size() && t < produced.size(); ++t) hits += produced[t] == reference[t];
    total += reference.empty() ? 1.0 : static_cast<double>(hits) / static_cast<double>(reference.size());
  }
  return total / static_cast<double>(clips.size());
}

EvalReport evaluate_recipe_model(const RecipeConfig& config, const VideoLanguageModel<float>& model,
                                 const Tokenizer& tokenizer) {
  EvalReport report;
  const auto suite = generate_suite(config.finetune.suite, config.eval_seed, config.eval.clips, config.render);
  report.qa = evaluate_qa(model, tokenizer, suite, config.finetune.sampling, config.eval.max_new_tokens,
                          config.eval_seed);

  CorpusOptions captions;
  captions.seed = config.eval_seed ^ kCaptionSalt;
  captions.num_clips = config.eval.caption_clips;
  captions.render = config.render;
  report.caption_token_accuracy = caption_token_accuracy(model, tokenizer, generate_corpus(captions),
                                                         config.finetune.sampling, config.eval.max_new_tokens,
                                                         config.eval_seed ^ kCaptionSalt);

  const auto layers = moe_layers(model);
  if (!layers.empty()) {
    const std::size_t experts = layers.front()->config().num_experts;
    LoadStats total;
    total.assignment_fraction.assign(experts, 0.0);
    total.mean_probability.assign(experts, 0.0);
    NoGradGuard guard;
    for (std::size_t i = 0; i < suite.items.size(); ++i) {
      const auto& item = suite.items[i];
      const auto& clip = suite.clips[item.clip];
      const auto used = select_frames(clip, config.finetune.sampling, mix_seed(config.eval_seed, i));
      for (auto* l : layers) {
        l->clear_decisions();
        l->record_decisions(true);
      }
      model.loss(gather_frames<float>(clip, used), used, tokenizer.encode(item.question),
                 tokenizer.encode(item.answer));
      for (auto* l : layers) {
        l->record_decisions(false);
        const auto s = load_stats(l->decisions(), experts);
        for (std::size_t e = 0; e < experts; ++e) {
          total.assignment_fraction[e] += s.assignment_fraction[e] * static_cast<double>(s.tokens);
          total.mean_probability[e] += s.mean_probability[e] * static_cast<double>(s.tokens);
        }
        total.tokens += s.tokens;
        l->clear_decisions();
      }
    }
    if (total.tokens > 0) {
      for (std::size_t e = 0; e < experts; ++e) {
        total.assignment_fraction[e] /= static_cast<double>(total.tokens);
        total.mean_probability[e] /= static_cast<double>(total.tokens);
      }
    }
    report.routing = total;
  }
  return report;
}

Json EvalReport::deterministic_json() const {
  Json j;
  j["name"] = name;
  if (!axis.empty()) {
    j["axis"] = axis;
    j["row"] = row;
  }
  j["step"] = step;
  j["seed"] = seed;
  j["accuracy"] = qa.accuracy;
  j["questions"] = qa.questions;
  j["accuracy_by_kind"] = qa.by_kind;
  j["questions_by_kind"] = qa.count_by_kind;
  j["caption_token_accuracy"] = caption_token_accuracy;
  j["temporal_losses"] = temporal_losses;
  j["finetune_losses"] = finetune_losses;
  j["routing"] = routing ? load_stats_json(*routing) : Json(nullptr);
  j["checkpoint"] = checkpoint;
  j["config"] = config;
  return j;
}

Json EvalReport::to_json() const {
  Json j = deterministic_json();
  j["wall_seconds"] = wall_seconds;
  return j;
}

EvalReport EvalReport::from_json(const Json& j) {
  EvalReport r;
  try {
    r.name = j.at("name").get<std::string>();
    r.axis = j.value("axis", std::string());
    r.row = j.value("row", std::string());
    r.step = j.at("step").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.qa.accuracy = j.at("accuracy").get<double>();
    r.qa.questions = j.at("questions").get<std::size_t>();
    r.qa.by_kind = j.at("accuracy_by_kind").get<std::map<std::string, double>>();
    r.qa.count_by_kind = j.at("questions_by_kind").get<std::map<std::string, std::size_t>>();
    r.caption_token_accuracy = j.at("caption_token_accuracy").get<double>();
    r.temporal_losses = j.at("temporal_losses").get<std::vector<double>>();
    r.finetune_losses = j.at("finetune_losses").get<std::vector<double>>();
    if (!j.at("routing").is_null()) r.routing = load_stats_from_json(j.at("routing"));
    r.checkpoint = j.value("checkpoint", std::string());
    r.config = j.value("config", Json());
    r.wall_seconds = j.value("wall_seconds", 0.0);
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed report: ") + e.what());
  }
  return r;
}

RunArtifacts run_recipe(const RecipeConfig& config) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const std::uint64_t seed = config.seed;

  const auto corpus = temporal_corpus(config, seed);
  std::set<std::string> captions;
  for (const auto& c : default_event_vocabulary()) captions.insert(c);
  for (const auto& clip : corpus)
    for (const auto& e : clip.events) captions.insert(e.caption);
  const Tokenizer tokenizer = recipe_tokenizer({captions.begin(), captions.end()});

  RunArtifacts out;
  out.model = std::make_unique<VideoLanguageModel<float>>(config.model_config(tokenizer.size()), seed);
  auto& model = *out.model;

  if (config.step >= 2 && config.temporal.steps > 0) {
    std::map<std::string, const VideoClip*> by_id;
    for (const auto& clip : corpus) by_id[clip.clip_id] = &clip;
    std::vector<Example> examples;
    for (const auto& s : scheme_samples(corpus, config.schemes)) {
      examples.push_back({by_id.at(s.clip_id), tokenizer.encode(s.prompt), tokenizer.encode(s.target)});
    }
    Trainer trainer(model, train_options(config, config.temporal.steps, config.temporal.lr,
                                         config.temporal.batch_size, mix_seed(seed, 1)));
    out.report.temporal_losses = trainer.run(examples);
  }

  const auto train = generate_suite(config.finetune.suite, mix_seed(config.data_seed, seed),
                                    config.finetune.train_clips, config.render);
  std::vector<Example> examples;
  for (const auto& item : train.items) {
    examples.push_back({&train.clips[item.clip], tokenizer.encode(item.question), tokenizer.encode(item.answer)});
  }
  Trainer trainer(model, train_options(config, config.finetune.steps, config.finetune.lr,
                                       config.finetune.batch_size, mix_seed(seed, 2)));
  if (config.finetune.steps > 0) out.report.finetune_losses = trainer.run(examples);
  out.final_state = trainer.state();

  auto evaluated = evaluate_recipe_model(config, model, tokenizer);
  evaluated.temporal_losses = std::move(out.report.temporal_losses);
  evaluated.finetune_losses = std::move(out.report.finetune_losses);
  out.report = std::move(evaluated);
  out.report.name = config.name;
  out.report.step = config.step;
  out.report.seed = seed;
  RecipeConfig recorded = config;
  recorded.seeds.clear();
  recorded.output_dir.clear();
  out.report.config = recorded.to_json();

  if (!config.output_dir.empty()) {
    const std::filesystem::path dir(config.output_dir);
    std::filesystem::create_directories(dir);
    const auto ckpt = dir / (config.name + "-seed" + std::to_string(seed) + ".ckpt");
    write_checkpoint(ckpt, out.final_state);
    tokenizer.save(dir / "vocab.json");
    out.report.checkpoint = ckpt.string();
  }
  out.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (!config.output_dir.empty()) {
    std::ofstream log(std::filesystem::path(config.output_dir) / "report.jsonl", std::ios::app);
    log << out.report.to_json().dump() << '\n';
  }
  return out;
}

EvalReport run_step(const RecipeConfig& config) { return run_recipe(config).report; }

}  // namespace tempo
