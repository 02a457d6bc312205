#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tempo/model.hpp"

namespace tempo {

using Json = nlohmann::json;

struct TemporalStageConfig {
  std::string corpus_path;  // empty: generate `clips` clips from data_seed
  std::size_t clips = 2000;
  std::size_t steps = 300;
  double lr = 1e-3;
  std::size_t batch_size = 8;
};

struct FinetuneConfig {
  SuiteKind suite = SuiteKind::order;
  std::size_t train_clips = 3000;
  std::size_t steps = 120;
  double lr = 1e-3;
  std::size_t batch_size = 8;
  std::size_t warmup_steps = 20;
  double clip_norm = 1.0;
  double weight_decay = 0.0;
  FrameSampling sampling;
};

struct EvalConfig {
  std::size_t clips = 500;  // one question per clip
  std::size_t caption_clips = 20;
  std::size_t max_new_tokens = 12;
};

struct RecipeConfig {
  std::string name = "run";
  int step = 1;
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds;  // multi-seed runs; empty means {seed}
  std::uint64_t data_seed = 2024;
  std::uint64_t eval_seed = 9001;
  InterfaceConfig interface;
  std::size_t bank_capacity = 0;
  std::optional<MoEConfig> moe;
  std::vector<Scheme> schemes;
  std::string lm_preset = "small";
  RenderOptions render;
  TemporalStageConfig temporal;
  FinetuneConfig finetune;
  EvalConfig eval;
  std::string output_dir;  // empty: no files written

  // Enforces the step progression: 0 = linear interface only, 1 adds the
  // interface variants, 2 adds (and requires) temporal schemes, 3 adds the
  // memory bank, 4 adds MoE. Throws ValidationError.
  void validate() const;
  std::vector<std::uint64_t> seed_list() const;
  ModelConfig model_config(std::size_t vocab_size) const;

  Json to_json() const;
  static RecipeConfig from_json(const Json& j);
};

RecipeConfig load_recipe(const std::filesystem::path& path);
// "a.b.c=value"; value is parsed as JSON when possible, else taken as a string.
void apply_override(Json& config, const std::string& assignment);

// Fixed vocabulary covering every prompt, target and question the recipe
// can produce, so all configurations share one tokenizer.
Tokenizer recipe_tokenizer(const std::vector<std::string>& event_vocabulary = default_event_vocabulary());

// Temporal-stage clips: read from corpus_path, or generated from the data
// seed mixed with `seed`. Empty below step 2.
std::vector<VideoClip> temporal_corpus(const RecipeConfig& config, std::uint64_t seed);
// Every scheme sample of `clips` for the given schemes (MC and MG once per event).
std::vector<TrainingSample> scheme_samples(const std::vector<VideoClip>& clips, const std::vector<Scheme>& schemes);

struct QAScore {
  double accuracy = 0;
  std::size_t questions = 0;
  std::map<std::string, double> by_kind;
  std::map<std::string, std::size_t> count_by_kind;
};

using Answerer = std::function<std::string(const QAItem&, const VideoClip&)>;
// Exact match after whitespace normalization. Throws on an empty suite.
QAScore score_answers(const QASuite& suite, const Answerer& answerer);
QAScore evaluate_qa(const VideoLanguageModel<float>& model, const Tokenizer& tokenizer, const QASuite& suite,
                    const FrameSampling& sampling, std::size_t max_new_tokens, std::uint64_t draw_seed);

// Fraction of reference token positions reproduced exactly, averaged over clips.
double caption_token_accuracy(const VideoLanguageModel<float>& model, const Tokenizer& tokenizer,
                              const std::vector<VideoClip>& clips, const FrameSampling& sampling,
                              std::size_t max_new_tokens, std::uint64_t draw_seed);

struct EvalReport {
  std::string name;
  std::string axis;  // grid axis and row label when produced by a grid
  std::string row;
  int step = 0;
  std::uint64_t seed = 0;
  QAScore qa;
  double caption_token_accuracy = 0;
  std::vector<double> temporal_losses;
  std::vector<double> finetune_losses;
  std::optional<LoadStats> routing;
  double wall_seconds = 0;
  std::string checkpoint;
  Json config;

  // Everything except wall-clock time: identical for identical (config, seed).
  Json deterministic_json() const;
  Json to_json() const;
  static EvalReport from_json(const Json& j);
};

// QA accuracy, caption token accuracy and routing statistics of a trained
// model on the config's evaluation suite. Routing is measured on
// teacher-forced passes over the gold answers.
EvalReport evaluate_recipe_model(const RecipeConfig& config, const VideoLanguageModel<float>& model,
                                 const Tokenizer& tokenizer);

// Everything a finished run produced; the model is kept for callers that
// want to inspect or evaluate it further.
struct RunArtifacts {
  EvalReport report;
  std::unique_ptr<VideoLanguageModel<float>> model;
  NamedTensors final_state;
};

// Trains per config (temporal stage over `schemes` first when step >= 2,
// then downstream finetuning) and evaluates. Validation happens before any
// training. Writes report.jsonl and a checkpoint under output_dir when set.
RunArtifacts run_recipe(const RecipeConfig& config);
EvalReport run_step(const RecipeConfig& config);

enum class GridAxis { interface, S, B, moe_mode, E, k, schemes };
std::string to_string(GridAxis a);
GridAxis parse_grid_axis(const std::string& s);

struct GridRow {
  std::string label;
  std::vector<EvalReport> reports;  // one per seed
};

struct GridResult {
  GridAxis axis = GridAxis::interface;
  std::string mirrors;  // table of the source study this grid mirrors
  std::string row_header;  // first column title; defaults to the axis name
  std::vector<GridRow> rows;
};

// Derived configs for every grid point of `axis`, labelled.
std::vector<std::pair<std::string, RecipeConfig>> grid_points(const RecipeConfig& base, GridAxis axis);
// One run per grid point per seed, spread over `workers` threads. Results
// do not depend on scheduling.
GridResult ablation_grid(const RecipeConfig& base, GridAxis axis, std::size_t workers = 1);

struct Summary {
  double mean = 0;
  double sd = 0;  // sample standard deviation, 0 for a single value
};
Summary summarize(const std::vector<double>& values);

// Aligned-text table with a metadata header naming the mirrored table.
std::string render_table(const GridResult& grid);
Json grid_to_json(const GridResult& grid);
// Groups reports into tables: grid reports by axis and row, single runs by
// step with one row per run name.
std::vector<GridResult> group_reports(const std::vector<EvalReport>& reports);
GridResult grid_from_json(const Json& j);

}  // namespace tempo
