#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "tempo/recipe.hpp"

using namespace tempo;

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
};

void add_config_args(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.path, "recipe config (JSON)");
  cmd->add_option("--set", args.overrides, "override a config key, e.g. --set finetune.steps=50");
}

RecipeConfig resolve(const ConfigArgs& args) {
  Json j = Json::object();
  if (!args.path.empty()) {
    std::ifstream in(args.path);
    if (!in) throw ValidationError("cannot open config " + args.path);
    try {
      j = Json::parse(in);
    } catch (const Json::parse_error& e) {
      throw ValidationError(args.path + ": " + e.what());
    }
  }
  for (const auto& o : args.overrides) apply_override(j, o);
  auto cfg = RecipeConfig::from_json(j);
  cfg.validate();
  return cfg;
}

void emit(const std::vector<EvalReport>& reports) {
  for (const auto& r : reports) std::cout << r.to_json().dump() << '\n';
  for (const auto& table : group_reports(reports)) std::cout << '\n' << render_table(table);
}

int gen_data(const ConfigArgs& args, const std::string& out, const std::string& samples_out) {
  auto cfg = resolve(args);
  CorpusOptions opts;
  opts.seed = mix_seed(cfg.data_seed, cfg.seed);
  opts.num_clips = cfg.temporal.clips;
  opts.render = cfg.render;
  const auto clips = generate_corpus(opts);
  write_corpus(out, clips);
  std::cerr << "wrote " << clips.size() << " clips to " << out << '\n';
  if (!samples_out.empty()) {
    auto schemes = cfg.schemes.empty() ? std::vector<Scheme>{Scheme::VC, Scheme::MC, Scheme::MG, Scheme::DC}
                                       : cfg.schemes;
    std::ofstream s(samples_out);
    std::size_t n = 0;
    for (const auto& sample : scheme_samples(clips, schemes)) {
      s << Json{{"clip_id", sample.clip_id},
                {"scheme", to_string(sample.scheme)},
                {"prompt", sample.prompt},
                {"target", sample.target}}
               .dump()
        << '\n';
      ++n;
    }
    std::cerr << "wrote " << n << " samples to " << samples_out << '\n';
  }
  return 0;
}

int train(const ConfigArgs& args) {
  auto cfg = resolve(args);
  std::vector<EvalReport> reports;
  for (auto seed : cfg.seed_list()) {
    RecipeConfig run = cfg;
    run.seed = seed;
    run.seeds.clear();
    reports.push_back(run_step(run));
    std::cerr << cfg.name << " seed " << seed << ": accuracy " << reports.back().qa.accuracy << '\n';
  }
  emit(reports);
  return 0;
}

int eval(const ConfigArgs& args, const std::string& checkpoint, const std::string& vocab) {
  auto cfg = resolve(args);
  const auto tokenizer = vocab.empty() ? recipe_tokenizer() : Tokenizer::load(vocab);
  VideoLanguageModel<float> model(cfg.model_config(tokenizer.size()), cfg.seed);
  load_parameters(model.parameters(), read_checkpoint(checkpoint));
  auto report = evaluate_recipe_model(cfg, model, tokenizer);
  report.name = cfg.name;
  report.step = cfg.step;
  report.seed = cfg.seed;
  report.checkpoint = checkpoint;
  report.config = cfg.to_json();
  emit({report});
  return 0;
}

int grid(const ConfigArgs& args, const std::string& axis, std::size_t workers) {
  auto cfg = resolve(args);
  const auto result = ablation_grid(cfg, parse_grid_axis(axis), workers);
  const auto table = render_table(result);
  std::cout << table;
  if (!cfg.output_dir.empty()) {
    const std::filesystem::path dir(cfg.output_dir);
    std::ofstream(dir / ("grid-" + axis + ".txt")) << table;
    std::ofstream(dir / ("grid-" + axis + ".json")) << grid_to_json(result).dump(2) << '\n';
  }
  return 0;
}

int report(const std::vector<std::string>& files) {
  std::vector<EvalReport> reports;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw ValidationError("cannot open " + f);
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
      if (line.empty()) continue;
      try {
        reports.push_back(EvalReport::from_json(Json::parse(line)));
      } catch (const std::exception& e) {
        throw ValidationError(f + ":" + std::to_string(n) + ": " + e.what());
      }
    }
  }
  if (reports.empty()) throw ValidationError("no reports found");
  for (const auto& table : group_reports(reports)) std::cout << render_table(table) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tempo: temporal recipe runner for toy video-language models"};
  app.require_subcommand(1);

  ConfigArgs gen_args, train_args, eval_args, grid_args;
  std::string corpus_out, samples_out, checkpoint, vocab, axis;
  std::size_t workers = 1;
  std::vector<std::string> report_files;

  auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic temporal corpus as JSONL");
  add_config_args(gen_cmd, gen_args);
  gen_cmd->add_option("-o,--out", corpus_out, "corpus output path")->required();
  gen_cmd->add_option("--samples", samples_out, "also write scheme samples to this path");

  auto* train_cmd = app.add_subcommand("train", "run the recipe for every configured seed");
  add_config_args(train_cmd, train_args);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_config_args(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--vocab", vocab, "vocab.json written by train");

  auto* grid_cmd = app.add_subcommand("grid", "run an ablation grid");
  add_config_args(grid_cmd, grid_args);
  grid_cmd->add_option("--axis", axis, "interface, S, B, moe_mode, E, k or schemes")->required();
  grid_cmd->add_option("-j,--workers", workers, "parallel runs");

  auto* report_cmd = app.add_subcommand("report", "render tables from report.jsonl files");
  report_cmd->add_option("files", report_files, "report files")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_cmd->parsed()) return gen_data(gen_args, corpus_out, samples_out);
    if (train_cmd->parsed()) return train(train_args);
    if (eval_cmd->parsed()) return eval(eval_args, checkpoint, vocab);
    if (grid_cmd->parsed()) return grid(grid_args, axis, workers);
    if (report_cmd->parsed()) return report(report_files);
  } catch (const ValidationError& e) {
    std::cerr << "invalid: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
