#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "tempo/recipe.hpp"

namespace tempo {

namespace {

// Reads optional keys from a JSON object and rejects keys it was never asked about.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ValidationError(where_ + ": expected an object");
  }

  template <typename V>
  void get(const std::string& key, V& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return;
    try {
      out = it->template get<V>();
    } catch (const Json::exception& e) {
      throw ValidationError(where_ + "." + key + ": " + e.what());
    }
  }

  const Json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ValidationError(where_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

Json moe_to_json(const MoEConfig& m) {
  return {{"experts", m.num_experts},
          {"mode", to_string(m.mode)},
          {"top_k", m.top_k},
          {"placement", to_string(m.placement)}};
}

MoEConfig moe_from_json(const Json& j) {
  MoEConfig m;
  ObjectReader r(j, "moe");
  std::string mode = to_string(m.mode), placement = to_string(m.placement);
  r.get("experts", m.num_experts);
  r.get("mode", mode);
  r.get("top_k", m.top_k);
  r.get("placement", placement);
  r.finish();
  m.mode = parse_moe_mode(mode);
  m.placement = parse_moe_placement(placement);
  return m;
}

}  // namespace

std::vector<std::uint64_t> RecipeConfig::seed_list() const {
  return seeds.empty() ? std::vector<std::uint64_t>{seed} : seeds;
}

ModelConfig RecipeConfig::model_config(std::size_t vocab_size) const {
  ModelConfig mc;
  mc.lm = LMConfig::preset(lm_preset, vocab_size);
  mc.interface = interface;
  mc.interface.visual_dim = render.visual_dim;
  mc.interface.model_dim = mc.lm.model_dim;
  mc.interface.num_heads = mc.lm.num_heads;
  mc.interface.ffn_dim = mc.lm.ffn_dim;
  mc.bank_capacity = bank_capacity;
  mc.moe = moe;
  return mc;
}

void RecipeConfig::validate() const {
  if (step < 0 || step > 4) throw ValidationError("step must be in 0..4, got " + std::to_string(step));
  if (step == 0 && (interface.variant != InterfaceVariant::linear || interface.aggregation != Aggregation::none)) {
    throw ValidationError("step 0 uses the plain linear interface (variant linear, aggregation none)");
  }
  if (step < 2 && !schemes.empty()) {
    throw ValidationError("temporal schemes need step >= 2 (step is " + std::to_string(step) + ")");
  }
  if (step >= 2 && schemes.empty()) {
    throw ValidationError("step " + std::to_string(step) + " requires at least one temporal scheme");
  }
  std::set<Scheme> unique(schemes.begin(), schemes.end());
  if (unique.size() != schemes.size()) throw ValidationError("duplicate temporal scheme");
  if (step < 3 && bank_capacity > 0) {
    throw ValidationError("a memory bank needs step >= 3 (step is " + std::to_string(step) + ")");
  }
  if (step < 4 && moe) throw ValidationError("MoE needs step 4 (step is " + std::to_string(step) + ")");
  if (interface.moe) throw ValidationError("set MoE through the top-level moe key");
  if (seed_list().empty()) throw ValidationError("no seeds");
  if (finetune.batch_size == 0 || temporal.batch_size == 0) throw ValidationError("batch_size must be positive");
  if (!(finetune.lr > 0) || !(temporal.lr > 0)) throw ValidationError("learning rates must be positive");
  if (finetune.clip_norm < 0 || finetune.weight_decay < 0) {
    throw ValidationError("clip_norm and weight_decay must be non-negative");
  }
  if (finetune.sampling.count == 0) throw ValidationError("frame_sampling.count must be positive");
  if (eval.clips == 0) throw ValidationError("eval.clips must be positive");
  if (step >= 2 && temporal.corpus_path.empty() && temporal.clips == 0) {
    throw ValidationError("temporal stage has no clips");
  }
  if (render.patches == 0 || render.visual_dim == 0) {
    throw ValidationError("render patches and visual_dim must be positive");
  }
  model_config(Tokenizer::fit({}).size()).validate();
}

Json RecipeConfig::to_json() const {
  Json schemes_json = Json::array();
  for (auto s : schemes) schemes_json.push_back(to_string(s));
  Json j;
  j["name"] = name;
  j["step"] = step;
  j["seed"] = seed;
  j["seeds"] = seeds;
  j["data_seed"] = data_seed;
  j["eval_seed"] = eval_seed;
  j["interface"] = {{"variant", to_string(interface.variant)},
                    {"submodules", interface.submodules},
                    {"aggregation", to_string(interface.aggregation)},
                    {"query_tokens", interface.num_query_tokens},
                    {"pretrained_init", interface.pretrained_init},
                    {"positional_encoding", interface.positional_encoding},
                    {"esa_depth", interface.esa_depth},
                    {"pretrain_steps", interface.pretrain_steps}};
  j["bank_capacity"] = bank_capacity;
  j["moe"] = moe ? moe_to_json(*moe) : Json(nullptr);
  j["schemes"] = schemes_json;
  j["lm_preset"] = lm_preset;
  j["render"] = {{"patches", render.patches},
                 {"visual_dim", render.visual_dim},
                 {"event_jitter", render.event_jitter},
                 {"frame_noise", render.frame_noise}};
  j["temporal"] = {{"corpus_path", temporal.corpus_path},
                   {"clips", temporal.clips},
                   {"steps", temporal.steps},
                   {"lr", temporal.lr},
                   {"batch_size", temporal.batch_size}};
  j["finetune"] = {{"suite", to_string(finetune.suite)},
                   {"train_clips", finetune.train_clips},
                   {"steps", finetune.steps},
                   {"lr", finetune.lr},
                   {"batch_size", finetune.batch_size},
                   {"warmup_steps", finetune.warmup_steps},
                   {"clip_norm", finetune.clip_norm},
                   {"weight_decay", finetune.weight_decay},
                   {"frame_sampling", {{"mode", to_string(finetune.sampling.mode)},
                                       {"count", finetune.sampling.count}}}};
  j["eval"] = {{"clips", eval.clips},
               {"caption_clips", eval.caption_clips},
               {"max_new_tokens", eval.max_new_tokens}};
  j["output_dir"] = output_dir;
  return j;
}

RecipeConfig RecipeConfig::from_json(const Json& j) {
  RecipeConfig c;
  ObjectReader r(j, "config");
  r.get("name", c.name);
  r.get("step", c.step);
  r.get("seed", c.seed);
  r.get("seeds", c.seeds);
  r.get("data_seed", c.data_seed);
  r.get("eval_seed", c.eval_seed);
  if (const Json* ij = r.child("interface")) {
    ObjectReader ir(*ij, "interface");
    std::string variant = to_string(c.interface.variant), aggregation = to_string(c.interface.aggregation);
    ir.get("variant", variant);
    ir.get("submodules", c.interface.submodules);
    ir.get("aggregation", aggregation);
    ir.get("query_tokens", c.interface.num_query_tokens);
    ir.get("pretrained_init", c.interface.pretrained_init);
    ir.get("positional_encoding", c.interface.positional_encoding);
    ir.get("esa_depth", c.interface.esa_depth);
    ir.get("pretrain_steps", c.interface.pretrain_steps);
    ir.finish();
    c.interface.variant = parse_interface_variant(variant);
    c.interface.aggregation = parse_aggregation(aggregation);
  }
  r.get("bank_capacity", c.bank_capacity);
  if (const Json* mj = r.child("moe")) c.moe = moe_from_json(*mj);
  std::vector<std::string> schemes;
  r.get("schemes", schemes);
  for (const auto& s : schemes) c.schemes.push_back(parse_scheme(s));
  r.get("lm_preset", c.lm_preset);
  if (const Json* rj = r.child("render")) {
    ObjectReader rr(*rj, "render");
    rr.get("patches", c.render.patches);
    rr.get("visual_dim", c.render.visual_dim);
    rr.get("event_jitter", c.render.event_jitter);
    rr.get("frame_noise", c.render.frame_noise);
    rr.finish();
  }
  if (const Json* tj = r.child("temporal")) {
    ObjectReader tr(*tj, "temporal");
    tr.get("corpus_path", c.temporal.corpus_path);
    tr.get("clips", c.temporal.clips);
    tr.get("steps", c.temporal.steps);
    tr.get("lr", c.temporal.lr);
    tr.get("batch_size", c.temporal.batch_size);
    tr.finish();
  }
  if (const Json* fj = r.child("finetune")) {
    ObjectReader fr(*fj, "finetune");
    std::string suite = to_string(c.finetune.suite);
    fr.get("suite", suite);
    c.finetune.suite = parse_suite(suite);
    fr.get("train_clips", c.finetune.train_clips);
    fr.get("steps", c.finetune.steps);
    fr.get("lr", c.finetune.lr);
    fr.get("batch_size", c.finetune.batch_size);
    fr.get("warmup_steps", c.finetune.warmup_steps);
    fr.get("clip_norm", c.finetune.clip_norm);
    fr.get("weight_decay", c.finetune.weight_decay);
    if (const Json* sj = fr.child("frame_sampling")) {
      ObjectReader sr(*sj, "finetune.frame_sampling");
      std::string mode = to_string(c.finetune.sampling.mode);
      sr.get("mode", mode);
      sr.get("count", c.finetune.sampling.count);
      sr.finish();
      c.finetune.sampling.mode = parse_frame_sampling(mode);
    }
    fr.finish();
  }
  if (const Json* ej = r.child("eval")) {
    ObjectReader er(*ej, "eval");
    er.get("clips", c.eval.clips);
    er.get("caption_clips", c.eval.caption_clips);
    er.get("max_new_tokens", c.eval.max_new_tokens);
    er.finish();
  }
  r.get("output_dir", c.output_dir);
  r.finish();
  return c;
}

RecipeConfig load_recipe(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return RecipeConfig::from_json(j);
}

void apply_override(Json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }
  Json* node = &config;
  std::stringstream path(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(path, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ValidationError("override '" + key + "': '" + parts[i] + "' is not an object");
    Json& next = (*node)[parts[i]];
    if (next.is_null()) next = Json::object();
    node = &next;
  }
  if (!node->is_object()) throw ValidationError("override '" + key + "': parent is not an object");
  (*node)[parts.back()] = value;
}

}  // namespace tempo
