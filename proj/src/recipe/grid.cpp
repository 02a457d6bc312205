#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "tempo/recipe.hpp"

namespace tempo {

namespace {

std::string mirrors_for(GridAxis axis) {
  switch (axis) {
    case GridAxis::interface:
    case GridAxis::S: return "Tables 2-3";
    case GridAxis::schemes: return "Tables 5-6";
    case GridAxis::B: return "Tables 7-8";
    default: return "Tables 9-10";
  }
}

std::string scheme_label(const std::vector<Scheme>& schemes) {
  if (schemes.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < schemes.size(); ++i) out += (i ? "+" : "") + to_string(schemes[i]);
  return out;
}

MoEConfig base_moe(const RecipeConfig& base) { return base.moe.value_or(MoEConfig{}); }

std::string fmt(double v, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string pm(const Summary& s, double factor, int precision) {
  return fmt(s.mean * factor, precision) + " ± " + fmt(s.sd * factor, precision);
}

// Display width in code points, so "±" counts as one column.
std::size_t width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

}  // namespace

std::string to_string(GridAxis a) {
  switch (a) {
    case GridAxis::interface: return "interface";
    case GridAxis::S: return "S";
    case GridAxis::B: return "B";
    case GridAxis::moe_mode: return "moe_mode";
    case GridAxis::E: return "E";
    case GridAxis::k: return "k";
    default: return "schemes";
  }
}

GridAxis parse_grid_axis(const std::string& s) {
  for (auto a : {GridAxis::interface, GridAxis::S, GridAxis::B, GridAxis::moe_mode, GridAxis::E, GridAxis::k,
                 GridAxis::schemes}) {
    if (to_string(a) == s) return a;
  }
  throw ValidationError("unknown grid axis '" + s + "' (expected interface, S, B, moe_mode, E, k or schemes)");
}

std::vector<std::pair<std::string, RecipeConfig>> grid_points(const RecipeConfig& base, GridAxis axis) {
  std::vector<std::pair<std::string, RecipeConfig>> out;
  auto add = [&](std::string label, RecipeConfig c) {
    c.name = base.name + "/" + (label.find('=') == std::string::npos ? to_string(axis) + "=" + label : label);
    out.emplace_back(std::move(label), std::move(c));
  };
  switch (axis) {
    case GridAxis::interface: {
      RecipeConfig c = base;
      c.step = std::max(base.step, 1);
      c.interface.variant = InterfaceVariant::linear;
      c.interface.aggregation = Aggregation::none;
      c.interface.pretrained_init = false;
      add("linear", c);
      for (auto agg : {Aggregation::mean_pool, Aggregation::adaptive_pool, Aggregation::esa}) {
        c.interface.variant = InterfaceVariant::qformer_nosa;
        c.interface.aggregation = agg;
        add("qformer_nosa+" + to_string(agg), c);
      }
      c.interface.variant = InterfaceVariant::qformer_sa;
      c.interface.aggregation = Aggregation::none;
      add("qformer_sa", c);
      c.interface.pretrained_init = true;
      add("qformer_sa+pretrained", c);
      break;
    }
    case GridAxis::S:
      for (std::size_t s : {3, 6, 9, 12}) {
        RecipeConfig c = base;
        c.interface.submodules = s;
        add("S=" + std::to_string(s), c);
      }
      break;
    case GridAxis::B:
      for (std::size_t b = 0; b <= 60; b += 10) {
        RecipeConfig c = base;
        c.step = std::max(base.step, 3);
        c.bank_capacity = b;  // 0 runs without a bank
        add("B=" + std::to_string(b), c);
      }
      break;
    case GridAxis::moe_mode:
      for (auto mode : {MoEMode::sparse, MoEMode::dense}) {
        RecipeConfig c = base;
        c.step = 4;
        c.moe = base_moe(base);
        c.moe->mode = mode;
        add(to_string(mode), c);
      }
      break;
    case GridAxis::E:
      for (std::size_t e : {2, 4, 8}) {
        RecipeConfig c = base;
        c.step = 4;
        c.moe = base_moe(base);
        c.moe->num_experts = e;
        add("E=" + std::to_string(e), c);
      }
      break;
    case GridAxis::k:
      for (std::size_t k : {1, 2}) {
        RecipeConfig c = base;
        c.step = 4;
        c.moe = base_moe(base);
        c.moe->mode = MoEMode::sparse;
        c.moe->top_k = k;
        add("k=" + std::to_string(k), c);
      }
      break;
    case GridAxis::schemes: {
      // The "none" row is the model before the temporal stage exists.
      RecipeConfig none = base;
      none.step = 1;
      none.schemes.clear();
      none.bank_capacity = 0;
      none.moe.reset();
      add("none", none);
      const std::vector<std::vector<Scheme>> rows = {{Scheme::VC},
                                                     {Scheme::MC},
                                                     {Scheme::MG},
                                                     {Scheme::DC},
                                                     {Scheme::VC, Scheme::MC, Scheme::MG, Scheme::DC}};
      for (const auto& schemes : rows) {
        RecipeConfig c = base;
        c.step = std::max(base.step, 2);
        c.schemes = schemes;
        add(scheme_label(schemes), c);
      }
      break;
    }
  }
  return out;
}

GridResult ablation_grid(const RecipeConfig& base, GridAxis axis, std::size_t workers) {
  const auto points = grid_points(base, axis);
  for (const auto& [label, cfg] : points) cfg.validate();

  struct Job {
    std::size_t row;
    RecipeConfig config;
  };
  std::vector<Job> jobs;
  for (std::size_t r = 0; r < points.size(); ++r) {
    for (auto seed : base.seed_list()) {
      RecipeConfig c = points[r].second;
      c.seed = seed;
      c.seeds.clear();
      c.output_dir.clear();  // workers never write; results are written below
      jobs.push_back({r, std::move(c)});
    }
  }

  std::vector<EvalReport> results(jobs.size());
  std::vector<NamedTensors> states(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        auto run = run_recipe(jobs[i].config);
        results[i] = std::move(run.report);
        if (!base.output_dir.empty()) states[i] = std::move(run.final_state);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(workers, jobs.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  for (std::size_t i = 0; i < jobs.size(); ++i) {
    results[i].axis = to_string(axis);
    results[i].row = points[jobs[i].row].first;
  }
  if (!base.output_dir.empty()) {
    const std::filesystem::path dir(base.output_dir);
    std::filesystem::create_directories(dir);
    recipe_tokenizer().save(dir / "vocab.json");
    std::ofstream log(dir / "report.jsonl", std::ios::app);
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      auto file = results[i].name + "-seed" + std::to_string(results[i].seed) + ".ckpt";
      for (auto& ch : file)
        if (ch == '/' || ch == '=' || ch == '+') ch = '_';
      write_checkpoint(dir / file, states[i]);
      results[i].checkpoint = (dir / file).string();
      log << results[i].to_json().dump() << '\n';
    }
  }

  GridResult grid;
  grid.axis = axis;
  grid.mirrors = mirrors_for(axis);
  for (const auto& [label, cfg] : points) grid.rows.push_back({label, {}});
  for (std::size_t i = 0; i < jobs.size(); ++i) grid.rows[jobs[i].row].reports.push_back(std::move(results[i]));
  return grid;
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) throw ValidationError("summary of no values");
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::string render_table(const GridResult& grid) {
  std::set<std::string> kinds;
  for (const auto& row : grid.rows)
    for (const auto& r : row.reports)
      for (const auto& [k, v] : r.qa.by_kind) kinds.insert(k);

  std::vector<std::string> header = {grid.row_header.empty() ? to_string(grid.axis) : grid.row_header, "seeds", "accuracy %"};
  for (const auto& k : kinds) header.push_back(k + " %");
  header.push_back("caption tok %");
  header.push_back("final loss");
  std::vector<std::vector<std::string>> cells = {header};
  for (const auto& row : grid.rows) {
    std::vector<double> acc, cap, loss;
    std::map<std::string, std::vector<double>> per_kind;
    for (const auto& r : row.reports) {
      acc.push_back(r.qa.accuracy);
      cap.push_back(r.caption_token_accuracy);
      if (!r.finetune_losses.empty()) loss.push_back(r.finetune_losses.back());
      for (const auto& [k, v] : r.qa.by_kind) per_kind[k].push_back(v);
    }
    std::vector<std::string> line = {row.label, std::to_string(row.reports.size()), pm(summarize(acc), 100, 1)};
    for (const auto& k : kinds) line.push_back(per_kind.count(k) ? pm(summarize(per_kind[k]), 100, 1) : "-");
    line.push_back(pm(summarize(cap), 100, 1));
    line.push_back(loss.empty() ? "-" : pm(summarize(loss), 1, 3));
    cells.push_back(std::move(line));
  }

  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], width(line[c]));

  std::ostringstream os;
  os << "# mirrors: " << grid.mirrors << '\n';
  if (grid.row_header.empty()) {
    os << "# axis: " << to_string(grid.axis) << "; values are mean ± sd over seeds\n";
  } else {
    os << "# rows: " << grid.row_header << "; values are mean ± sd over seeds\n";
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      const auto& cell = cells[i][c];
      const std::string pad(widths[c] - width(cell), ' ');
      os << (c ? "  " : "") << (c == 0 ? cell + pad : pad + cell);
    }
    os << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (auto w : widths) total += w;
      os << std::string(total + 2 * (widths.size() - 1), '-') << '\n';
    }
  }
  return os.str();
}

Json grid_to_json(const GridResult& grid) {
  Json rows = Json::array();
  for (const auto& row : grid.rows) {
    Json reports = Json::array();
    for (const auto& r : row.reports) reports.push_back(r.to_json());
    rows.push_back({{"label", row.label}, {"reports", reports}});
  }
  return {{"axis", to_string(grid.axis)}, {"mirrors", grid.mirrors}, {"rows", rows}};
}

std::vector<GridResult> group_reports(const std::vector<EvalReport>& reports) {
  std::vector<GridResult> out;
  std::map<std::string, std::size_t> table_of;
  std::map<std::pair<std::size_t, std::string>, std::size_t> row_of;
  for (const auto& r : reports) {
    // Grid reports group by axis and row; single runs by step and name.
    const GridAxis axis = !r.axis.empty()                                       ? parse_grid_axis(r.axis)
                          : r.step >= 4                                         ? GridAxis::moe_mode
                          : r.step == 3                                         ? GridAxis::B
                          : r.step == 2                                         ? GridAxis::schemes
                                                                                : GridAxis::interface;
    const std::string table_key = r.axis.empty() ? "step" + std::to_string(r.step) : "axis:" + r.axis;
    auto [it, fresh] = table_of.emplace(table_key, out.size());
    if (fresh) out.push_back({axis, mirrors_for(axis), r.axis.empty() ? "run" : "", {}});
    auto& table = out[it->second];
    const std::string label = r.axis.empty() ? r.name : r.row;
    auto [rit, new_row] = row_of.emplace(std::make_pair(it->second, label), table.rows.size());
    if (new_row) table.rows.push_back({label, {}});
    table.rows[rit->second].reports.push_back(r);
  }
  return out;
}

GridResult grid_from_json(const Json& j) {
  GridResult g;
  g.axis = parse_grid_axis(j.at("axis").get<std::string>());
  g.mirrors = j.value("mirrors", mirrors_for(g.axis));
  for (const auto& row : j.at("rows")) {
    GridRow r{row.at("label").get<std::string>(), {}};
    for (const auto& rep : row.at("reports")) r.reports.push_back(EvalReport::from_json(rep));
    g.rows.push_back(std::move(r));
  }
  return g;
}

}  // namespace tempo
