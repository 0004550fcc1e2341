#include <riot/cli.hpp>
#include <riot/cost_lab.hpp>
#include <riot/executor.hpp>
#include <riot/script.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

namespace riot {

namespace {

struct GlobalFlags {
  Index memory = 64 * 1024;
  Index block = 1024;
  std::string store = ".";
  bool no_optimize = false;
  std::uint64_t seed = 42;

  ResourceBudget budget() const {
    ResourceBudget b{memory, block};
    b.validate();
    return b;
  }
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path stats_path(const GlobalFlags& g) { return std::filesystem::path(g.store) / ".riot-stats.json"; }

// Scratch directory for one process; removed with everything in it.
class ScratchDir {
 public:
  explicit ScratchDir(const std::filesystem::path& store)
      : path_(store / (".riot-tmp-" + std::to_string(::getpid()))) {}
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

void write_report(std::ostream& err, const RunReport& r) {
  err << "blocks_read=" << r.io.blocks_read << " blocks_written=" << r.io.blocks_written
      << " elements_computed=" << r.io.elements_computed << " peak_pinned_blocks=" << r.peak_pinned_blocks
      << '\n';
}

int cmd_run(const GlobalFlags& g, const std::string& script_path, std::ostream& out, std::ostream& err) {
  const Script script = parse_script(read_file(script_path));
  ScratchDir scratch(g.store);
  RunReport report;
  {
    Session session(g.budget(), scratch.path(), PlanOptions{!g.no_optimize});
    Interpreter interp(g.store, g.seed);
    interp.run(script, session, &out);
    session.pool().flush();
    report = session.report();
  }
  write_report(err, report);
  nlohmann::json j = {{"blocks_read", report.io.blocks_read},
                      {"blocks_written", report.io.blocks_written},
                      {"elements_computed", report.io.elements_computed},
                      {"peak_pinned_blocks", report.peak_pinned_blocks},
                      {"optimize", !g.no_optimize},
                      {"memory", g.memory},
                      {"block", g.block},
                      {"script", script_path}};
  std::ofstream(stats_path(g)) << j.dump(2) << '\n';
  return 0;
}

int cmd_explain(const GlobalFlags& g, const std::string& script_path, std::ostream& out) {
  const Script script = parse_script(read_file(script_path));
  Interpreter interp(g.store, g.seed);
  const auto roots = interp.lower(script);
  const ResourceBudget budget = g.budget();
  for (std::size_t i = 0; i < roots.size(); ++i) {
    const PhysicalPlan p = plan(roots[i], budget, PlanOptions{!g.no_optimize});
    out << "== print " << (i + 1) << " ==\n";
    out << "-- DAG\n" << dump_dag(p.logical);
    out << "-- optimized DAG\n" << dump_dag(p.optimized);
    out << "-- plan (M=" << budget.memory_scalars << ", B=" << budget.block_scalars << ", p=" << p.p << ")\n";
    out << render_plan(p);
  }
  return 0;
}

int cmd_gen(const GlobalFlags& g, const std::string& name, Index rows, Index cols, const std::string& tiling,
            const std::string& lin_name, std::ostream& out) {
  if (rows < 1 || cols < 1) throw ShapeError("matrix dimensions must be positive");
  const Shape shape{rows, cols};
  TileSpec tiles = TileSpec::default_for(shape, g.block);
  if (tiling == "square") tiles = TileSpec::square(g.block);
  else if (tiling == "rows") tiles = TileSpec::row_strips(g.block);
  else if (tiling == "cols") tiles = TileSpec::col_strips(g.block);
  Linearization lin = Linearization::TileRowMajor;
  if (lin_name == "col") lin = Linearization::TileColMajor;
  else if (lin_name == "z") lin = Linearization::ZOrder;

  std::filesystem::create_directories(g.store);
  BufferPool pool(g.budget());
  const std::uint64_t seed = g.seed;
  auto m = generate_matrix(std::filesystem::path(g.store) / (name + ".riot"), shape, tiles, lin, pool,
                           [seed](Index r, Index c) { return uniform_at(seed, r, c); });
  pool.flush();
  out << "wrote " << m->path().string() << " (" << to_string(shape) << ", " << to_string(tiles.kind) << ", "
      << to_string(lin) << ", " << m->num_blocks() << " blocks)\n";
  return 0;
}

int cmd_stats(const GlobalFlags& g, std::ostream& out) {
  const auto path = stats_path(g);
  if (!std::filesystem::exists(path)) throw IoError("no run recorded in " + g.store);
  const auto j = nlohmann::json::parse(read_file(path));
  for (const char* key : {"blocks_read", "blocks_written", "elements_computed", "peak_pinned_blocks"})
    out << key << ": " << j.value(key, std::uint64_t{0}) << '\n';
  return 0;
}

std::string format_blocks(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

int cmd_costlab(const CostScenario& base, const std::string& sweep, std::ostream& out) {
  if (sweep.empty()) {
    out << "strategy,order,blocks\n";
    for (const auto& c : scenario_chain3(base))
      out << to_string(c.strategy) << ',' << c.order << ',' << format_blocks(c.blocks) << '\n';
    return 0;
  }
  double lo = 0, hi = 0, step = 0;
  char tail = 0;
  if (std::sscanf(sweep.c_str(), "s=%lf:%lf:%lf%c", &lo, &hi, &step, &tail) != 3 || !(step > 0) || hi < lo)
    throw Error("--sweep expects s=<from>:<to>:<step>");
  out << "s,strategy,order,blocks\n";
  const auto count = static_cast<int>(std::floor((hi - lo) / step + 1e-9));
  for (int i = 0; i <= count; ++i) {
    CostScenario sc = base;
    sc.s = lo + step * i;
    for (const auto& c : scenario_chain3(sc))
      out << format_blocks(sc.s) << ',' << to_string(c.strategy) << ',' << c.order << ','
          << format_blocks(c.blocks) << '\n';
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Out-of-core array engine with deferred evaluation and block I/O accounting", "riot"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalFlags g;
  app.add_option("--memory", g.memory, "Memory budget M in scalars")->capture_default_str();
  app.add_option("--block", g.block, "Block size B in scalars")->capture_default_str();
  app.add_option("--store", g.store, "Directory holding stored matrices")->capture_default_str();
  app.add_flag("--no-optimize", g.no_optimize, "Disable gather pushdown and chain reordering");
  app.add_option("--seed", g.seed, "Seed for sample() and gen")->capture_default_str();

  std::string script_path;
  auto* run = app.add_subcommand("run", "Run a script; print() statements are evaluated");
  run->add_option("script", script_path, "Script file")->required();
  auto* explain = app.add_subcommand("explain", "Show DAGs and physical plans without evaluating");
  explain->add_option("script", script_path, "Script file")->required();

  std::string name, tiling = "auto", lin = "row";
  Index rows = 0, cols = 0;
  auto* gen = app.add_subcommand("gen", "Write a seeded uniform [0,1) matrix to the store");
  gen->add_option("name", name)->required();
  gen->add_option("rows", rows)->required();
  gen->add_option("cols", cols)->required();
  gen->add_option("--tiling", tiling)->check(CLI::IsMember({"auto", "square", "rows", "cols"}));
  gen->add_option("--lin", lin)->check(CLI::IsMember({"row", "col", "z"}));

  auto* stats = app.add_subcommand("stats", "Print I/O counters of the last run in the store");

  CostScenario sc;
  std::string sweep;
  auto* costlab = app.add_subcommand("costlab", "Analytic block I/O of the four strategies on A B C");
  costlab->add_option("--n", sc.n)->capture_default_str();
  costlab->add_option("--s", sc.s)->capture_default_str();
  costlab->add_option("--sweep", sweep, "s=<from>:<to>:<step>");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*run) return cmd_run(g, script_path, out, err);
    if (*explain) return cmd_explain(g, script_path, out);
    if (*gen) return cmd_gen(g, name, rows, cols, tiling, lin, out);
    if (*stats) return cmd_stats(g, out);
    if (*costlab) {
      sc.memory = static_cast<double>(g.memory);
      sc.block = static_cast<double>(g.block);
      return cmd_costlab(sc, sweep, out);
    }
  } catch (const IoError& e) {
    err << "riot: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "riot: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "riot: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace riot
