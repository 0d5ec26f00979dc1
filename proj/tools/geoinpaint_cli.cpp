// Command-line front end for reconstruction runs, benchmarks and parameter searches.

#include "geoinpaint/errors.hpp"
#include "geoinpaint/experiment.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace geoinpaint;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kData = 2, kDiverged = 3 };

struct Overrides {
  std::string config;
  std::string data;
  std::vector<std::size_t> wells;
  std::optional<std::size_t> seeds;
  std::optional<std::uint64_t> base_seed;
  std::string method;
  std::optional<double> rho, alpha, beta;
  std::optional<std::size_t> max_iters;
  std::optional<double> tol;
  std::vector<std::size_t> crop;
  std::string out;
  std::optional<std::size_t> workers;
  std::vector<std::size_t> z_slices;
};

void add_common(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config, "JSON experiment config");
  sub->add_option("--data", o.data, "ASCII porosity file (SPE10 layout or with a .manifest.json sidecar)");
  sub->add_option("--wells", o.wells, "well counts, comma separated")->delimiter(',');
  sub->add_option("--seeds", o.seeds, "number of random well plans per count");
  sub->add_option("--base-seed", o.base_seed, "seed all run seeds derive from");
  sub->add_option("--method", o.method, "tensor_plain | tensor_smoothed | kriging | all");
  sub->add_option("--rho", o.rho, "ADMM penalty");
  sub->add_option("--alpha", o.alpha, "nuclear-norm weight");
  sub->add_option("--beta", o.beta, "lateral smoothing weight (default 0.1 * rho)");
  sub->add_option("--max-iters", o.max_iters, "ADMM iteration cap");
  sub->add_option("--tol", o.tol, "relative-change stopping tolerance");
  sub->add_option("--crop", o.crop, "keep the leading i,j,k block")->delimiter(',')->expected(3);
  sub->add_option("--out", o.out, "output directory");
  sub->add_option("--workers", o.workers, "worker threads (results do not depend on it)");
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (!o.data.empty()) c.dataset = fs::path(o.data);
  if (!o.wells.empty()) c.wells = o.wells;
  if (o.seeds) c.seeds = *o.seeds;
  if (o.base_seed) c.base_seed = *o.base_seed;
  if (!o.method.empty()) c.methods = methods_from_string(o.method);
  auto patch = [&](AdmmParams& p) {
    if (o.rho) {
      p.rho = *o.rho;
      if (!o.beta) p.beta = 0.1 * p.rho;
    }
    if (o.alpha) p.alpha = *o.alpha;
    if (o.beta) p.beta = *o.beta;
    if (o.max_iters) p.max_iters = *o.max_iters;
    if (o.tol) p.rel_tol = *o.tol;
  };
  patch(c.admm);
  const bool explicit_admm = o.rho || o.alpha || o.beta;
  if (explicit_admm) c.admm_per_wells.clear();
  for (auto& [w, p] : c.admm_per_wells) patch(p);
  if (!o.crop.empty()) c.crop = Dims3(o.crop[0], o.crop[1], o.crop[2]);
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.workers) c.workers = *o.workers;
  if (!o.z_slices.empty()) c.render.z_slices = o.z_slices;
  c.validate();
  return c;
}

/// Winners of earlier searches cached in the output directory, used when the config
/// does not pin per-well values itself.
void apply_cached_winners(ExperimentConfig& c, bool explicit_admm) {
  const fs::path params = c.output_dir / "best_params.json";
  if (!explicit_admm && c.admm_per_wells.empty() && fs::exists(params)) {
    json j;
    std::ifstream(params) >> j;
    c.admm_per_wells = ExperimentConfig::from_json(json{{"admm_per_wells", j}}).admm_per_wells;
    fmt::print(stderr, "using cached ADMM parameters from {}\n", params.string());
  }
  const fs::path ell = c.output_dir / "ellipsoids.json";
  if (c.kriging.ellipsoid_per_wells.empty() && fs::exists(ell)) {
    json j;
    std::ifstream(ell) >> j;
    c.kriging.ellipsoid_per_wells =
        ExperimentConfig::from_json(json{{"kriging", {{"ellipsoid_per_wells", j}}}}).kriging.ellipsoid_per_wells;
    fmt::print(stderr, "using cached search ellipsoids from {}\n", ell.string());
  }
}

void print_summary(const ExperimentOutput& out) {
  for (const auto& r : out.summary)
    fmt::print("{:<16} wells={:<5} active={:>4.1f}%  rse={:.4f} +- {:.4f}  runs={} failed={}\n", to_string(r.method),
               r.n_wells, r.active_pct, r.mean_rse, r.std_rse, r.runs, r.failures);
}

int single_run(ExperimentConfig c, bool kriging_only) {
  if (kriging_only) {
    c.methods = {Method::kriging};
  } else {
    std::erase(c.methods, Method::kriging);
    if (c.methods.empty()) throw ConfigError("reconstruct runs a tensor method; use krige for kriging");
    c.methods.resize(1);
  }
  c.wells.resize(1);
  c.seeds = 1;
  c.render.wells = c.wells;
  const Dataset data = load_dataset(c);
  const ExperimentOutput out = run_experiment(c, data);
  fs::create_directories(c.output_dir);

  int code = kOk;
  const RunResult& r = out.runs.front();
  fmt::print("{}: wells={} ({} on grid) rse={:.6f} iterations={} status={} {}\n", to_string(r.method), r.n_wells,
             r.effective_wells, r.rse, r.iterations, to_string(r.status), r.message);
  if (r.status == RunStatus::diverged) code = kDiverged;
  else if (r.status != RunStatus::ok) code = kData;

  const Snapshot& snap = out.snapshots.front();
  write_well_plan_csv(sample_wells(data.truth.dims(), r.effective_wells, seed_for(c.base_seed, 0)).plan,
                      c.output_dir / "wells.csv");
  if (auto it = snap.reconstructions.find(r.method); it != snap.reconstructions.end()) {
    write_field_ascii(it->second, c.output_dir / "reconstruction.dat");
    write_manifest({data.truth.dims(), data.cell}, manifest_path_for(c.output_dir / "reconstruction.dat"));
  }
  if (auto it = snap.traces.find(r.method); it != snap.traces.end()) {
    std::ofstream os(c.output_dir / "trace.csv");
    it->second.write_csv(os);
  }
  return code;
}

int benchmark(ExperimentConfig c, bool explicit_admm) {
  apply_cached_winners(c, explicit_admm);
  const ExperimentOutput out = run_experiment(c);
  render_report(out, c);
  print_summary(out);
  fmt::print("wrote {}\n", (c.output_dir / "summary.csv").string());
  return kOk;
}

int gridsearch(const ExperimentConfig& c) {
  const Dataset data = load_dataset(c);
  fs::create_directories(c.output_dir);
  json winners = json::object();
  const fs::path cache = c.output_dir / "best_params.json";
  if (fs::exists(cache)) std::ifstream(cache) >> winners;
  for (std::size_t w : c.wells) {
    const GridSearchResult r = grid_search(c.grid, c.admm, make_admm_evaluator(c, data, w));
    write_grid_csv(r, c.output_dir / fmt::format("grid_w{}.csv", w));
    fmt::print("wells={} best rho={} alpha={} beta={} rse={:.6f}\n", w, r.best.rho, r.best.alpha, r.best.beta,
               r.best_rse);
    winners[std::to_string(w)] = {{"rho", r.best.rho},
                                  {"alpha", r.best.alpha},
                                  {"beta", r.best.beta},
                                  {"max_iters", r.best.max_iters},
                                  {"tol", r.best.rel_tol}};
  }
  std::ofstream(cache) << winners.dump(2) << '\n';
  return kOk;
}

int tune(const ExperimentConfig& c) {
  const Dataset data = load_dataset(c);
  const VariogramModel vg = kriging_variogram(c, data);
  fmt::print("variogram {} nugget={:.4g} sill={:.4g} ranges=({:.1f}, {:.1f}, {:.1f}) azimuth={}\n", to_string(vg.kind),
             vg.nugget, vg.sill, vg.ranges[0], vg.ranges[1], vg.ranges[2], vg.orientation.azimuth_deg);
  SearchEllipsoid base = kriging_ellipsoid(c, vg, c.ellipsoid_search.stage1_wells);
  const EllipsoidTuning t = tune_ellipsoid(c.ellipsoid_search, c.wells, base, make_ellipsoid_evaluator(c, data, vg));
  fs::create_directories(c.output_dir);
  {
    std::ofstream os(c.output_dir / "ellipsoid_search.csv");
    os << "stage,wells,r_major,r_minor,r_vertical,azimuth,mean_rse\n";
    for (const auto& s : t.stage1)
      os << fmt::format("1,{},{},{},{},{},{}\n", c.ellipsoid_search.stage1_wells, s.radii[0], s.radii[1], s.radii[2],
                        s.azimuth_deg, s.mean_rse);
    for (const auto& [w, scores] : t.stage2)
      for (const auto& s : scores)
        os << fmt::format("2,{},{},{},{},{},{}\n", w, s.radii[0], s.radii[1], s.radii[2], s.azimuth_deg, s.mean_rse);
  }
  json per = json::object();
  for (const auto& [w, e] : t.per_wells) {
    per[std::to_string(w)] = {{"radii", e.radii},
                              {"azimuth", e.orientation.azimuth_deg},
                              {"dip", e.orientation.dip_deg},
                              {"max_neighbors", e.max_neighbors},
                              {"min_neighbors", e.min_neighbors}};
    fmt::print("wells={} radii=({}, {}, {}) azimuth={}\n", w, e.radii[0], e.radii[1], e.radii[2],
               e.orientation.azimuth_deg);
  }
  std::ofstream(c.output_dir / "ellipsoids.json") << per.dump(2) << '\n';
  return kOk;
}

int render(ExperimentConfig c, bool explicit_admm) {
  apply_cached_winners(c, explicit_admm);
  c.seeds = 1;
  if (c.render.z_slices.empty()) c.render.z_slices = {12, 27, 50, 75};
  if (c.render.wells.empty()) c.render.wells = {500};
  c.wells = c.render.wells;
  if (std::find(c.methods.begin(), c.methods.end(), Method::kriging) == c.methods.end())
    c.methods.push_back(Method::kriging);
  if (std::find(c.methods.begin(), c.methods.end(), Method::tensor_smoothed) == c.methods.end() &&
      std::find(c.methods.begin(), c.methods.end(), Method::tensor_plain) == c.methods.end())
    c.methods.push_back(Method::tensor_smoothed);
  const ExperimentOutput out = run_experiment(c);
  render_report(out, c);
  for (std::size_t z : c.render.z_slices)
    if (z >= out.truth.dims().k) fmt::print(stderr, "skipping z={} (grid has {} layers)\n", z, out.truth.dims().k);
  fmt::print("wrote panels under {}\n", (c.output_dir / "panels").string());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-rank tensor completion and kriging for sparse well data"};
  app.require_subcommand(1);
  Overrides o;
  auto* reconstruct = app.add_subcommand("reconstruct", "single tensor-completion run");
  auto* krige = app.add_subcommand("krige", "single ordinary-kriging run");
  auto* bench = app.add_subcommand("benchmark", "multi-seed comparison over well counts");
  auto* grid = app.add_subcommand("gridsearch", "per-well-count (rho, alpha) search");
  auto* tune_cmd = app.add_subcommand("tune-ellipsoid", "two-stage kriging search-ellipsoid search");
  auto* render_cmd = app.add_subcommand("render", "slice panels of truth, kriging, completion and mask");
  for (auto* sub : {reconstruct, krige, bench, grid, tune_cmd, render_cmd}) add_common(sub, o);
  render_cmd->add_option("--z", o.z_slices, "z slices to render")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    const ExperimentConfig c = resolve(o);
    const bool explicit_admm = o.rho || o.alpha || o.beta;
    if (*reconstruct) return single_run(c, false);
    if (*krige) return single_run(c, true);
    if (*bench) return benchmark(c, explicit_admm);
    if (*grid) return gridsearch(c);
    if (*tune_cmd) return tune(c);
    if (*render_cmd) return render(c, explicit_admm);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kConfig;
  } catch (const DataError& e) {
    fmt::print(stderr, "data error: {}\n", e.what());
    return kData;
  } catch (const DivergenceError& e) {
    fmt::print(stderr, "solver diverged: {}\n", e.what());
    return kDiverged;
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "invalid input: {}\n", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kData;
  }
  return kOk;
}
