#include "geoinpaint/experiment.hpp"

#include "geoinpaint/errors.hpp"
#include "geoinpaint/synthetic.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

namespace geoinpaint {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Method m) {
  switch (m) {
    case Method::tensor_plain: return "tensor_plain";
    case Method::tensor_smoothed: return "tensor_smoothed";
    case Method::kriging: return "kriging";
  }
  return "unknown";
}

std::vector<Method> methods_from_string(const std::string& name) {
  if (name == "tensor_plain") return {Method::tensor_plain};
  if (name == "tensor_smoothed") return {Method::tensor_smoothed};
  if (name == "kriging") return {Method::kriging};
  if (name == "all") return {Method::kriging, Method::tensor_plain, Method::tensor_smoothed};
  throw ConfigError(fmt::format("unknown method '{}' (tensor_plain, tensor_smoothed, kriging, all)", name));
}

std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::ok: return "ok";
    case RunStatus::rejected: return "rejected";
    case RunStatus::diverged: return "diverged";
    case RunStatus::failed: return "failed";
  }
  return "unknown";
}

void GridSearchSpec::validate() const {
  if (rho.empty() || alpha.empty()) throw ConfigError("grid search needs nonempty rho and alpha grids");
  if (selection_seeds.empty()) throw ConfigError("grid search needs at least one selection seed");
  for (double r : rho)
    if (!(r > 0.0)) throw ConfigError(fmt::format("grid rho must be > 0, got {}", r));
  for (double a : alpha)
    if (!(a > 0.0)) throw ConfigError(fmt::format("grid alpha must be > 0, got {}", a));
  if (!(beta_multiplier >= 0.0)) throw ConfigError("beta multiplier must be >= 0");
}

void EllipsoidSearchSpec::validate() const {
  if (selection_seeds.empty()) throw ConfigError("ellipsoid search needs at least one selection seed");
  if (!(tie_band >= 0.0)) throw ConfigError("ellipsoid tie band must be >= 0");
  for (const auto& r : radii)
    if (!(r[0] > 0.0 && r[1] > 0.0 && r[2] > 0.0)) throw ConfigError("ellipsoid radii must be > 0");
}

void ExperimentConfig::validate() const {
  if (methods.empty()) throw ConfigError("config lists no methods");
  if (wells.empty()) throw ConfigError("config lists no well counts");
  if (seeds == 0) throw ConfigError("config needs at least one seed");
  for (auto w : wells)
    if (w == 0) throw ConfigError("well counts must be positive");
  if (workers == 0) throw ConfigError("workers must be positive");
  try {
    admm.validate();
    for (const auto& [w, p] : admm_per_wells) p.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!kriging.fit_from_truth && !kriging.variogram)
    throw ConfigError("kriging needs a variogram when fit_from_truth is false");
  if (!dataset) {
    static const char* kinds[] = {"spectral", "layered", "tucker", "rank1"};
    if (std::find(std::begin(kinds), std::end(kinds), synthetic.kind) == std::end(kinds))
      throw ConfigError(fmt::format("unknown synthetic field kind '{}'", synthetic.kind));
  }
}

AdmmParams ExperimentConfig::admm_for(std::size_t n_wells) const {
  auto it = admm_per_wells.find(n_wells);
  return it == admm_per_wells.end() ? admm : it->second;
}

namespace {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) && !j.at(key).is_null() ? j.at(key).get<T>() : fallback;
}

Dims3 dims_from_json(const json& j) {
  const auto v = j.get<std::vector<std::size_t>>();
  if (v.size() != 3) throw ConfigError("dims need three entries");
  return {v[0], v[1], v[2]};
}

Vec3 vec3_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw ConfigError("expected a list of three numbers");
  return {v[0], v[1], v[2]};
}

AdmmParams admm_from_json(const json& j, const AdmmParams& base) {
  AdmmParams p = base;
  p.alpha = get_or(j, "alpha", p.alpha);
  p.rho = get_or(j, "rho", p.rho);
  if (j.contains("beta"))
    p.beta = j.at("beta").get<double>();
  else if (j.contains("beta_multiplier"))
    p.beta = j.at("beta_multiplier").get<double>() * p.rho;
  else if (j.contains("rho"))
    p.beta = 0.1 * p.rho;
  p.max_iters = get_or(j, "max_iters", p.max_iters);
  p.rel_tol = get_or(j, "tol", p.rel_tol);
  return p;
}

json admm_to_json(const AdmmParams& p) {
  return {{"alpha", p.alpha}, {"beta", p.beta}, {"rho", p.rho}, {"max_iters", p.max_iters}, {"tol", p.rel_tol}};
}

SearchEllipsoid ellipsoid_from_json(const json& j, std::size_t default_max) {
  SearchEllipsoid e;
  e.radii = vec3_from_json(j.at("radii"));
  e.orientation = {get_or(j, "azimuth", 0.0), get_or(j, "dip", 0.0)};
  e.max_neighbors = get_or(j, "max_neighbors", default_max);
  e.min_neighbors = get_or(j, "min_neighbors", std::size_t{1});
  try {
    e.validate();
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
  return e;
}

json ellipsoid_to_json(const SearchEllipsoid& e) {
  return {{"radii", e.radii},
          {"azimuth", e.orientation.azimuth_deg},
          {"dip", e.orientation.dip_deg},
          {"max_neighbors", e.max_neighbors},
          {"min_neighbors", e.min_neighbors}};
}

template <class V>
std::map<std::size_t, V> per_wells_from_json(const json& j, const std::function<V(const json&)>& parse) {
  std::map<std::size_t, V> out;
  for (const auto& [key, value] : j.items()) {
    std::size_t w = 0;
    try {
      w = std::stoul(key);
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("per-well key '{}' is not a well count", key));
    }
    out.emplace(w, parse(value));
  }
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  try {
    if (j.contains("dataset") && !j.at("dataset").is_null()) c.dataset = j.at("dataset").get<std::string>();
    if (j.contains("synthetic")) {
      const json& s = j.at("synthetic");
      c.synthetic.kind = get_or(s, "kind", c.synthetic.kind);
      if (s.contains("dims")) c.synthetic.dims = dims_from_json(s.at("dims"));
      if (s.contains("ranks")) {
        const auto r = s.at("ranks").get<std::vector<std::size_t>>();
        if (r.size() != 3) throw ConfigError("synthetic ranks need three entries");
        c.synthetic.ranks = {r[0], r[1], r[2]};
      }
      if (s.contains("correlation")) {
        const Vec3 v = vec3_from_json(s.at("correlation"));
        c.synthetic.correlation_cells = {v[0], v[1], v[2]};
      }
      c.synthetic.seed = get_or(s, "seed", c.synthetic.seed);
    }
    if (j.contains("cell_ft")) {
      const Vec3 v = vec3_from_json(j.at("cell_ft"));
      c.cell = CellSize{v[0], v[1], v[2]};
    }
    if (j.contains("crop") && !j.at("crop").is_null()) c.crop = dims_from_json(j.at("crop"));
    c.scale_wells_with_crop = get_or(j, "scale_wells", c.scale_wells_with_crop);
    c.wells = get_or(j, "wells", c.wells);
    c.seeds = get_or(j, "seeds", c.seeds);
    c.base_seed = get_or(j, "base_seed", c.base_seed);
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& name : j.at("methods").get<std::vector<std::string>>())
        for (Method m : methods_from_string(name))
          if (std::find(c.methods.begin(), c.methods.end(), m) == c.methods.end()) c.methods.push_back(m);
    }
    c.normalize = get_or(j, "normalize", c.normalize);
    if (j.contains("admm")) c.admm = admm_from_json(j.at("admm"), c.admm);
    if (j.contains("admm_per_wells"))
      c.admm_per_wells = per_wells_from_json<AdmmParams>(
          j.at("admm_per_wells"), [&](const json& v) { return admm_from_json(v, c.admm); });

    if (j.contains("kriging")) {
      const json& k = j.at("kriging");
      c.kriging.max_neighbors = get_or(k, "max_neighbors", c.kriging.max_neighbors);
      if (k.contains("variogram")) {
        const json& v = k.at("variogram");
        c.kriging.kind = variogram_kind_from_string(get_or<std::string>(v, "kind", to_string(c.kriging.kind)));
        const std::string source = get_or<std::string>(v, "source", "truth");
        if (source == "fixed") {
          c.kriging.fit_from_truth = false;
          VariogramModel m;
          m.kind = c.kriging.kind;
          m.nugget = get_or(v, "nugget", 0.0);
          m.sill = get_or(v, "sill", 1.0);
          m.ranges = vec3_from_json(v.at("ranges"));
          m.orientation = {get_or(v, "azimuth", 0.0), get_or(v, "dip", 0.0)};
          m.validate();
          c.kriging.variogram = m;
        } else if (source != "truth") {
          throw ConfigError(fmt::format("variogram source must be 'truth' or 'fixed', got '{}'", source));
        }
      }
      if (k.contains("ellipsoid")) c.kriging.ellipsoid = ellipsoid_from_json(k.at("ellipsoid"), c.kriging.max_neighbors);
      if (k.contains("ellipsoid_per_wells"))
        c.kriging.ellipsoid_per_wells = per_wells_from_json<SearchEllipsoid>(
            k.at("ellipsoid_per_wells"), [&](const json& v) { return ellipsoid_from_json(v, c.kriging.max_neighbors); });
    }
    if (j.contains("gridsearch")) {
      const json& g = j.at("gridsearch");
      c.grid.rho = get_or(g, "rho", c.grid.rho);
      c.grid.alpha = get_or(g, "alpha", c.grid.alpha);
      c.grid.beta_multiplier = get_or(g, "beta_multiplier", c.grid.beta_multiplier);
      c.grid.selection_seeds = get_or(g, "seeds", c.grid.selection_seeds);
    }
    if (j.contains("ellipsoid_search")) {
      const json& e = j.at("ellipsoid_search");
      if (e.contains("radii")) {
        c.ellipsoid_search.radii.clear();
        for (const auto& r : e.at("radii")) c.ellipsoid_search.radii.push_back(vec3_from_json(r));
      }
      c.ellipsoid_search.azimuths = get_or(e, "azimuths", c.ellipsoid_search.azimuths);
      c.ellipsoid_search.refine_offsets = get_or(e, "refine_offsets", c.ellipsoid_search.refine_offsets);
      c.ellipsoid_search.stage1_wells = get_or(e, "stage1_wells", c.ellipsoid_search.stage1_wells);
      c.ellipsoid_search.tie_band = get_or(e, "tie_band", c.ellipsoid_search.tie_band);
      c.ellipsoid_search.selection_seeds = get_or(e, "seeds", c.ellipsoid_search.selection_seeds);
    }
    if (j.contains("render")) {
      const json& r = j.at("render");
      c.render.z_slices = get_or(r, "z", c.render.z_slices);
      c.render.wells = get_or(r, "wells", c.render.wells);
    }
    c.output_dir = get_or<std::string>(j, "output_dir", c.output_dir.string());
    c.workers = get_or(j, "workers", c.workers);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("bad config value: {}", e.what()));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

json ExperimentConfig::to_json() const {
  json j;
  j["dataset"] = dataset ? json(dataset->string()) : json(nullptr);
  j["synthetic"] = {{"kind", synthetic.kind},
                    {"dims", synthetic.dims.as_array()},
                    {"ranks", synthetic.ranks},
                    {"correlation", synthetic.correlation_cells},
                    {"seed", synthetic.seed}};
  if (cell) j["cell_ft"] = {cell->x, cell->y, cell->z};
  j["crop"] = crop ? json(crop->as_array()) : json(nullptr);
  j["scale_wells"] = scale_wells_with_crop;
  j["wells"] = wells;
  j["seeds"] = seeds;
  j["base_seed"] = base_seed;
  std::vector<std::string> names;
  for (Method m : methods) names.push_back(to_string(m));
  j["methods"] = names;
  j["normalize"] = normalize;
  j["admm"] = admm_to_json(admm);
  json per = json::object();
  for (const auto& [w, p] : admm_per_wells) per[std::to_string(w)] = admm_to_json(p);
  j["admm_per_wells"] = per;

  json k;
  k["max_neighbors"] = kriging.max_neighbors;
  if (kriging.fit_from_truth) {
    k["variogram"] = {{"source", "truth"}, {"kind", to_string(kriging.kind)}};
  } else {
    const VariogramModel& m = *kriging.variogram;
    k["variogram"] = {{"source", "fixed"},        {"kind", to_string(m.kind)},
                      {"nugget", m.nugget},        {"sill", m.sill},
                      {"ranges", m.ranges},        {"azimuth", m.orientation.azimuth_deg},
                      {"dip", m.orientation.dip_deg}};
  }
  if (kriging.ellipsoid) k["ellipsoid"] = ellipsoid_to_json(*kriging.ellipsoid);
  json eper = json::object();
  for (const auto& [w, e] : kriging.ellipsoid_per_wells) eper[std::to_string(w)] = ellipsoid_to_json(e);
  k["ellipsoid_per_wells"] = eper;
  j["kriging"] = k;

  j["gridsearch"] = {{"rho", grid.rho},
                     {"alpha", grid.alpha},
                     {"beta_multiplier", grid.beta_multiplier},
                     {"seeds", grid.selection_seeds}};
  j["ellipsoid_search"] = {{"radii", ellipsoid_search.radii},
                           {"azimuths", ellipsoid_search.azimuths},
                           {"refine_offsets", ellipsoid_search.refine_offsets},
                           {"stage1_wells", ellipsoid_search.stage1_wells},
                           {"tie_band", ellipsoid_search.tie_band},
                           {"seeds", ellipsoid_search.selection_seeds}};
  j["render"] = {{"z", render.z_slices}, {"wells", render.wells}};
  j["output_dir"] = output_dir.string();
  j["workers"] = workers;
  return j;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config '{}' is not valid JSON: {}", path.string(), e.what()));
  }
  return ExperimentConfig::from_json(j);
}

Dataset load_dataset(const ExperimentConfig& config) {
  Dataset d;
  if (config.dataset) {
    LoadedField lf = load_field_auto(*config.dataset);
    d.truth = std::move(lf.field);
    d.cell = lf.cell;
  } else {
    const SyntheticSpec& s = config.synthetic;
    if (s.kind == "spectral")
      d.truth = synthetic::spectral_field(s.dims, s.correlation_cells, s.seed);
    else if (s.kind == "layered")
      d.truth = synthetic::layered_field(s.dims);
    else if (s.kind == "tucker")
      d.truth = synthetic::tucker_field(s.dims, s.ranks, s.seed);
    else if (s.kind == "rank1")
      d.truth = synthetic::rank1_field(s.dims, s.seed).field;
    else
      throw ConfigError(fmt::format("unknown synthetic field kind '{}'", s.kind));
    d.cell = Spe10Grid::cell_size();
  }
  if (config.cell) d.cell = *config.cell;
  d.full_dims = d.truth.dims();
  if (config.crop) {
    const Dims3 c = *config.crop;
    if (c.i > d.full_dims.i || c.j > d.full_dims.j || c.k > d.full_dims.k)
      throw ConfigError(fmt::format("crop {}x{}x{} exceeds grid {}x{}x{}", c.i, c.j, c.k, d.full_dims.i,
                                    d.full_dims.j, d.full_dims.k));
    d.truth = crop_field(d.truth, c);
  }
  return d;
}

std::size_t effective_wells(std::size_t nominal, const Dims3& full, const Dims3& cropped) {
  const double scale = static_cast<double>(cropped.i * cropped.j) / static_cast<double>(full.i * full.j);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(nominal) * scale)));
}

std::uint64_t seed_for(std::uint64_t base_seed, std::uint64_t k) {
  // splitmix64 finalizer over a Weyl step
  std::uint64_t z = base_seed + (k + 1) * 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

VariogramModel kriging_variogram(const ExperimentConfig& config, const Dataset& data) {
  if (!config.kriging.fit_from_truth) return *config.kriging.variogram;
  return fit_axis_aligned_variogram(data.truth, config.kriging.kind, data.cell).model;
}

SearchEllipsoid kriging_ellipsoid(const ExperimentConfig& config, const VariogramModel& model, std::size_t n_wells) {
  if (auto it = config.kriging.ellipsoid_per_wells.find(n_wells); it != config.kriging.ellipsoid_per_wells.end())
    return it->second;
  if (config.kriging.ellipsoid) return *config.kriging.ellipsoid;
  SearchEllipsoid e;
  e.radii = model.ranges;
  e.orientation = model.orientation;
  e.max_neighbors = config.kriging.max_neighbors;
  return e;
}

MethodRun run_method(Method method, const Field3& truth, const Mask3& mask, const CellSize& cell,
                     const AdmmParams& admm, const VariogramModel& variogram, const SearchEllipsoid& ellipsoid,
                     bool normalize_data, std::size_t kriging_workers) {
  MethodRun out;
  out.result.method = method;
  const auto start = std::chrono::steady_clock::now();
  auto finish = [&] {
    out.result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  if (mask.count_observed() == mask.size()) {
    out.result.status = RunStatus::rejected;
    out.result.message = "no unobserved cells";
    out.result.rse = std::numeric_limits<double>::quiet_NaN();
    finish();
    return out;
  }
  try {
    Field3 recon;
    if (method == Method::kriging) {
      const auto samples = observed_samples(truth, mask);
      KrigingResult kr = ordinary_krige(samples, truth.dims(), variogram, ellipsoid, {cell, kriging_workers});
      out.result.fallback_cells = kr.fallback_cells;
      out.result.converged = true;
      recon = std::move(kr.estimate);
    } else {
      Normalization stats{};
      Field3 y = project(truth, mask);
      if (normalize_data) {
        Normalized n = normalize(truth, mask);
        stats = n.stats;
        y = project(n.field, mask);
      }
      CompletionResult cr = method == Method::tensor_plain ? complete_plain(y, mask, admm)
                                                           : complete_smoothed(y, mask, admm);
      Field3 back = normalize_data ? denormalize(cr.reconstruction, stats) : std::move(cr.reconstruction);
      // observed cells come from the input itself, not from the scaled round trip
      recon = project_complement(back, mask) + project(truth, mask);
      out.result.iterations = cr.trace.iterations();
      out.result.converged = cr.trace.converged;
      out.trace = std::move(cr.trace);
    }
    out.result.rse = rse(recon, truth, mask);
    out.reconstruction = std::move(recon);
  } catch (const DivergenceError& e) {
    out.result.status = RunStatus::diverged;
    out.result.message = e.what();
    out.result.rse = std::numeric_limits<double>::quiet_NaN();
  } catch (const std::exception& e) {
    out.result.status = RunStatus::failed;
    out.result.message = e.what();
    out.result.rse = std::numeric_limits<double>::quiet_NaN();
  }
  finish();
  return out;
}

namespace {

/// Runs fn(index) for index in [0, n) on up to `workers` threads and rethrows the
/// first exception after all threads finish.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    for (std::size_t t = 0; t < n; ++t) fn(t);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t t = next++; t < n; t = next++) fn(t);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string trace_key(Method m, std::size_t wells, std::uint64_t seed) {
  return fmt::format("{}_w{}_s{}", to_string(m), wells, seed);
}

Mask3 selection_mask(const Dataset& data, std::uint64_t base_seed, std::uint64_t selection_seed, std::size_t wells,
                     bool scale) {
  const Dims3 dims = data.truth.dims();
  const std::size_t eff = scale ? effective_wells(wells, data.full_dims, dims) : wells;
  // selection masks live on their own stream so tuning never sees the benchmark wells
  return sample_wells(dims, eff, seed_for(~base_seed, selection_seed)).mask;
}

}  // namespace

ExperimentOutput run_experiment(const ExperimentConfig& config) {
  config.validate();
  return run_experiment(config, load_dataset(config));
}

ExperimentOutput run_experiment(const ExperimentConfig& config, const Dataset& data) {
  config.validate();
  const Dims3 dims = data.truth.dims();
  ExperimentOutput out;
  out.truth = data.truth;

  const bool wants_kriging = std::find(config.methods.begin(), config.methods.end(), Method::kriging) !=
                             config.methods.end();
  if (wants_kriging) out.variogram = kriging_variogram(config, data);

  struct Job {
    std::size_t wells;
    std::uint64_t seed_index;
  };
  std::vector<Job> jobs;
  for (std::size_t w : config.wells)
    for (std::uint64_t s = 0; s < config.seeds; ++s) jobs.push_back({w, s});

  std::vector<std::size_t> eff(config.wells.size());
  for (std::size_t q = 0; q < config.wells.size(); ++q) {
    eff[q] = config.scale_wells_with_crop ? effective_wells(config.wells[q], data.full_dims, dims) : config.wells[q];
    if (eff[q] > dims.i * dims.j)
      throw ConfigError(fmt::format("{} wells do not fit on a {}x{} lateral grid", eff[q], dims.i, dims.j));
  }
  auto eff_for = [&](std::size_t wells) {
    return eff[static_cast<std::size_t>(std::find(config.wells.begin(), config.wells.end(), wells) -
                                        config.wells.begin())];
  };

  const std::size_t inner_workers = jobs.size() == 1 ? config.workers : 1;
  std::mutex guard;
  parallel_for(jobs.size(), config.workers, [&](std::size_t t) {
    const Job job = jobs[t];
    const std::size_t n_eff = eff_for(job.wells);
    const WellSampling ws = sample_wells(dims, n_eff, seed_for(config.base_seed, job.seed_index));
    const bool keep = job.seed_index == 0 &&
                      std::find(config.render.wells.begin(), config.render.wells.end(), job.wells) !=
                          config.render.wells.end();
    Snapshot snap;
    std::vector<RunResult> results;
    std::vector<std::pair<std::string, ConvergenceTrace>> traces;
    for (Method m : config.methods) {
      const SearchEllipsoid ell =
          m == Method::kriging ? kriging_ellipsoid(config, out.variogram, job.wells) : SearchEllipsoid{};
      MethodRun run = run_method(m, data.truth, ws.mask, data.cell, config.admm_for(job.wells), out.variogram, ell,
                                 config.normalize, inner_workers);
      run.result.n_wells = job.wells;
      run.result.effective_wells = n_eff;
      run.result.seed_index = job.seed_index;
      results.push_back(run.result);
      if (m != Method::kriging && !run.trace.records.empty())
        traces.emplace_back(trace_key(m, job.wells, job.seed_index), run.trace);
      if (keep && run.reconstruction) {
        snap.reconstructions.emplace(m, std::move(*run.reconstruction));
        if (m != Method::kriging) snap.traces.emplace(m, std::move(run.trace));
      }
    }
    std::lock_guard lock(guard);
    out.runs.insert(out.runs.end(), results.begin(), results.end());
    for (auto& tr : traces) out.traces.insert(std::move(tr));
    if (keep) {
      snap.n_wells = job.wells;
      snap.mask = ws.mask;
      out.snapshots.push_back(std::move(snap));
    }
  });

  std::sort(out.runs.begin(), out.runs.end(), [](const RunResult& a, const RunResult& b) {
    return std::tie(a.method, a.n_wells, a.seed_index) < std::tie(b.method, b.n_wells, b.seed_index);
  });
  std::sort(out.snapshots.begin(), out.snapshots.end(),
            [](const Snapshot& a, const Snapshot& b) { return a.n_wells < b.n_wells; });
  out.summary = summarize(out.runs, dims);
  return out;
}

std::vector<SummaryRow> summarize(const std::vector<RunResult>& runs, const Dims3& grid) {
  std::map<std::pair<Method, std::size_t>, std::vector<const RunResult*>> groups;
  for (const auto& r : runs) groups[{r.method, r.n_wells}].push_back(&r);
  std::vector<SummaryRow> rows;
  for (const auto& [key, members] : groups) {
    SummaryRow row;
    row.method = key.first;
    row.n_wells = key.second;
    row.active_pct = 100.0 * static_cast<double>(members.front()->effective_wells) / static_cast<double>(grid.i * grid.j);
    std::vector<double> values;
    for (const RunResult* r : members) {
      if (r->status == RunStatus::ok)
        values.push_back(r->rse);
      else
        ++row.failures;
    }
    row.runs = values.size();
    if (values.empty()) {
      row.mean_rse = row.std_rse = std::numeric_limits<double>::quiet_NaN();
    } else {
      double sum = 0.0;
      for (double v : values) sum += v;
      row.mean_rse = sum / static_cast<double>(values.size());
      double ss = 0.0;
      for (double v : values) ss += (v - row.mean_rse) * (v - row.mean_rse);
      row.std_rse = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
    }
    rows.push_back(row);
  }
  return rows;
}

GridSearchResult grid_search(const GridSearchSpec& spec, const AdmmParams& base, const AdmmEvaluator& evaluate) {
  spec.validate();
  GridSearchResult out;
  std::optional<std::size_t> best;
  for (double rho : spec.rho)
    for (double alpha : spec.alpha) {
      GridCell cell{rho, alpha, spec.beta_multiplier * rho, 0.0, false, {}};
      AdmmParams p = base;
      p.rho = rho;
      p.alpha = alpha;
      p.beta = cell.beta;
      try {
        cell.mean_rse = evaluate(p);
        if (!std::isfinite(cell.mean_rse)) {
          cell.diverged = true;
          cell.detail = "non-finite score";
        }
      } catch (const DivergenceError& e) {
        cell.diverged = true;
        cell.detail = e.what();
        cell.mean_rse = std::numeric_limits<double>::quiet_NaN();
      }
      out.cells.push_back(cell);
      if (cell.diverged) continue;
      const std::size_t idx = out.cells.size() - 1;
      if (!best) {
        best = idx;
        continue;
      }
      const GridCell& b = out.cells[*best];
      if (std::tie(cell.mean_rse, cell.alpha, cell.rho) < std::tie(b.mean_rse, b.alpha, b.rho)) best = idx;
    }
  if (!best) {
    std::string list;
    for (const auto& c : out.cells) list += fmt::format(" (rho={}, alpha={})", c.rho, c.alpha);
    throw ConfigError(fmt::format("every grid cell diverged:{}", list));
  }
  const GridCell& b = out.cells[*best];
  out.best = base;
  out.best.rho = b.rho;
  out.best.alpha = b.alpha;
  out.best.beta = b.beta;
  out.best_rse = b.mean_rse;
  return out;
}

AdmmEvaluator make_admm_evaluator(const ExperimentConfig& config, const Dataset& data, std::size_t n_wells) {
  return [&config, &data, n_wells](const AdmmParams& p) {
    double sum = 0.0;
    for (std::uint64_t s : config.grid.selection_seeds) {
      const Mask3 mask = selection_mask(data, config.base_seed, s, n_wells, config.scale_wells_with_crop);
      const MethodRun run =
          run_method(Method::tensor_smoothed, data.truth, mask, data.cell, p, {}, {}, config.normalize);
      if (run.result.status == RunStatus::diverged) return std::numeric_limits<double>::quiet_NaN();
      if (run.result.status != RunStatus::ok) throw DataError(run.result.message);
      sum += run.result.rse;
    }
    return sum / static_cast<double>(config.grid.selection_seeds.size());
  };
}

void write_grid_csv(const GridSearchResult& result, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError(fmt::format("cannot write '{}'", path.string()));
  os << "rho,alpha,beta,mean_rse,diverged\n";
  for (const auto& c : result.cells)
    os << fmt::format("{},{},{},{},{}\n", c.rho, c.alpha, c.beta, c.diverged ? "" : fmt::format("{}", c.mean_rse),
                      c.diverged ? 1 : 0);
}

namespace {

/// Index of the first score within `band` of the minimum.
std::size_t pick_first_within_band(const std::vector<EllipsoidScore>& scores, double band) {
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& s : scores)
    if (std::isfinite(s.mean_rse)) lo = std::min(lo, s.mean_rse);
  if (!std::isfinite(lo)) throw ConfigError("every ellipsoid candidate failed");
  for (std::size_t q = 0; q < scores.size(); ++q)
    if (std::isfinite(scores[q].mean_rse) && scores[q].mean_rse <= lo + band) return q;
  return 0;
}

}  // namespace

EllipsoidTuning tune_ellipsoid(const EllipsoidSearchSpec& spec, const std::vector<std::size_t>& wells,
                               const SearchEllipsoid& base, const EllipsoidEvaluator& evaluate) {
  spec.validate();
  const std::vector<Vec3> radii = spec.radii.empty() ? std::vector<Vec3>{base.radii} : spec.radii;
  const std::vector<double> azimuths =
      spec.azimuths.empty() ? std::vector<double>{base.orientation.azimuth_deg} : spec.azimuths;
  const std::vector<double> offsets = spec.refine_offsets.empty() ? std::vector<double>{0.0} : spec.refine_offsets;

  auto with = [&](const Vec3& r, double az) {
    SearchEllipsoid e = base;
    e.radii = r;
    e.orientation.azimuth_deg = az;
    return e;
  };

  EllipsoidTuning out;
  for (const Vec3& r : radii)
    for (double az : azimuths) out.stage1.push_back({r, az, evaluate(with(r, az), spec.stage1_wells)});
  const EllipsoidScore& s1 = out.stage1[pick_first_within_band(out.stage1, spec.tie_band)];
  out.best_radii = s1.radii;
  out.stage1_azimuth = s1.azimuth_deg;

  for (std::size_t w : wells) {
    auto& scores = out.stage2[w];
    for (double off : offsets) {
      const double az = s1.azimuth_deg + off;
      scores.push_back({out.best_radii, az, evaluate(with(out.best_radii, az), w)});
    }
    const EllipsoidScore& s2 = scores[pick_first_within_band(scores, spec.tie_band)];
    out.per_wells[w] = with(out.best_radii, s2.azimuth_deg);
  }
  return out;
}

EllipsoidEvaluator make_ellipsoid_evaluator(const ExperimentConfig& config, const Dataset& data,
                                            const VariogramModel& variogram) {
  return [&config, &data, variogram](const SearchEllipsoid& e, std::size_t n_wells) {
    double sum = 0.0;
    for (std::uint64_t s : config.ellipsoid_search.selection_seeds) {
      const Mask3 mask = selection_mask(data, config.base_seed, s, n_wells, config.scale_wells_with_crop);
      const MethodRun run = run_method(Method::kriging, data.truth, mask, data.cell, {}, variogram, e, false,
                                       config.workers);
      if (run.result.status != RunStatus::ok) return std::numeric_limits<double>::quiet_NaN();
      sum += run.result.rse;
    }
    return sum / static_cast<double>(config.ellipsoid_search.selection_seeds.size());
  };
}

}  // namespace geoinpaint
