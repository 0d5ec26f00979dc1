#include "geoinpaint/errors.hpp"
#include "geoinpaint/experiment.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace geoinpaint {

namespace fs = std::filesystem;

namespace {

std::ofstream open_csv(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError(fmt::format("cannot write '{}'", path.string()));
  return os;
}

std::string num(double v) { return std::isfinite(v) ? fmt::format("{:.6f}", v) : std::string(); }

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

const SummaryRow* find_row(const std::vector<SummaryRow>& rows, Method m, std::size_t wells) {
  for (const auto& r : rows)
    if (r.method == m && r.n_wells == wells) return &r;
  return nullptr;
}

}  // namespace

GrayImage comparison_panel(const Field3& truth, const Field3& kriged, const Field3& completed, const Mask3& mask,
                           std::size_t z) {
  const auto values = truth.values();
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const ValueRange range{*lo, *hi};
  return hstack({render_slice(truth, SliceAxis::z, z, range), render_slice(kriged, SliceAxis::z, z, range),
                 render_slice(completed, SliceAxis::z, z, range), render_mask_slice(mask, SliceAxis::z, z)});
}

void render_report(const ExperimentOutput& output, const ExperimentConfig& config) {
  if (output.runs.empty()) throw ConfigError("nothing to report: no runs");
  const fs::path dir = config.output_dir;
  std::error_code ec;
  fs::create_directories(dir / "traces", ec);
  if (ec) throw DataError(fmt::format("cannot create output directory '{}': {}", dir.string(), ec.message()));

  {
    std::ofstream os = open_csv(dir / "config.json");
    os << config.to_json().dump(2) << '\n';
  }
  {
    std::ofstream os = open_csv(dir / "summary.csv");
    os << "method,wells,active_pct,mean_rse,std_rse,runs,failures\n";
    for (const auto& r : output.summary)
      os << fmt::format("{},{},{:.1f},{},{},{},{}\n", to_string(r.method), r.n_wells, r.active_pct, num(r.mean_rse),
                        num(r.std_rse), r.runs, r.failures);
  }
  {
    std::ofstream os = open_csv(dir / "runs.csv");
    os << "method,wells,effective_wells,seed,rse,iterations,converged,fallback_cells,status,message,wall_seconds\n";
    for (const auto& r : output.runs)
      os << fmt::format("{},{},{},{},{},{},{},{},{},{},{:.3f}\n", to_string(r.method), r.n_wells, r.effective_wells,
                        r.seed_index, std::isfinite(r.rse) ? fmt::format("{}", r.rse) : "", r.iterations,
                        r.converged ? 1 : 0, r.fallback_cells, to_string(r.status), csv_escape(r.message),
                        r.wall_seconds);
  }
  {
    // kriging against the smoothed completion (the plain one if smoothing was not run)
    const bool has_smoothed = std::any_of(output.summary.begin(), output.summary.end(),
                                          [](const SummaryRow& r) { return r.method == Method::tensor_smoothed; });
    const Method tensor = has_smoothed ? Method::tensor_smoothed : Method::tensor_plain;
    std::vector<std::size_t> wells = config.wells;
    std::sort(wells.begin(), wells.end());
    std::ofstream os = open_csv(dir / "table1.csv");
    os << "wells,active_cells_pct,kriging_mean,kriging_std,tensor_mean,tensor_std\n";
    for (std::size_t w : wells) {
      const SummaryRow* k = find_row(output.summary, Method::kriging, w);
      const SummaryRow* t = find_row(output.summary, tensor, w);
      const SummaryRow* any = k ? k : t;
      os << fmt::format("{},{},{},{},{},{}\n", w, any ? fmt::format("{:.1f}", any->active_pct) : "",
                        k ? num(k->mean_rse) : "", k ? num(k->std_rse) : "", t ? num(t->mean_rse) : "",
                        t ? num(t->std_rse) : "");
    }
  }
  for (const auto& [key, trace] : output.traces) {
    std::ofstream os = open_csv(dir / "traces" / (key + ".csv"));
    trace.write_csv(os);
  }

  for (const Snapshot& snap : output.snapshots) {
    const auto kr = snap.reconstructions.find(Method::kriging);
    auto tc = snap.reconstructions.find(Method::tensor_smoothed);
    if (tc == snap.reconstructions.end()) tc = snap.reconstructions.find(Method::tensor_plain);
    if (kr == snap.reconstructions.end() || tc == snap.reconstructions.end()) continue;
    for (std::size_t z : config.render.z_slices) {
      if (z >= output.truth.dims().k) continue;
      const fs::path sub = dir / "panels";
      fs::create_directories(sub, ec);
      const std::string stem = fmt::format("z{}_w{}", z, snap.n_wells);
      const GrayImage panel = comparison_panel(output.truth, kr->second, tc->second, snap.mask, z);
      write_pgm(panel, sub / (stem + "_panel.pgm"));
      const auto values = output.truth.values();
      const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
      const ValueRange range{*lo, *hi};
      write_pgm(render_slice(output.truth, SliceAxis::z, z, range), sub / (stem + "_truth.pgm"));
      write_pgm(render_slice(kr->second, SliceAxis::z, z, range), sub / (stem + "_kriging.pgm"));
      write_pgm(render_slice(tc->second, SliceAxis::z, z, range), sub / (stem + "_completion.pgm"));
      write_pgm(render_mask_slice(snap.mask, SliceAxis::z, z), sub / (stem + "_mask.pgm"));
    }
  }
}

}  // namespace geoinpaint
