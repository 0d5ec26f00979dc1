#pragma once

#include "geoinpaint/completion.hpp"
#include "geoinpaint/geodata.hpp"
#include "geoinpaint/kriging.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace geoinpaint {

enum class Method { tensor_plain, tensor_smoothed, kriging };

[[nodiscard]] std::string to_string(Method m);
/// Accepts the three method names and "all".
[[nodiscard]] std::vector<Method> methods_from_string(const std::string& name);

/// Programmatic ground truth used when no dataset path is given.
struct SyntheticSpec {
  std::string kind = "spectral";  ///< spectral | layered | tucker | rank1
  Dims3 dims{60, 220, 85};
  std::array<std::size_t, 3> ranks{3, 3, 3};
  std::array<double, 3> correlation_cells{4.0, 12.0, 3.0};
  std::uint64_t seed = 1;
};

struct KrigingConfig {
  bool fit_from_truth = true;
  VariogramKind kind = VariogramKind::spherical;
  std::optional<VariogramModel> variogram;  ///< required when fit_from_truth is false
  /// Unset radii default to the variogram ranges with its orientation.
  std::optional<SearchEllipsoid> ellipsoid;
  std::map<std::size_t, SearchEllipsoid> ellipsoid_per_wells;
  std::size_t max_neighbors = 16;
};

struct GridSearchSpec {
  std::vector<double> rho{0.1, 0.5, 0.9, 1.001, 1.01, 1.1};
  std::vector<double> alpha{1e-3, 1e-2, 1e-1, 1.0, 1.1};
  double beta_multiplier = 0.1;
  std::vector<std::uint64_t> selection_seeds{0};

  void validate() const;
};

struct EllipsoidSearchSpec {
  std::vector<Vec3> radii;  ///< stage-1 candidates, physical units
  std::vector<double> azimuths{0.0, 30.0, 60.0, 90.0, 120.0, 150.0};
  std::vector<double> refine_offsets{-10.0, -5.0, 0.0, 5.0, 10.0};
  std::size_t stage1_wells = 500;
  double tie_band = 0.0;  ///< scores within this of the best count as ties; the first wins
  std::vector<std::uint64_t> selection_seeds{0};

  void validate() const;
};

struct RenderSpec {
  std::vector<std::size_t> z_slices;
  std::vector<std::size_t> wells;
};

struct ExperimentConfig {
  std::optional<std::filesystem::path> dataset;
  SyntheticSpec synthetic;
  std::optional<CellSize> cell;  ///< overrides the dataset or SPE10 default
  std::optional<Dims3> crop;
  bool scale_wells_with_crop = true;

  std::vector<std::size_t> wells{100, 300, 500, 700};
  std::size_t seeds = 50;
  std::uint64_t base_seed = 2024;
  std::vector<Method> methods{Method::kriging, Method::tensor_smoothed};
  bool normalize = true;

  AdmmParams admm = AdmmParams::with_default_beta(0.1, 1.0);
  std::map<std::size_t, AdmmParams> admm_per_wells;
  KrigingConfig kriging;
  GridSearchSpec grid;
  EllipsoidSearchSpec ellipsoid_search;
  RenderSpec render;

  std::filesystem::path output_dir = "out";
  std::size_t workers = 1;

  /// Throws ConfigError.
  void validate() const;
  [[nodiscard]] AdmmParams admm_for(std::size_t n_wells) const;

  static ExperimentConfig from_json(const nlohmann::json& j);
  [[nodiscard]] nlohmann::json to_json() const;
};

[[nodiscard]] ExperimentConfig load_config(const std::filesystem::path& path);

/// Ground truth and geometry after cropping.
struct Dataset {
  Field3 truth;
  CellSize cell;
  Dims3 full_dims;  ///< before cropping, used to scale well counts
};

[[nodiscard]] Dataset load_dataset(const ExperimentConfig& config);

/// Well count used on the (possibly cropped) grid for a nominal count on the full grid:
/// proportional to the lateral area, at least 1.
[[nodiscard]] std::size_t effective_wells(std::size_t nominal, const Dims3& full, const Dims3& cropped);

/// Seed of run k, a function of (base_seed, k) only.
[[nodiscard]] std::uint64_t seed_for(std::uint64_t base_seed, std::uint64_t k);

enum class RunStatus { ok, rejected, diverged, failed };
[[nodiscard]] std::string to_string(RunStatus s);

struct RunResult {
  Method method = Method::tensor_smoothed;
  std::size_t n_wells = 0;          ///< nominal (table) count
  std::size_t effective_wells = 0;  ///< count sampled on the grid in use
  std::uint64_t seed_index = 0;
  double rse = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::size_t fallback_cells = 0;
  double wall_seconds = 0.0;
  RunStatus status = RunStatus::ok;
  std::string message;
};

struct SummaryRow {
  Method method;
  std::size_t n_wells = 0;
  double active_pct = 0.0;
  double mean_rse = 0.0;
  double std_rse = 0.0;  ///< sample standard deviation, 0 for a single run
  std::size_t runs = 0;
  std::size_t failures = 0;
};

/// Reconstructions kept for rendering: seed index 0 of each rendered well count.
struct Snapshot {
  std::size_t n_wells = 0;
  Mask3 mask;
  std::map<Method, Field3> reconstructions;
  std::map<Method, ConvergenceTrace> traces;
};

struct ExperimentOutput {
  std::vector<RunResult> runs;  ///< sorted by (method, wells, seed)
  std::vector<SummaryRow> summary;
  std::vector<Snapshot> snapshots;
  std::map<std::string, ConvergenceTrace> traces;  ///< keyed "<method>_w<wells>_s<seed>"
  Field3 truth;
  VariogramModel variogram;
};

/// Variogram used by the kriging runs: fitted from the whole truth field or taken
/// from the config.
[[nodiscard]] VariogramModel kriging_variogram(const ExperimentConfig& config, const Dataset& data);
[[nodiscard]] SearchEllipsoid kriging_ellipsoid(const ExperimentConfig& config, const VariogramModel& model,
                                                std::size_t n_wells);

/// One method on one mask. Tensor methods normalize by the observed statistics when
/// configured. Failures are reported in the result, not thrown.
struct MethodRun {
  RunResult result;
  std::optional<Field3> reconstruction;
  ConvergenceTrace trace;
};
[[nodiscard]] MethodRun run_method(Method method, const Field3& truth, const Mask3& mask, const CellSize& cell,
                                   const AdmmParams& admm, const VariogramModel& variogram,
                                   const SearchEllipsoid& ellipsoid, bool normalize, std::size_t kriging_workers = 1);

[[nodiscard]] ExperimentOutput run_experiment(const ExperimentConfig& config);
[[nodiscard]] ExperimentOutput run_experiment(const ExperimentConfig& config, const Dataset& data);

[[nodiscard]] std::vector<SummaryRow> summarize(const std::vector<RunResult>& runs, const Dims3& grid);

struct GridCell {
  double rho = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double mean_rse = 0.0;
  bool diverged = false;
  std::string detail;
};

struct GridSearchResult {
  AdmmParams best;
  double best_rse = 0.0;
  std::vector<GridCell> cells;  ///< rho-major order
};

/// Mean RSE of one parameter setting; may throw DivergenceError.
using AdmmEvaluator = std::function<double(const AdmmParams&)>;

/// Scores every (rho, alpha) pair with beta = multiplier * rho. Lowest RSE wins,
/// exact ties go to the smaller alpha, then the smaller rho. Diverged cells are
/// excluded; if all diverge a ConfigError lists them.
[[nodiscard]] GridSearchResult grid_search(const GridSearchSpec& spec, const AdmmParams& base,
                                           const AdmmEvaluator& evaluate);

/// Evaluator running tensor_smoothed on the selection seeds at one well count.
[[nodiscard]] AdmmEvaluator make_admm_evaluator(const ExperimentConfig& config, const Dataset& data,
                                                std::size_t n_wells);

void write_grid_csv(const GridSearchResult& result, const std::filesystem::path& path);

struct EllipsoidScore {
  Vec3 radii{};
  double azimuth_deg = 0.0;
  double mean_rse = 0.0;
};

struct EllipsoidTuning {
  Vec3 best_radii{};
  double stage1_azimuth = 0.0;
  std::vector<EllipsoidScore> stage1;
  std::map<std::size_t, std::vector<EllipsoidScore>> stage2;
  std::map<std::size_t, SearchEllipsoid> per_wells;
};

/// Mean RSE of kriging with one ellipsoid at one well count.
using EllipsoidEvaluator = std::function<double(const SearchEllipsoid&, std::size_t n_wells)>;

/// Stage 1 scores every (radii, azimuth) pair at stage1_wells. Stage 2 keeps the best
/// radii and, per well count, scores azimuths best + offset.
[[nodiscard]] EllipsoidTuning tune_ellipsoid(const EllipsoidSearchSpec& spec, const std::vector<std::size_t>& wells,
                                             const SearchEllipsoid& base, const EllipsoidEvaluator& evaluate);

[[nodiscard]] EllipsoidEvaluator make_ellipsoid_evaluator(const ExperimentConfig& config, const Dataset& data,
                                                          const VariogramModel& variogram);

/// Writes summary.csv, runs.csv, table1.csv, traces/ and panels/ under the output
/// directory. Throws DataError if it cannot be written.
void render_report(const ExperimentOutput& output, const ExperimentConfig& config);

/// Side-by-side panel of truth, kriging, completion and mask for one z slice.
[[nodiscard]] GrayImage comparison_panel(const Field3& truth, const Field3& kriged, const Field3& completed,
                                         const Mask3& mask, std::size_t z);

}  // namespace geoinpaint
