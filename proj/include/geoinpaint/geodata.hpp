#pragma once

#include "geoinpaint/kriging.hpp"
#include "geoinpaint/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace geoinpaint {

/// SPE10 model 2 geometry: 60 x 220 x 85 cells of 20 x 20 x 2 ft.
struct Spe10Grid {
  static constexpr std::size_t kNx = 60;
  static constexpr std::size_t kNy = 220;
  static constexpr std::size_t kNz = 85;
  static constexpr double kCellFt[3] = {20.0, 20.0, 2.0};

  static Dims3 dims() { return {kNx, kNy, kNz}; }
  static CellSize cell_size() { return {kCellFt[0], kCellFt[1], kCellFt[2]}; }

  Field3 porosity;
};

/// Sidecar description of an ASCII field file, stored as `<data>.manifest.json`:
/// {"dims":[I,J,K], "cell_ft":[dx,dy,dz], "order":"i-fastest"}.
struct FieldManifest {
  Dims3 dims;
  CellSize cell;
  std::string order = "i-fastest";
};

[[nodiscard]] std::filesystem::path manifest_path_for(const std::filesystem::path& data);
void write_manifest(const FieldManifest& manifest, const std::filesystem::path& path);
[[nodiscard]] FieldManifest read_manifest(const std::filesystem::path& path);

/// Whitespace-separated ASCII floats, i fastest, then j, then k. Throws DataError on
/// a count mismatch or on a token that is not a finite number (naming its index).
[[nodiscard]] Field3 load_field_ascii(const std::filesystem::path& path, const Dims3& dims);
void write_field_ascii(const Field3& field, const std::filesystem::path& path);

[[nodiscard]] Spe10Grid load_spe10_porosity(const std::filesystem::path& path);

/// Loads a field, taking dims and cell size from the sidecar manifest when present
/// and falling back to the SPE10 geometry otherwise.
struct LoadedField {
  Field3 field;
  CellSize cell;
};
[[nodiscard]] LoadedField load_field_auto(const std::filesystem::path& path);

/// Keeps the sub-volume [0, crop.i) x [0, crop.j) x [0, crop.k).
[[nodiscard]] Field3 crop_field(const Field3& field, const Dims3& crop);

struct Well {
  std::size_t i = 0;
  std::size_t j = 0;
  friend bool operator==(const Well&, const Well&) = default;
};

/// Vertical wells; each observes its full (i, j) column.
struct WellPlan {
  std::vector<Well> wells;
  friend bool operator==(const WellPlan&, const WellPlan&) = default;
};

struct WellSampling {
  WellPlan plan;
  Mask3 mask;
};

/// Draws n_wells distinct lateral positions uniformly without replacement.
[[nodiscard]] WellSampling sample_wells(const Dims3& dims, std::size_t n_wells, std::uint64_t seed);
[[nodiscard]] Mask3 mask_from_wells(const Dims3& dims, const WellPlan& plan);

void write_well_plan_csv(const WellPlan& plan, const std::filesystem::path& path);
[[nodiscard]] WellPlan read_well_plan_csv(const std::filesystem::path& path);

/// 100 * observed / total.
[[nodiscard]] double active_cell_fraction(const Mask3& mask);

/// Observed cells as kriging samples in cell-index coordinates.
[[nodiscard]] std::vector<SamplePoint> observed_samples(const Field3& field, const Mask3& mask);

/// Mean and population standard deviation of the observed cells.
struct Normalization {
  double mean = 0.0;
  double stddev = 1.0;
};

struct Normalized {
  Field3 field;
  Normalization stats;
};

[[nodiscard]] Normalized normalize(const Field3& field, const Mask3& mask);
[[nodiscard]] Field3 denormalize(const Field3& field, const Normalization& stats);

enum class SliceAxis { x, y, z };

[[nodiscard]] SliceAxis slice_axis_from_string(const std::string& name);

/// 8-bit grayscale raster, row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

struct ValueRange {
  double lo = 0.0;
  double hi = 1.0;
};

/// One pixel per cell, intensity linear in value over `range` and clamped.
/// Orientation: z-slices put j horizontal and i vertical; x-slices put j horizontal
/// and k vertical; y-slices put i horizontal and k vertical.
[[nodiscard]] GrayImage render_slice(const Field3& field, SliceAxis axis, std::size_t index, const ValueRange& range);
[[nodiscard]] GrayImage render_mask_slice(const Mask3& mask, SliceAxis axis, std::size_t index);

/// Places images left to right separated by `gutter` white columns.
[[nodiscard]] GrayImage hstack(const std::vector<GrayImage>& images, std::size_t gutter = 4);

/// Binary portable graymap (P5, maxval 255).
void write_pgm(const GrayImage& image, const std::filesystem::path& path);
[[nodiscard]] GrayImage read_pgm(const std::filesystem::path& path);

void export_slice_image(const Field3& field, SliceAxis axis, std::size_t index, const std::filesystem::path& path,
                        const ValueRange& range);

}  // namespace geoinpaint
