#include "geoinpaint/geodata.hpp"

#include "geoinpaint/errors.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace geoinpaint {

namespace fs = std::filesystem;

namespace {

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

std::ofstream open_for_write(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  return out;
}

bool is_space(char c) { return c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '\f' || c == '\v'; }

/// Uniform integer in [0, n) by rejection, independent of the standard library's
/// distribution implementation.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r = rng();
  while (r >= limit) r = rng();
  return r % n;
}

}  // namespace

fs::path manifest_path_for(const fs::path& data) { return fs::path(data.string() + ".manifest.json"); }

void write_manifest(const FieldManifest& m, const fs::path& path) {
  nlohmann::json j;
  j["dims"] = {m.dims.i, m.dims.j, m.dims.k};
  j["cell_ft"] = {m.cell.x, m.cell.y, m.cell.z};
  j["order"] = m.order;
  open_for_write(path) << j.dump(2) << '\n';
}

FieldManifest read_manifest(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_all(path));
    FieldManifest m;
    const auto d = j.at("dims").get<std::vector<std::size_t>>();
    if (d.size() != 3) throw DataError("manifest dims must have 3 entries");
    m.dims = Dims3(d[0], d[1], d[2]);
    if (j.contains("cell_ft")) {
      const auto c = j.at("cell_ft").get<std::vector<double>>();
      if (c.size() != 3) throw DataError("manifest cell_ft must have 3 entries");
      m.cell = {c[0], c[1], c[2]};
    }
    m.order = j.value("order", std::string("i-fastest"));
    if (m.order != "i-fastest")
      throw DataError(fmt::format("manifest order '{}' is not supported (only i-fastest)", m.order));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("malformed manifest '{}': {}", path.string(), e.what()));
  } catch (const std::invalid_argument& e) {
    throw DataError(fmt::format("malformed manifest '{}': {}", path.string(), e.what()));
  }
}

Field3 load_field_ascii(const fs::path& path, const Dims3& dims) {
  const std::string text = read_all(path);
  std::vector<double> values;
  values.reserve(dims.size());
  const char* p = text.data();
  const char* end = p + text.size();
  std::size_t token = 0;
  while (true) {
    while (p < end && is_space(*p)) ++p;
    if (p >= end) break;
    const char* tok_end = p;
    while (tok_end < end && !is_space(*tok_end)) ++tok_end;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(p, tok_end, v);
    if (ec != std::errc() || ptr != tok_end || !std::isfinite(v))
      throw DataError(fmt::format("'{}': token {} ('{}') is not a finite number", path.string(), token,
                                  std::string(p, std::min<std::size_t>(tok_end - p, 32))));
    if (values.size() < dims.size()) values.push_back(v);
    ++token;
    p = tok_end;
  }
  if (token != dims.size())
    throw DataError(fmt::format("'{}': expected {} values, found {}", path.string(), dims.size(), token));
  return Field3(dims, std::move(values));
}

void write_field_ascii(const Field3& field, const fs::path& path) {
  auto out = open_for_write(path);
  const auto v = field.values();
  std::string line;
  for (std::size_t n = 0; n < v.size(); ++n) {
    // shortest round-trip representation
    line += fmt::format("{}", v[n]);
    line += (n % 6 == 5 || n + 1 == v.size()) ? '\n' : ' ';
    if (line.size() > (1u << 16)) {
      out << line;
      line.clear();
    }
  }
  out << line;
}

Spe10Grid load_spe10_porosity(const fs::path& path) {
  Spe10Grid g{load_field_ascii(path, Spe10Grid::dims())};
  for (std::size_t n = 0; n < g.porosity.size(); ++n)
    if (g.porosity[n] < 0.0) throw DataError(fmt::format("'{}': negative porosity at value {}", path.string(), n));
  return g;
}

LoadedField load_field_auto(const fs::path& path) {
  const fs::path manifest = manifest_path_for(path);
  if (fs::exists(manifest)) {
    const FieldManifest m = read_manifest(manifest);
    return {load_field_ascii(path, m.dims), m.cell};
  }
  return {load_spe10_porosity(path).porosity, Spe10Grid::cell_size()};
}

Field3 crop_field(const Field3& field, const Dims3& crop) {
  const Dims3& d = field.dims();
  if (crop.i > d.i || crop.j > d.j || crop.k > d.k)
    throw std::invalid_argument(
        fmt::format("crop {}x{}x{} exceeds field {}x{}x{}", crop.i, crop.j, crop.k, d.i, d.j, d.k));
  Field3 out(crop);
  for (std::size_t k = 0; k < crop.k; ++k)
    for (std::size_t j = 0; j < crop.j; ++j)
      for (std::size_t i = 0; i < crop.i; ++i) out(i, j, k) = field(i, j, k);
  return out;
}

WellSampling sample_wells(const Dims3& dims, std::size_t n_wells, std::uint64_t seed) {
  const std::size_t lateral = dims.i * dims.j;
  if (n_wells > lateral)
    throw std::invalid_argument(fmt::format("{} wells requested but only {} lateral cells", n_wells, lateral));
  std::vector<std::size_t> cells(lateral);
  std::iota(cells.begin(), cells.end(), 0);
  std::mt19937_64 rng(seed);
  WellPlan plan;
  plan.wells.reserve(n_wells);
  for (std::size_t t = 0; t < n_wells; ++t) {
    const std::size_t pick = t + uniform_below(rng, lateral - t);
    std::swap(cells[t], cells[pick]);
    plan.wells.push_back({cells[t] % dims.i, cells[t] / dims.i});
  }
  Mask3 mask = mask_from_wells(dims, plan);
  return {std::move(plan), std::move(mask)};
}

Mask3 mask_from_wells(const Dims3& dims, const WellPlan& plan) {
  Mask3 mask(dims);
  for (const auto& w : plan.wells) {
    if (w.i >= dims.i || w.j >= dims.j)
      throw std::invalid_argument(fmt::format("well ({}, {}) outside {}x{}", w.i, w.j, dims.i, dims.j));
    for (std::size_t k = 0; k < dims.k; ++k) mask.set(w.i, w.j, k, true);
  }
  return mask;
}

void write_well_plan_csv(const WellPlan& plan, const fs::path& path) {
  auto out = open_for_write(path);
  out << "well_id,i,j\n";
  for (std::size_t w = 0; w < plan.wells.size(); ++w) out << w << ',' << plan.wells[w].i << ',' << plan.wells[w].j << '\n';
}

WellPlan read_well_plan_csv(const fs::path& path) {
  std::istringstream in(read_all(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("well_id,i,j", 0) != 0)
    throw DataError(fmt::format("'{}': missing header well_id,i,j", path.string()));
  WellPlan plan;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::size_t id = 0, i = 0, j = 0;
    char c1 = 0, c2 = 0;
    std::istringstream row(line);
    if (!(row >> id >> c1 >> i >> c2 >> j) || c1 != ',' || c2 != ',')
      throw DataError(fmt::format("'{}': malformed row at line {}", path.string(), lineno));
    plan.wells.push_back({i, j});
  }
  return plan;
}

double active_cell_fraction(const Mask3& mask) {
  if (mask.size() == 0) return 0.0;
  return 100.0 * static_cast<double>(mask.count_observed()) / static_cast<double>(mask.size());
}

std::vector<SamplePoint> observed_samples(const Field3& field, const Mask3& mask) {
  std::vector<SamplePoint> out;
  const Dims3& d = field.dims();
  for (std::size_t k = 0; k < d.k; ++k)
    for (std::size_t j = 0; j < d.j; ++j)
      for (std::size_t i = 0; i < d.i; ++i)
        if (mask(i, j, k))
          out.push_back({{static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)}, field(i, j, k)});
  return out;
}

Normalized normalize(const Field3& field, const Mask3& mask) {
  if (!(field.dims() == mask.dims())) throw std::invalid_argument("normalize: field and mask dims differ");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < field.size(); ++n)
    if (mask[n]) {
      sum += field[n];
      ++count;
    }
  if (count < 2) throw DataError(fmt::format("normalize: need at least 2 observed values, got {}", count));
  const double mean = sum / static_cast<double>(count);
  double ss = 0.0;
  for (std::size_t n = 0; n < field.size(); ++n)
    if (mask[n]) ss += (field[n] - mean) * (field[n] - mean);
  const double stddev = std::sqrt(ss / static_cast<double>(count));
  if (!(stddev > 0.0)) throw DataError("normalize: observed values have zero spread");

  Normalized out{Field3(field.dims()), {mean, stddev}};
  for (std::size_t n = 0; n < field.size(); ++n) out.field[n] = (field[n] - mean) / stddev;
  return out;
}

Field3 denormalize(const Field3& field, const Normalization& stats) {
  Field3 out(field.dims());
  for (std::size_t n = 0; n < field.size(); ++n) out[n] = field[n] * stats.stddev + stats.mean;
  return out;
}

SliceAxis slice_axis_from_string(const std::string& name) {
  if (name == "x") return SliceAxis::x;
  if (name == "y") return SliceAxis::y;
  if (name == "z") return SliceAxis::z;
  throw std::invalid_argument(fmt::format("unknown slice axis '{}'", name));
}

namespace {

/// Calls put(column, row, i, j, k) for every pixel of the slice.
template <class Put>
GrayImage walk_slice(const Dims3& d, SliceAxis axis, std::size_t index, Put put) {
  GrayImage img;
  const std::size_t limit = axis == SliceAxis::x ? d.i : axis == SliceAxis::y ? d.j : d.k;
  if (index >= limit)
    throw std::out_of_range(fmt::format("slice index {} out of range [0, {})", index, limit));
  switch (axis) {
    case SliceAxis::z: img.width = d.j; img.height = d.i; break;
    case SliceAxis::x: img.width = d.j; img.height = d.k; break;
    case SliceAxis::y: img.width = d.i; img.height = d.k; break;
  }
  img.pixels.resize(img.width * img.height);
  for (std::size_t row = 0; row < img.height; ++row)
    for (std::size_t col = 0; col < img.width; ++col) {
      std::size_t i = 0, j = 0, k = 0;
      switch (axis) {
        case SliceAxis::z: i = row; j = col; k = index; break;
        case SliceAxis::x: i = index; j = col; k = row; break;
        case SliceAxis::y: i = col; j = index; k = row; break;
      }
      img.pixels[row * img.width + col] = put(i, j, k);
    }
  return img;
}

}  // namespace

GrayImage render_slice(const Field3& field, SliceAxis axis, std::size_t index, const ValueRange& range) {
  const double span = range.hi - range.lo;
  return walk_slice(field.dims(), axis, index, [&](std::size_t i, std::size_t j, std::size_t k) -> std::uint8_t {
    if (!(span > 0.0)) return 128;
    const double t = std::clamp((field(i, j, k) - range.lo) / span, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(255.0 * t));
  });
}

GrayImage render_mask_slice(const Mask3& mask, SliceAxis axis, std::size_t index) {
  return walk_slice(mask.dims(), axis, index, [&](std::size_t i, std::size_t j, std::size_t k) -> std::uint8_t {
    return mask(i, j, k) ? 255 : 0;
  });
}

GrayImage hstack(const std::vector<GrayImage>& images, std::size_t gutter) {
  GrayImage out;
  if (images.empty()) return out;
  for (const auto& im : images) out.height = std::max(out.height, im.height);
  out.width = gutter * (images.size() - 1);
  for (const auto& im : images) out.width += im.width;
  out.pixels.assign(out.width * out.height, 255);
  std::size_t x0 = 0;
  for (const auto& im : images) {
    for (std::size_t r = 0; r < im.height; ++r)
      std::copy_n(im.pixels.begin() + static_cast<std::ptrdiff_t>(r * im.width), im.width,
                  out.pixels.begin() + static_cast<std::ptrdiff_t>(r * out.width + x0));
    x0 += im.width + gutter;
  }
  return out;
}

void write_pgm(const GrayImage& image, const fs::path& path) {
  auto out = open_for_write(path, std::ios::out | std::ios::binary);
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

GrayImage read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  std::string magic;
  std::size_t maxval = 0;
  GrayImage img;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255 || !in) throw DataError(fmt::format("'{}' is not an 8-bit P5 graymap", path.string()));
  in.get();
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw DataError(fmt::format("'{}': truncated pixel data", path.string()));
  return img;
}

void export_slice_image(const Field3& field, SliceAxis axis, std::size_t index, const fs::path& path,
                        const ValueRange& range) {
  write_pgm(render_slice(field, axis, index, range), path);
}

}  // namespace geoinpaint
