#include "ctof/phantoms.hpp"

#include <algorithm>
#include <cmath>

namespace ctof::phantoms {
namespace {

double overlap(double a0, double a1, double b0, double b1) { return std::max(0.0, std::min(a1, b1) - std::max(a0, b0)); }

}  // namespace

TwoLines two_lines(const VoxelGrid& grid, double width, double separation, std::size_t layer, double amplitude,
                   double length) {
  if (layer >= grid.nz()) throw Error(ErrorCode::invalid_parameter, "line layer outside grid");
  if (!(width > 0.0) || !(separation >= 0.0)) throw Error(ErrorCode::invalid_parameter, "line width must be > 0, separation >= 0");
  TwoLines out{VolumeImage(grid), 0.0, 0.0};
  const double px = grid.pitch[0];
  const double a0 = -0.5 * separation - width, a1 = -0.5 * separation;
  const double b0 = 0.5 * separation, b1 = 0.5 * separation + width;
  for (std::size_t j = 0; j < grid.ny(); ++j) {
    const double y = grid.center(0, j, layer).y;
    if (length > 0.0 && std::abs(y) > 0.5 * length) continue;
    for (std::size_t i = 0; i < grid.nx(); ++i) {
      const double x = grid.center(i, j, layer).x;
      const double c = overlap(x - 0.5 * px, x + 0.5 * px, a0, a1) + overlap(x - 0.5 * px, x + 0.5 * px, b0, b1);
      out.image.at(i, j, layer) = amplitude * c / px;
    }
  }
  auto index_of = [&](double x) { return (x - grid.origin[0]) / px - 0.5; };
  out.center_a = index_of(0.5 * (a0 + a1));
  out.center_b = index_of(0.5 * (b0 + b1));
  return out;
}

VolumeImage letter_r(const VoxelGrid& grid, std::size_t layer, double amplitude) {
  static const char* glyph[] = {
      "111110", "100001", "100001", "100001", "111110", "101000", "100100", "100010", "100001",
  };
  const std::size_t gw = 6, gh = 9;
  if (layer >= grid.nz()) throw Error(ErrorCode::invalid_parameter, "letter layer outside grid");
  VolumeImage img(grid);
  // Glyph occupies the central 3/4 of the layer; row 0 of the glyph is the top (largest y).
  const double x0 = 0.125 * static_cast<double>(grid.nx()), w = 0.75 * static_cast<double>(grid.nx());
  const double y0 = 0.125 * static_cast<double>(grid.ny()), h = 0.75 * static_cast<double>(grid.ny());
  for (std::size_t j = 0; j < grid.ny(); ++j)
    for (std::size_t i = 0; i < grid.nx(); ++i) {
      const double u = (static_cast<double>(i) + 0.5 - x0) / w, v = (static_cast<double>(j) + 0.5 - y0) / h;
      if (u < 0.0 || u >= 1.0 || v < 0.0 || v >= 1.0) continue;
      const std::size_t gx = static_cast<std::size_t>(u * gw), gy = gh - 1 - static_cast<std::size_t>(v * gh);
      if (glyph[gy][gx] == '1') img.at(i, j, layer) = amplitude;
    }
  return img;
}

std::size_t nearest_layer(const VoxelGrid& grid, double depth) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < grid.nz(); ++k)
    if (std::abs(grid.center(0, 0, k).z - depth) < std::abs(grid.center(0, 0, best).z - depth)) best = k;
  return best;
}

VolumeImage discs(const VoxelGrid& grid, const std::vector<Disc>& items, double amplitude) {
  VolumeImage img(grid);
  for (const Disc& d : items) {
    const std::size_t k = nearest_layer(grid, d.depth);
    for (std::size_t j = 0; j < grid.ny(); ++j)
      for (std::size_t i = 0; i < grid.nx(); ++i) {
        const Vec3 c = grid.center(i, j, k);
        if (std::hypot(c.x - d.center.x, c.y - d.center.y) <= 0.5 * d.diameter) img.at(i, j, k) = amplitude;
      }
  }
  return img;
}

}  // namespace ctof::phantoms
