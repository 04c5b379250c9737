#pragma once

#include <vector>

#include "ctof/core_types.hpp"

namespace ctof::phantoms {

struct TwoLines {
  VolumeImage image;
  double center_a = 0.0;  ///< fractional x index of the first line's center
  double center_b = 0.0;
};

/// Two lines parallel to y in layer `layer`, each `width` wide, with `separation` between their
/// inner edges, centered on x = 0. Voxels take their fractional x coverage. `length` <= 0 spans
/// the whole grid in y.
TwoLines two_lines(const VoxelGrid& grid, double width, double separation, std::size_t layer, double amplitude = 1.0,
                   double length = 0.0);

/// Block letter R filling the central part of layer `layer`.
VolumeImage letter_r(const VoxelGrid& grid, std::size_t layer = 0, double amplitude = 1.0);

struct Disc {
  Vec2 center;
  double diameter = 1.0;
  double depth = 1.0;  ///< placed in the layer whose center is nearest
};

VolumeImage discs(const VoxelGrid& grid, const std::vector<Disc>& items, double amplitude = 1.0);

/// Layer whose center is closest to `depth`.
std::size_t nearest_layer(const VoxelGrid& grid, double depth);

}  // namespace ctof::phantoms
