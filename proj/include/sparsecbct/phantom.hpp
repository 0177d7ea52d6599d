#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparsecbct/io.hpp"
#include "sparsecbct/volume.hpp"

namespace sparsecbct {

enum class Tissue { Body, Lung, Bone, Soft, Lesion };

std::string to_string(Tissue tissue);

/// Axis-aligned ellipsoid with a constant HU value.
struct Ellipsoid {
  Vec3 center;
  Vec3 semi_axes;
  float hu = 0.0f;
  Tissue tissue = Tissue::Soft;

  bool contains(Vec3 p) const;
  /// Largest value of the normalized quadric of `outer` over this
  /// ellipsoid's surface (<= 1 means fully inside `outer`).
  double max_extent_in(const Ellipsoid& outer) const;
};

/// HU sampling bands per tissue class: center and half-width.
struct HuBand {
  double center;
  double half_width;
};
HuBand hu_band(Tissue tissue);

inline constexpr float kAirHu = -1000.0f;

/// Reconstruction grid: voxel counts and spacing, centered on the rotation axis.
struct GridSpec {
  Dims3 dims{64, 64, 32};
  Vec3 spacing{4.0, 4.0, 6.0};

  VoxelVolume make_volume(Unit unit = Unit::HU, float fill = 0.0f) const;
  Vec3 half_extent() const;
  void validate() const;
};

json to_json(const GridSpec& grid);
GridSpec grid_from_json(const json& j);

/// Diversity knobs for randomly drawn phantoms.
struct PhantomKnobs {
  std::size_t max_extra_bones = 3;
  std::size_t max_lesions = 3;
  std::size_t max_soft = 2;
};

/// Fully explicit phantom description. The body comes first; inclusions
/// follow in painting order, so the last ellipsoid containing a voxel wins.
struct PhantomSpec {
  std::uint64_t seed = 0;
  GridSpec grid;
  Ellipsoid body;
  std::vector<Ellipsoid> inclusions;

  /// Throws a validation error if an inclusion leaves the body or a value
  /// falls outside [-1000, 1000] HU.
  void validate() const;
};

/// Chest-like layout drawn deterministically from `seed`: body, two lungs, a
/// heart, a spine, and a few random bones, soft inclusions and lesions.
PhantomSpec random_phantom_spec(std::uint64_t seed, const GridSpec& grid,
                                const PhantomKnobs& knobs = {});

/// Voxel value = HU of the last ellipsoid containing the voxel center, air elsewhere.
VoxelVolume generate_phantom(const PhantomSpec& spec);

/// Uniform sphere centered on the rotation axis, air outside.
VoxelVolume sphere_phantom(const GridSpec& grid, double radius_mm, float hu);

}  // namespace sparsecbct
