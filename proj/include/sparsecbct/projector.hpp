#pragma once

#include <cstdint>

#include "sparsecbct/geometry.hpp"
#include "sparsecbct/volume.hpp"

namespace sparsecbct {

/// Linear attenuation of water (mm^-1) anchoring the HU scale.
inline constexpr double kMuWater = 0.02;

/// Volume of linear attenuation coefficients (mm^-1), all >= 0.
class AttenuationMap {
 public:
  explicit AttenuationMap(VoxelVolume mu);

  const VoxelVolume& volume() const { return mu_; }

 private:
  VoxelVolume mu_;
};

/// mu = max(0, mu_water * (1 + hu / 1000)).
AttenuationMap hu_to_mu(const VoxelVolume& hu);

/// Exact inverse of the unclamped HU -> mu map; negative mu maps below -1000 HU.
VoxelVolume mu_to_hu(const VoxelVolume& mu);

/// Line integral of mu along p0 -> p1 (mm). Midpoint rule with step at most
/// half the smallest voxel spacing, trilinear interpolation clamped to the
/// outermost voxel centers, and zero contribution outside the voxel box.
double ray_integral(const AttenuationMap& map, Vec3 p0, Vec3 p1);

/// One detector image per view; pixel (u, v) is the line integral from the
/// source to that pixel center.
ProjectionStack forward_project(const AttenuationMap& map, const ConeBeamGeometry& geom,
                                const ViewSet& views);

/// Optional extension: Poisson counting noise for `incident_photons` per pixel.
/// Not used by the default pipeline, whose projections are noise-free.
ProjectionStack add_poisson_noise(const ProjectionStack& stack, double incident_photons,
                                  std::uint64_t seed);

}  // namespace sparsecbct
