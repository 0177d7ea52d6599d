#pragma once

#include <cstddef>
#include <vector>

#include "sparsecbct/geometry.hpp"
#include "sparsecbct/volume.hpp"

namespace sparsecbct {

/// Shortest FFT length used for row filtering. Truncating the Ram-Lak kernel
/// to L taps leaves a DC residue of about 2 / (pi^2 L) which is removed by
/// zeroing the DC bin; at L >= 1024 that correction moves each kernel tap by
/// less than 2e-7 / pitch^2.
inline constexpr std::size_t kMinRampLength = 1024;

/// Frequency response of the windowless Ram-Lak filter for one detector row.
struct RampFilter {
  std::size_t length = 0;        // FFT length, power of two >= 2 * n_u
  double pitch = 1.0;            // detector sampling (mm)
  std::vector<double> response;  // real response for bins 0 .. length / 2
};

/// Response = DFT of the sampled spatial kernel h[0] = 1/(4 p^2),
/// h[odd k] = -1/(pi^2 k^2 p^2), h[even k] = 0, with the DC bin set to zero.
RampFilter make_ramp_filter(std::size_t n_u, double pitch);

/// Cosine pre-weight and redundancy weights for one acquisition.
/// Redundancy weights are constant along v and stored per view and column.
struct WeightMaps {
  std::size_t n_u = 0;
  std::size_t n_v = 0;
  std::vector<float> cosine;      // n_v x n_u, u fastest
  std::vector<float> redundancy;  // n_views x n_u
  double redundancy_factor = 1.0; // folded into the backprojection scale
};

WeightMaps make_weight_maps(const ConeBeamGeometry& geom, const std::vector<double>& angles_deg);

/// Raised-cosine half-fan blend: 0 below -delta, 1 above +delta and
/// sin^2(pi/4 (1 + x / delta)) in between, so w(x) + w(-x) = 1.
double half_fan_weight(double x, double delta);

/// Overlap half-width (mm on the detector) of a half-fan geometry: the
/// distance from the piercing point to the inner detector edge.
double half_fan_overlap(const ConeBeamGeometry& geom);

/// Parker short-scan weight for gantry position beta (rad from scan start),
/// fan angle gamma (rad) and overscan delta = (arc - pi) / 2.
double parker_weight(double beta, double gamma, double delta);

/// Global factor applied at backprojection: 1/2 for a full-fan 360 degree
/// scan (every ray measured twice), 1 otherwise.
double redundancy_factor(const ConeBeamGeometry& geom);

ProjectionStack cosine_weight(const ProjectionStack& stack, const ConeBeamGeometry& geom);
ProjectionStack redundancy_weight(const ProjectionStack& stack, const ConeBeamGeometry& geom);
ProjectionStack ramp_filter(const ProjectionStack& stack);

/// Weighted half-fan rows zero-padded on the inner side so the detector is
/// (nearly) symmetric about the piercing point. Ramp-filtered values beyond the
/// physical inner edge are nonzero and must reach the backprojector.
/// Full-fan stacks are returned unchanged.
struct PaddedStack {
  ProjectionStack stack;
  ConeBeamGeometry geometry;  // virtual detector describing `stack` columns
};
PaddedStack pad_to_symmetric(const ProjectionStack& stack, const ConeBeamGeometry& geom);

/// Voxel-driven FDK backprojection of a weighted, filtered stack onto the grid
/// of `grid`. Returns attenuation (mm^-1). The scale is
/// (arc / n_views) * redundancy_factor * pitch_u * sid / sad, the last two
/// terms converting the discrete row convolution to the isocenter plane.
VoxelVolume backproject(const ProjectionStack& stack, const ConeBeamGeometry& geom,
                        const VoxelVolume& grid);

/// cosine_weight -> redundancy_weight -> pad_to_symmetric -> ramp_filter ->
/// backproject -> HU.
VoxelVolume fdk_reconstruct(const ProjectionStack& stack, const ConeBeamGeometry& geom,
                            const VoxelVolume& grid);

}  // namespace sparsecbct
