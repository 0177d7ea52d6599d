#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sparsecbct/io.hpp"
#include "sparsecbct/volume.hpp"

namespace sparsecbct {

enum class FanMode { Full, Half };

std::string to_string(FanMode mode);
FanMode fan_mode_from_string(const std::string& text);

/// Circular cone-beam acquisition.
///
/// World frame: right-handed, rotation axis z, gantry angle counterclockwise
/// from +x. The source sits at sad * (cos a, sin a, 0). The flat detector is
/// perpendicular to the central ray at distance sid from the source; its u
/// axis is (-sin a, cos a, 0) and its v axis is +z. Detector coordinates are
/// measured from the piercing point of the central ray, so the detector
/// center sits at u = lateral_offset_u.
struct ConeBeamGeometry {
  double sad = 1000.0;
  double sid = 1540.0;
  std::size_t n_u = 366;
  std::size_t n_v = 160;
  double pitch_u = 1.176;
  double pitch_v = 2.688;
  double lateral_offset_u = 175.0;
  double arc_deg = 360.0;
  FanMode fan_mode = FanMode::Half;

  /// Throws a validation error naming the first violated invariant.
  void validate() const;

  double magnification() const { return sid / sad; }

  /// u coordinate (mm, relative to the piercing point) of detector column i.
  double u_of(double column) const {
    return (column - 0.5 * static_cast<double>(n_u - 1)) * pitch_u + lateral_offset_u;
  }
  /// v coordinate (mm) of detector row j.
  double v_of(double row) const { return (row - 0.5 * static_cast<double>(n_v - 1)) * pitch_v; }

  /// Fractional column for a u coordinate (inverse of u_of).
  double column_of(double u) const {
    return (u - lateral_offset_u) / pitch_u + 0.5 * static_cast<double>(n_u - 1);
  }
  double row_of(double v) const { return v / pitch_v + 0.5 * static_cast<double>(n_v - 1); }

  /// Largest |u| reached by a pixel center.
  double max_abs_u() const;

  friend bool operator==(const ConeBeamGeometry&, const ConeBeamGeometry&) = default;
};

/// Simulated Halcyon-like half-fan protocol: SAD 1000 mm, SID 1540 mm,
/// 366x160 detector at 1.176x2.688 mm, 175 mm lateral offset, 360 degrees.
ConeBeamGeometry make_reference_geometry();

/// Desk-scale variant matched to a 64x64x32 grid at 4x4x6 mm: same SID/SAD,
/// same pixel aspect, 96x64 pixels at twice the reference pitch and half the
/// lateral offset.
ConeBeamGeometry make_desk_geometry();

/// Physical panel of the real scanner (3072x384 pixels over 86x43 cm), used
/// full-fan over a 210 degree half trajectory.
ConeBeamGeometry make_real_detector_geometry();

/// Arc of the full-fan half trajectory.
inline constexpr double kHalfTrajectoryArcDeg = 210.0;

json to_json(const ConeBeamGeometry& geom);
ConeBeamGeometry geometry_from_json(const json& j);

/// Resolves "reference" / "desk" / "real-detector" presets or an explicit object.
ConeBeamGeometry geometry_from_config(const json& j);

std::string geometry_hash(const ConeBeamGeometry& geom);

/// Gantry angles of one scan. `indices` are positions in the dense scan the
/// angles were taken from (identity for a dense scan).
struct ViewSet {
  std::vector<double> angles_deg;
  std::vector<std::size_t> indices;

  std::size_t size() const { return angles_deg.size(); }
};

/// n_views angles uniformly spaced over [0, arc), starting at 0.
ViewSet full_view_set(const ConeBeamGeometry& geom, std::size_t n_views);

/// k of `total` indices, index_i = floor(i * total / k).
std::vector<std::size_t> uniform_view_subset(std::size_t total, std::size_t k);

/// Views of `dense` at the given positions; keeps the dense-scan indices.
ViewSet select_views(const ViewSet& dense, std::span<const std::size_t> positions);

Vec3 source_position(const ConeBeamGeometry& geom, double angle_deg);

/// World position of the detector point with coordinates (u, v).
Vec3 detector_point(const ConeBeamGeometry& geom, double angle_deg, double u, double v);

/// Center of the physical detector (includes the lateral offset).
Vec3 detector_center(const ConeBeamGeometry& geom, double angle_deg);

}  // namespace sparsecbct
