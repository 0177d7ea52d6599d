#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace sparsecbct {

struct Dims3 {
  std::size_t nx = 1;
  std::size_t ny = 1;
  std::size_t nz = 1;

  std::size_t count() const { return nx * ny * nz; }
  friend bool operator==(const Dims3&, const Dims3&) = default;
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
double norm(Vec3 a);

/// What the scalars of a volume or projection stack mean.
enum class Unit { HU, Normalized, LineIntegral, Attenuation };

std::string to_string(Unit unit);
Unit unit_from_string(const std::string& text);

/// Metadata that fully determines a `.vol` payload.
struct VolumeHeader {
  Dims3 dims;
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin;
  std::string dtype = "f32le";
  Unit unit = Unit::HU;

  std::size_t payload_bytes() const { return dims.count() * sizeof(float); }
};

/// Scalar grid with x fastest, then y, then z. `origin` is the world position
/// (mm) of the center of voxel (0, 0, 0).
class VoxelVolume {
 public:
  VoxelVolume() = default;
  VoxelVolume(Dims3 dims, Vec3 spacing, Vec3 origin, Unit unit = Unit::HU, float fill = 0.0f);
  VoxelVolume(Dims3 dims, Vec3 spacing, Vec3 origin, Unit unit, std::vector<float> values);

  /// Grid whose voxel centers are symmetric about the world origin.
  static VoxelVolume centered(Dims3 dims, Vec3 spacing, Unit unit = Unit::HU, float fill = 0.0f);

  const Dims3& dims() const { return dims_; }
  const Vec3& spacing() const { return spacing_; }
  const Vec3& origin() const { return origin_; }
  Unit unit() const { return unit_; }
  std::size_t size() const { return values_.size(); }

  std::span<const float> values() const { return values_; }
  std::span<float> values() { return values_; }

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return (k * dims_.ny + j) * dims_.nx + i;
  }
  float at(std::size_t i, std::size_t j, std::size_t k) const { return values_[index(i, j, k)]; }
  float& at(std::size_t i, std::size_t j, std::size_t k) { return values_[index(i, j, k)]; }

  /// World coordinates (mm) of a voxel center.
  Vec3 center(std::size_t i, std::size_t j, std::size_t k) const {
    return {origin_.x + spacing_.x * static_cast<double>(i),
            origin_.y + spacing_.y * static_cast<double>(j),
            origin_.z + spacing_.z * static_cast<double>(k)};
  }

  VolumeHeader header() const { return {dims_, spacing_, origin_, "f32le", unit_}; }

  /// Same grid, new values and unit.
  VoxelVolume with_values(std::vector<float> values, Unit unit) const;
  VoxelVolume filled(float value, Unit unit) const;

  bool same_grid(const VoxelVolume& other) const;

  friend bool operator==(const VoxelVolume&, const VoxelVolume&) = default;

 private:
  Dims3 dims_;
  Vec3 spacing_{1.0, 1.0, 1.0};
  Vec3 origin_;
  Unit unit_ = Unit::HU;
  std::vector<float> values_;
};

/// Detector images, one per gantry angle. Storage: u fastest, then v, then view.
class ProjectionStack {
 public:
  ProjectionStack() = default;
  ProjectionStack(std::size_t n_u, std::size_t n_v, double pitch_u, double pitch_v,
                  std::vector<double> angles_deg, float fill = 0.0f);

  std::size_t n_views() const { return angles_deg_.size(); }
  std::size_t n_u() const { return n_u_; }
  std::size_t n_v() const { return n_v_; }
  double pitch_u() const { return pitch_u_; }
  double pitch_v() const { return pitch_v_; }
  const std::vector<double>& angles_deg() const { return angles_deg_; }

  std::span<const float> values() const { return values_; }
  std::span<float> values() { return values_; }

  std::span<const float> view(std::size_t v) const {
    return std::span<const float>(values_).subspan(v * n_u_ * n_v_, n_u_ * n_v_);
  }
  std::span<float> view(std::size_t v) {
    return std::span<float>(values_).subspan(v * n_u_ * n_v_, n_u_ * n_v_);
  }

  float at(std::size_t view, std::size_t v, std::size_t u) const {
    return values_[(view * n_v_ + v) * n_u_ + u];
  }
  float& at(std::size_t view, std::size_t v, std::size_t u) {
    return values_[(view * n_v_ + v) * n_u_ + u];
  }

  /// Stack restricted to the given view indices (in the given order).
  ProjectionStack select(std::span<const std::size_t> view_indices) const;

  friend bool operator==(const ProjectionStack&, const ProjectionStack&) = default;

 private:
  std::size_t n_u_ = 0;
  std::size_t n_v_ = 0;
  double pitch_u_ = 1.0;
  double pitch_v_ = 1.0;
  std::vector<double> angles_deg_;
  std::vector<float> values_;
};

/// HU window mapped onto [-1, 1] for the network; values outside the window
/// map outside [-1, 1] (no clipping).
inline constexpr double kNormalizeLowHu = -1500.0;
inline constexpr double kNormalizeHighHu = 1000.0;

double normalize_hu(double hu);
double denormalize_value(double normalized);

VoxelVolume normalize_hu(const VoxelVolume& hu_volume);
VoxelVolume denormalize(const VoxelVolume& normalized_volume);

}  // namespace sparsecbct
