#include "sparsecbct/volume.hpp"

#include <cmath>

#include "sparsecbct/errors.hpp"

namespace sparsecbct {

double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

std::string to_string(Unit unit) {
  switch (unit) {
    case Unit::HU: return "HU";
    case Unit::Normalized: return "normalized";
    case Unit::LineIntegral: return "line-integral";
    case Unit::Attenuation: return "mu_per_mm";
  }
  return "HU";
}

Unit unit_from_string(const std::string& text) {
  if (text == "HU") return Unit::HU;
  if (text == "normalized") return Unit::Normalized;
  if (text == "line-integral") return Unit::LineIntegral;
  if (text == "mu_per_mm") return Unit::Attenuation;
  fail(ErrorKind::MalformedHeader, "unknown unit tag '" + text + "'");
}

namespace {

void check_grid(const Dims3& dims, const Vec3& spacing) {
  require(dims.nx >= 1 && dims.ny >= 1 && dims.nz >= 1, "volume dims must all be >= 1");
  require(spacing.x > 0.0 && spacing.y > 0.0 && spacing.z > 0.0,
          "volume spacing must all be > 0");
}

}  // namespace

VoxelVolume::VoxelVolume(Dims3 dims, Vec3 spacing, Vec3 origin, Unit unit, float fill)
    : dims_(dims), spacing_(spacing), origin_(origin), unit_(unit) {
  check_grid(dims_, spacing_);
  values_.assign(dims_.count(), fill);
}

VoxelVolume::VoxelVolume(Dims3 dims, Vec3 spacing, Vec3 origin, Unit unit,
                         std::vector<float> values)
    : dims_(dims), spacing_(spacing), origin_(origin), unit_(unit), values_(std::move(values)) {
  check_grid(dims_, spacing_);
  require(values_.size() == dims_.count(), "volume value count does not match dims");
}

VoxelVolume VoxelVolume::centered(Dims3 dims, Vec3 spacing, Unit unit, float fill) {
  const Vec3 origin{-0.5 * spacing.x * static_cast<double>(dims.nx - 1),
                    -0.5 * spacing.y * static_cast<double>(dims.ny - 1),
                    -0.5 * spacing.z * static_cast<double>(dims.nz - 1)};
  return VoxelVolume(dims, spacing, origin, unit, fill);
}

VoxelVolume VoxelVolume::with_values(std::vector<float> values, Unit unit) const {
  return VoxelVolume(dims_, spacing_, origin_, unit, std::move(values));
}

VoxelVolume VoxelVolume::filled(float value, Unit unit) const {
  return VoxelVolume(dims_, spacing_, origin_, unit, value);
}

bool VoxelVolume::same_grid(const VoxelVolume& other) const {
  return dims_ == other.dims_ && spacing_ == other.spacing_ && origin_ == other.origin_;
}

ProjectionStack::ProjectionStack(std::size_t n_u, std::size_t n_v, double pitch_u,
                                 double pitch_v, std::vector<double> angles_deg, float fill)
    : n_u_(n_u), n_v_(n_v), pitch_u_(pitch_u), pitch_v_(pitch_v),
      angles_deg_(std::move(angles_deg)) {
  require(n_u_ >= 1 && n_v_ >= 1, "detector must have at least one pixel per axis");
  require(pitch_u_ > 0.0 && pitch_v_ > 0.0, "detector pitch must be > 0");
  for (std::size_t i = 1; i < angles_deg_.size(); ++i) {
    require(angles_deg_[i] > angles_deg_[i - 1], "projection angles must be strictly increasing");
  }
  values_.assign(n_u_ * n_v_ * angles_deg_.size(), fill);
}

ProjectionStack ProjectionStack::select(std::span<const std::size_t> view_indices) const {
  std::vector<double> angles;
  angles.reserve(view_indices.size());
  for (std::size_t idx : view_indices) {
    require(idx < n_views(), "view index out of range");
    angles.push_back(angles_deg_[idx]);
  }
  ProjectionStack out(n_u_, n_v_, pitch_u_, pitch_v_, std::move(angles));
  for (std::size_t k = 0; k < view_indices.size(); ++k) {
    const auto src = view(view_indices[k]);
    auto dst = out.view(k);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return out;
}

double normalize_hu(double hu) {
  return (hu - kNormalizeLowHu) / ((kNormalizeHighHu - kNormalizeLowHu) / 2.0) - 1.0;
}

double denormalize_value(double normalized) {
  return (normalized + 1.0) * ((kNormalizeHighHu - kNormalizeLowHu) / 2.0) + kNormalizeLowHu;
}

VoxelVolume normalize_hu(const VoxelVolume& hu_volume) {
  if (hu_volume.unit() != Unit::HU) {
    fail(ErrorKind::UnitMismatch, "normalize_hu expects a volume in HU, got " +
                                      to_string(hu_volume.unit()));
  }
  std::vector<float> out(hu_volume.size());
  const auto in = hu_volume.values();
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (!std::isfinite(in[i])) fail(ErrorKind::NonFinite, "normalize_hu: non-finite voxel");
    out[i] = static_cast<float>(normalize_hu(static_cast<double>(in[i])));
  }
  return hu_volume.with_values(std::move(out), Unit::Normalized);
}

VoxelVolume denormalize(const VoxelVolume& normalized_volume) {
  if (normalized_volume.unit() != Unit::Normalized) {
    fail(ErrorKind::UnitMismatch, "denormalize expects a normalized volume, got " +
                                      to_string(normalized_volume.unit()));
  }
  std::vector<float> out(normalized_volume.size());
  const auto in = normalized_volume.values();
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = static_cast<float>(denormalize_value(static_cast<double>(in[i])));
  }
  return normalized_volume.with_values(std::move(out), Unit::HU);
}

}  // namespace sparsecbct
