#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sparsecbct/io.hpp"
#include "sparsecbct/volume.hpp"

namespace sparsecbct {

/// Boolean grid, same layout as VoxelVolume.
struct BinaryMask {
  Dims3 dims;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  explicit BinaryMask(Dims3 d, bool value = false) : dims(d), bits(d.count(), value ? 1 : 0) {}

  std::size_t count() const;
  bool operator[](std::size_t i) const { return bits[i] != 0; }
};

struct BodyMask {
  BinaryMask mask;
  double otsu_threshold_hu = 0.0;
  int dilation_radius = 2;
  int erosion_radius = 2;
};

/// PSNR peak: HU range -1000 .. 1000.
inline constexpr double kPsnrMaxHu = 2000.0;
inline constexpr int kOtsuBins = 256;
inline constexpr int kSsimWindow = 7;

/// Threshold maximizing between-class variance over a 256-bin histogram
/// spanning [min, max] of the volume. The returned value is the lower edge of
/// the first foreground bin.
double otsu_threshold(const VoxelVolume& vol);

/// Otsu threshold -> morphological closing (dilate, then erode, with a
/// 6-connected ball; out-of-volume voxels never erode) -> largest
/// 6-connected component.
BodyMask body_mask(const VoxelVolume& vol, int dilation_radius = 2, int erosion_radius = 2);

BinaryMask dilate(const BinaryMask& mask, int radius);
BinaryMask erode(const BinaryMask& mask, int radius);
BinaryMask largest_component(const BinaryMask& mask);

/// Mean absolute difference (HU) over the mask (all voxels when null).
double mae(const VoxelVolume& a, const VoxelVolume& b, const BinaryMask* mask = nullptr);
double mse(const VoxelVolume& a, const VoxelVolume& b, const BinaryMask* mask = nullptr);

/// 10 log10(2000^2 / MSE); +infinity when the inputs agree on the mask.
double psnr(const VoxelVolume& a, const VoxelVolume& b, const BinaryMask* mask = nullptr);
double psnr_from_mse(double mse_value);

/// Mean local SSIM over all 7x7x7 windows fully inside the volume (uniform
/// weights, population moments), L = 2000 HU, never masked.
double ssim(const VoxelVolume& a, const VoxelVolume& b);

/// 2|A n B| / (|A| + |B|); 1 when both masks are empty.
double dice(const BinaryMask& a, const BinaryMask& b);

enum class MaskMode { Body, None };

struct MetricReport {
  std::optional<double> mae_masked;
  std::optional<double> psnr_masked;
  double mae_unmasked = 0.0;
  double psnr_unmasked = 0.0;
  double ssim = 0.0;
  std::optional<double> dice;
  std::optional<BodyMask> mask;  // provenance for masked values
};

/// Metrics of `pred` against `target`; the body mask is derived from `target`.
MetricReport evaluate_metrics(const VoxelVolume& pred, const VoxelVolume& target,
                              MaskMode mode = MaskMode::Body);

/// "inf" for infinite values, shortest round-trip decimal otherwise.
std::string format_metric(double value);

std::string csv_header(MaskMode mode);
std::string csv_row(const MetricReport& report, MaskMode mode);
json to_json(const MetricReport& report);

}  // namespace sparsecbct
