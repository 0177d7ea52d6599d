#include "sparsecbct/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <limits>

#include "sparsecbct/errors.hpp"

namespace sparsecbct {

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

namespace {

struct OtsuSplit {
  double threshold;
  int bin;
  double lo;
  double width;
};

OtsuSplit otsu_split(const VoxelVolume& vol) {
  const auto values = vol.values();
  require(!values.empty(), "otsu: empty volume");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) fail(ErrorKind::Validation, "otsu: volume is constant");
  const double width = (hi - lo) / kOtsuBins;

  std::vector<double> hist(kOtsuBins, 0.0);
  for (float v : values) {
    const int b = std::min(kOtsuBins - 1, static_cast<int>((v - lo) / width));
    hist[static_cast<std::size_t>(b)] += 1.0;
  }
  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int b = 0; b < kOtsuBins; ++b) sum_all += hist[b] * (lo + (b + 0.5) * width);

  double w0 = 0.0;
  double sum0 = 0.0;
  double best = -1.0;
  int best_bin = 1;
  for (int k = 1; k < kOtsuBins; ++k) {
    w0 += hist[k - 1];
    sum0 += hist[k - 1] * (lo + (k - 0.5) * width);
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double between = (w0 / total) * (w1 / total) * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = k;
    }
  }
  return {lo + best_bin * width, best_bin, lo, width};
}

void check_same_grid(const VoxelVolume& a, const VoxelVolume& b) {
  require(a.dims() == b.dims(), "metrics: volume dims do not match");
}

void check_mask(const VoxelVolume& a, const BinaryMask* mask) {
  if (mask == nullptr) return;
  require(mask->dims == a.dims(), "metrics: mask dims do not match the volume");
  require(mask->count() > 0, "metrics: mask is empty");
}

}  // namespace

double otsu_threshold(const VoxelVolume& vol) { return otsu_split(vol).threshold; }

BinaryMask dilate(const BinaryMask& mask, int radius) {
  BinaryMask cur = mask;
  const Dims3 d = mask.dims;
  const std::size_t sx = 1, sy = d.nx, sz = d.nx * d.ny;
  for (int r = 0; r < radius; ++r) {
    BinaryMask next = cur;
    for (std::size_t k = 0; k < d.nz; ++k) {
      for (std::size_t j = 0; j < d.ny; ++j) {
        for (std::size_t i = 0; i < d.nx; ++i) {
          const std::size_t p = (k * d.ny + j) * d.nx + i;
          if (cur.bits[p]) continue;
          const bool hit = (i > 0 && cur.bits[p - sx]) || (i + 1 < d.nx && cur.bits[p + sx]) ||
                           (j > 0 && cur.bits[p - sy]) || (j + 1 < d.ny && cur.bits[p + sy]) ||
                           (k > 0 && cur.bits[p - sz]) || (k + 1 < d.nz && cur.bits[p + sz]);
          if (hit) next.bits[p] = 1;
        }
      }
    }
    cur = std::move(next);
  }
  return cur;
}

BinaryMask erode(const BinaryMask& mask, int radius) {
  BinaryMask cur = mask;
  const Dims3 d = mask.dims;
  const std::size_t sx = 1, sy = d.nx, sz = d.nx * d.ny;
  for (int r = 0; r < radius; ++r) {
    BinaryMask next = cur;
    for (std::size_t k = 0; k < d.nz; ++k) {
      for (std::size_t j = 0; j < d.ny; ++j) {
        for (std::size_t i = 0; i < d.nx; ++i) {
          const std::size_t p = (k * d.ny + j) * d.nx + i;
          if (!cur.bits[p]) continue;
          const bool miss = (i > 0 && !cur.bits[p - sx]) || (i + 1 < d.nx && !cur.bits[p + sx]) ||
                            (j > 0 && !cur.bits[p - sy]) || (j + 1 < d.ny && !cur.bits[p + sy]) ||
                            (k > 0 && !cur.bits[p - sz]) || (k + 1 < d.nz && !cur.bits[p + sz]);
          if (miss) next.bits[p] = 0;
        }
      }
    }
    cur = std::move(next);
  }
  return cur;
}

BinaryMask largest_component(const BinaryMask& mask) {
  const Dims3 d = mask.dims;
  std::vector<int> label(d.count(), 0);
  int next_label = 0;
  int best_label = 0;
  std::size_t best_size = 0;
  std::deque<std::size_t> queue;
  for (std::size_t seed = 0; seed < d.count(); ++seed) {
    if (!mask.bits[seed] || label[seed] != 0) continue;
    ++next_label;
    std::size_t size = 0;
    label[seed] = next_label;
    queue.push_back(seed);
    while (!queue.empty()) {
      const std::size_t p = queue.front();
      queue.pop_front();
      ++size;
      const std::size_t i = p % d.nx;
      const std::size_t j = (p / d.nx) % d.ny;
      const std::size_t k = p / (d.nx * d.ny);
      auto visit = [&](std::size_t q) {
        if (mask.bits[q] && label[q] == 0) {
          label[q] = next_label;
          queue.push_back(q);
        }
      };
      if (i > 0) visit(p - 1);
      if (i + 1 < d.nx) visit(p + 1);
      if (j > 0) visit(p - d.nx);
      if (j + 1 < d.ny) visit(p + d.nx);
      if (k > 0) visit(p - d.nx * d.ny);
      if (k + 1 < d.nz) visit(p + d.nx * d.ny);
    }
    if (size > best_size) {
      best_size = size;
      best_label = next_label;
    }
  }
  BinaryMask out(d);
  for (std::size_t p = 0; p < d.count(); ++p) out.bits[p] = (best_label != 0 && label[p] == best_label);
  return out;
}

BodyMask body_mask(const VoxelVolume& vol, int dilation_radius, int erosion_radius) {
  OtsuSplit split{};
  try {
    split = otsu_split(vol);
  } catch (const Error&) {
    fail(ErrorKind::Validation, "body_mask: empty foreground (volume has no contrast)");
  }
  BinaryMask fg(vol.dims());
  const auto values = vol.values();
  for (std::size_t p = 0; p < values.size(); ++p) {
    const int b = std::min(kOtsuBins - 1, static_cast<int>((values[p] - split.lo) / split.width));
    fg.bits[p] = b >= split.bin;
  }
  BodyMask out;
  out.otsu_threshold_hu = split.threshold;
  out.dilation_radius = dilation_radius;
  out.erosion_radius = erosion_radius;
  out.mask = largest_component(erode(dilate(fg, dilation_radius), erosion_radius));
  if (out.mask.count() == 0) fail(ErrorKind::Validation, "body_mask: empty foreground");
  return out;
}

double mae(const VoxelVolume& a, const VoxelVolume& b, const BinaryMask* mask) {
  check_same_grid(a, b);
  check_mask(a, mask);
  const auto va = a.values();
  const auto vb = b.values();
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < va.size(); ++p) {
    if (mask != nullptr && !mask->bits[p]) continue;
    sum += std::abs(static_cast<double>(va[p]) - static_cast<double>(vb[p]));
    ++n;
  }
  return sum / static_cast<double>(n);
}

double mse(const VoxelVolume& a, const VoxelVolume& b, const BinaryMask* mask) {
  check_same_grid(a, b);
  check_mask(a, mask);
  const auto va = a.values();
  const auto vb = b.values();
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < va.size(); ++p) {
    if (mask != nullptr && !mask->bits[p]) continue;
    const double diff = static_cast<double>(va[p]) - static_cast<double>(vb[p]);
    sum += diff * diff;
    ++n;
  }
  return sum / static_cast<double>(n);
}

double psnr_from_mse(double mse_value) {
  if (mse_value <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(kPsnrMaxHu * kPsnrMaxHu / mse_value);
}

double psnr(const VoxelVolume& a, const VoxelVolume& b, const BinaryMask* mask) {
  return psnr_from_mse(mse(a, b, mask));
}

namespace {

// Box sums of width w along one axis ("valid" positions only).
std::vector<double> box_axis(const std::vector<double>& in, Dims3 d, int axis, Dims3& out_dims) {
  const std::size_t w = kSsimWindow;
  out_dims = d;
  std::size_t* len = axis == 0 ? &out_dims.nx : axis == 1 ? &out_dims.ny : &out_dims.nz;
  *len -= w - 1;
  std::vector<double> out(out_dims.count());
  const std::size_t stride = axis == 0 ? 1 : axis == 1 ? d.nx : d.nx * d.ny;
  for (std::size_t k = 0; k < out_dims.nz; ++k) {
    for (std::size_t j = 0; j < out_dims.ny; ++j) {
      for (std::size_t i = 0; i < out_dims.nx; ++i) {
        const std::size_t src = (k * d.ny + j) * d.nx + i;
        double s = 0.0;
        for (std::size_t t = 0; t < w; ++t) s += in[src + t * stride];
        out[(k * out_dims.ny + j) * out_dims.nx + i] = s;
      }
    }
  }
  return out;
}

std::vector<double> box_mean(const std::vector<double>& in, Dims3 d) {
  Dims3 d1, d2, d3;
  auto x = box_axis(in, d, 0, d1);
  auto y = box_axis(x, d1, 1, d2);
  auto z = box_axis(y, d2, 2, d3);
  const double inv = 1.0 / (kSsimWindow * kSsimWindow * kSsimWindow);
  for (double& v : z) v *= inv;
  return z;
}

}  // namespace

double ssim(const VoxelVolume& a, const VoxelVolume& b) {
  check_same_grid(a, b);
  const Dims3 d = a.dims();
  require(d.nx >= kSsimWindow && d.ny >= kSsimWindow && d.nz >= kSsimWindow,
          "ssim: volume smaller than the 7x7x7 window");
  const std::size_t n = d.count();
  std::vector<double> xa(n), xb(n), aa(n), bb(n), ab(n);
  const auto va = a.values();
  const auto vb = b.values();
  for (std::size_t p = 0; p < n; ++p) {
    xa[p] = va[p];
    xb[p] = vb[p];
    aa[p] = xa[p] * xa[p];
    bb[p] = xb[p] * xb[p];
    ab[p] = xa[p] * xb[p];
  }
  const auto ma = box_mean(xa, d);
  const auto mb = box_mean(xb, d);
  const auto maa = box_mean(aa, d);
  const auto mbb = box_mean(bb, d);
  const auto mab = box_mean(ab, d);
  const double c1 = (0.01 * kPsnrMaxHu) * (0.01 * kPsnrMaxHu);
  const double c2 = (0.03 * kPsnrMaxHu) * (0.03 * kPsnrMaxHu);
  double total = 0.0;
  for (std::size_t p = 0; p < ma.size(); ++p) {
    const double var_a = maa[p] - ma[p] * ma[p];
    const double var_b = mbb[p] - mb[p] * mb[p];
    const double cov = mab[p] - ma[p] * mb[p];
    total += ((2.0 * ma[p] * mb[p] + c1) * (2.0 * cov + c2)) /
             ((ma[p] * ma[p] + mb[p] * mb[p] + c1) * (var_a + var_b + c2));
  }
  return total / static_cast<double>(ma.size());
}

double dice(const BinaryMask& a, const BinaryMask& b) {
  require(a.dims == b.dims, "dice: mask dims do not match");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t p = 0; p < a.bits.size(); ++p) {
    na += a.bits[p];
    nb += b.bits[p];
    both += a.bits[p] & b.bits[p];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

MetricReport evaluate_metrics(const VoxelVolume& pred, const VoxelVolume& target, MaskMode mode) {
  check_same_grid(pred, target);
  MetricReport r;
  r.mae_unmasked = mae(pred, target);
  r.psnr_unmasked = psnr(pred, target);
  r.ssim = ssim(pred, target);
  if (mode == MaskMode::Body) {
    BodyMask m = body_mask(target);
    r.mae_masked = mae(pred, target, &m.mask);
    r.psnr_masked = psnr(pred, target, &m.mask);
    r.mask = std::move(m);
  }
  return r;
}

std::string format_metric(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (std::isnan(value)) return "nan";
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, result.ptr);
}

std::string csv_header(MaskMode mode) {
  return mode == MaskMode::Body ? "mae_masked,psnr_masked,psnr_unmasked,ssim"
                                : "mae_unmasked,psnr_unmasked,ssim";
}

std::string csv_row(const MetricReport& r, MaskMode mode) {
  if (mode == MaskMode::Body) {
    return format_metric(r.mae_masked.value_or(std::nan(""))) + "," +
           format_metric(r.psnr_masked.value_or(std::nan(""))) + "," +
           format_metric(r.psnr_unmasked) + "," + format_metric(r.ssim);
  }
  return format_metric(r.mae_unmasked) + "," + format_metric(r.psnr_unmasked) + "," +
         format_metric(r.ssim);
}

json to_json(const MetricReport& r) {
  auto number = [](double v) -> json {
    if (std::isfinite(v)) return v;
    return format_metric(v);
  };
  json j;
  if (r.mae_masked) j["mae_masked"] = number(*r.mae_masked);
  if (r.psnr_masked) j["psnr_masked"] = number(*r.psnr_masked);
  j["mae_unmasked"] = number(r.mae_unmasked);
  j["psnr_unmasked"] = number(r.psnr_unmasked);
  j["ssim"] = number(r.ssim);
  if (r.dice) j["dice"] = *r.dice;
  j["psnr_max_hu"] = kPsnrMaxHu;
  if (r.mask) {
    j["mask"] = {{"otsu_threshold_hu", r.mask->otsu_threshold_hu},
                 {"dilation_radius", r.mask->dilation_radius},
                 {"erosion_radius", r.mask->erosion_radius},
                 {"voxels", r.mask->mask.count()}};
  }
  return j;
}

}  // namespace sparsecbct
