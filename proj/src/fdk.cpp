#include "sparsecbct/fdk.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "sparsecbct/errors.hpp"
#include "sparsecbct/parallel.hpp"
#include "sparsecbct/projector.hpp"

namespace sparsecbct {

namespace {

constexpr double kPi = std::numbers::pi;

double radians(double deg) { return deg * kPi / 180.0; }

// FFTW planning is not thread-safe.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

template <typename T>
using FftwBuffer = std::unique_ptr<T[], FftwFree>;

template <typename T>
FftwBuffer<T> fftw_buffer(std::size_t n) {
  return FftwBuffer<T>(static_cast<T*>(fftw_malloc(sizeof(T) * n)));
}

struct RowFft {
  explicit RowFft(std::size_t length)
      : n(length), real(fftw_buffer<double>(length)), spectrum(fftw_buffer<fftw_complex>(length / 2 + 1)) {
    std::lock_guard lock(planner_mutex());
    const int len = static_cast<int>(length);
    forward = fftw_plan_dft_r2c_1d(len, real.get(), spectrum.get(), FFTW_ESTIMATE);
    inverse = fftw_plan_dft_c2r_1d(len, spectrum.get(), real.get(), FFTW_ESTIMATE);
  }
  ~RowFft() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(forward);
    fftw_destroy_plan(inverse);
  }
  RowFft(const RowFft&) = delete;
  RowFft& operator=(const RowFft&) = delete;

  std::size_t n;
  FftwBuffer<double> real;
  FftwBuffer<fftw_complex> spectrum;
  fftw_plan forward{};
  fftw_plan inverse{};
};

}  // namespace

RampFilter make_ramp_filter(std::size_t n_u, double pitch) {
  require(n_u >= 2, "ramp_filter: need at least two detector columns");
  require(pitch > 0.0, "ramp_filter: pitch must be > 0");
  RampFilter filter;
  filter.length = std::max(std::bit_ceil(2 * n_u), kMinRampLength);
  filter.pitch = pitch;

  RowFft fft(filter.length);
  const auto length = static_cast<long>(filter.length);
  const double p2 = pitch * pitch;
  for (long i = 0; i < length; ++i) {
    const long k = i < length / 2 ? i : i - length;  // circular layout of taps -L/2 .. L/2-1
    double h = 0.0;
    if (k == 0) {
      h = 1.0 / (4.0 * p2);
    } else if (k % 2 != 0) {
      h = -1.0 / (kPi * kPi * static_cast<double>(k) * static_cast<double>(k) * p2);
    }
    fft.real[static_cast<std::size_t>(i)] = h;
  }
  fftw_execute(fft.forward);
  filter.response.resize(filter.length / 2 + 1);
  for (std::size_t b = 0; b < filter.response.size(); ++b) filter.response[b] = fft.spectrum[b][0];
  filter.response[0] = 0.0;
  return filter;
}

double half_fan_weight(double x, double delta) {
  if (x <= -delta) return 0.0;
  if (x >= delta) return 1.0;
  const double s = std::sin(0.25 * kPi * (1.0 + x / delta));
  return s * s;
}

double half_fan_overlap(const ConeBeamGeometry& geom) {
  const double inner_edge = geom.lateral_offset_u > 0.0
                                ? geom.u_of(0.0) - 0.5 * geom.pitch_u
                                : geom.u_of(static_cast<double>(geom.n_u - 1)) + 0.5 * geom.pitch_u;
  if (inner_edge * geom.lateral_offset_u >= 0.0) {
    fail(ErrorKind::Unsupported, "half-fan detector does not reach the piercing point");
  }
  return std::abs(inner_edge);
}

double parker_weight(double beta, double gamma, double delta) {
  if (beta < 0.0 || beta > kPi + 2.0 * delta) return 0.0;
  if (beta < 2.0 * (delta - gamma)) {
    const double s = std::sin(0.25 * kPi * beta / (delta - gamma));
    return s * s;
  }
  if (beta <= kPi - 2.0 * gamma) return 1.0;
  const double s = std::sin(0.25 * kPi * (kPi + 2.0 * delta - beta) / (delta + gamma));
  return s * s;
}

double redundancy_factor(const ConeBeamGeometry& geom) {
  return (geom.fan_mode == FanMode::Full && geom.arc_deg == 360.0) ? 0.5 : 1.0;
}

WeightMaps make_weight_maps(const ConeBeamGeometry& geom, const std::vector<double>& angles_deg) {
  geom.validate();
  WeightMaps maps;
  maps.n_u = geom.n_u;
  maps.n_v = geom.n_v;
  maps.cosine.resize(geom.n_u * geom.n_v);
  for (std::size_t j = 0; j < geom.n_v; ++j) {
    const double v = geom.v_of(static_cast<double>(j));
    for (std::size_t i = 0; i < geom.n_u; ++i) {
      const double u = geom.u_of(static_cast<double>(i));
      maps.cosine[j * geom.n_u + i] =
          static_cast<float>(geom.sid / std::sqrt(geom.sid * geom.sid + u * u + v * v));
    }
  }

  maps.redundancy_factor = redundancy_factor(geom);
  maps.redundancy.assign(angles_deg.size() * geom.n_u, 1.0f);
  if (geom.fan_mode == FanMode::Half) {
    if (geom.arc_deg != 360.0) {
      fail(ErrorKind::Unsupported, "half-fan weighting requires a full 360 degree trajectory");
    }
    const double delta = half_fan_overlap(geom);
    const double side = geom.lateral_offset_u > 0.0 ? 1.0 : -1.0;
    for (std::size_t view = 0; view < angles_deg.size(); ++view) {
      for (std::size_t i = 0; i < geom.n_u; ++i) {
        maps.redundancy[view * geom.n_u + i] =
            static_cast<float>(half_fan_weight(side * geom.u_of(static_cast<double>(i)), delta));
      }
    }
  } else if (geom.arc_deg < 360.0) {
    const double delta = 0.5 * (radians(geom.arc_deg) - kPi);
    const double gamma_max = std::atan(geom.max_abs_u() / geom.sid);
    if (delta < gamma_max) {
      fail(ErrorKind::Unsupported,
           "short scan arc is shorter than 180 degrees plus the fan angle");
    }
    for (std::size_t view = 0; view < angles_deg.size(); ++view) {
      const double beta = radians(angles_deg[view]);
      for (std::size_t i = 0; i < geom.n_u; ++i) {
        // Fan angle signed so that the conjugate ray sits at beta + pi + 2 gamma.
        const double gamma = -std::atan(geom.u_of(static_cast<double>(i)) / geom.sid);
        maps.redundancy[view * geom.n_u + i] = static_cast<float>(parker_weight(beta, gamma, delta));
      }
    }
  }
  return maps;
}

namespace {

void check_stack(const ProjectionStack& stack, const ConeBeamGeometry& geom) {
  geom.validate();
  require(stack.n_u() == geom.n_u && stack.n_v() == geom.n_v,
          "projection stack detector size does not match the geometry");
}

}  // namespace

ProjectionStack cosine_weight(const ProjectionStack& stack, const ConeBeamGeometry& geom) {
  check_stack(stack, geom);
  const WeightMaps maps = make_weight_maps(geom, {});
  ProjectionStack out = stack;
  for (std::size_t view = 0; view < out.n_views(); ++view) {
    auto image = out.view(view);
    for (std::size_t p = 0; p < image.size(); ++p) image[p] *= maps.cosine[p];
  }
  return out;
}

ProjectionStack redundancy_weight(const ProjectionStack& stack, const ConeBeamGeometry& geom) {
  check_stack(stack, geom);
  const WeightMaps maps = make_weight_maps(geom, stack.angles_deg());
  ProjectionStack out = stack;
  const std::size_t n_u = out.n_u();
  for (std::size_t view = 0; view < out.n_views(); ++view) {
    const float* w = maps.redundancy.data() + view * n_u;
    for (std::size_t j = 0; j < out.n_v(); ++j) {
      for (std::size_t i = 0; i < n_u; ++i) out.at(view, j, i) *= w[i];
    }
  }
  return out;
}

ProjectionStack ramp_filter(const ProjectionStack& stack) {
  const RampFilter filter = make_ramp_filter(stack.n_u(), stack.pitch_u());
  ProjectionStack out = stack;
  const std::size_t n_u = stack.n_u();
  const std::size_t rows = stack.n_views() * stack.n_v();
  constexpr std::size_t kRowsPerTask = 64;
  const std::size_t tasks = (rows + kRowsPerTask - 1) / kRowsPerTask;
  const double inv_length = 1.0 / static_cast<double>(filter.length);
  auto data = out.values();
  parallel::for_each(tasks, [&](std::size_t task) {
    RowFft fft(filter.length);
    const std::size_t end = std::min(rows, (task + 1) * kRowsPerTask);
    for (std::size_t row = task * kRowsPerTask; row < end; ++row) {
      float* line = data.data() + row * n_u;
      std::fill(fft.real.get(), fft.real.get() + filter.length, 0.0);
      for (std::size_t i = 0; i < n_u; ++i) fft.real[i] = line[i];
      fftw_execute(fft.forward);
      for (std::size_t b = 0; b < filter.response.size(); ++b) {
        fft.spectrum[b][0] *= filter.response[b];
        fft.spectrum[b][1] *= filter.response[b];
      }
      fftw_execute(fft.inverse);
      for (std::size_t i = 0; i < n_u; ++i) line[i] = static_cast<float>(fft.real[i] * inv_length);
    }
  });
  return out;
}

namespace {

// Voxel-driven backprojection against the columns described by `geom`; no
// validation, so a virtual (padded) detector can be passed.
VoxelVolume backproject_columns(const ProjectionStack& stack, const ConeBeamGeometry& geom,
                                const VoxelVolume& grid, double factor) {
  require(stack.n_views() > 0, "backproject: empty projection stack");
  const std::size_t n_views = stack.n_views();
  const double scale = radians(geom.arc_deg) / static_cast<double>(n_views) * factor *
                       geom.pitch_u * geom.sid / geom.sad;

  std::vector<double> cos_a(n_views);
  std::vector<double> sin_a(n_views);
  for (std::size_t view = 0; view < n_views; ++view) {
    cos_a[view] = std::cos(radians(stack.angles_deg()[view]));
    sin_a[view] = std::sin(radians(stack.angles_deg()[view]));
  }

  const Dims3 dims = grid.dims();
  std::vector<float> out(dims.count(), 0.0f);
  const auto n_u = static_cast<long>(geom.n_u);
  const auto n_v = static_cast<long>(geom.n_v);
  const double max_col = static_cast<double>(n_u - 1);
  const double max_row = static_cast<double>(n_v - 1);
  const auto projections = stack.values();
  const double sad = geom.sad;
  const double sid = geom.sid;

  parallel::for_each(dims.nz * dims.ny, [&](std::size_t line) {
    const std::size_t k = line / dims.ny;
    const std::size_t j = line % dims.ny;
    for (std::size_t i = 0; i < dims.nx; ++i) {
      const Vec3 p = grid.center(i, j, k);
      double acc = 0.0;
      for (std::size_t view = 0; view < n_views; ++view) {
        const double along = p.x * cos_a[view] + p.y * sin_a[view];
        const double across = -p.x * sin_a[view] + p.y * cos_a[view];
        const double depth = sad - along;
        const double mag = sid / depth;
        const double col = geom.column_of(across * mag);
        const double row = geom.row_of(p.z * mag);
        if (col < 0.0 || col > max_col || row < 0.0 || row > max_row) continue;
        const long c0 = std::min(static_cast<long>(col), n_u - 2);
        const long r0 = std::min(static_cast<long>(row), std::max(n_v - 2, 0L));
        const double wc = col - static_cast<double>(c0);
        const double wr = row - static_cast<double>(r0);
        const float* img = projections.data() + view * geom.n_u * geom.n_v;
        const long dr = n_v > 1 ? n_u : 0;
        const float* q = img + r0 * n_u + c0;
        const double top = q[0] + wc * (q[1] - q[0]);
        const double bottom = q[dr] + wc * (q[dr + 1] - q[dr]);
        const double value = top + wr * (bottom - top);
        const double w = sad / depth;
        acc += w * w * value;
      }
      out[grid.index(i, j, k)] = static_cast<float>(acc * scale);
    }
  });
  return grid.with_values(std::move(out), Unit::Attenuation);
}

}  // namespace

PaddedStack pad_to_symmetric(const ProjectionStack& stack, const ConeBeamGeometry& geom) {
  check_stack(stack, geom);
  PaddedStack out{stack, geom};
  if (geom.fan_mode != FanMode::Half) return out;
  const auto pad = static_cast<std::size_t>(std::floor(2.0 * std::abs(geom.lateral_offset_u) / geom.pitch_u));
  const bool pad_left = geom.lateral_offset_u > 0.0;
  ConeBeamGeometry& virt = out.geometry;
  virt.n_u = geom.n_u + pad;
  virt.lateral_offset_u = geom.lateral_offset_u -
                          (pad_left ? 0.5 : -0.5) * static_cast<double>(pad) * geom.pitch_u;
  out.stack = ProjectionStack(virt.n_u, geom.n_v, geom.pitch_u, geom.pitch_v, stack.angles_deg());
  const std::size_t shift = pad_left ? pad : 0;
  for (std::size_t view = 0; view < stack.n_views(); ++view) {
    for (std::size_t j = 0; j < geom.n_v; ++j) {
      for (std::size_t i = 0; i < geom.n_u; ++i) out.stack.at(view, j, i + shift) = stack.at(view, j, i);
    }
  }
  return out;
}

VoxelVolume backproject(const ProjectionStack& stack, const ConeBeamGeometry& geom,
                        const VoxelVolume& grid) {
  check_stack(stack, geom);
  return backproject_columns(stack, geom, grid, redundancy_factor(geom));
}

VoxelVolume fdk_reconstruct(const ProjectionStack& stack, const ConeBeamGeometry& geom,
                            const VoxelVolume& grid) {
  const ProjectionStack weighted = redundancy_weight(cosine_weight(stack, geom), geom);
  const PaddedStack padded = pad_to_symmetric(weighted, geom);
  const ProjectionStack filtered = ramp_filter(padded.stack);
  return mu_to_hu(backproject_columns(filtered, padded.geometry, grid, redundancy_factor(geom)));
}

}  // namespace sparsecbct
