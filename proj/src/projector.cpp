#include "sparsecbct/projector.hpp"

#include <algorithm>
#include <cmath>

#include "sparsecbct/errors.hpp"
#include "sparsecbct/parallel.hpp"
#include "sparsecbct/rng.hpp"

namespace sparsecbct {

AttenuationMap::AttenuationMap(VoxelVolume mu) : mu_(std::move(mu)) {
  require(mu_.unit() == Unit::Attenuation, "attenuation map must carry unit mu_per_mm");
  for (float v : mu_.values()) {
    require(std::isfinite(v) && v >= 0.0f, "attenuation map values must be finite and >= 0");
  }
}

AttenuationMap hu_to_mu(const VoxelVolume& hu) {
  if (hu.unit() != Unit::HU) fail(ErrorKind::UnitMismatch, "hu_to_mu expects a volume in HU");
  std::vector<float> mu(hu.size());
  const auto in = hu.values();
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (!std::isfinite(in[i])) fail(ErrorKind::NonFinite, "hu_to_mu: non-finite voxel");
    mu[i] = static_cast<float>(std::max(0.0, kMuWater * (1.0 + static_cast<double>(in[i]) / 1000.0)));
  }
  return AttenuationMap(hu.with_values(std::move(mu), Unit::Attenuation));
}

VoxelVolume mu_to_hu(const VoxelVolume& mu) {
  if (mu.unit() != Unit::Attenuation) fail(ErrorKind::UnitMismatch, "mu_to_hu expects mu_per_mm");
  std::vector<float> hu(mu.size());
  const auto in = mu.values();
  for (std::size_t i = 0; i < in.size(); ++i) {
    hu[i] = static_cast<float>(1000.0 * (static_cast<double>(in[i]) / kMuWater - 1.0));
  }
  return mu.with_values(std::move(hu), Unit::HU);
}

namespace {

class TrilinearSampler {
 public:
  explicit TrilinearSampler(const VoxelVolume& v)
      : data_(v.values().data()),
        nx_(static_cast<long>(v.dims().nx)),
        ny_(static_cast<long>(v.dims().ny)),
        nz_(static_cast<long>(v.dims().nz)),
        origin_(v.origin()),
        inv_{1.0 / v.spacing().x, 1.0 / v.spacing().y, 1.0 / v.spacing().z} {
    const Vec3 half = 0.5 * v.spacing();
    lo_ = origin_ - half;
    hi_ = {origin_.x + v.spacing().x * (static_cast<double>(nx_) - 0.5),
           origin_.y + v.spacing().y * (static_cast<double>(ny_) - 0.5),
           origin_.z + v.spacing().z * (static_cast<double>(nz_) - 0.5)};
    step_ = 0.5 * std::min({v.spacing().x, v.spacing().y, v.spacing().z});
  }

  double step() const { return step_; }

  /// Parameter interval of p0 + s (p1 - p0), s in [0, 1], inside the voxel box.
  bool clip(Vec3 p0, Vec3 d, double& s0, double& s1) const {
    s0 = 0.0;
    s1 = 1.0;
    const double p[3] = {p0.x, p0.y, p0.z};
    const double dir[3] = {d.x, d.y, d.z};
    const double lo[3] = {lo_.x, lo_.y, lo_.z};
    const double hi[3] = {hi_.x, hi_.y, hi_.z};
    for (int a = 0; a < 3; ++a) {
      if (dir[a] == 0.0) {
        if (p[a] < lo[a] || p[a] > hi[a]) return false;
        continue;
      }
      double t0 = (lo[a] - p[a]) / dir[a];
      double t1 = (hi[a] - p[a]) / dir[a];
      if (t0 > t1) std::swap(t0, t1);
      s0 = std::max(s0, t0);
      s1 = std::min(s1, t1);
      if (s0 >= s1) return false;
    }
    return true;
  }

  double operator()(double x, double y, double z) const {
    double fx = std::clamp((x - origin_.x) * inv_.x, 0.0, static_cast<double>(nx_ - 1));
    double fy = std::clamp((y - origin_.y) * inv_.y, 0.0, static_cast<double>(ny_ - 1));
    double fz = std::clamp((z - origin_.z) * inv_.z, 0.0, static_cast<double>(nz_ - 1));
    long i0 = std::min(static_cast<long>(fx), std::max(nx_ - 2, 0L));
    long j0 = std::min(static_cast<long>(fy), std::max(ny_ - 2, 0L));
    long k0 = std::min(static_cast<long>(fz), std::max(nz_ - 2, 0L));
    const double wx = fx - static_cast<double>(i0);
    const double wy = fy - static_cast<double>(j0);
    const double wz = fz - static_cast<double>(k0);
    const long dx = nx_ > 1 ? 1 : 0;
    const long dy = ny_ > 1 ? nx_ : 0;
    const long dz = nz_ > 1 ? nx_ * ny_ : 0;
    const float* c = data_ + (k0 * ny_ + j0) * nx_ + i0;
    const double c00 = c[0] + wx * (c[dx] - c[0]);
    const double c10 = c[dy] + wx * (c[dy + dx] - c[dy]);
    const double c01 = c[dz] + wx * (c[dz + dx] - c[dz]);
    const double c11 = c[dz + dy] + wx * (c[dz + dy + dx] - c[dz + dy]);
    const double c0 = c00 + wy * (c10 - c00);
    const double c1 = c01 + wy * (c11 - c01);
    return c0 + wz * (c1 - c0);
  }

  double integrate(Vec3 p0, Vec3 p1) const {
    const Vec3 d = p1 - p0;
    double s0 = 0.0;
    double s1 = 0.0;
    if (!clip(p0, d, s0, s1)) return 0.0;
    const double length = (s1 - s0) * norm(d);
    const auto n = static_cast<std::size_t>(std::ceil(length / step_));
    if (n == 0) return 0.0;
    const double ds = (s1 - s0) / static_cast<double>(n);
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double s = s0 + (static_cast<double>(k) + 0.5) * ds;
      sum += (*this)(p0.x + s * d.x, p0.y + s * d.y, p0.z + s * d.z);
    }
    return sum * length / static_cast<double>(n);
  }

 private:
  const float* data_;
  long nx_, ny_, nz_;
  Vec3 origin_;
  Vec3 inv_;
  Vec3 lo_, hi_;
  double step_ = 1.0;
};

}  // namespace

double ray_integral(const AttenuationMap& map, Vec3 p0, Vec3 p1) {
  require(!(p0 == p1), "ray_integral: degenerate segment");
  return TrilinearSampler(map.volume()).integrate(p0, p1);
}

ProjectionStack forward_project(const AttenuationMap& map, const ConeBeamGeometry& geom,
                                const ViewSet& views) {
  geom.validate();
  require(views.size() > 0, "forward_project: empty view set");
  ProjectionStack stack(geom.n_u, geom.n_v, geom.pitch_u, geom.pitch_v, views.angles_deg);
  const TrilinearSampler sampler(map.volume());
  const std::size_t rows = views.size() * geom.n_v;
  parallel::for_each(rows, [&](std::size_t row) {
    const std::size_t view = row / geom.n_v;
    const std::size_t j = row % geom.n_v;
    const double angle = views.angles_deg[view];
    const Vec3 src = source_position(geom, angle);
    const double v = geom.v_of(static_cast<double>(j));
    for (std::size_t i = 0; i < geom.n_u; ++i) {
      const Vec3 pixel = detector_point(geom, angle, geom.u_of(static_cast<double>(i)), v);
      stack.at(view, j, i) = static_cast<float>(sampler.integrate(src, pixel));
    }
  });
  return stack;
}

ProjectionStack add_poisson_noise(const ProjectionStack& stack, double incident_photons,
                                  std::uint64_t seed) {
  require(incident_photons > 0.0, "poisson noise: incident photon count must be > 0");
  ProjectionStack out = stack;
  Rng rng(seed);
  for (float& p : out.values()) {
    const double counts = static_cast<double>(rng.poisson(incident_photons * std::exp(-static_cast<double>(p))));
    p = static_cast<float>(-std::log(std::max(counts, 0.5) / incident_photons));
  }
  return out;
}

}  // namespace sparsecbct
