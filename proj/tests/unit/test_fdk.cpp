#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"
#include "sparsecbct/dataset.hpp"
#include "sparsecbct/errors.hpp"
#include "sparsecbct/fdk.hpp"
#include "sparsecbct/metrics.hpp"
#include "sparsecbct/phantom.hpp"
#include "sparsecbct/projector.hpp"
#include "sparsecbct/rng.hpp"

using namespace sparsecbct;

namespace {

constexpr double kPi = std::numbers::pi;

// Mean squared in-plane Laplacian of (a - b), a streak energy measure.
double streak_energy(const VoxelVolume& a, const VoxelVolume& b) {
  const auto d = a.dims();
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < d.nz; ++k)
    for (std::size_t j = 1; j + 1 < d.ny; ++j)
      for (std::size_t i = 1; i + 1 < d.nx; ++i) {
        auto r = [&](std::size_t x, std::size_t y) { return double(a.at(x, y, k)) - b.at(x, y, k); };
        const double l = 4 * r(i, j) - r(i - 1, j) - r(i + 1, j) - r(i, j - 1) - r(i, j + 1);
        s += l * l;
        ++n;
      }
  return s / double(n);
}

// Measured once on the fixed desk phantom (25 of 180 views): 1.40e5 HU^2.
constexpr double kStreakEnergyFloor25 = 1.0e5;

struct Conjugate {
  double beta_deg;
  double u;
};

// Same line in the central plane seen from the other source position: second
// intersection of the ray with the source circle, then its detector coordinate.
Conjugate conjugate_ray(const ConeBeamGeometry& g, double beta_deg, double u) {
  const double b = beta_deg * kPi / 180.0;
  const double sx = g.sad * std::cos(b), sy = g.sad * std::sin(b);
  const double cx = -std::cos(b), cy = -std::sin(b);
  const double ux = -std::sin(b), uy = std::cos(b);
  const double dx = g.sid * cx + u * ux, dy = g.sid * cy + u * uy;
  const double s = -2.0 * (sx * dx + sy * dy) / (dx * dx + dy * dy);
  const double px = sx + s * dx, py = sy + s * dy;
  double b2 = std::atan2(py, px);
  if (b2 < 0.0) b2 += 2.0 * kPi;
  const double rx = sx - px, ry = sy - py;
  const double c2x = -std::cos(b2), c2y = -std::sin(b2);
  const double u2x = -std::sin(b2), u2y = std::cos(b2);
  const double u2 = g.sid * (rx * u2x + ry * u2y) / (rx * c2x + ry * c2y);
  return {b2 * 180.0 / kPi, u2};
}

double map_weight(const ConeBeamGeometry& g, double beta_a, std::size_t col_a, double beta_b, std::size_t col_b) {
  const bool a_first = beta_a < beta_b;
  const auto maps = make_weight_maps(g, a_first ? std::vector<double>{beta_a, beta_b} : std::vector<double>{beta_b, beta_a});
  const std::size_t va = a_first ? 0 : 1, vb = 1 - va;
  return double(maps.redundancy[va * g.n_u + col_a]) + double(maps.redundancy[vb * g.n_u + col_b]);
}

ConeBeamGeometry full_fan(std::size_t n_u, std::size_t n_v, double pitch_u, double pitch_v) {
  ConeBeamGeometry g = make_desk_geometry();
  g.fan_mode = FanMode::Full;
  g.lateral_offset_u = 0.0;
  g.n_u = n_u;
  g.n_v = n_v;
  g.pitch_u = pitch_u;
  g.pitch_v = pitch_v;
  return g;
}

double max_abs(std::span<const float> v) {
  double m = 0.0;
  for (float x : v) m = std::max(m, double(std::abs(x)));
  return m;
}

}  // namespace

TEST_SUITE("fdk") {

TEST_CASE("cosine weight anchors and monotonicity") {
  const auto g = full_fan(3, 1, 1540.0, 1.0);
  const ProjectionStack ones(3, 1, g.pitch_u, g.pitch_v, {0.0}, 1.0f);
  const auto w = cosine_weight(ones, g);
  CHECK(w.at(0, 0, 1) == doctest::Approx(1.0));
  CHECK(w.at(0, 0, 0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-6));
  CHECK(w.at(0, 0, 2) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-6));

  const auto h = full_fan(33, 17, 4.0, 6.0);
  const auto wh = cosine_weight(ProjectionStack(33, 17, 4.0, 6.0, {0.0}, 1.0f), h);
  for (std::size_t i = 17; i < 33; ++i) CHECK(wh.at(0, 8, i) < wh.at(0, 8, i - 1));
  for (std::size_t j = 9; j < 17; ++j) CHECK(wh.at(0, j, 16) < wh.at(0, j - 1, 16));
}

TEST_CASE("full-fan 360 redundancy weights are one") {
  const auto g = full_fan(32, 4, 4.0, 6.0);
  const auto views = full_view_set(g, 8);
  const auto s = testing::random_volume({32, 4, 8}, 1, 0.0, 5.0);
  ProjectionStack stack(32, 4, 4.0, 6.0, views.angles_deg);
  std::copy(s.values().begin(), s.values().end(), stack.values().begin());
  CHECK(redundancy_weight(stack, g) == stack);
  CHECK(redundancy_factor(g) == 0.5);
}

TEST_CASE("half-fan far edge weight is one and conjugate pairs sum to one") {
  auto g = make_desk_geometry();
  // Offset chosen so that columns i and 58 - i sit at opposite u.
  g.lateral_offset_u = 37.0 * g.pitch_u / 2.0;
  const auto maps = make_weight_maps(g, {0.0});
  CHECK(maps.redundancy[g.n_u - 1] == 1.0f);
  CHECK(maps.redundancy[0] < 0.5f);
  CHECK(redundancy_factor(g) == 1.0);
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t i = rng.below(59);
    const std::size_t j = 58 - i;
    const double beta = rng.uniform(0.0, 360.0);
    const auto c = conjugate_ray(g, beta, g.u_of(double(i)));
    REQUIRE(std::abs(c.u - g.u_of(double(j))) < 1e-9);
    if (std::abs(c.beta_deg - beta) < 1e-9) continue;
    CHECK(map_weight(g, beta, i, c.beta_deg, j) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("short-scan parker weights sum to one on conjugate pairs") {
  auto g = full_fan(96, 4, 2.352, 5.376);
  g.arc_deg = kHalfTrajectoryArcDeg;
  Rng rng(5);
  int checked = 0;
  for (int trial = 0; trial < 200 && checked < 20; ++trial) {
    const std::size_t i = rng.below(96);
    const double beta = rng.uniform(0.0, g.arc_deg);
    const auto c = conjugate_ray(g, beta, g.u_of(double(i)));
    REQUIRE(std::abs(c.u - g.u_of(double(95 - i))) < 1e-9);
    if (c.beta_deg >= g.arc_deg || std::abs(c.beta_deg - beta) < 1e-9) continue;
    CHECK(map_weight(g, beta, i, c.beta_deg, 95 - i) == doctest::Approx(1.0).epsilon(1e-6));
    ++checked;
  }
  CHECK(checked >= 10);
}

TEST_CASE("short scan with too small an arc is unsupported") {
  auto g = full_fan(96, 4, 2.352, 5.376);
  g.arc_deg = 185.0;
  CHECK_THROWS_AS(make_weight_maps(g, {0.0}), Error);
}

TEST_CASE("ram-lak impulse response matches the spatial kernel") {
  for (double pitch : {1.0, 2.0}) {
    ProjectionStack impulse(64, 1, pitch, 1.0, {0.0});
    impulse.at(0, 0, 32) = 1.0f;
    const auto out = ramp_filter(impulse);
    for (int k = -32; k < 32; ++k) {
      double h = 0.0;
      if (k == 0) h = 1.0 / (4.0 * pitch * pitch);
      else if (k % 2 != 0) h = -1.0 / (kPi * kPi * k * k * pitch * pitch);
      CHECK(std::abs(out.at(0, 0, std::size_t(32 + k)) - h) <= 1e-6);
    }
  }
}

TEST_CASE("ram-lak has a null at DC") {
  const auto f = make_ramp_filter(96, 2.352);
  CHECK(f.length >= 2 * 96);
  CHECK(f.response[0] == 0.0);
  // A constant over one full filter period passes only the DC bin.
  const double constant = 123.0;
  CHECK(std::abs(constant * f.response[0]) <= 1e-6 * constant);
  for (std::size_t b = 1; b < f.response.size(); ++b) CHECK(f.response[b] > 0.0);
}

TEST_CASE("ramp filter is linear") {
  const auto a = testing::random_volume({48, 6, 3}, 7, -1.0, 1.0);
  const auto b = testing::random_volume({48, 6, 3}, 8, -1.0, 1.0);
  ProjectionStack sa(48, 6, 1.5, 1.0, {0, 1, 2}), sb = sa, sc = sa;
  for (std::size_t i = 0; i < sa.values().size(); ++i) {
    sa.values()[i] = a.values()[i];
    sb.values()[i] = b.values()[i];
    sc.values()[i] = a.values()[i] + b.values()[i];
  }
  const auto fa = ramp_filter(sa), fb = ramp_filter(sb), fc = ramp_filter(sc);
  const double peak = max_abs(fc.values());
  double worst = 0.0;
  for (std::size_t i = 0; i < fc.values().size(); ++i) {
    worst = std::max(worst, std::abs(double(fc.values()[i]) - fa.values()[i] - fb.values()[i]));
  }
  CHECK(worst / peak <= 1e-6);
}

TEST_CASE("backprojection of zero is zero and backprojection is linear") {
  const auto g = make_desk_geometry();
  GridSpec grid;
  grid.dims = {24, 24, 12};
  grid.spacing = {8.0, 8.0, 12.0};
  const auto views = full_view_set(g, 6);
  const ProjectionStack zero(g.n_u, g.n_v, g.pitch_u, g.pitch_v, views.angles_deg);
  CHECK(max_abs(backproject(zero, g, grid.make_volume()).values()) == 0.0);

  const auto ra = testing::random_volume({g.n_u, g.n_v, 6}, 1, -1.0, 1.0);
  const auto rb = testing::random_volume({g.n_u, g.n_v, 6}, 2, -1.0, 1.0);
  ProjectionStack a = zero, b = zero, c = zero;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    a.values()[i] = ra.values()[i];
    b.values()[i] = rb.values()[i];
    c.values()[i] = 2.0f * ra.values()[i] - rb.values()[i];
  }
  const auto va = backproject(a, g, grid.make_volume());
  const auto vb = backproject(b, g, grid.make_volume());
  const auto vc = backproject(c, g, grid.make_volume());
  const double peak = max_abs(vc.values());
  double worst = 0.0;
  for (std::size_t i = 0; i < vc.size(); ++i) {
    worst = std::max(worst, std::abs(double(vc.values()[i]) - 2.0 * va.values()[i] + vb.values()[i]));
  }
  CHECK(worst / peak <= 1e-6);
}

TEST_CASE("zero projections reconstruct to air") {
  const auto g = make_desk_geometry();
  GridSpec grid;
  grid.dims = {16, 16, 8};
  grid.spacing = {8.0, 8.0, 12.0};
  const ProjectionStack zero(g.n_u, g.n_v, g.pitch_u, g.pitch_v, full_view_set(g, 4).angles_deg);
  const auto v = fdk_reconstruct(zero, g, grid.make_volume());
  CHECK(v.unit() == Unit::HU);
  for (float x : v.values()) CHECK(x == -1000.0f);
}

TEST_CASE("dense-view sphere recovers interior attenuation within 5 percent") {
  const auto g = make_desk_geometry();
  const GridSpec grid;
  const auto phantom = sphere_phantom(grid, 60.0, 0.0f);
  const auto stack = forward_project(hu_to_mu(phantom), g, full_view_set(g, 180));
  const auto recon = fdk_reconstruct(stack, g, grid.make_volume());
  double mean_hu = 0.0;
  for (std::size_t k = 15; k <= 16; ++k)
    for (std::size_t j = 31; j <= 32; ++j)
      for (std::size_t i = 31; i <= 32; ++i) mean_hu += recon.at(i, j, k) / 8.0;
  const double mu = kMuWater * (1.0 + mean_hu / 1000.0);
  CHECK(std::abs(mu - kMuWater) / kMuWater <= 0.05);
  // Air 96 mm off axis, inside the reconstructable circle.
  CHECK(recon.at(8, 32, 16) == doctest::Approx(-1000.0).epsilon(0.05));
  CHECK(fdk_reconstruct(stack, g, grid.make_volume()) == recon);
}

TEST_CASE("full pipeline is linear in projection values") {
  const auto g = make_desk_geometry();
  GridSpec grid;
  grid.dims = {24, 24, 12};
  grid.spacing = {8.0, 8.0, 12.0};
  const auto views = full_view_set(g, 6);
  const auto ra = testing::random_volume({g.n_u, g.n_v, 6}, 3, 0.0, 2.0);
  const auto rb = testing::random_volume({g.n_u, g.n_v, 6}, 4, 0.0, 2.0);
  ProjectionStack a(g.n_u, g.n_v, g.pitch_u, g.pitch_v, views.angles_deg), b = a, c = a;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    a.values()[i] = ra.values()[i];
    b.values()[i] = rb.values()[i];
    c.values()[i] = ra.values()[i] + rb.values()[i];
  }
  auto mu = [&](const ProjectionStack& s) {
    const auto hu = fdk_reconstruct(s, g, grid.make_volume());
    std::vector<double> out(hu.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = kMuWater * (1.0 + hu.values()[i] / 1000.0);
    return out;
  };
  const auto ma = mu(a), mb = mu(b), mc = mu(c);
  double peak = 0.0, worst = 0.0;
  for (std::size_t i = 0; i < mc.size(); ++i) {
    peak = std::max(peak, std::abs(mc[i]));
    worst = std::max(worst, std::abs(mc[i] - ma[i] - mb[i]));
  }
  CHECK(worst / peak <= 1e-5);
}

TEST_CASE("sparse views lower psnr and add streaks on the desk phantom") {
  const DatasetConfig cfg;
  const auto phantom = generate_phantom(random_phantom_spec(derive_seed(1234, 0), cfg.grid));
  const auto recons = reconstruct_view_counts(phantom, cfg.geometry, 180, {25, 100, 180});
  const auto mask = body_mask(phantom);
  const double p25 = psnr(recons[0], phantom, &mask.mask);
  const double p100 = psnr(recons[1], phantom, &mask.mask);
  const double p180 = psnr(recons[2], phantom, &mask.mask);
  CHECK(p25 < p100);
  CHECK(p100 < p180);
  const double e25 = streak_energy(recons[0], recons[2]);
  const double e100 = streak_energy(recons[1], recons[2]);
  CHECK(e25 > kStreakEnergyFloor25);
  CHECK(e100 < e25);
}

}
