#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "sparsecbct/errors.hpp"
#include "sparsecbct/phantom.hpp"
#include "sparsecbct/projector.hpp"

using namespace sparsecbct;

namespace {

GridSpec small_grid() {
  GridSpec g;
  g.dims = {32, 32, 16};
  g.spacing = {8.0, 8.0, 12.0};
  return g;
}

double max_abs(std::span<const float> v) {
  double m = 0.0;
  for (float x : v) m = std::max(m, double(std::abs(x)));
  return m;
}

}  // namespace

TEST_SUITE("projector") {

TEST_CASE("hu to mu anchors") {
  auto v = VoxelVolume::centered({3, 1, 1}, {1, 1, 1});
  v.values()[0] = 0.0f;
  v.values()[1] = -1000.0f;
  v.values()[2] = 1000.0f;
  const auto mu = hu_to_mu(v).volume();
  CHECK(mu.values()[0] == doctest::Approx(0.02));
  CHECK(mu.values()[1] == 0.0f);
  CHECK(mu.values()[2] == doctest::Approx(0.04));
  CHECK(mu.unit() == Unit::Attenuation);
  const auto hu = mu_to_hu(mu);
  CHECK(hu.values()[2] == doctest::Approx(1000.0).epsilon(1e-6));
}

TEST_CASE("zero map gives zero integrals") {
  const AttenuationMap zero(small_grid().make_volume(Unit::Attenuation, 0.0f));
  CHECK(ray_integral(zero, {-500, 3, 7}, {500, -20, 1}) == 0.0);
  const auto stack = forward_project(zero, make_desk_geometry(), full_view_set(make_desk_geometry(), 3));
  CHECK(max_abs(stack.values()) == 0.0);
}

TEST_CASE("uniform cube central ray integrates to mu times side") {
  const auto cube = VoxelVolume::centered({50, 50, 50}, {2.0, 2.0, 2.0}, Unit::Attenuation, 0.02f);
  const AttenuationMap map(cube);
  const double along_x = ray_integral(map, {-300, 0.3, -0.2}, {300, 0.3, -0.2});
  CHECK(along_x == doctest::Approx(2.0).epsilon(0.01));
  const double along_z = ray_integral(map, {0.1, 0.4, -300}, {0.1, 0.4, 300});
  CHECK(along_z == doctest::Approx(2.0).epsilon(0.01));
}

TEST_CASE("ray integral is linear") {
  const auto a = testing::random_volume({16, 16, 8}, 5, 0.0, 0.03, Unit::Attenuation);
  auto a2 = a;
  for (float& x : a2.values()) x *= 2.0f;
  const double i1 = ray_integral(AttenuationMap(a), {-40, -3, 1}, {40, 5, -2});
  const double i2 = ray_integral(AttenuationMap(a2), {-40, -3, 1}, {40, 5, -2});
  CHECK(i2 == doctest::Approx(2.0 * i1).epsilon(1e-6));
}

TEST_CASE("centered sphere projections are invariant under quarter turns") {
  const auto geom = make_desk_geometry();
  const auto mu = hu_to_mu(sphere_phantom(small_grid(), 70.0, 0.0f));
  const auto stack = forward_project(mu, geom, full_view_set(geom, 4));
  const double peak = max_abs(stack.values());
  REQUIRE(peak > 0.0);
  double worst = 0.0;
  for (std::size_t v = 1; v < 4; ++v) {
    for (std::size_t i = 0; i < stack.view(0).size(); ++i) {
      worst = std::max(worst, double(std::abs(stack.view(v)[i] - stack.view(0)[i])));
    }
  }
  CHECK(worst / peak <= 1e-4);
}

TEST_CASE("projecting a subset equals selecting from the dense stack") {
  const auto geom = make_desk_geometry();
  const auto mu = hu_to_mu(sphere_phantom(small_grid(), 50.0, 200.0f));
  const auto dense_views = full_view_set(geom, 400);
  const auto idx = uniform_view_subset(400, 25);
  const auto dense = forward_project(mu, geom, dense_views);
  const auto sparse = forward_project(mu, geom, select_views(dense_views, idx));
  CHECK(sparse == dense.select(idx));
}

TEST_CASE("projection is linear and monotone in the volume") {
  const auto geom = make_desk_geometry();
  const auto views = full_view_set(geom, 5);
  const auto a = testing::random_volume({32, 32, 16}, 1, 0.0, 0.02, Unit::Attenuation);
  const auto b = testing::random_volume({32, 32, 16}, 2, 0.0, 0.02, Unit::Attenuation);
  auto grid = small_grid().make_volume(Unit::Attenuation);
  auto place = [&](const VoxelVolume& src) {
    auto out = grid;
    std::copy(src.values().begin(), src.values().end(), out.values().begin());
    return out;
  };
  const auto va = place(a), vb = place(b);
  auto combo = va;
  auto bigger = va;
  for (std::size_t i = 0; i < combo.size(); ++i) {
    combo.values()[i] = 2.0f * va.values()[i] + 3.0f * vb.values()[i];
    bigger.values()[i] = va.values()[i] + vb.values()[i];
  }
  const auto pa = forward_project(AttenuationMap(va), geom, views);
  const auto pb = forward_project(AttenuationMap(vb), geom, views);
  const auto pc = forward_project(AttenuationMap(combo), geom, views);
  const auto pbig = forward_project(AttenuationMap(bigger), geom, views);
  const double peak = max_abs(pc.values());
  double worst = 0.0;
  bool monotone = true;
  for (std::size_t i = 0; i < pc.values().size(); ++i) {
    const double expected = 2.0 * pa.values()[i] + 3.0 * pb.values()[i];
    worst = std::max(worst, std::abs(pc.values()[i] - expected));
    monotone = monotone && pbig.values()[i] >= pa.values()[i];
  }
  CHECK(worst / peak <= 1e-5);
  CHECK(monotone);
  for (float x : pc.values()) CHECK_MESSAGE(std::isfinite(x), "non-finite projection");
}

TEST_CASE("negative attenuation is rejected") {
  auto v = small_grid().make_volume(Unit::Attenuation, 0.0f);
  v.values()[0] = -1.0f;
  CHECK_THROWS_AS(AttenuationMap{v}, Error);
}

TEST_CASE("poisson noise is seeded") {
  const auto geom = make_desk_geometry();
  const auto mu = hu_to_mu(sphere_phantom(small_grid(), 50.0, 0.0f));
  const auto p = forward_project(mu, geom, full_view_set(geom, 2));
  CHECK(add_poisson_noise(p, 1e4, 9) == add_poisson_noise(p, 1e4, 9));
  CHECK_FALSE(add_poisson_noise(p, 1e4, 9) == p);
}

}
