#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "sparsecbct/errors.hpp"
#include "sparsecbct/geometry.hpp"
#include "sparsecbct/rng.hpp"

using namespace sparsecbct;

namespace {

// Cyclic gap spread (max gap - min gap) of a sorted subset of 0..total-1.
std::size_t cyclic_spread(const std::vector<std::size_t>& s, std::size_t total) {
  std::size_t lo = total, hi = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t gap = i + 1 < s.size() ? s[i + 1] - s[i] : total - s[i] + s[0];
    lo = std::min(lo, gap);
    hi = std::max(hi, gap);
  }
  return hi - lo;
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("presets keep the 1.54 magnification and validate") {
  CHECK(make_reference_geometry().magnification() == doctest::Approx(1.54));
  CHECK(make_desk_geometry().magnification() == doctest::Approx(1.54));
  CHECK_NOTHROW(make_reference_geometry().validate());
  CHECK_NOTHROW(make_desk_geometry().validate());
  CHECK_NOTHROW(make_real_detector_geometry().validate());
  CHECK(make_real_detector_geometry().arc_deg == 210.0);
}

TEST_CASE("invalid geometries are rejected") {
  auto g = make_reference_geometry();
  g.sid = 900.0;
  CHECK_THROWS_AS(g.validate(), Error);
  g = make_reference_geometry();
  g.lateral_offset_u = 0.0;
  CHECK_THROWS_AS(g.validate(), Error);
  g = make_reference_geometry();
  g.fan_mode = FanMode::Full;
  CHECK_THROWS_AS(g.validate(), Error);
  g = make_reference_geometry();
  g.arc_deg = 0.0;
  CHECK_THROWS_AS(g.validate(), Error);
  g = make_reference_geometry();
  g.pitch_u = 0.0;
  CHECK_THROWS_AS(g.validate(), Error);
}

TEST_CASE("full view sets") {
  auto g = make_reference_geometry();
  const auto four = full_view_set(g, 4);
  CHECK(four.angles_deg == std::vector<double>{0.0, 90.0, 180.0, 270.0});
  auto short_scan = g;
  short_scan.arc_deg = 210.0;
  const auto eight = full_view_set(short_scan, 8);
  for (std::size_t i = 1; i < eight.size(); ++i) {
    CHECK(eight.angles_deg[i] - eight.angles_deg[i - 1] == doctest::Approx(26.25));
  }
  const auto many = full_view_set(g, 491);
  CHECK(many.angles_deg[1] == doctest::Approx(360.0 / 491.0));
  for (std::size_t i = 1; i < many.size(); ++i) CHECK(many.angles_deg[i] > many.angles_deg[i - 1]);
  CHECK(many.angles_deg.back() < 360.0);
}

TEST_CASE("uniform subsets") {
  const auto s = uniform_view_subset(400, 25);
  REQUIRE(s.size() == 25);
  for (std::size_t i = 0; i < 25; ++i) CHECK(s[i] == 16 * i);
  const auto id = uniform_view_subset(400, 400);
  for (std::size_t i = 0; i < 400; ++i) CHECK(id[i] == i);
  CHECK(uniform_view_subset(10, 3) == std::vector<std::size_t>{0, 3, 6});
  for (std::size_t i : uniform_view_subset(400, 50)) CHECK(i % 8 == 0);
  CHECK_THROWS_AS(uniform_view_subset(10, 0), Error);
  CHECK_THROWS_AS(uniform_view_subset(10, 11), Error);
}

TEST_CASE("uniform subset of 10 choose 3 is maximally uniform") {
  std::size_t best = 10;
  for (std::size_t a = 0; a < 10; ++a)
    for (std::size_t b = a + 1; b < 10; ++b)
      for (std::size_t c = b + 1; c < 10; ++c) best = std::min(best, cyclic_spread({a, b, c}, 10));
  CHECK(cyclic_spread(uniform_view_subset(10, 3), 10) == best);
}

TEST_CASE("subset gaps differ by at most one up to 1000 views") {
  bool ok = true;
  for (std::size_t total = 1; total <= 1000 && ok; ++total) {
    for (std::size_t k = 1; k <= total && ok; ++k) {
      const auto s = uniform_view_subset(total, k);
      std::size_t lo = total, hi = 0;
      for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        lo = std::min(lo, s[i + 1] - s[i]);
        hi = std::max(hi, s[i + 1] - s[i]);
      }
      if (s.size() > 1 && hi - lo > 1) ok = false;
      if (s.front() != 0 || s.back() >= total) ok = false;
    }
  }
  CHECK(ok);
}

TEST_CASE("selected views inherit dense angles") {
  const auto g = make_desk_geometry();
  const auto dense = full_view_set(g, 400);
  const auto idx = uniform_view_subset(400, 25);
  const auto sub = select_views(dense, idx);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    CHECK(sub.angles_deg[i] == dense.angles_deg[idx[i]]);
    CHECK(sub.indices[i] == idx[i]);
  }
}

TEST_CASE("source positions") {
  const auto g = make_reference_geometry();
  const Vec3 s0 = source_position(g, 0.0);
  CHECK(s0.x == doctest::Approx(1000.0));
  CHECK(std::abs(s0.y) < 1e-9);
  const Vec3 s90 = source_position(g, 90.0);
  CHECK(std::abs(s90.x) < 1e-9);
  CHECK(s90.y == doctest::Approx(1000.0));
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const double a = rng.uniform(-720.0, 720.0);
    const Vec3 s = source_position(g, a);
    CHECK(norm(s) == doctest::Approx(1000.0).epsilon(1e-12));
    const Vec3 t = source_position(g, a + 360.0);
    CHECK(norm(s - t) < 1e-9);
  }
}

TEST_CASE("detector frame") {
  const auto g = make_reference_geometry();
  const double a = 30.0;
  const double r = a * std::numbers::pi / 180.0;
  const Vec3 s = source_position(g, a);
  const Vec3 piercing = detector_point(g, a, 0.0, 0.0);
  CHECK(norm(piercing - s) == doctest::Approx(g.sid));
  const Vec3 du = detector_point(g, a, 1.0, 0.0) - piercing;
  CHECK(du.x == doctest::Approx(-std::sin(r)));
  CHECK(du.y == doctest::Approx(std::cos(r)));
  const Vec3 dv = detector_point(g, a, 0.0, 1.0) - piercing;
  CHECK(dv.z == doctest::Approx(1.0));
  const Vec3 c = detector_center(g, a) - piercing;
  CHECK(norm(c) == doctest::Approx(g.lateral_offset_u));
}

TEST_CASE("geometry json round trip and presets by name") {
  const auto g = make_desk_geometry();
  CHECK(geometry_from_json(to_json(g)) == g);
  CHECK(geometry_from_config(json("reference")) == make_reference_geometry());
  CHECK(geometry_hash(g) == geometry_hash(make_desk_geometry()));
  CHECK(geometry_hash(g) != geometry_hash(make_reference_geometry()));
}

}
