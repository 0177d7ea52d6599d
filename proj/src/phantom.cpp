#include "sparsecbct/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sparsecbct/errors.hpp"
#include "sparsecbct/rng.hpp"

namespace sparsecbct {

std::string to_string(Tissue tissue) {
  switch (tissue) {
    case Tissue::Body: return "body";
    case Tissue::Lung: return "lung";
    case Tissue::Bone: return "bone";
    case Tissue::Soft: return "soft";
    case Tissue::Lesion: return "lesion";
  }
  return "soft";
}

HuBand hu_band(Tissue tissue) {
  switch (tissue) {
    case Tissue::Body: return {40.0, 40.0};
    case Tissue::Lung: return {-850.0, 50.0};
    case Tissue::Bone: return {700.0, 200.0};
    case Tissue::Soft: return {50.0, 50.0};
    case Tissue::Lesion: return {50.0, 30.0};
  }
  return {0.0, 0.0};
}

bool Ellipsoid::contains(Vec3 p) const {
  const double dx = (p.x - center.x) / semi_axes.x;
  const double dy = (p.y - center.y) / semi_axes.y;
  const double dz = (p.z - center.z) / semi_axes.z;
  return dx * dx + dy * dy + dz * dz <= 1.0;
}

double Ellipsoid::max_extent_in(const Ellipsoid& outer) const {
  // Dense sampling of the surface; both quadrics are smooth, so the maximum
  // on a 64 x 128 grid is within a fraction of a percent of the true one.
  constexpr int kPolar = 64;
  constexpr int kAzimuth = 128;
  double worst = 0.0;
  for (int a = 0; a <= kPolar; ++a) {
    const double theta = std::numbers::pi * a / kPolar;
    for (int b = 0; b < kAzimuth; ++b) {
      const double phi = 2.0 * std::numbers::pi * b / kAzimuth;
      const Vec3 p{center.x + semi_axes.x * std::sin(theta) * std::cos(phi),
                   center.y + semi_axes.y * std::sin(theta) * std::sin(phi),
                   center.z + semi_axes.z * std::cos(theta)};
      const double dx = (p.x - outer.center.x) / outer.semi_axes.x;
      const double dy = (p.y - outer.center.y) / outer.semi_axes.y;
      const double dz = (p.z - outer.center.z) / outer.semi_axes.z;
      worst = std::max(worst, dx * dx + dy * dy + dz * dz);
    }
  }
  return worst;
}

VoxelVolume GridSpec::make_volume(Unit unit, float fill) const {
  return VoxelVolume::centered(dims, spacing, unit, fill);
}

Vec3 GridSpec::half_extent() const {
  return {0.5 * spacing.x * static_cast<double>(dims.nx), 0.5 * spacing.y * static_cast<double>(dims.ny),
          0.5 * spacing.z * static_cast<double>(dims.nz)};
}

void GridSpec::validate() const {
  require(dims.nx >= 1 && dims.ny >= 1 && dims.nz >= 1, "grid.dims: must be >= 1");
  require(spacing.x > 0 && spacing.y > 0 && spacing.z > 0, "grid.spacing_mm: must be > 0");
}

json to_json(const GridSpec& grid) {
  return {{"dims", {grid.dims.nx, grid.dims.ny, grid.dims.nz}},
          {"spacing_mm", {grid.spacing.x, grid.spacing.y, grid.spacing.z}}};
}

GridSpec grid_from_json(const json& j) {
  GridSpec g;
  try {
    const auto dims = j.at("dims").get<std::vector<long long>>();
    const auto spacing = j.at("spacing_mm").get<std::vector<double>>();
    require(dims.size() == 3, "grid.dims: expected three integers");
    require(spacing.size() == 3, "grid.spacing_mm: expected three numbers");
    require(dims[0] >= 1 && dims[1] >= 1 && dims[2] >= 1, "grid.dims: must be >= 1");
    g.dims = {static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]),
              static_cast<std::size_t>(dims[2])};
    g.spacing = {spacing[0], spacing[1], spacing[2]};
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, std::string("grid: ") + e.what());
  }
  g.validate();
  return g;
}

void PhantomSpec::validate() const {
  grid.validate();
  auto check_hu = [](const Ellipsoid& e, const std::string& what) {
    require(e.hu >= -1000.0f && e.hu <= 1000.0f, "phantom: " + what + " HU outside [-1000, 1000]");
    require(e.semi_axes.x > 0 && e.semi_axes.y > 0 && e.semi_axes.z > 0,
            "phantom: " + what + " semi-axes must be > 0");
  };
  check_hu(body, "body");
  for (std::size_t i = 0; i < inclusions.size(); ++i) {
    const std::string what = "inclusion " + std::to_string(i);
    check_hu(inclusions[i], what);
    require(inclusions[i].max_extent_in(body) <= 1.0, "phantom: " + what + " lies outside the body");
  }
}

namespace {

float draw_hu(Rng& rng, Tissue tissue) {
  const HuBand band = hu_band(tissue);
  return static_cast<float>(rng.uniform(band.center - band.half_width, band.center + band.half_width));
}

// Shrinks a candidate until it fits inside the body with a small margin.
Ellipsoid fit_inside(Ellipsoid inc, const Ellipsoid& body) {
  for (int attempt = 0; attempt < 64 && inc.max_extent_in(body) > 0.97; ++attempt) {
    inc.semi_axes = 0.9 * inc.semi_axes;
    inc.center = 0.95 * inc.center;
  }
  return inc;
}

}  // namespace

PhantomSpec random_phantom_spec(std::uint64_t seed, const GridSpec& grid, const PhantomKnobs& knobs) {
  grid.validate();
  Rng rng(seed);
  const Vec3 h = grid.half_extent();

  PhantomSpec spec;
  spec.seed = seed;
  spec.grid = grid;

  Ellipsoid& body = spec.body;
  body.tissue = Tissue::Body;
  body.semi_axes = {h.x * rng.uniform(0.70, 0.84), h.y * rng.uniform(0.50, 0.64),
                    h.z * rng.uniform(0.80, 0.92)};
  body.center = {h.x * rng.uniform(-0.04, 0.04), h.y * rng.uniform(-0.04, 0.04), 0.0};
  body.hu = draw_hu(rng, Tissue::Body);
  const Vec3 a = body.semi_axes;
  const Vec3 c = body.center;

  auto add = [&](Tissue tissue, Vec3 rel_center, Vec3 rel_axes) {
    Ellipsoid e;
    e.tissue = tissue;
    e.center = {c.x + a.x * rel_center.x, c.y + a.y * rel_center.y, c.z + a.z * rel_center.z};
    e.semi_axes = {a.x * rel_axes.x, a.y * rel_axes.y, a.z * rel_axes.z};
    e.hu = draw_hu(rng, tissue);
    spec.inclusions.push_back(fit_inside(e, body));
  };

  for (double side : {-1.0, 1.0}) {
    add(Tissue::Lung,
        {side * rng.uniform(0.40, 0.48), rng.uniform(-0.12, 0.0), rng.uniform(-0.05, 0.05)},
        {rng.uniform(0.28, 0.36), rng.uniform(0.50, 0.62), rng.uniform(0.55, 0.72)});
  }
  add(Tissue::Soft, {rng.uniform(0.0, 0.15), rng.uniform(0.05, 0.2), rng.uniform(-0.1, 0.1)},
      {rng.uniform(0.18, 0.26), rng.uniform(0.22, 0.32), rng.uniform(0.3, 0.45)});
  add(Tissue::Bone, {rng.uniform(-0.03, 0.03), rng.uniform(0.68, 0.76), 0.0},
      {rng.uniform(0.08, 0.12), rng.uniform(0.12, 0.16), rng.uniform(0.75, 0.9)});

  const auto extra_bones = static_cast<std::size_t>(rng.below(knobs.max_extra_bones + 1));
  for (std::size_t i = 0; i < extra_bones; ++i) {
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    add(Tissue::Bone, {0.82 * std::cos(angle), 0.82 * std::sin(angle), rng.uniform(-0.5, 0.5)},
        {rng.uniform(0.04, 0.08), rng.uniform(0.04, 0.08), rng.uniform(0.1, 0.3)});
  }
  const auto soft = static_cast<std::size_t>(rng.below(knobs.max_soft + 1));
  for (std::size_t i = 0; i < soft; ++i) {
    add(Tissue::Soft, {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)},
        {rng.uniform(0.06, 0.14), rng.uniform(0.06, 0.14), rng.uniform(0.08, 0.2)});
  }
  const auto lesions = 1 + static_cast<std::size_t>(rng.below(knobs.max_lesions));
  for (std::size_t i = 0; i < lesions; ++i) {
    const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
    add(Tissue::Lesion,
        {side * rng.uniform(0.3, 0.55), rng.uniform(-0.4, 0.3), rng.uniform(-0.4, 0.4)},
        {rng.uniform(0.04, 0.1), rng.uniform(0.05, 0.12), rng.uniform(0.05, 0.12)});
  }
  return spec;
}

VoxelVolume generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  VoxelVolume vol = spec.grid.make_volume(Unit::HU, kAirHu);
  const Dims3 d = vol.dims();
  for (std::size_t k = 0; k < d.nz; ++k) {
    for (std::size_t j = 0; j < d.ny; ++j) {
      for (std::size_t i = 0; i < d.nx; ++i) {
        const Vec3 p = vol.center(i, j, k);
        if (!spec.body.contains(p)) continue;
        float value = spec.body.hu;
        for (const Ellipsoid& e : spec.inclusions) {
          if (e.contains(p)) value = e.hu;
        }
        vol.at(i, j, k) = value;
      }
    }
  }
  return vol;
}

VoxelVolume sphere_phantom(const GridSpec& grid, double radius_mm, float hu) {
  require(radius_mm > 0.0, "sphere radius must be > 0");
  VoxelVolume vol = grid.make_volume(Unit::HU, kAirHu);
  const Dims3 d = vol.dims();
  for (std::size_t k = 0; k < d.nz; ++k) {
    for (std::size_t j = 0; j < d.ny; ++j) {
      for (std::size_t i = 0; i < d.nx; ++i) {
        if (norm(vol.center(i, j, k)) <= radius_mm) vol.at(i, j, k) = hu;
      }
    }
  }
  return vol;
}

}  // namespace sparsecbct
