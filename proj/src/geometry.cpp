#include "sparsecbct/geometry.hpp"

#include <cmath>
#include <numbers>

#include "sparsecbct/errors.hpp"

namespace sparsecbct {

std::string to_string(FanMode mode) { return mode == FanMode::Half ? "half-fan" : "full-fan"; }

FanMode fan_mode_from_string(const std::string& text) {
  if (text == "half-fan") return FanMode::Half;
  if (text == "full-fan") return FanMode::Full;
  fail(ErrorKind::Validation, "geometry.fan_mode: expected 'half-fan' or 'full-fan', got '" + text + "'");
}

void ConeBeamGeometry::validate() const {
  require(sad > 0.0, "geometry.sad: must be > 0");
  require(sid > sad, "geometry.sid: must exceed sad");
  require(n_u >= 2 && n_v >= 1, "geometry.det: need at least 2x1 pixels");
  require(pitch_u > 0.0 && pitch_v > 0.0, "geometry.pitch_mm: must be > 0");
  require(arc_deg > 0.0 && arc_deg <= 360.0, "geometry.arc_deg: must lie in (0, 360]");
  if (fan_mode == FanMode::Half) {
    require(lateral_offset_u != 0.0, "geometry.lateral_offset_u: half-fan needs a non-zero offset");
  } else {
    require(lateral_offset_u == 0.0, "geometry.lateral_offset_u: full-fan needs zero offset");
  }
}

double ConeBeamGeometry::max_abs_u() const {
  return std::max(std::abs(u_of(0.0)), std::abs(u_of(static_cast<double>(n_u - 1))));
}

ConeBeamGeometry make_reference_geometry() { return ConeBeamGeometry{}; }

ConeBeamGeometry make_desk_geometry() {
  ConeBeamGeometry g;
  g.n_u = 96;
  g.n_v = 64;
  g.pitch_u = 2.352;
  g.pitch_v = 5.376;
  g.lateral_offset_u = 87.5;
  return g;
}

ConeBeamGeometry make_real_detector_geometry() {
  ConeBeamGeometry g;
  g.n_u = 3072;
  g.n_v = 384;
  g.pitch_u = 860.0 / 3072.0;
  g.pitch_v = 430.0 / 384.0;
  g.lateral_offset_u = 0.0;
  g.arc_deg = kHalfTrajectoryArcDeg;
  g.fan_mode = FanMode::Full;
  return g;
}

json to_json(const ConeBeamGeometry& geom) {
  json j;
  j["sad_mm"] = geom.sad;
  j["sid_mm"] = geom.sid;
  j["det"] = json::array({geom.n_u, geom.n_v});
  j["pitch_mm"] = json::array({geom.pitch_u, geom.pitch_v});
  j["lateral_offset_u_mm"] = geom.lateral_offset_u;
  j["arc_deg"] = geom.arc_deg;
  j["fan_mode"] = to_string(geom.fan_mode);
  return j;
}

ConeBeamGeometry geometry_from_json(const json& j) {
  require(j.is_object(), "geometry: expected an object");
  ConeBeamGeometry g;
  try {
    g.sad = j.at("sad_mm").get<double>();
    g.sid = j.at("sid_mm").get<double>();
    const auto det = j.at("det").get<std::vector<std::size_t>>();
    const auto pitch = j.at("pitch_mm").get<std::vector<double>>();
    require(det.size() == 2, "geometry.det: expected [n_u, n_v]");
    require(pitch.size() == 2, "geometry.pitch_mm: expected [p_u, p_v]");
    g.n_u = det[0];
    g.n_v = det[1];
    g.pitch_u = pitch[0];
    g.pitch_v = pitch[1];
    g.lateral_offset_u = j.at("lateral_offset_u_mm").get<double>();
    g.arc_deg = j.at("arc_deg").get<double>();
    g.fan_mode = fan_mode_from_string(j.at("fan_mode").get<std::string>());
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, std::string("geometry: ") + e.what());
  }
  g.validate();
  return g;
}

ConeBeamGeometry geometry_from_config(const json& j) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "reference") return make_reference_geometry();
    if (name == "desk") return make_desk_geometry();
    if (name == "real-detector") return make_real_detector_geometry();
    fail(ErrorKind::Validation, "geometry: unknown preset '" + name + "'");
  }
  return geometry_from_json(j);
}

std::string geometry_hash(const ConeBeamGeometry& geom) {
  const std::string text = to_json(geom).dump();
  return sha256_hex({reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

ViewSet full_view_set(const ConeBeamGeometry& geom, std::size_t n_views) {
  require(n_views >= 2, "views: need at least 2 views");
  ViewSet set;
  set.angles_deg.reserve(n_views);
  set.indices.reserve(n_views);
  for (std::size_t i = 0; i < n_views; ++i) {
    set.angles_deg.push_back(geom.arc_deg * static_cast<double>(i) / static_cast<double>(n_views));
    set.indices.push_back(i);
  }
  return set;
}

std::vector<std::size_t> uniform_view_subset(std::size_t total, std::size_t k) {
  require(k >= 1 && k <= total, "views: subset size must satisfy 1 <= k <= total");
  std::vector<std::size_t> indices(k);
  for (std::size_t i = 0; i < k; ++i) indices[i] = i * total / k;
  return indices;
}

ViewSet select_views(const ViewSet& dense, std::span<const std::size_t> positions) {
  ViewSet out;
  for (std::size_t p : positions) {
    require(p < dense.size(), "views: subset position out of range");
    out.angles_deg.push_back(dense.angles_deg[p]);
    out.indices.push_back(dense.indices.empty() ? p : dense.indices[p]);
  }
  return out;
}

namespace {

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

}  // namespace

Vec3 source_position(const ConeBeamGeometry& geom, double angle_deg) {
  const double a = radians(angle_deg);
  return {geom.sad * std::cos(a), geom.sad * std::sin(a), 0.0};
}

Vec3 detector_point(const ConeBeamGeometry& geom, double angle_deg, double u, double v) {
  const double a = radians(angle_deg);
  const double c = std::cos(a);
  const double s = std::sin(a);
  const double d = geom.sad - geom.sid;
  return {d * c - u * s, d * s + u * c, v};
}

Vec3 detector_center(const ConeBeamGeometry& geom, double angle_deg) {
  return detector_point(geom, angle_deg, geom.lateral_offset_u, 0.0);
}

}  // namespace sparsecbct
