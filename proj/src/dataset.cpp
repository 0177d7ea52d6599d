#include "sparsecbct/dataset.hpp"

#include <cstdio>

#include "sparsecbct/errors.hpp"
#include "sparsecbct/fdk.hpp"
#include "sparsecbct/projector.hpp"
#include "sparsecbct/rng.hpp"

namespace sparsecbct {

namespace fs = std::filesystem;

void DatasetConfig::validate() const {
  require(n_samples >= 1, "n_samples: must be >= 1");
  require(views_dense >= 2, "views_dense: must be >= 2");
  require(views_sparse >= 1, "views_sparse: must be >= 1");
  require(views_sparse <= views_dense, "views_sparse: must not exceed views_dense");
  geometry.validate();
  grid.validate();
}

json to_json(const DatasetConfig& config) {
  return {{"seed", config.seed},
          {"n_samples", config.n_samples},
          {"views_sparse", config.views_sparse},
          {"views_dense", config.views_dense},
          {"first_index", config.first_index},
          {"geometry", to_json(config.geometry)},
          {"grid", to_json(config.grid)},
          {"phantom",
           {{"max_extra_bones", config.knobs.max_extra_bones},
            {"max_lesions", config.knobs.max_lesions},
            {"max_soft", config.knobs.max_soft}}}};
}

namespace {

template <typename T>
T get_field(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    if constexpr (std::is_unsigned_v<T>) {
      const auto value = j.at(key).get<long long>();
      require(value >= 0, std::string(key) + ": must be >= 0");
      return static_cast<T>(value);
    } else {
      return j.at(key).get<T>();
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, std::string(key) + ": " + e.what());
  }
}

}  // namespace

DatasetConfig dataset_config_from_json(const json& j) {
  require(j.is_object(), "dataset config: expected a JSON object");
  DatasetConfig c;
  c.seed = get_field<std::uint64_t>(j, "seed", c.seed);
  c.n_samples = get_field<std::size_t>(j, "n_samples", c.n_samples);
  c.views_sparse = get_field<std::size_t>(j, "views_sparse", c.views_sparse);
  c.views_dense = get_field<std::size_t>(j, "views_dense", c.views_dense);
  c.first_index = get_field<std::uint64_t>(j, "first_index", c.first_index);
  if (j.contains("geometry")) c.geometry = geometry_from_config(j.at("geometry"));
  if (j.contains("grid")) c.grid = grid_from_json(j.at("grid"));
  if (j.contains("phantom")) {
    const json& p = j.at("phantom");
    c.knobs.max_extra_bones = get_field<std::size_t>(p, "max_extra_bones", c.knobs.max_extra_bones);
    c.knobs.max_lesions = get_field<std::size_t>(p, "max_lesions", c.knobs.max_lesions);
    c.knobs.max_soft = get_field<std::size_t>(p, "max_soft", c.knobs.max_soft);
  }
  c.validate();
  return c;
}

PairedSample make_pair(const DatasetConfig& config, std::size_t index) {
  config.validate();
  PairedSample pair;
  pair.meta.index = index;
  pair.meta.seed = derive_seed(config.seed, config.first_index + index);
  pair.meta.views_sparse = config.views_sparse;
  pair.meta.views_dense = config.views_dense;
  pair.meta.geometry_hash = geometry_hash(config.geometry);

  const VoxelVolume phantom = generate_phantom(random_phantom_spec(pair.meta.seed, config.grid, config.knobs));
  const ViewSet dense = full_view_set(config.geometry, config.views_dense);
  const ProjectionStack projections = forward_project(hu_to_mu(phantom), config.geometry, dense);
  const VoxelVolume grid = config.grid.make_volume();
  pair.target = fdk_reconstruct(projections, config.geometry, grid);
  const auto subset = uniform_view_subset(config.views_dense, config.views_sparse);
  pair.input = fdk_reconstruct(projections.select(subset), config.geometry, grid);
  return pair;
}

std::vector<VoxelVolume> reconstruct_view_counts(const VoxelVolume& phantom_hu,
                                                 const ConeBeamGeometry& geom,
                                                 std::size_t views_dense,
                                                 const std::vector<std::size_t>& view_counts) {
  const ViewSet dense = full_view_set(geom, views_dense);
  const ProjectionStack projections = forward_project(hu_to_mu(phantom_hu), geom, dense);
  const VoxelVolume grid = phantom_hu.filled(0.0f, Unit::HU);
  std::vector<VoxelVolume> out;
  for (std::size_t k : view_counts) {
    const auto subset = uniform_view_subset(views_dense, k);
    out.push_back(fdk_reconstruct(projections.select(subset), geom, grid));
  }
  return out;
}

namespace {

std::string sample_stem(std::size_t index, const char* role) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "sample_%04zu_%s", index, role);
  return buffer;
}

}  // namespace

json make_dataset(const DatasetConfig& config, const fs::path& out_dir) {
  config.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create dataset directory " + out_dir.string());

  json manifest;
  manifest["kind"] = kDatasetManifestKind;
  manifest["toolkit_version"] = kToolkitVersion;
  manifest["config"] = to_json(config);
  manifest["geometry_hash"] = geometry_hash(config.geometry);
  manifest["sparse_indices"] = uniform_view_subset(config.views_dense, config.views_sparse);
  manifest["samples"] = json::array();
  for (std::size_t i = 0; i < config.n_samples; ++i) {
    const PairedSample pair = make_pair(config, i);
    const std::string input = sample_stem(i, "input") + ".vol";
    const std::string target = sample_stem(i, "target") + ".vol";
    write_volume(pair.input, out_dir / input);
    write_volume(pair.target, out_dir / target);
    manifest["samples"].push_back({{"index", i},
                                   {"seed", pair.meta.seed},
                                   {"input", input},
                                   {"target", target},
                                   {"hashes",
                                    {{"input", artifact_hash(out_dir / input)},
                                     {"target", artifact_hash(out_dir / target)}}}});
  }
  write_json(out_dir / "manifest.json", manifest);
  return manifest;
}

json regenerate_dataset(const fs::path& manifest_path, const fs::path& out_dir) {
  const json manifest = read_json(manifest_path);
  require(manifest.value("kind", "") == kDatasetManifestKind, "not a dataset manifest: " + manifest_path.string());
  return make_dataset(dataset_config_from_json(manifest.at("config")), out_dir);
}

std::vector<PairedSample> load_dataset(const fs::path& manifest_path) {
  const json manifest = read_json(manifest_path);
  require(manifest.value("kind", "") == kDatasetManifestKind, "not a dataset manifest: " + manifest_path.string());
  const fs::path dir = manifest_path.parent_path();
  const DatasetConfig config = dataset_config_from_json(manifest.at("config"));
  std::vector<PairedSample> pairs;
  for (const json& s : manifest.at("samples")) {
    PairedSample pair;
    const fs::path input = dir / s.at("input").get<std::string>();
    const fs::path target = dir / s.at("target").get<std::string>();
    if (s.contains("hashes")) {
      if (artifact_hash(input) != s.at("hashes").at("input").get<std::string>() ||
          artifact_hash(target) != s.at("hashes").at("target").get<std::string>()) {
        fail(ErrorKind::Validation, "dataset file hash mismatch for sample " +
                                        std::to_string(s.at("index").get<std::size_t>()));
      }
    }
    pair.input = read_volume(input);
    pair.target = read_volume(target);
    pair.meta.index = s.at("index").get<std::size_t>();
    pair.meta.seed = s.at("seed").get<std::uint64_t>();
    pair.meta.views_sparse = config.views_sparse;
    pair.meta.views_dense = config.views_dense;
    pair.meta.geometry_hash = manifest.value("geometry_hash", "");
    pairs.push_back(std::move(pair));
  }
  require(!pairs.empty(), "dataset manifest lists no samples");
  return pairs;
}

}  // namespace sparsecbct
