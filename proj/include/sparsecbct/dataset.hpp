#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sparsecbct/geometry.hpp"
#include "sparsecbct/io.hpp"
#include "sparsecbct/phantom.hpp"
#include "sparsecbct/version.hpp"
#include "sparsecbct/volume.hpp"

namespace sparsecbct {

/// Everything that determines a paired dataset.
struct DatasetConfig {
  std::uint64_t seed = 1234;
  std::size_t n_samples = 4;
  std::size_t views_sparse = 50;
  std::size_t views_dense = 180;
  std::uint64_t first_index = 0;  // offset into the per-sample seed stream
  ConeBeamGeometry geometry = make_desk_geometry();
  GridSpec grid;
  PhantomKnobs knobs;

  /// Throws validation errors naming the offending field.
  void validate() const;
};

json to_json(const DatasetConfig& config);
DatasetConfig dataset_config_from_json(const json& j);

struct SampleMeta {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::size_t views_sparse = 0;
  std::size_t views_dense = 0;
  std::string geometry_hash;
};

/// Sparse-view FDK input and dense-view FDK target on the same grid (HU).
struct PairedSample {
  VoxelVolume input;
  VoxelVolume target;
  SampleMeta meta;
};

/// Simulates one pair in memory: phantom -> dense projections -> dense FDK
/// target; uniform subset of the dense views -> sparse FDK input.
PairedSample make_pair(const DatasetConfig& config, std::size_t index);

/// Dense projections plus FDK reconstructions for several subset sizes of the
/// same scan (used by sparsity sweeps).
std::vector<VoxelVolume> reconstruct_view_counts(const VoxelVolume& phantom_hu,
                                                 const ConeBeamGeometry& geom,
                                                 std::size_t views_dense,
                                                 const std::vector<std::size_t>& view_counts);

/// Writes `n_samples` pairs as `sample_NNNN_input.vol` / `sample_NNNN_target.vol`
/// and `manifest.json` into `out_dir`. Returns the manifest.
json make_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

/// Rebuilds a dataset from its manifest into `out_dir`.
json regenerate_dataset(const std::filesystem::path& manifest_path,
                        const std::filesystem::path& out_dir);

/// Loads every pair listed in a manifest, verifying content hashes.
std::vector<PairedSample> load_dataset(const std::filesystem::path& manifest_path);

inline constexpr const char* kDatasetManifestKind = "sparsecbct-dataset";

}  // namespace sparsecbct
