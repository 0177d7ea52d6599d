#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "sparsecbct/rng.hpp"
#include "sparsecbct/volume.hpp"

namespace testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  static std::atomic<int> counter{0};
  const auto dir = std::filesystem::temp_directory_path() / "sparsecbct_tests" /
                   (name + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline sparsecbct::VoxelVolume random_volume(sparsecbct::Dims3 dims, std::uint64_t seed, double lo,
                                             double hi, sparsecbct::Unit unit = sparsecbct::Unit::HU) {
  sparsecbct::Rng rng(seed);
  auto v = sparsecbct::VoxelVolume::centered(dims, {1.0, 1.0, 1.0}, unit);
  for (float& x : v.values()) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

}  // namespace testing
