#pragma once

#include <cstddef>
#include <new>
#include <string>
#include <vector>

#include "sparsecbct/volume.hpp"

namespace sparsecbct {

/// 64-byte aligned storage. Vectorized reductions peel differently depending
/// on the base address, so alignment is fixed to keep results reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense [N, C, Z, Y, X] activation tensor, x fastest (same spatial layout as
/// VoxelVolume).
template <typename T>
struct Tensor {
  std::size_t n = 0;
  std::size_t c = 0;
  Dims3 dims;
  AlignedVector<T> data;

  Tensor() = default;
  Tensor(std::size_t batch, std::size_t channels, Dims3 spatial, T fill = T(0))
      : n(batch), c(channels), dims(spatial), data(batch * channels * spatial.count(), fill) {}

  std::size_t spatial() const { return dims.count(); }
  std::size_t size() const { return data.size(); }
  std::size_t sample_size() const { return c * spatial(); }

  T* sample(std::size_t i) { return data.data() + i * sample_size(); }
  const T* sample(std::size_t i) const { return data.data() + i * sample_size(); }
  T* channel(std::size_t i, std::size_t ch) { return sample(i) + ch * spatial(); }
  const T* channel(std::size_t i, std::size_t ch) const { return sample(i) + ch * spatial(); }

  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && dims == o.dims; }
};

/// Name, shape and offset of one array inside a flat parameter vector.
struct ParamInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Ordered registry of named arrays. Registration order is the storage and
/// checkpoint order.
class ParameterLayout {
 public:
  std::size_t add(const std::string& name, std::vector<std::size_t> shape);
  const std::vector<ParamInfo>& entries() const { return entries_; }
  std::size_t total() const { return total_; }
  const ParamInfo& find(const std::string& name) const;

 private:
  std::vector<ParamInfo> entries_;
  std::size_t total_ = 0;
};

}  // namespace sparsecbct
