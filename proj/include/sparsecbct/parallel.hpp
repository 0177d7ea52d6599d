#pragma once

#include <cstddef>

namespace sparsecbct::parallel {

/// True when TOOLKIT_DETERMINISTIC=1 is set or set_deterministic(true) was
/// called. Work partitioning never depends on the thread count, so parallel
/// and serial runs agree; deterministic mode additionally pins everything to
/// one thread.
bool deterministic();
void set_deterministic(bool on);

template <typename Fn>
void for_each(std::size_t n, Fn&& fn) {
  const bool serial = deterministic();
  const long long count = static_cast<long long>(n);
#pragma omp parallel for schedule(static) if (!serial)
  for (long long i = 0; i < count; ++i) fn(static_cast<std::size_t>(i));
}

}  // namespace sparsecbct::parallel
