#include "sparsecbct/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <string_view>

namespace sparsecbct::parallel {
namespace {

bool env_deterministic() {
  const char* value = std::getenv("TOOLKIT_DETERMINISTIC");
  return value != nullptr && std::string_view(value) == "1";
}

std::atomic<bool>& flag() {
  static std::atomic<bool> on{env_deterministic()};
  return on;
}

}  // namespace

bool deterministic() { return flag().load(std::memory_order_relaxed); }

void set_deterministic(bool on) { flag().store(on || env_deterministic()); }

}  // namespace sparsecbct::parallel
