#pragma once

#include <cstdint>
#include <functional>

namespace cryoforge {

/// Worker count: hardware concurrency, capped by CRYOFORGE_THREADS when set.
[[nodiscard]] int worker_count();

/// Runs fn(i) for i in [0, n) over worker_count() threads in contiguous blocks.
/// The first exception thrown by any call is rethrown after all workers finish.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

/// splitmix64 finalizer, used to derive independent per-item seeds.
[[nodiscard]] std::uint64_t splitmix64(std::uint64_t x);

} // namespace cryoforge
