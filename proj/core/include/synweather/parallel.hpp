// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>

namespace synweather {

/// Worker-count cap. Reads SYNWEATHER_THREADS once; defaults to the
/// hardware concurrency when unset or invalid.
int max_threads();

/// Splits [begin, end) into contiguous chunks and runs `body(i)` for every
/// index, using at most max_threads() workers. Falls back to a plain loop
/// when the range is small or only one worker is allowed.
void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& body,
                  std::int64_t grain = 1);

}  // namespace synweather
