#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace p2pmatch {

using RandomStream = std::mt19937_64;

/// Purpose tags keep streams for different consumers of one run disjoint.
enum class StreamPurpose : std::uint32_t {
  kInstanceRequests = 1,
  kInstanceBudgets = 2,
  kInstanceRates = 3,
  kInstanceBorrowerUtility = 4,
  kRewards = 16,
};

/// Independent stream for (root seed, run index, purpose).
inline RandomStream derive_stream(std::uint64_t root_seed, std::uint64_t run_index,
                                  StreamPurpose purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(root_seed),
                    static_cast<std::uint32_t>(root_seed >> 32),
                    static_cast<std::uint32_t>(run_index),
                    static_cast<std::uint32_t>(run_index >> 32),
                    static_cast<std::uint32_t>(purpose)};
  return RandomStream(seq);
}

}  // namespace p2pmatch
