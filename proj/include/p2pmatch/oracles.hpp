#pragma once

// Brute-force references used by the verification command and the tests.
// They evaluate definitions directly and never go through the IP model.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "p2pmatch/market.hpp"
#include "p2pmatch/stability.hpp"

namespace p2pmatch::oracle {

/// Calls `visit` on every z in {0,1}^{K x N} with at most one borrower per
/// lender; there are (K + 1)^N of them.
inline void for_each_assignment(std::size_t K, std::size_t N, const std::function<void(const Matching&)>& visit) {
  std::vector<std::size_t> digit(N, 0);  // digit K means unmatched
  while (true) {
    Matrix<std::uint8_t> z(K, N, 0);
    for (std::size_t l = 0; l < N; ++l)
      if (digit[l] < K) z(digit[l], l) = 1;
    visit(Matching::from_assignment(std::move(z)));
    std::size_t pos = 0;
    while (pos < N && ++digit[pos] > K) digit[pos++] = 0;
    if (pos == N) break;
  }
}

struct BruteForceResult {
  std::optional<Matching> best;
  double objective = -std::numeric_limits<double>::infinity();
  std::size_t assignments = 0;
};

/// Exhaustive optimum of  lambda1 * sum value(b, l) z_bl - lambda2 * #{(b,l): stability inequality fails}
/// over capacity- and funding-feasible z. Ties go to the lexicographically
/// smaller z (b-major).
inline BruteForceResult best_matching(const MarketInstance& instance, const PreferenceProfile& prefs, double lambda1,
                                      double lambda2, const std::function<double(BorrowerIndex, LenderIndex)>& value) {
  BruteForceResult result;
  const auto K = instance.num_borrowers;
  const auto N = instance.num_lenders;
  for_each_assignment(K, N, [&](const Matching& m) {
    ++result.assignments;
    for (BorrowerIndex b = 0; b < K; ++b)
      if (m.funded_amount(instance, b) < instance.request[b]) return;
    double objective = 0.0;
    for (BorrowerIndex b = 0; b < K; ++b)
      for (LenderIndex l = 0; l < N; ++l)
        if (m.matched(b, l)) objective += lambda1 * value(b, l);
    Matrix<std::uint8_t> w(K, N, 0);
    for (BorrowerIndex b = 0; b < K; ++b)
      for (LenderIndex l = 0; l < N; ++l)
        if (!inequality_holds(m, b, l, instance, prefs)) {
          w(b, l) = 1;
          objective += -lambda2;
        }
    bool take = !result.best || objective > result.objective;
    if (!take && objective == result.objective) take = m.z.data() < result.best->z.data();
    if (take) {
      result.objective = objective;
      result.best = Matching::from_assignment(m.z, std::move(w), objective);
    }
  });
  return result;
}

}  // namespace p2pmatch::oracle
