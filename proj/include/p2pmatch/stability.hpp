#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "p2pmatch/market.hpp"

namespace p2pmatch {

using AgentPair = std::pair<BorrowerIndex, LenderIndex>;

struct StabilityReport {
  std::vector<AgentPair> blocking_pairs;          // pairs meeting the blocking conditions
  std::vector<AgentPair> inequality_violations;   // pairs violating the stability inequality
  bool is_stable = true;

  bool sets_agree() const { return blocking_pairs == inequality_violations; }
};

/// (b, l) blocks z when: z_bl = 0; l is unmatched or prefers b to its current
/// borrower; and b is under-funded (sum of matched budgets < c_b) or prefers l
/// to one of its matched lenders.
inline bool is_blocking_pair(const Matching& z, BorrowerIndex b, LenderIndex l,
                             const MarketInstance& instance, const PreferenceProfile& prefs) {
  if (z.matched(b, l)) return false;

  const auto& current = z.lender_match[l];
  const bool lender_willing = !current || prefs.lender_prefers(l, b, *current);
  if (!lender_willing) return false;

  if (z.funded_amount(instance, b) < instance.request[b]) return true;
  for (LenderIndex other : z.borrower_match[b]) {
    if (prefs.borrower_prefers(b, l, other)) return true;
  }
  return false;
}

/// Left-hand side of the stability inequality for (b, l):
///   c_b z_bl + c_b sum_{l' >_b l} z_bl' + sum_{b' >_l b} q_l z_b'l
inline double stability_lhs(const Matching& z, BorrowerIndex b, LenderIndex l,
                            const MarketInstance& instance, const PreferenceProfile& prefs) {
  const double c = instance.request[b];
  double lhs = z.matched(b, l) ? c : 0.0;
  for (LenderIndex other : z.borrower_match[b]) {
    if (prefs.borrower_prefers(b, other, l)) lhs += c;
  }
  const auto& current = z.lender_match[l];
  if (current && *current != b && prefs.lender_prefers(l, *current, b)) lhs += instance.budget[l];
  return lhs;
}

inline bool inequality_holds(const Matching& z, BorrowerIndex b, LenderIndex l,
                             const MarketInstance& instance, const PreferenceProfile& prefs) {
  return stability_lhs(z, b, l, instance, prefs) >= instance.request[b];
}

/// Evaluates both characterisations on every pair. Agreement of the two sets is
/// checked by callers; this function reports and never asserts.
inline StabilityReport verify_theorem1(const Matching& z, const MarketInstance& instance,
                                       const PreferenceProfile& prefs) {
  StabilityReport report;
  for (BorrowerIndex b = 0; b < instance.num_borrowers; ++b) {
    for (LenderIndex l = 0; l < instance.num_lenders; ++l) {
      if (is_blocking_pair(z, b, l, instance, prefs)) report.blocking_pairs.emplace_back(b, l);
      if (!inequality_holds(z, b, l, instance, prefs)) report.inequality_violations.emplace_back(b, l);
    }
  }
  report.is_stable = report.blocking_pairs.empty();
  return report;
}

}  // namespace p2pmatch
