#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "p2pmatch/market.hpp"
#include "p2pmatch/models.hpp"
#include "p2pmatch/rng.hpp"

namespace p2pmatch {

struct GenerationConfig {
  std::size_t num_borrowers = 20;
  std::size_t num_lenders = 60;
  double c_low = 10.0;
  double c_high = 50.0;
  double q_low = 1.0;
  double q_high = 30.0;
  std::size_t feasibility_retries = 1000;

  void validate() const {
    auto fail = [](const std::string& key, const std::string& why) {
      throw std::invalid_argument("generation." + key + ": " + why);
    };
    if (num_borrowers == 0) fail("num_borrowers", "must be positive");
    if (num_lenders == 0) fail("num_lenders", "must be positive");
    if (num_borrowers > num_lenders) fail("num_borrowers", "must not exceed num_lenders");
    if (!(c_low > 0.0)) fail("c_low", "must be positive");
    if (c_high < c_low) fail("c_high", "must be >= c_low");
    if (!(q_low > 0.0)) fail("q_low", "must be positive");
    if (q_high < q_low) fail("q_high", "must be >= q_low");
    if (feasibility_retries == 0) fail("feasibility_retries", "must be positive");
  }

  friend bool operator==(const GenerationConfig&, const GenerationConfig&) = default;
};

class FeasibilityRetryExhausted : public std::runtime_error {
 public:
  explicit FeasibilityRetryExhausted(std::size_t attempts)
      : std::runtime_error("FeasibilityRetryExhausted: no fundable budget draw after " + std::to_string(attempts) +
                           " attempts") {}
};

/// Draws requests, rates and borrower utilities once, then redraws budgets
/// until total budget covers total request and every borrower can be funded.
inline MarketInstance generate_instance(const GenerationConfig& config, std::uint64_t seed) {
  config.validate();
  const auto K = config.num_borrowers;
  const auto N = config.num_lenders;

  auto uniform = [](RandomStream& rng, double lo, double hi) {
    return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  auto open_unit = [](RandomStream& rng) {
    double v = 0.0;
    while (v == 0.0) v = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    return v;
  };

  MarketInstance inst;
  inst.num_borrowers = K;
  inst.num_lenders = N;
  inst.seed = seed;

  auto requests = derive_stream(seed, 0, StreamPurpose::kInstanceRequests);
  for (std::size_t b = 0; b < K; ++b) inst.request.push_back(uniform(requests, config.c_low, config.c_high));
  auto rates = derive_stream(seed, 0, StreamPurpose::kInstanceRates);
  for (std::size_t b = 0; b < K; ++b) inst.rate.push_back(open_unit(rates));
  auto utilities = derive_stream(seed, 0, StreamPurpose::kInstanceBorrowerUtility);
  inst.borrower_utility = Matrix<double>(K, N);
  for (std::size_t b = 0; b < K; ++b)
    for (std::size_t l = 0; l < N; ++l) inst.borrower_utility(b, l) = open_unit(utilities);

  const double total_request = std::accumulate(inst.request.begin(), inst.request.end(), 0.0);
  auto budgets = derive_stream(seed, 0, StreamPurpose::kInstanceBudgets);
  for (std::size_t attempt = 0; attempt < config.feasibility_retries; ++attempt) {
    inst.budget.clear();
    for (std::size_t l = 0; l < N; ++l) inst.budget.push_back(uniform(budgets, config.q_low, config.q_high));
    if (std::accumulate(inst.budget.begin(), inst.budget.end(), 0.0) < total_request) continue;
    inst.lender_utility = lender_utilities(inst.rate, inst.budget);
    if (!feasibility_check(inst)) continue;
    inst.validate();
    return inst;
  }
  throw FeasibilityRetryExhausted(config.feasibility_retries);
}

}  // namespace p2pmatch
