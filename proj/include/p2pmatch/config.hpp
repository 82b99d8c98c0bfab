#pragma once

// Experiment configuration in INI form:
//   [generation] num_borrowers num_lenders c_low c_high q_low q_high feasibility_retries
//   [experiment] algorithms horizon runs seed out_dir threads time_limit snapshot_every
//   [objective]  lambda1 lambda2 lambda3 fair_lambda3_grid omega kappa_mode
//   [bandit]     sigma count_convention upsilon_scope
// Lists are comma separated. Missing keys keep their defaults.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2pmatch/harness.hpp"

namespace p2pmatch {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Shortest text that reads back to the same double.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

inline double parse_double(const std::string& key, const std::string& text) {
  const auto t = trim(text);
  double v = 0.0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size() || !std::isfinite(v))
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  return v;
}

inline std::uint64_t parse_unsigned(const std::string& key, const std::string& text) {
  const auto t = trim(text);
  std::uint64_t v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  return v;
}

}  // namespace detail

inline ExperimentConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  const std::map<std::string, std::set<std::string>> known{
      {"generation", {"num_borrowers", "num_lenders", "c_low", "c_high", "q_low", "q_high", "feasibility_retries"}},
      {"experiment", {"algorithms", "horizon", "runs", "seed", "out_dir", "threads", "time_limit", "snapshot_every"}},
      {"objective", {"lambda1", "lambda2", "lambda3", "fair_lambda3_grid", "omega", "kappa_mode"}},
      {"bandit", {"sigma", "count_convention", "upsilon_scope"}}};
  for (const auto& [section, body] : tree) {
    const auto it = known.find(section);
    if (it == known.end()) throw ConfigError("unknown section [" + section + "]");
    for (const auto& [key, value] : body)
      if (!it->second.count(key)) throw ConfigError(section + "." + key + ": unknown key");
  }

  ExperimentConfig c;
  auto text = [&](const std::string& key) { return tree.get_optional<std::string>(pt::ptree::path_type(key, '.')); };
  auto num = [&](const std::string& key, double& out) {
    if (auto v = text(key)) out = detail::parse_double(key, *v);
  };
  auto count = [&](const std::string& key, auto& out) {
    if (auto v = text(key)) out = static_cast<std::remove_reference_t<decltype(out)>>(detail::parse_unsigned(key, *v));
  };

  count("generation.num_borrowers", c.generation.num_borrowers);
  count("generation.num_lenders", c.generation.num_lenders);
  num("generation.c_low", c.generation.c_low);
  num("generation.c_high", c.generation.c_high);
  num("generation.q_low", c.generation.q_low);
  num("generation.q_high", c.generation.q_high);
  count("generation.feasibility_retries", c.generation.feasibility_retries);

  if (auto v = text("experiment.algorithms")) {
    c.algorithms.clear();
    for (const auto& name : detail::split_list(*v)) {
      const auto a = parse_algorithm(name);
      if (!a) throw ConfigError("experiment.algorithms: unknown algorithm '" + name + "'");
      c.algorithms.push_back(*a);
    }
  }
  count("experiment.horizon", c.horizon);
  count("experiment.runs", c.runs);
  count("experiment.seed", c.seed);
  if (auto v = text("experiment.out_dir")) c.out_dir = detail::trim(*v);
  count("experiment.threads", c.threads);
  num("experiment.time_limit", c.time_limit);
  count("experiment.snapshot_every", c.snapshot_every);

  num("objective.lambda1", c.lambda1);
  num("objective.lambda2", c.lambda2);
  num("objective.lambda3", c.lambda3);
  if (auto v = text("objective.fair_lambda3_grid")) {
    c.fair_lambda3_grid.clear();
    for (const auto& item : detail::split_list(*v))
      c.fair_lambda3_grid.push_back(detail::parse_double("objective.fair_lambda3_grid", item));
  }
  num("objective.omega", c.omega);
  if (auto v = text("objective.kappa_mode")) {
    const auto m = detail::trim(*v);
    if (m == "static") c.kappa_mode = KappaMode::kStatic;
    else if (m == "allocation_dependent") c.kappa_mode = KappaMode::kAllocationDependent;
    else throw ConfigError("objective.kappa_mode: expected static or allocation_dependent, got '" + m + "'");
  }

  num("bandit.sigma", c.sigma);
  if (auto v = text("bandit.count_convention")) {
    const auto m = detail::trim(*v);
    if (m == "alg1") c.count_convention = CountConvention::kAlg1;
    else if (m == "alg2") c.count_convention = CountConvention::kAlg2;
    else if (m == "default") c.count_convention.reset();
    else throw ConfigError("bandit.count_convention: expected default, alg1 or alg2, got '" + m + "'");
  }
  if (auto v = text("bandit.upsilon_scope")) {
    const auto m = detail::trim(*v);
    if (m == "matched") c.upsilon_scope = UpsilonScope::kMatched;
    else if (m == "all") c.upsilon_scope = UpsilonScope::kAll;
    else throw ConfigError("bandit.upsilon_scope: expected matched or all, got '" + m + "'");
  }

  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  return parse_config(in);
}

/// Every resolved parameter, in a form parse_config reads back.
inline std::string echo_config(const ExperimentConfig& c) {
  std::ostringstream out;
  auto list = [](const auto& items, auto fmt) {
    std::string s;
    for (const auto& i : items) s += (s.empty() ? "" : ",") + fmt(i);
    return s;
  };
  out << "[generation]\n"
      << "num_borrowers = " << c.generation.num_borrowers << "\n"
      << "num_lenders = " << c.generation.num_lenders << "\n"
      << "c_low = " << format_number(c.generation.c_low) << "\n"
      << "c_high = " << format_number(c.generation.c_high) << "\n"
      << "q_low = " << format_number(c.generation.q_low) << "\n"
      << "q_high = " << format_number(c.generation.q_high) << "\n"
      << "feasibility_retries = " << c.generation.feasibility_retries << "\n\n"
      << "[experiment]\n"
      << "algorithms = " << list(c.algorithms, [](Algorithm a) { return std::string(to_string(a)); }) << "\n"
      << "horizon = " << c.horizon << "\n"
      << "runs = " << c.runs << "\n"
      << "seed = " << c.seed << "\n"
      << "out_dir = " << c.out_dir << "\n"
      << "threads = " << c.threads << "\n"
      << "time_limit = " << format_number(c.time_limit) << "\n"
      << "snapshot_every = " << c.snapshot_every << "\n\n"
      << "[objective]\n"
      << "lambda1 = " << format_number(c.lambda1) << "\n"
      << "lambda2 = " << format_number(c.lambda2) << "\n"
      << "lambda3 = " << format_number(c.lambda3) << "\n"
      << "fair_lambda3_grid = " << list(c.fair_lambda3_grid, [](double v) { return format_number(v); }) << "\n"
      << "omega = " << format_number(c.omega) << "\n"
      << "kappa_mode = " << (c.kappa_mode == KappaMode::kStatic ? "static" : "allocation_dependent") << "\n\n"
      << "[bandit]\n"
      << "sigma = " << format_number(c.sigma) << "\n"
      << "count_convention = "
      << (!c.count_convention ? "default" : *c.count_convention == CountConvention::kAlg1 ? "alg1" : "alg2") << "\n"
      << "upsilon_scope = " << (c.upsilon_scope == UpsilonScope::kMatched ? "matched" : "all") << "\n";
  return out.str();
}

}  // namespace p2pmatch
