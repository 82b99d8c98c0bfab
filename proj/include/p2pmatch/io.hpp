#pragma once

// Instance files, experiment CSVs, re-aggregation and optional SVG plots.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2pmatch/config.hpp"
#include "p2pmatch/harness.hpp"

namespace p2pmatch {

/// Line 1 "K N", then c, q and eta rows, K rows of u_b and N rows of u_l.
inline void write_instance(std::ostream& out, const MarketInstance& inst) {
  auto row = [&](const auto& values) {
    bool first = true;
    for (double v : values) {
      out << (first ? "" : " ") << format_number(v);
      first = false;
    }
    out << '\n';
  };
  out << inst.num_borrowers << ' ' << inst.num_lenders << '\n';
  row(inst.request);
  row(inst.budget);
  row(inst.rate);
  for (std::size_t b = 0; b < inst.num_borrowers; ++b) row(inst.borrower_utility.row(b));
  for (std::size_t l = 0; l < inst.num_lenders; ++l) row(inst.lender_utility.row(l));
}

inline MarketInstance read_instance(std::istream& in) {
  MarketInstance inst;
  if (!(in >> inst.num_borrowers >> inst.num_lenders)) throw std::invalid_argument("instance: missing header");
  const auto K = inst.num_borrowers;
  const auto N = inst.num_lenders;
  auto read = [&](std::size_t n, const char* what) {
    std::vector<double> v(n);
    for (auto& x : v) {
      std::string token;
      if (!(in >> token)) throw std::invalid_argument(std::string("instance: truncated ") + what);
      x = detail::parse_double(std::string("instance ") + what, token);
    }
    return v;
  };
  inst.request = read(K, "c");
  inst.budget = read(N, "q");
  inst.rate = read(K, "eta");
  inst.borrower_utility = Matrix<double>(K, N);
  for (std::size_t b = 0; b < K; ++b) {
    const auto r = read(N, "u_b");
    std::copy(r.begin(), r.end(), inst.borrower_utility.row(b).begin());
  }
  inst.lender_utility = Matrix<double>(N, K);
  for (std::size_t l = 0; l < N; ++l) {
    const auto r = read(K, "u_l");
    std::copy(r.begin(), r.end(), inst.lender_utility.row(l).begin());
  }
  inst.validate(false);
  return inst;
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

inline const char* funding_name(std::size_t mode) {
  switch (static_cast<FundingMode>(mode)) {
    case FundingMode::kStrict: return "strict";
    case FundingMode::kReachable: return "reachable";
    case FundingMode::kDropped: return "dropped";
  }
  return "?";
}

}  // namespace detail

/// Long-format summary: final per-lender regret and the per-round sum over
/// lenders, each as mean and standard deviation across runs.
/// Algorithms appear in name order.
inline void write_summary(std::ostream& out, const std::vector<std::string>& names,
                          const std::vector<const RegretTrace*>& traces) {
  std::vector<std::size_t> order(names.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return names[a] < names[b]; });
  out << "algorithm,quantity,lender,t,mean,std\n";
  for (std::size_t i : order) {
    const auto& r = *traces[i];
    const auto T = r.mean.cols();
    for (std::size_t l = 0; l < r.mean.rows(); ++l)
      out << names[i] << ",final_regret," << l << ',' << T << ',' << format_number(r.mean(l, T - 1)) << ','
          << format_number(r.stddev(l, T - 1)) << '\n';
    out << names[i] << ",final_regret,sum," << T << ',' << format_number(r.sum_mean[T - 1]) << ','
        << format_number(r.sum_stddev[T - 1]) << '\n';
  }
  for (std::size_t i : order) {
    const auto& r = *traces[i];
    for (std::size_t t = 0; t < r.sum_mean.size(); ++t)
      out << names[i] << ",sum_regret,sum," << t + 1 << ',' << format_number(r.sum_mean[t]) << ','
          << format_number(r.sum_stddev[t]) << '\n';
  }
}

namespace svg {

inline const char* colour(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return palette[i % 10];
}

/// Line chart of several series sharing the x axis 1..n.
inline void lines(std::ostream& out, const std::string& title, const std::vector<std::string>& labels,
                  const std::vector<std::vector<double>>& series) {
  const double W = 720, H = 440, L = 70, R = 170, Tm = 40, B = 50;
  double lo = 0.0, hi = 0.0;
  std::size_t n = 1;
  for (const auto& s : series) {
    n = std::max(n, s.size());
    for (double v : s) lo = std::min(lo, v), hi = std::max(hi, v);
  }
  if (hi == lo) hi = lo + 1.0;
  auto x = [&](std::size_t i) { return L + (W - L - R) * (n > 1 ? double(i) / double(n - 1) : 0.0); };
  auto y = [&](double v) { return Tm + (H - Tm - B) * (hi - v) / (hi - lo); };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n"
      << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << Tm << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << L - 6 << "\" y=\"" << y(hi) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
      << format_number(hi) << "</text>\n"
      << "<text x=\"" << L - 6 << "\" y=\"" << y(lo) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
      << format_number(lo) << "</text>\n"
      << "<text x=\"" << W - R << "\" y=\"" << H - B + 18 << "\" text-anchor=\"end\" font-size=\"11\">t = " << n
      << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    out << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << colour(k) << "\" points=\"";
    // Thin long series to at most ~1000 points.
    const std::size_t step = std::max<std::size_t>(1, series[k].size() / 1000);
    for (std::size_t i = 0; i < series[k].size(); i += step)
      out << x(i) << ',' << y(series[k][i]) << ' ';
    if (!series[k].empty()) out << x(series[k].size() - 1) << ',' << y(series[k].back());
    out << "\"/>\n"
        << "<text x=\"" << W - R + 10 << "\" y=\"" << Tm + 16 * k + 10 << "\" font-size=\"11\" fill=\""
        << colour(k) << "\">" << labels[k] << "</text>\n";
  }
  out << "</svg>\n";
}

/// Lender x borrower grid shaded by count.
inline void heatmap(std::ostream& out, const std::string& title, const Matrix<double>& counts) {
  const double cell = 28, L = 60, Tm = 50;
  const double W = L + cell * double(counts.cols()) + 20, H = Tm + cell * double(counts.rows()) + 20;
  double hi = 0.0;
  for (double v : counts.data()) hi = std::max(hi, v);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" << title << "</text>\n";
  for (std::size_t b = 0; b < counts.cols(); ++b)
    out << "<text x=\"" << L + cell * (double(b) + 0.5) << "\" y=\"" << Tm - 6
        << "\" text-anchor=\"middle\" font-size=\"10\">b" << b << "</text>\n";
  for (std::size_t l = 0; l < counts.rows(); ++l) {
    out << "<text x=\"" << L - 6 << "\" y=\"" << Tm + cell * (double(l) + 0.65)
        << "\" text-anchor=\"end\" font-size=\"10\">l" << l << "</text>\n";
    for (std::size_t b = 0; b < counts.cols(); ++b) {
      const int shade = hi > 0 ? int(255 - 215 * counts(l, b) / hi) : 255;
      out << "<rect x=\"" << L + cell * double(b) << "\" y=\"" << Tm + cell * double(l) << "\" width=\"" << cell
          << "\" height=\"" << cell << "\" fill=\"rgb(" << shade << ',' << shade << ",255)\" stroke=\"#ccc\"/>\n";
    }
  }
  out << "</svg>\n";
}

}  // namespace svg

/// Regret plots per algorithm plus the sum-of-regret comparison.
inline void write_regret_plots(const std::filesystem::path& dir, const std::vector<std::string>& names,
                               const std::vector<const RegretTrace*>& traces) {
  std::vector<std::vector<double>> sums;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& r = *traces[i];
    std::vector<std::string> labels;
    std::vector<std::vector<double>> series;
    for (std::size_t l = 0; l < r.mean.rows(); ++l) {
      labels.push_back("lender " + std::to_string(l));
      series.emplace_back(r.mean.row(l).begin(), r.mean.row(l).end());
    }
    auto out = detail::open_out(dir / ("regret_" + names[i] + ".svg"));
    svg::lines(out, "mean cumulative regret, " + names[i], labels, series);
    sums.push_back(r.sum_mean);
  }
  auto out = detail::open_out(dir / "sum_regret.svg");
  svg::lines(out, "sum of lender regret", names, sums);
}

/// Writes every artifact of a finished experiment. DONE is removed first and
/// written last, so its absence marks partial output.
inline void write_experiment(const std::filesystem::path& dir, const ExperimentConfig& config,
                             const ExperimentResult& result, bool plots = false) {
  std::filesystem::create_directories(dir);
  std::filesystem::remove(dir / "DONE");
  {
    auto out = detail::open_out(dir / "config_echo.ini");
    out << echo_config(config);
  }
  {
    auto out = detail::open_out(dir / "instance.txt");
    write_instance(out, result.instance);
  }
  {
    auto out = detail::open_out(dir / "benchmark.csv");
    out << "lender,b_opt,baseline_borrower,baseline_utility,fallback\n";
    const auto& bm = result.benchmark;
    for (LenderIndex l = 0; l < bm.b_opt.size(); ++l)
      out << l << ',' << (bm.b_opt[l] ? std::to_string(*bm.b_opt[l]) : std::string()) << ','
          << bm.baseline_borrower[l] << ',' << format_number(bm.baseline[l]) << ',' << int(bm.fallback[l]) << '\n';
  }
  const auto N = result.instance.num_lenders;
  const auto K = result.instance.num_borrowers;
  std::vector<std::string> names;
  std::vector<const RegretTrace*> traces;
  for (const auto& a : result.algorithms) {
    names.push_back(a.spec.name);
    traces.push_back(&a.regret);
    {
      auto out = detail::open_out(dir / ("regret_" + a.spec.name + ".csv"));
      out << "run,lender,t,cum_regret\n";
      for (std::size_t run = 0; run < a.regret.per_run.size(); ++run) {
        const auto& r = a.regret.per_run[run];
        for (LenderIndex l = 0; l < N; ++l)
          for (std::size_t t = 0; t < r.cols(); ++t)
            out << run << ',' << l << ',' << t + 1 << ',' << format_number(r(l, t)) << '\n';
      }
    }
    {
      auto out = detail::open_out(dir / ("matches_" + a.spec.name + ".csv"));
      out << "t,lender,borrower,count\n";
      const auto& m = a.matches;
      for (std::size_t t = 1; t <= m.horizon; ++t)
        for (LenderIndex l = 0; l < N; ++l)
          for (BorrowerIndex b = 0; b < K; ++b)
            if (const auto c = m(t, l, b)) out << t << ',' << l << ',' << b << ',' << c << '\n';
    }
    if (a.spec.kind == Algorithm::kGsBlemet || a.spec.kind == Algorithm::kGsBlemetFair) {
      auto out = detail::open_out(dir / ("events_" + a.spec.name + ".csv"));
      out << "run,t,event,lender,borrower,value\n";
      for (std::size_t run = 0; run < a.logs.size(); ++run)
        for (const auto& e : a.logs[run].events) {
          out << run << ',' << e.t << ',' << to_string(e.kind) << ','
              << (e.lender ? std::to_string(*e.lender) : std::string()) << ','
              << (e.borrower ? std::to_string(*e.borrower) : std::string()) << ',';
          if (e.value) {
            if (e.kind == EventKind::kSoftened) out << detail::funding_name(*e.value);
            else out << *e.value;
          }
          out << '\n';
        }
    }
  }
  {
    auto out = detail::open_out(dir / "summary.csv");
    write_summary(out, names, traces);
  }
  if (plots) {
    write_regret_plots(dir, names, traces);
    for (const auto& a : result.algorithms) {
      // Counts over the final tenth of the rounds.
      Matrix<double> counts(N, K, 0.0);
      const auto T = a.matches.horizon;
      for (std::size_t t = T - T / 10; t <= T; ++t)
        for (LenderIndex l = 0; l < N; ++l)
          for (BorrowerIndex b = 0; b < K; ++b) counts(l, b) += a.matches(t, l, b);
      auto out = detail::open_out(dir / ("matches_" + a.spec.name + ".svg"));
      svg::heatmap(out, "matches in the final 10% of rounds, " + a.spec.name, counts);
    }
  }
  detail::open_out(dir / "DONE") << "ok\n";
}

/// Rebuilds traces from regret_<alg>.csv files in `dir`.
inline std::map<std::string, RegretTrace> read_regret_files(const std::filesystem::path& dir) {
  std::map<std::string, RegretTrace> out;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("regret_", 0) == 0 && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    if (line != "run,lender,t,cum_regret") throw std::runtime_error(path.string() + ": unexpected header");
    struct Row {
      std::size_t run, lender, t;
      double v;
    };
    std::vector<Row> rows;
    std::size_t R = 0, N = 0, T = 0;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      std::stringstream s(line);
      std::string a, b, c, d;
      if (!std::getline(s, a, ',') || !std::getline(s, b, ',') || !std::getline(s, c, ',') || !std::getline(s, d))
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed row");
      const std::string where = path.string() + ":" + std::to_string(lineno);
      Row r{detail::parse_unsigned(where, a), detail::parse_unsigned(where, b), detail::parse_unsigned(where, c),
            detail::parse_double(where, d)};
      if (r.t == 0) throw std::runtime_error(where + ": round 0");
      R = std::max(R, r.run + 1);
      N = std::max(N, r.lender + 1);
      T = std::max(T, r.t);
      rows.push_back(r);
    }
    if (rows.size() != R * N * T) throw std::runtime_error(path.string() + ": incomplete table");
    RegretTrace trace;
    trace.per_run.assign(R, Matrix<double>(N, T, 0.0));
    for (const auto& r : rows) trace.per_run[r.run](r.lender, r.t - 1) = r.v;
    aggregate(trace);
    const auto stem = path.stem().string();
    out.emplace(stem.substr(std::string("regret_").size()), std::move(trace));
  }
  return out;
}

}  // namespace p2pmatch
