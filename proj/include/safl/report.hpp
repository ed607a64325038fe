#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "safl/harness.hpp"
#include "safl/stats.hpp"

namespace safl {

// `report` re-derives everything it checks from the files an experiment left
// behind, so the serialization contract is exercised end to end: CSVs are
// reduced again by an independent reader and compared field-for-field with
// the stored summaries before any threshold check runs.

struct ReportCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct Report {
  std::vector<ReportCheck> checks;
  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
  }
};

namespace detail {

inline json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("missing file: " + path.string());
  json j;
  in >> j;
  return j;
}

inline bool json_num_equal(const json& a, double b) {
  return a.is_number() && a.get<double>() == b;
}

// Per-run consistency between the stored summary and the CSV-derived one.
inline void check_run_consistency(Report& rep, const fs::path& cell_dir, const json& cell) {
  for (const auto& js : cell["per_seed"]) {
    const long long seed = js["seed"].get<long long>();
    const fs::path csv = cell_dir / ("seed" + std::to_string(seed) + ".csv");
    if (!fs::exists(csv)) continue;  // learnability cells have no round CSVs
    const ReducedSummary red = reduce_records(read_records_csv(csv));
    bool ok = json_num_equal(js["final_grad_norm_sq"], red.final_grad_norm_sq) &&
              json_num_equal(js["final_loss"], red.final_loss) &&
              json_num_equal(js["min_grad_norm_sq"], red.min_grad_norm_sq) &&
              js["client_rounds"].get<int>() == red.client_rounds &&
              js["server_rounds"].get<int>() == red.server_rounds;
    if (js.contains("tail_mean_grad_norm_sq")) {
      ok = ok && json_num_equal(js["tail_mean_grad_norm_sq"], red.tail_mean_grad_norm_sq);
    }
    if (js["final_dist_sq"].is_null() != !red.final_dist_sq.has_value()) {
      ok = false;
    } else if (!js["final_dist_sq"].is_null()) {
      ok = ok && json_num_equal(js["final_dist_sq"], *red.final_dist_sq);
    }
    rep.checks.push_back(ReportCheck{
        "consistency " + cell_dir.filename().string() + " seed " + std::to_string(seed), ok,
        ok ? "summary matches CSV reduction" : "summary disagrees with CSV reduction"});
  }
}

inline double cell_param(const json& cell, const std::string& key) {
  return cell["params"][key].get<double>();
}

}  // namespace detail

inline Report report_experiment(const fs::path& dir) {
  Report rep;
  const json manifest = detail::load_json(dir / "manifest.json");
  const std::string scenario = manifest["scenario"].get<std::string>();

  std::vector<std::pair<std::string, json>> cells;
  for (const auto& c : manifest["cells"]) {
    const std::string key = c["key"].get<std::string>();
    cells.emplace_back(key, detail::load_json(dir / "cells" / key / "summary.json"));
  }

  for (const auto& [key, cell] : cells) {
    if (cell.contains("per_seed")) detail::check_run_consistency(rep, dir / "cells" / key, cell);
  }

  if (scenario == "sconvex-rate") {
    // Slope of mean ||x_R - x*||^2 vs R across the round cells.
    std::map<double, std::vector<double>> by_rounds;  // rounds -> per-seed final dists
    for (const auto& [key, cell] : cells) {
      const double rounds = detail::cell_param(cell, "rounds");
      for (const auto& js : cell["per_seed"]) {
        by_rounds[rounds].push_back(js["final_dist_sq"].get<double>());
      }
    }
    if (by_rounds.size() >= 3) {
      std::vector<double> xs, ys;
      for (const auto& [r, dists] : by_rounds) {
        xs.push_back(r);
        ys.push_back(mean(dists));
      }
      const LineFit fit = fit_loglog_slope(xs, ys);
      const bool ok = fit.slope >= -1.3 && fit.slope <= -0.7;
      rep.checks.push_back(ReportCheck{"sconvex-rate slope", ok,
                                       "fitted slope " + format_g17(fit.slope) +
                                           ", target [-1.3, -0.7]"});
    } else {
      rep.checks.push_back(
          ReportCheck{"sconvex-rate slope", false, "need >= 3 round cells for a slope fit"});
    }
  } else if (scenario == "nonconvex-rate") {
    std::map<double, std::vector<double>> by_rounds;
    for (const auto& [key, cell] : cells) {
      const double rounds = detail::cell_param(cell, "rounds");
      for (const auto& js : cell["per_seed"]) {
        by_rounds[rounds].push_back(js["min_grad_norm_sq"].get<double>());
      }
    }
    if (by_rounds.size() >= 3) {
      std::vector<double> xs, ys;
      for (const auto& [r, vals] : by_rounds) {
        xs.push_back(r);
        ys.push_back(mean(vals));
      }
      const LineFit fit = fit_loglog_slope(xs, ys);
      const bool ok = fit.slope <= -0.35;
      rep.checks.push_back(ReportCheck{"nonconvex-rate slope", ok,
                                       "fitted slope " + format_g17(fit.slope) + ", target <= -0.35"});
    } else {
      rep.checks.push_back(
          ReportCheck{"nonconvex-rate slope", false, "need >= 3 round cells for a slope fit"});
    }
  } else if (scenario == "fedavg-bias") {
    for (const auto& [key, cell] : cells) {
      const double bias = cell["oracle"]["bias_dist_sq"].get<double>();
      const double m = detail::cell_param(cell, "m");
      const double s = detail::cell_param(cell, "s");
      const double clients = detail::cell_param(cell, "clients");
      if (m >= clients - s) {
        double worst = 0.0;
        for (const auto& js : cell["per_seed"]) {
          worst = std::max(worst, js["dist_to_fixed_point_sq"].get<double>());
        }
        const bool ok = std::sqrt(worst) <= 1e-6;
        rep.checks.push_back(ReportCheck{"fedavg fixed point (" + key + ")", ok,
                                         "max dist to included-center mean " +
                                             format_g17(std::sqrt(worst)) + ", target <= 1e-6"});
      } else {
        const double plateau = cell["aggregate"]["mean_plateau_dist_sq"].get<double>();
        const bool ok = bias > 0.0 && std::abs(plateau / bias - 1.0) <= 0.10;
        rep.checks.push_back(ReportCheck{"fedavg bias plateau (" + key + ")", ok,
                                         "plateau " + format_g17(plateau) + " vs closed form " +
                                             format_g17(bias) + ", target within 10%"});
      }
    }
  } else if (scenario == "speedup") {
    std::map<std::string, std::map<long long, double>> floors;  // mk -> seed -> tail floor
    for (const auto& [key, cell] : cells) {
      const std::string mk = std::to_string(static_cast<int>(detail::cell_param(cell, "m"))) + "x" +
                             std::to_string(static_cast<int>(detail::cell_param(cell, "local_steps")));
      for (const auto& js : cell["per_seed"]) {
        floors[mk][js["seed"].get<long long>()] = js["tail_mean_grad_norm_sq"].get<double>();
      }
    }
    if (floors.count("8x8") && floors.count("2x2")) {
      int wins = 0, n = 0;
      for (const auto& [seed, f88] : floors["8x8"]) {
        if (floors["2x2"].count(seed)) {
          ++n;
          if (f88 < floors["2x2"][seed]) ++wins;
        }
      }
      const double p = sign_test_p_value(wins, n);
      const bool ok = p <= 0.05;
      rep.checks.push_back(ReportCheck{"speedup sign test", ok,
                                       std::to_string(wins) + "/" + std::to_string(n) +
                                           " seeds with lower (8,8) floor, p = " + format_g17(p)});
    } else {
      rep.checks.push_back(ReportCheck{"speedup sign test", false, "need mk=8x8 and mk=2x2 cells"});
    }
  } else if (scenario == "impossibility") {
    std::map<double, std::map<long long, double>> by_omega;  // omega -> n -> failure rate
    for (const auto& [key, cell] : cells) {
      const double omega = detail::cell_param(cell, "omega");
      const long long n = cell["params"]["n"].get<long long>();
      for (const auto& js : cell["per_seed"]) {
        const double lo = js["wilson_lo"].get<double>();
        const double chernoff = js["chernoff_rate"].get<double>();
        rep.checks.push_back(ReportCheck{
            "impossibility wilson lower bound (" + key + ")", lo > 0.05,
            "wilson lower bound " + format_g17(lo) + ", target > 0.05"});
        rep.checks.push_back(ReportCheck{
            "chernoff rare-count rate (" + key + ")", chernoff <= 0.87,
            "measured " + format_g17(chernoff) + ", target <= 0.87"});
        by_omega[omega][n] = js["failure_rate"].get<double>();
      }
    }
    for (const auto& [omega, rates] : by_omega) {
      if (rates.size() < 2) continue;
      const double first = rates.begin()->second;
      const double last = rates.rbegin()->second;
      rep.checks.push_back(ReportCheck{
          "impossibility n-independence (omega=" + format_g17(omega) + ")", last >= first - 1e-9,
          "failure rate " + format_g17(first) + " -> " + format_g17(last) +
              " as n grows, must not decrease"});
    }
  } else if (scenario == "pac") {
    for (const auto& [key, cell] : cells) {
      const double slope = cell["aggregate"]["slope"].get<double>();
      const bool ok = slope >= -1.25 && slope <= -0.75;
      rep.checks.push_back(ReportCheck{"pac rate slope", ok,
                                       "fitted slope " + format_g17(slope) +
                                           ", target [-1.25, -0.75]"});
      bool no_worse = true;
      std::string worst;
      for (const auto& g : cell["grid"]) {
        const double safl = g["mean_excess_safl"].get<double>();
        const double cent = g["mean_excess_centralized"].get<double>();
        if (safl > 1.15 * cent) {
          no_worse = false;
          worst = "n=" + std::to_string(g["n"].get<long long>());
        }
      }
      rep.checks.push_back(ReportCheck{"pac no-worse-than-centralized", no_worse,
                                       no_worse ? "SA-FL <= 1.15 x centralized at every grid point"
                                                : "violated at " + worst});
    }
  } else if (scenario == "positively-related") {
    for (const auto& [key, cell] : cells) {
      const double alpha = cell["aggregate"]["alpha"].get<double>();
      const double beta = cell["aggregate"]["beta"].get<double>();
      const double alpha_cf = cell["aggregate"]["alpha_closed_form"].get<double>();
      const bool ok = std::abs(beta - 1.0) <= 0.01 && std::abs(alpha - alpha_cf) <= 0.01;
      rep.checks.push_back(ReportCheck{"positively-related fit", ok,
                                       "alpha " + format_g17(alpha) + " (closed form " +
                                           format_g17(alpha_cf) + "), beta " + format_g17(beta)});
    }
  } else if (scenario == "mnist-lr") {
    for (const auto& [key, cell] : cells) {
      rep.checks.push_back(ReportCheck{
          "mnist-lr accuracy (" + key + ")", true,
          "mean test accuracy " +
              format_g17(cell["aggregate"]["mean_test_accuracy"].get<double>())});
    }
  }

  return rep;
}

inline void print_report(const Report& rep, std::ostream& out) {
  for (const auto& c : rep.checks) {
    out << (c.passed ? "PASS" : "FAIL") << "  " << c.name << ": " << c.detail << "\n";
  }
  out << (rep.all_passed() ? "all checks passed" : "some checks FAILED") << "\n";
}

}  // namespace safl
