#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "safl/config.hpp"
#include "safl/errors.hpp"
#include "safl/fedopt.hpp"
#include "safl/idx.hpp"
#include "safl/learnability.hpp"
#include "safl/population.hpp"
#include "safl/stats.hpp"

namespace safl {

inline constexpr const char* kVersion = "0.1.0";

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// CSV round records. Column order is fixed; floats carry 17 significant
// digits so values round-trip exactly.

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_records_csv(const fs::path& path, const std::vector<RoundRecord>& records) {
  std::ofstream out(path, std::ios::binary);  // binary keeps line endings stable
  if (!out) throw data_error("cannot write " + path.string());
  out << "round,kind,grad_norm_sq,dist_sq,loss,n_participants\n";
  for (const auto& r : records) {
    out << r.round << ',' << to_string(r.kind) << ',' << format_g17(r.grad_norm_sq) << ',';
    if (r.dist_sq.has_value()) out << format_g17(*r.dist_sq);
    out << ',' << format_g17(r.loss) << ',' << r.participants.size() << '\n';
  }
}

struct CsvRecord {
  int round = 0;
  std::string kind;
  double grad_norm_sq = 0.0;
  std::optional<double> dist_sq;
  double loss = 0.0;
  int n_participants = 0;
};

inline std::vector<CsvRecord> read_records_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "round,kind,grad_norm_sq,dist_sq,loss,n_participants") {
    throw data_error("bad CSV header in " + path.string());
  }
  std::vector<CsvRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        cols.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    cols.push_back(cur);
    if (cols.size() != 6) throw data_error("bad CSV row in " + path.string() + ": " + line);
    CsvRecord r;
    r.round = std::stoi(cols[0]);
    r.kind = cols[1];
    r.grad_norm_sq = std::stod(cols[2]);
    if (!cols[3].empty()) r.dist_sq = std::stod(cols[3]);
    r.loss = std::stod(cols[4]);
    r.n_participants = std::stoi(cols[5]);
    out.push_back(std::move(r));
  }
  if (out.empty()) throw data_error("empty CSV " + path.string());
  return out;
}

// Independent reducer: rebuilds the record-derived summary fields from a CSV.
struct ReducedSummary {
  double final_grad_norm_sq = 0.0;
  std::optional<double> final_dist_sq;
  double final_loss = 0.0;
  double min_grad_norm_sq = 0.0;
  int client_rounds = 0;
  int server_rounds = 0;
  std::optional<double> rs_rc_ratio;
  std::optional<double> g1;
  double tail_mean_grad_norm_sq = 0.0;  // mean over the last half of the rounds
  double plateau_dist_sq = 0.0;         // mean dist_sq over the last quarter
};

inline ReducedSummary reduce_records(const std::vector<CsvRecord>& records) {
  ReducedSummary s;
  s.min_grad_norm_sq = std::numeric_limits<double>::infinity();
  int rounds = 0;
  for (const auto& r : records) {
    if (r.kind == "client") ++s.client_rounds;
    if (r.kind == "server") ++s.server_rounds;
    if (r.kind != "final") ++rounds;
    s.min_grad_norm_sq = std::min(s.min_grad_norm_sq, r.grad_norm_sq);
    if (r.kind == "server") {
      s.g1 = s.g1 ? std::max(*s.g1, r.grad_norm_sq) : r.grad_norm_sq;
    }
  }
  const auto& last = records.back();
  if (last.kind != "final") throw data_error("CSV does not end with a final record");
  s.final_grad_norm_sq = last.grad_norm_sq;
  s.final_dist_sq = last.dist_sq;
  s.final_loss = last.loss;
  if (s.client_rounds > 0) {
    s.rs_rc_ratio = static_cast<double>(s.server_rounds) / s.client_rounds;
  }
  double tail_sum = 0.0;
  int tail_n = 0;
  double plat_sum = 0.0;
  int plat_n = 0;
  for (const auto& r : records) {
    if (r.kind == "final") continue;
    if (r.round >= rounds / 2) {
      tail_sum += r.grad_norm_sq;
      ++tail_n;
    }
    if (r.round >= (3 * rounds) / 4 && r.dist_sq.has_value()) {
      plat_sum += *r.dist_sq;
      ++plat_n;
    }
  }
  s.tail_mean_grad_norm_sq = tail_n > 0 ? tail_sum / tail_n : 0.0;
  s.plateau_dist_sq = plat_n > 0 ? plat_sum / plat_n : 0.0;
  return s;
}

// ---------------------------------------------------------------------------
// Scenario registry and config schemas

enum class Scenario {
  sconvex_rate,
  nonconvex_rate,
  fedavg_bias,
  speedup,
  mnist_lr,
  impossibility,
  pac,
  positively_related,
};

inline Scenario scenario_from_string(const std::string& name) {
  if (name == "sconvex-rate") return Scenario::sconvex_rate;
  if (name == "nonconvex-rate") return Scenario::nonconvex_rate;
  if (name == "fedavg-bias") return Scenario::fedavg_bias;
  if (name == "speedup") return Scenario::speedup;
  if (name == "mnist-lr") return Scenario::mnist_lr;
  if (name == "impossibility") return Scenario::impossibility;
  if (name == "pac") return Scenario::pac;
  if (name == "positively-related") return Scenario::positively_related;
  throw config_error("unknown scenario: " + name);
}

inline const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::sconvex_rate: return "sconvex-rate";
    case Scenario::nonconvex_rate: return "nonconvex-rate";
    case Scenario::fedavg_bias: return "fedavg-bias";
    case Scenario::speedup: return "speedup";
    case Scenario::mnist_lr: return "mnist-lr";
    case Scenario::impossibility: return "impossibility";
    case Scenario::pac: return "pac";
    case Scenario::positively_related: return "positively-related";
  }
  return "?";
}

namespace detail {

struct ScenarioSchema {
  std::set<std::string> allowed;                            // "section.key"
  std::vector<std::pair<std::string, std::string>> axes;    // sweepable keys, in cell-key order
};

inline const ScenarioSchema& schema_for(Scenario s) {
  static const std::set<std::string> quad_common = {
      "scenario.name",        "population.clients",  "population.dim",
      "population.spread",    "population.hessian",  "population.sigma",
      "population.center_distance", "population.seed",
      "participation.kind",   "participation.m",     "participation.s",
      "algorithm.q",          "algorithm.local_steps", "algorithm.rounds",
      "algorithm.eta_s",      "algorithm.eta_c",     "algorithm.couple_steps",
      "algorithm.eta_scale",  "algorithm.eta_cap",   "algorithm.variant",
      "server.sigma",         "server.shift",
      "run.seeds",            "diagnostics.collect", "diagnostics.rs_rc_min",
      "diagnostics.rs_rc_max"};
  static const std::map<Scenario, ScenarioSchema> table = [] {
    std::map<Scenario, ScenarioSchema> t;
    {
      ScenarioSchema s1;
      s1.allowed = quad_common;
      s1.axes = {{"algorithm", "rounds"}, {"algorithm", "q"}, {"participation", "s"}};
      t[Scenario::sconvex_rate] = s1;
      t[Scenario::fedavg_bias] = ScenarioSchema{quad_common, {{"participation", "m"}}};
    }
    {
      ScenarioSchema s2;
      s2.allowed = {"scenario.name",      "population.clients", "population.hidden",
                    "population.samples", "population.blob_noise", "population.batch",
                    "population.seed",    "population.init_std",
                    "participation.m",    "algorithm.q",        "algorithm.local_steps",
                    "algorithm.rounds",   "algorithm.eta_cap",  "algorithm.mk",
                    "server.batch",       "run.seeds",          "diagnostics.collect"};
      s2.axes = {{"algorithm", "rounds"}, {"algorithm", "q"}};
      t[Scenario::nonconvex_rate] = s2;
      ScenarioSchema s3 = s2;
      s3.axes = {{"algorithm", "mk"}};
      t[Scenario::speedup] = s3;
    }
    {
      ScenarioSchema s4;
      s4.allowed = {"scenario.name",    "data.train_images", "data.train_labels",
                    "data.test_images", "data.test_labels",  "data.p",
                    "population.l2",    "population.batch",  "participation.m",
                    "participation.s",  "algorithm.q",       "algorithm.eta_c",
                    "algorithm.eta_s",  "algorithm.rounds",  "algorithm.local_epochs",
                    "server.n_t",       "server.batch",      "run.seeds"};
      s4.axes = {{"data", "p"}, {"participation", "s"}, {"algorithm", "q"}, {"server", "n_t"}};
      t[Scenario::mnist_lr] = s4;
    }
    {
      ScenarioSchema s5;
      s5.allowed = {"scenario.name", "instance.omega", "instance.n", "instance.clients",
                    "instance.trials", "run.seeds"};
      s5.axes = {{"instance", "omega"}, {"instance", "n"}};
      t[Scenario::impossibility] = s5;
    }
    {
      ScenarioSchema s6;
      s6.allowed = {"scenario.name", "instance.a",       "instance.b",      "instance.a_inner",
                    "instance.b_inner", "instance.t_star", "instance.n_grid", "instance.n_t_fraction",
                    "instance.trials", "run.seeds"};
      t[Scenario::pac] = s6;
    }
    {
      ScenarioSchema s7;
      s7.allowed = {"scenario.name", "instance.a", "instance.b", "instance.a_inner",
                    "instance.b_inner", "instance.t_star", "instance.lambda_d",
                    "instance.grid_points", "run.seeds"};
      t[Scenario::positively_related] = s7;
    }
    return t;
  }();
  return table.at(s);
}

}  // namespace detail

inline void validate_config(const Config& cfg) {
  const Scenario scenario = scenario_from_string(cfg.get_string("scenario", "name"));
  const auto& schema = detail::schema_for(scenario);
  for (const auto& [section, entries] : cfg.sections()) {
    for (const auto& [key, value] : entries) {
      const std::string full = section + "." + key;
      if (schema.allowed.count(full) == 0) {
        throw config_error("unknown config key for scenario " +
                           std::string(to_string(scenario)) + ": " + full);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Quadratic scenario construction

namespace detail {

struct QuadParts {
  PopulationSpec pop;
  ParticipationProcess proc;
  ServerObjective server;
  SafariConfig algo;
};

inline SafariConfig algo_from_config(const Config& c, int rounds) {
  SafariConfig a;
  a.q = c.get_double_or("algorithm", "q", 0.5);
  a.local_steps = static_cast<int>(c.get_int_or("algorithm", "local_steps", 5));
  a.rounds = rounds;
  a.couple_steps = c.get_bool_or("algorithm", "couple_steps", true);
  const std::string eta_s = c.get_string_or("algorithm", "eta_s", "log");
  const double cap = c.get_double_or("algorithm", "eta_cap", 0.5);
  if (eta_s == "log") {
    // eta_s ~ log(R)/R, the schedule the strongly convex runs need.
    const double scale = c.get_double_or("algorithm", "eta_scale", 2.0);
    a.eta_s = std::min(cap, scale * std::log(static_cast<double>(rounds)) / rounds);
  } else if (eta_s == "inv_sqrt") {
    a.eta_s = std::min(cap, 1.0 / std::sqrt(static_cast<double>(rounds)));
  } else {
    a.eta_s = c.get_double("algorithm", "eta_s");
  }
  if (c.has("algorithm", "eta_c")) {
    a.eta_c = c.get_double("algorithm", "eta_c");
  }
  if (c.has("diagnostics", "collect")) {
    a.collect_client_diagnostics = c.get_bool_or("diagnostics", "collect", true);
  }
  if (c.has("diagnostics", "rs_rc_min")) a.rs_rc_min = c.get_double("diagnostics", "rs_rc_min");
  if (c.has("diagnostics", "rs_rc_max")) a.rs_rc_max = c.get_double("diagnostics", "rs_rc_max");
  return a;
}

inline QuadParts build_quadratic_parts(const Config& c) {
  const int clients = static_cast<int>(c.get_int_or("population", "clients", 10));
  const int dim = static_cast<int>(c.get_int_or("population", "dim", 10));
  const double spread = c.get_double_or("population", "spread", 1.0);
  const double h = c.get_double_or("population", "hessian", 1.0);
  const double sigma = c.get_double_or("population", "sigma", 0.1);
  const double center_distance = c.get_double_or("population", "center_distance", 2.0);
  const std::uint64_t pop_seed = static_cast<std::uint64_t>(c.get_int_or("population", "seed", 1));

  Vec base(static_cast<std::size_t>(dim), center_distance / std::sqrt(static_cast<double>(dim)));
  QuadParts parts{
      make_quadratic_population(clients, dim, spread, Vec(static_cast<std::size_t>(dim), h), sigma,
                                pop_seed, base),
      ParticipationProcess::full(),
      ServerObjective{Objective(QuadraticObjective::isotropic(1.0, Vec(1, 0.0), 0.0)), 0},
      SafariConfig{}};

  const std::string kind = c.get_string_or("participation", "kind", "excluded");
  const int m = static_cast<int>(c.get_int_or("participation", "m", 5));
  const int s = static_cast<int>(c.get_int_or("participation", "s", 0));
  if (kind == "full") {
    parts.proc = ParticipationProcess::full();
  } else if (kind == "uniform" || s == 0) {
    parts.proc = ParticipationProcess::uniform(m);
  } else {
    parts.proc = ParticipationProcess::excluded(s, m);
  }

  parts.server = make_quadratic_server(
      parts.pop, c.get_double_or("server", "sigma", sigma),
      c.has("server", "shift")
          ? Vec(static_cast<std::size_t>(dim),
                c.get_double("server", "shift") / std::sqrt(static_cast<double>(dim)))
          : Vec{});
  parts.algo = algo_from_config(c, static_cast<int>(c.get_int_or("algorithm", "rounds", 1024)));
  return parts;
}

inline json qbound_to_json(const QBound& b) {
  return json{{"q_max", b.q_max}, {"status", to_string(b.status)}};
}

inline json summary_to_json(int seed, const RunResult& res) {
  json j;
  j["seed"] = seed;
  j["status"] = res.status == RunStatus::ok ? "ok" : "diverged";
  j["final_grad_norm_sq"] = res.summary.final_grad_norm_sq;
  j["final_dist_sq"] =
      res.summary.final_dist_sq.has_value() ? json(*res.summary.final_dist_sq) : json(nullptr);
  j["final_loss"] = res.summary.final_loss;
  j["min_grad_norm_sq"] = res.summary.min_grad_norm_sq;
  j["client_rounds"] = res.summary.client_rounds;
  j["server_rounds"] = res.summary.server_rounds;
  j["rs_rc_ratio"] =
      res.summary.rs_rc_ratio.has_value() ? json(*res.summary.rs_rc_ratio) : json(nullptr);
  j["rs_rc_warning"] = res.summary.rs_rc_warning;
  if (res.summary.diagnostics.has_g1) j["g1"] = res.summary.diagnostics.g1;
  if (res.summary.diagnostics.has_g2) j["g2"] = res.summary.diagnostics.g2;
  if (!res.summary.diagnostics.g4.empty()) j["g4_final"] = res.summary.diagnostics.g4.back();
  if (res.summary.test_accuracy.has_value()) j["test_accuracy"] = *res.summary.test_accuracy;
  return j;
}

inline double mean_of(const std::vector<double>& v) { return v.empty() ? 0.0 : mean(v); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Cell runners. Each writes one CSV per run plus a summary.json and returns
// the summary for the manifest.

namespace detail {

inline json run_quadratic_cell(Scenario scenario, const Config& c, const fs::path& dir,
                               const std::vector<long long>& seeds) {
  QuadParts parts = build_quadratic_parts(c);
  fs::create_directories(dir);
  const std::string variant = c.get_string_or("algorithm", "variant",
                                              scenario == Scenario::fedavg_bias ? "fedavg" : "safari");
  json per_seed = json::array();
  std::vector<double> final_dists, plateaus, tails;
  bool any_diverged = false;

  // Closed-form oracles for the bias experiments.
  std::vector<int> included;
  const int total = parts.pop.size();
  const int excluded = parts.proc.kind == ParticipationKind::excluded ? parts.proc.excluded_count : 0;
  for (int i = 0; i < total - excluded; ++i) included.push_back(i);
  const Vec fixed_point = fedavg_fixed_point(parts.pop, included);
  const double oracle_bias_sq = squared_distance(fixed_point, *parts.pop.global_optimum);

  for (long long seed : seeds) {
    SafariConfig cfg = parts.algo;
    cfg.seed = static_cast<std::uint64_t>(seed);
    RunResult res;
    if (variant == "fedavg") {
      res = run_fedavg(parts.pop, parts.proc, cfg);
    } else if (variant == "centralized") {
      res = run_centralized(parts.pop, parts.server, cfg);
    } else {
      res = run_safari(parts.pop, parts.proc, parts.server, cfg);
    }
    any_diverged = any_diverged || res.status == RunStatus::diverged;
    if (res.summary.rs_rc_warning) {
      std::cerr << "warning: seed " << seed << ": realized R_s/R_c "
                << (res.summary.rs_rc_ratio ? format_g17(*res.summary.rs_rc_ratio) : "inf")
                << " outside the configured admissible band\n";
    }
    write_records_csv(dir / ("seed" + std::to_string(seed) + ".csv"), res.records);

    json js = summary_to_json(static_cast<int>(seed), res);
    // Tail/plateau metrics mirror what the independent reducer rebuilds.
    std::vector<CsvRecord> as_csv;
    for (const auto& r : res.records) {
      as_csv.push_back(CsvRecord{r.round, to_string(r.kind), r.grad_norm_sq, r.dist_sq, r.loss,
                                 static_cast<int>(r.participants.size())});
    }
    const ReducedSummary red = reduce_records(as_csv);
    js["tail_mean_grad_norm_sq"] = red.tail_mean_grad_norm_sq;
    js["plateau_dist_sq"] = red.plateau_dist_sq;
    js["dist_to_fixed_point_sq"] = squared_distance(res.final_point, fixed_point);
    if (res.summary.diagnostics.has_g1 && res.summary.diagnostics.has_g2 &&
        parts.pop.sigma_g.has_value() && parts.pop.constants.lipschitz.has_value() &&
        *parts.pop.constants.lipschitz * cfg.eta_s < 1.0) {
      js["q_bound_nonconvex"] = qbound_to_json(q_bound_nonconvex(
          *parts.pop.sigma_g * *parts.pop.sigma_g, res.summary.diagnostics.g1,
          res.summary.diagnostics.g2, cfg.local_steps, *parts.pop.constants.lipschitz, cfg.eta_s));
    }
    if (!res.summary.diagnostics.g4.empty() && parts.pop.constants.lipschitz.has_value() &&
        parts.pop.constants.strong_convexity.has_value()) {
      const double L = *parts.pop.constants.lipschitz;
      const double mu = *parts.pop.constants.strong_convexity;
      const double eta_bar = 2.0 * cfg.eta_s * L * mu / (L + mu);
      js["q_bound_strongly_convex"] = qbound_to_json(q_bound_strongly_convex(
          res.summary.final_grad_norm_sq, res.summary.diagnostics.g4.back(), L, mu, eta_bar));
    }
    per_seed.push_back(js);
    if (res.summary.final_dist_sq.has_value()) final_dists.push_back(*res.summary.final_dist_sq);
    plateaus.push_back(red.plateau_dist_sq);
    tails.push_back(red.tail_mean_grad_norm_sq);
  }

  json cell;
  cell["config_hash"] = c.hash_hex();
  cell["scenario"] = to_string(scenario);
  cell["params"] = {{"rounds", parts.algo.rounds},
                    {"q", parts.algo.q},
                    {"eta_s", parts.algo.eta_s},
                    {"eta_c", parts.algo.effective_eta_c()},
                    {"local_steps", parts.algo.local_steps},
                    {"m", parts.proc.kind == ParticipationKind::full ? parts.pop.size()
                                                                     : parts.proc.sample_count},
                    {"s", excluded},
                    {"clients", parts.pop.size()},
                    {"variant", variant}};
  cell["oracle"] = {{"bias_dist_sq", oracle_bias_sq},
                    {"sigma_g", *parts.pop.sigma_g},
                    {"fixed_point_norm", norm(fixed_point)}};
  cell["per_seed"] = per_seed;
  cell["aggregate"] = {{"mean_final_dist_sq", detail::mean_of(final_dists)},
                       {"mean_plateau_dist_sq", detail::mean_of(plateaus)},
                       {"mean_tail_grad_norm_sq", detail::mean_of(tails)},
                       {"diverged", any_diverged}};
  return cell;
}

inline ServerObjective make_pooled_mlp_server(const PopulationSpec& pop, int hidden,
                                              int batch_size) {
  DataMatrix pooled;
  pooled.feature_dim = 2;
  pooled.classes = 2;
  for (const auto& client : pop.clients) {
    const DataMatrix& d = client.objective.as_mlp()->data();
    pooled.features.insert(pooled.features.end(), d.features.begin(), d.features.end());
    pooled.labels.insert(pooled.labels.end(), d.labels.begin(), d.labels.end());
    pooled.count += d.count;
  }
  const int n_t = pooled.count;
  return ServerObjective{
      Objective(MlpObjective({2, hidden, 2}, Activation::tanh, std::move(pooled), batch_size)),
      n_t};
}

inline json run_mlp_cell(Scenario scenario, const Config& c, const fs::path& dir,
                         const std::vector<long long>& seeds) {
  const int clients = static_cast<int>(c.get_int_or("population", "clients", 10));
  const int hidden = static_cast<int>(c.get_int_or("population", "hidden", 16));
  const int samples = static_cast<int>(c.get_int_or("population", "samples", 64));
  const double blob_noise = c.get_double_or("population", "blob_noise", 0.8);
  const int batch = static_cast<int>(c.get_int_or("population", "batch", 8));
  const std::uint64_t pop_seed = static_cast<std::uint64_t>(c.get_int_or("population", "seed", 1));
  const double init_std = c.get_double_or("population", "init_std", 0.5);

  int m = static_cast<int>(c.get_int_or("participation", "m", 5));
  int local_steps = static_cast<int>(c.get_int_or("algorithm", "local_steps", 5));
  double q = c.get_double_or("algorithm", "q", 0.8);
  if (scenario == Scenario::speedup) {
    const std::string mk = c.get_string("algorithm", "mk");
    const auto x = mk.find('x');
    if (x == std::string::npos) throw config_error("algorithm.mk must look like 8x8");
    m = std::stoi(mk.substr(0, x));
    local_steps = std::stoi(mk.substr(x + 1));
    q = 1.0 - 1.0 / (static_cast<double>(m) * local_steps);  // the linear-speedup coupling
  }
  const int rounds = static_cast<int>(c.get_int_or("algorithm", "rounds", 1024));

  PopulationSpec pop = make_mlp_blob_population(clients, hidden, samples, blob_noise, batch, pop_seed);
  ServerObjective server =
      make_pooled_mlp_server(pop, hidden, static_cast<int>(c.get_int_or("server", "batch", 8)));
  fs::create_directories(dir);

  SafariConfig cfg;
  cfg.q = q;
  cfg.local_steps = local_steps;
  cfg.rounds = rounds;
  cfg.couple_steps = true;
  cfg.eta_s = std::min(c.get_double_or("algorithm", "eta_cap", 0.5),
                       1.0 / std::sqrt(static_cast<double>(rounds)));
  cfg.collect_client_diagnostics = c.get_bool_or("diagnostics", "collect", false);

  // Model init is shared across seeds so rate fits compare like with like.
  RngStream init_rng(pop_seed, StreamPurpose::init);
  const Vec x0 = pop.clients.front().objective.as_mlp()->init_point(init_rng, init_std);

  json per_seed = json::array();
  std::vector<double> min_grads, tails;
  bool any_diverged = false;
  for (long long seed : seeds) {
    SafariConfig run_cfg = cfg;
    run_cfg.seed = static_cast<std::uint64_t>(seed);
    run_cfg.x0 = x0;
    RunResult res = run_safari(pop, ParticipationProcess::uniform(m), server, run_cfg);
    any_diverged = any_diverged || res.status == RunStatus::diverged;
    write_records_csv(dir / ("seed" + std::to_string(seed) + ".csv"), res.records);
    json js = summary_to_json(static_cast<int>(seed), res);
    std::vector<CsvRecord> as_csv;
    for (const auto& r : res.records) {
      as_csv.push_back(CsvRecord{r.round, to_string(r.kind), r.grad_norm_sq, r.dist_sq, r.loss,
                                 static_cast<int>(r.participants.size())});
    }
    const ReducedSummary red = reduce_records(as_csv);
    js["tail_mean_grad_norm_sq"] = red.tail_mean_grad_norm_sq;
    per_seed.push_back(js);
    min_grads.push_back(res.summary.min_grad_norm_sq);
    tails.push_back(red.tail_mean_grad_norm_sq);
  }

  json cell;
  cell["config_hash"] = c.hash_hex();
  cell["scenario"] = to_string(scenario);
  cell["params"] = {{"rounds", rounds}, {"q", q},          {"m", m},
                    {"local_steps", local_steps}, {"eta_s", cfg.eta_s}, {"clients", clients}};
  cell["per_seed"] = per_seed;
  cell["aggregate"] = {{"mean_min_grad_norm_sq", detail::mean_of(min_grads)},
                       {"mean_tail_grad_norm_sq", detail::mean_of(tails)},
                       {"diverged", any_diverged}};
  return cell;
}

inline double logistic_accuracy(const DataMatrix& data, const Vec& model) {
  long long hits = 0;
  for (int i = 0; i < data.count; ++i) {
    const double* row = data.row(i);
    int best = 0;
    double best_z = -std::numeric_limits<double>::infinity();
    for (int cls = 0; cls < data.classes; ++cls) {
      const double* w = model.data() + static_cast<std::size_t>(cls) * data.feature_dim;
      double z = 0.0;
      for (int j = 0; j < data.feature_dim; ++j) z += w[j] * row[j];
      if (z > best_z) {
        best_z = z;
        best = cls;
      }
    }
    if (best == data.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / data.count;
}

inline json run_mnist_cell(const Config& c, const fs::path& dir,
                           const std::vector<long long>& seeds) {
  const DataMatrix train = load_mnist_idx(c.get_string("data", "train_images"),
                                          c.get_string("data", "train_labels"));
  const DataMatrix test = load_mnist_idx(c.get_string("data", "test_images"),
                                         c.get_string("data", "test_labels"));
  const int p = static_cast<int>(c.get_int_or("data", "p", 1));
  const int clients = 10;
  const int m = static_cast<int>(c.get_int_or("participation", "m", 5));
  const int s = static_cast<int>(c.get_int_or("participation", "s", 0));
  const double l2 = c.get_double_or("population", "l2", 0.0);
  const int batch = static_cast<int>(c.get_int_or("population", "batch", 64));
  const int server_batch = static_cast<int>(c.get_int_or("server", "batch", 64));
  const long long n_t = c.get_int_or("server", "n_t", 1000);
  const double q = c.get_double_or("algorithm", "q", 0.8);
  const int rounds = static_cast<int>(c.get_int_or("algorithm", "rounds", 150));
  const int local_epochs = static_cast<int>(c.get_int_or("algorithm", "local_epochs", 1));
  fs::create_directories(dir);

  json per_seed = json::array();
  std::vector<double> accs;
  for (long long seed : seeds) {
    RngStream part_rng(static_cast<std::uint64_t>(seed), StreamPurpose::data, 10);
    const auto assignment = label_partition(train.labels, p, clients, part_rng);

    PopulationSpec pop;
    pop.dim = train.classes * train.feature_dim;
    int min_client_n = train.count;
    for (int i = 0; i < clients; ++i) {
      DataMatrix slice;
      slice.feature_dim = train.feature_dim;
      slice.classes = train.classes;
      slice.count = static_cast<int>(assignment[static_cast<std::size_t>(i)].size());
      if (slice.count == 0) throw data_error("label partition produced an empty client");
      min_client_n = std::min(min_client_n, slice.count);
      slice.features.reserve(static_cast<std::size_t>(slice.count) * slice.feature_dim);
      for (int idx : assignment[static_cast<std::size_t>(i)]) {
        const double* row = train.row(idx);
        slice.features.insert(slice.features.end(), row, row + slice.feature_dim);
        slice.labels.push_back(train.labels[static_cast<std::size_t>(idx)]);
      }
      const int slice_count = slice.count;
      pop.clients.push_back(ClientSpec{i, Objective(LogisticObjective(std::move(slice), l2, batch)),
                                       1.0 / clients, slice_count});
    }
    pop.validate();

    // Auxiliary dataset T: n_t samples drawn uniformly from the train pool.
    RngStream aux_rng(static_cast<std::uint64_t>(seed), StreamPurpose::data, 11);
    const auto aux_idx = aux_rng.sample_distinct(train.count, static_cast<int>(n_t));
    DataMatrix aux;
    aux.feature_dim = train.feature_dim;
    aux.classes = train.classes;
    aux.count = static_cast<int>(aux_idx.size());
    for (int idx : aux_idx) {
      const double* row = train.row(idx);
      aux.features.insert(aux.features.end(), row, row + aux.feature_dim);
      aux.labels.push_back(train.labels[static_cast<std::size_t>(idx)]);
    }
    ServerObjective server{Objective(LogisticObjective(std::move(aux), l2, server_batch)),
                           static_cast<int>(n_t)};

    SafariConfig cfg;
    cfg.q = q;
    cfg.eta_c = c.get_double_or("algorithm", "eta_c", 0.1);
    cfg.eta_s = c.get_double_or("algorithm", "eta_s", 0.1);
    cfg.local_steps = local_epochs * ((min_client_n + batch - 1) / batch);
    cfg.rounds = rounds;
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.collect_client_diagnostics = false;

    RunResult res = run_safari(pop, s > 0 ? ParticipationProcess::excluded(s, m)
                                          : ParticipationProcess::uniform(m),
                               server, cfg);
    res.summary.test_accuracy = logistic_accuracy(test, res.final_point);
    write_records_csv(dir / ("seed" + std::to_string(seed) + ".csv"), res.records);
    json js = summary_to_json(static_cast<int>(seed), res);
    js["test_accuracy"] = *res.summary.test_accuracy;
    per_seed.push_back(js);
    accs.push_back(*res.summary.test_accuracy);
  }

  json cell;
  cell["config_hash"] = c.hash_hex();
  cell["scenario"] = "mnist-lr";
  cell["params"] = {{"p", p}, {"s", s}, {"q", q}, {"n_t", n_t}, {"rounds", rounds}};
  cell["per_seed"] = per_seed;
  cell["aggregate"] = {{"mean_test_accuracy", detail::mean_of(accs)}};
  return cell;
}

inline json run_impossibility_cell(const Config& c, const fs::path& dir,
                                   const std::vector<long long>& seeds) {
  ImpossibilityInstance inst;
  inst.omega = c.get_double("instance", "omega");
  inst.samples_per_client = static_cast<int>(c.get_int("instance", "n"));
  inst.clients = static_cast<int>(c.get_int_or("instance", "clients", 10));
  inst.trials = static_cast<int>(c.get_int_or("instance", "trials", 10000));
  fs::create_directories(dir);

  json per_seed = json::array();
  std::vector<double> rates;
  for (long long seed : seeds) {
    const ImpossibilityResult res = impossibility_failure_rate(inst, static_cast<std::uint64_t>(seed));
    std::ofstream out(dir / ("trials_seed" + std::to_string(seed) + ".csv"), std::ios::binary);
    out << "trial,risk\n";
    for (std::size_t t = 0; t < res.risks.size(); ++t) {
      out << t << ',' << format_g17(res.risks[t]) << '\n';
    }
    per_seed.push_back(json{{"seed", seed},
                            {"failure_rate", res.failure_rate},
                            {"wilson_lo", res.wilson.lo},
                            {"wilson_hi", res.wilson.hi},
                            {"mean_risk", res.mean_risk},
                            {"chernoff_rate", res.chernoff_rate},
                            {"trials", res.trials}});
    rates.push_back(res.failure_rate);
  }
  json cell;
  cell["config_hash"] = c.hash_hex();
  cell["scenario"] = "impossibility";
  cell["params"] = {{"omega", inst.omega},
                    {"n", inst.samples_per_client},
                    {"clients", inst.clients},
                    {"trials", inst.trials},
                    {"epsilon", inst.epsilon()}};
  cell["per_seed"] = per_seed;
  cell["aggregate"] = {{"mean_failure_rate", detail::mean_of(rates)}};
  return cell;
}

inline json run_pac_cell(const Config& c, const fs::path& dir,
                         const std::vector<long long>& seeds) {
  const double a = c.get_double_or("instance", "a", 0.0);
  const double b = c.get_double_or("instance", "b", 1.0);
  const double a_inner = c.get_double_or("instance", "a_inner", 0.2);
  const double b_inner = c.get_double_or("instance", "b_inner", 0.7);
  const double t_star = c.get_double_or("instance", "t_star", 0.5);
  const double n_t_fraction = c.get_double_or("instance", "n_t_fraction", 0.1);
  const int trials = static_cast<int>(c.get_int_or("instance", "trials", 200));
  std::vector<long long> grid = c.has("instance", "n_grid")
                                    ? c.get_int_list("instance", "n_grid")
                                    : std::vector<long long>{100, 1000, 10000, 100000};
  const std::uint64_t seed = static_cast<std::uint64_t>(seeds.front());
  fs::create_directories(dir);

  std::ofstream out(dir / "points.csv", std::ios::binary);
  out << "n,n_t,trial,excess_safl,excess_centralized\n";
  json grid_json = json::array();
  std::vector<double> xs, ys;
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    const long long n = grid[gi];
    const long long n_t = std::max<long long>(1, std::llround(n_t_fraction * static_cast<double>(n)));
    const long long n_s = n - n_t;
    const ThresholdInstance inst = ThresholdInstance::safl(a, b, a_inner, b_inner, t_star, n_t, n_s);
    ThresholdInstance pure = inst;
    pure.lambda_d = 0.0;
    pure.lambda_p = 1.0;
    double acc_safl = 0.0;
    double acc_cent = 0.0;
    for (int t = 0; t < trials; ++t) {
      RngStream rng(seed, StreamPurpose::trial, gi, static_cast<std::uint64_t>(t));
      const double e_safl = excess_error_p(inst, erm_threshold(sample_mixture(inst, n, rng)));
      RngStream rng2(seed, StreamPurpose::trial, 0xBA5E00ULL + gi, static_cast<std::uint64_t>(t));
      const double e_cent = excess_error_p(pure, erm_threshold(sample_mixture(pure, n_t, rng2)));
      acc_safl += e_safl;
      acc_cent += e_cent;
      out << n << ',' << n_t << ',' << t << ',' << format_g17(e_safl) << ','
          << format_g17(e_cent) << '\n';
    }
    grid_json.push_back(json{{"n", n},
                             {"n_t", n_t},
                             {"mean_excess_safl", acc_safl / trials},
                             {"mean_excess_centralized", acc_cent / trials}});
    xs.push_back(static_cast<double>(n));
    ys.push_back(acc_safl / trials);
  }
  // Same pre-asymptotic rule as pac_rate_experiment: drop the first point if
  // its mean error exceeds 0.2.
  if (!ys.empty() && ys.front() > 0.2) {
    xs.erase(xs.begin());
    ys.erase(ys.begin());
  }
  const LineFit fit = fit_loglog_slope(xs, ys);

  json cell;
  cell["config_hash"] = c.hash_hex();
  cell["scenario"] = "pac";
  cell["params"] = {{"a", a},           {"b", b},         {"a_inner", a_inner},
                    {"b_inner", b_inner}, {"t_star", t_star}, {"n_t_fraction", n_t_fraction},
                    {"trials", trials},  {"seed", seeds.front()}};
  cell["grid"] = grid_json;
  cell["aggregate"] = {{"slope", fit.slope}, {"intercept", fit.intercept}, {"r2", fit.r2}};
  return cell;
}

inline json run_positively_related_cell(const Config& c, const fs::path& dir) {
  ThresholdInstance inst;
  inst.a = c.get_double_or("instance", "a", 0.0);
  inst.b = c.get_double_or("instance", "b", 1.0);
  inst.a_inner = c.get_double_or("instance", "a_inner", 0.25);
  inst.b_inner = c.get_double_or("instance", "b_inner", 0.75);
  inst.t_star = c.get_double_or("instance", "t_star", 0.5);
  inst.lambda_d = c.get_double_or("instance", "lambda_d", 1.0);
  inst.lambda_p = 1.0 - inst.lambda_d;
  inst.validate();
  const int points = static_cast<int>(c.get_int_or("instance", "grid_points", 32));

  // Symmetric grid around t*, excluding t* itself.
  std::vector<double> grid;
  const double span = 0.9 * std::min(inst.t_star - inst.a_inner, inst.b_inner - inst.t_star);
  for (int i = 1; i <= points / 2; ++i) {
    const double off = span * static_cast<double>(i) / (points / 2);
    grid.push_back(inst.t_star - off);
    grid.push_back(inst.t_star + off);
  }
  std::sort(grid.begin(), grid.end());

  const PositivelyRelatedFit fit = check_positively_related(inst, grid);
  fs::create_directories(dir);
  std::ofstream out(dir / "grid.csv", std::ios::binary);
  out << "t,excess_p,excess_q,abs_diff\n";
  for (double t : grid) {
    const double ep = excess_error_p(inst, t);
    const double eq = excess_error_q(inst, t);
    out << format_g17(t) << ',' << format_g17(ep) << ',' << format_g17(eq) << ','
        << format_g17(std::abs(ep - eq)) << '\n';
  }

  json cell;
  cell["config_hash"] = c.hash_hex();
  cell["scenario"] = "positively-related";
  cell["params"] = {{"a", inst.a},           {"b", inst.b},
                    {"a_inner", inst.a_inner}, {"b_inner", inst.b_inner},
                    {"t_star", inst.t_star},  {"lambda_d", inst.lambda_d}};
  cell["aggregate"] = {{"alpha", fit.alpha},
                       {"beta", fit.beta},
                       {"r2", fit.r2},
                       {"alpha_closed_form", 1.0 - (inst.b_inner - inst.a_inner) / (inst.b - inst.a)}};
  return cell;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Sweep driver

struct SweepCell {
  std::string key;
  Config config;  // base config with the cell's axis values substituted
};

inline std::vector<SweepCell> expand_cells(const Config& cfg, Scenario scenario) {
  const auto& schema = detail::schema_for(scenario);
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;  // "section.key" -> tokens
  for (const auto& [section, key] : schema.axes) {
    if (!cfg.has(section, key)) continue;
    const auto tokens = cfg.get_string_list(section, key);
    // Integer axes may use range syntax; re-expand through the list parser.
    std::vector<std::string> values;
    for (const auto& tok : tokens) {
      const auto dots = tok.find("..");
      if (dots != std::string::npos) {
        Config tmp = Config::parse_string("[x]\nv = " + tok + "\n");
        for (long long v : tmp.get_int_list("x", "v")) values.push_back(std::to_string(v));
      } else {
        values.push_back(tok);
      }
    }
    if (values.size() > 1) axes.emplace_back(section + "." + key, values);
  }

  std::vector<SweepCell> cells;
  std::vector<std::size_t> idx(axes.size(), 0);
  for (;;) {
    Config resolved = cfg;
    std::string key;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      const auto& [path, values] = axes[a];
      resolved.apply_override(path + "=" + values[idx[a]]);
      if (!key.empty()) key += "_";
      key += path.substr(path.find('.') + 1) + "=" + values[idx[a]];
    }
    if (key.empty()) key = "all";
    cells.push_back(SweepCell{key, std::move(resolved)});
    std::size_t a = axes.size();
    while (a > 0) {
      --a;
      if (++idx[a] < axes[a].second.size()) break;
      idx[a] = 0;
      if (a == 0) return cells;
    }
    if (axes.empty()) return cells;
  }
}

inline json run_cell(Scenario scenario, const Config& cfg, const fs::path& dir,
                     const std::vector<long long>& seeds) {
  json summary;
  switch (scenario) {
    case Scenario::sconvex_rate:
    case Scenario::fedavg_bias:
      summary = detail::run_quadratic_cell(scenario, cfg, dir, seeds);
      break;
    case Scenario::nonconvex_rate:
    case Scenario::speedup:
      summary = detail::run_mlp_cell(scenario, cfg, dir, seeds);
      break;
    case Scenario::mnist_lr:
      summary = detail::run_mnist_cell(cfg, dir, seeds);
      break;
    case Scenario::impossibility:
      summary = detail::run_impossibility_cell(cfg, dir, seeds);
      break;
    case Scenario::pac:
      summary = detail::run_pac_cell(cfg, dir, seeds);
      break;
    case Scenario::positively_related:
      summary = detail::run_positively_related_cell(cfg, dir);
      break;
  }
  std::ofstream out(dir / "summary.json", std::ios::binary);
  out << summary.dump(2) << '\n';
  return summary;
}

struct ExperimentOutcome {
  fs::path out_dir;
  std::vector<std::string> cell_keys;
  bool any_diverged = false;
};

// Runs every sweep cell (optionally on a worker pool), then writes the
// manifest. Outputs are pure functions of (config, seed), so reruns overwrite
// with identical bytes and worker count never changes results.
inline ExperimentOutcome run_experiment(const Config& cfg, const fs::path& out_dir, int workers = 1) {
  validate_config(cfg);
  const Scenario scenario = scenario_from_string(cfg.get_string("scenario", "name"));
  std::vector<long long> seeds = cfg.has("run", "seeds") ? cfg.get_int_list("run", "seeds")
                                                         : std::vector<long long>{0};
  std::vector<SweepCell> cells = expand_cells(cfg, scenario);

  fs::create_directories(out_dir / "cells");
  std::vector<json> summaries(cells.size());
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      try {
        summaries[i] = run_cell(scenario, cells[i].config, out_dir / "cells" / cells[i].key, seeds);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  ExperimentOutcome outcome;
  outcome.out_dir = out_dir;
  json manifest;
  manifest["version"] = kVersion;
  manifest["scenario"] = to_string(scenario);
  manifest["config_hash"] = cfg.hash_hex();
  manifest["config"] = cfg.canonical();
  manifest["seeds"] = seeds;
  json cell_list = json::array();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    cell_list.push_back(json{{"key", cells[i].key},
                             {"config_hash", cells[i].config.hash_hex()}});
    outcome.cell_keys.push_back(cells[i].key);
    if (summaries[i].contains("aggregate") && summaries[i]["aggregate"].contains("diverged") &&
        summaries[i]["aggregate"]["diverged"].get<bool>()) {
      outcome.any_diverged = true;
    }
  }
  manifest["cells"] = cell_list;
  std::ofstream out(out_dir / "manifest.json", std::ios::binary);
  if (!out) throw data_error("cannot write manifest to " + out_dir.string());
  out << manifest.dump(2) << '\n';
  return outcome;
}

}  // namespace safl
