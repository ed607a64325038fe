#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "safl/errors.hpp"
#include "safl/population.hpp"
#include "safl/rng.hpp"
#include "safl/vec.hpp"

namespace safl {

// Algorithm knobs. With couple_steps the client step is derived from the
// server step as eta_c = 2 eta_s / K; q = 1 degenerates to FedAvg and q = 0
// to centralized SGD on the server objective.
struct SafariConfig {
  double q = 0.5;
  double eta_c = 0.0;
  double eta_s = 0.0;
  int local_steps = 1;   // K
  int rounds = 1;        // R
  bool couple_steps = false;
  std::uint64_t seed = 0;
  Vec x0;                // empty -> zero vector
  double divergence_norm = 1e12;
  bool collect_client_diagnostics = true;
  std::optional<double> rs_rc_min;  // admissible band for realized R_s / R_c
  std::optional<double> rs_rc_max;

  void validate() const {
    if (q < 0.0 || q > 1.0) throw std::invalid_argument("SafariConfig: q outside [0,1]");
    if (local_steps < 1) throw std::invalid_argument("SafariConfig: K >= 1 required");
    if (rounds < 1) throw std::invalid_argument("SafariConfig: R >= 1 required");
    if (couple_steps && eta_c > 0.0) {
      const double want = 2.0 * eta_s / static_cast<double>(local_steps);
      if (std::abs(eta_c - want) > 1e-15 * std::max(std::abs(want), 1.0)) {
        throw std::invalid_argument("SafariConfig: couple_steps requires eta_c = 2 eta_s / K");
      }
    }
  }

  double effective_eta_c() const {
    return couple_steps && eta_c == 0.0 ? 2.0 * eta_s / static_cast<double>(local_steps) : eta_c;
  }
};

enum class RoundKind { client, server, final };

inline const char* to_string(RoundKind k) {
  switch (k) {
    case RoundKind::client: return "client";
    case RoundKind::server: return "server";
    case RoundKind::final: return "final";
  }
  return "?";
}

struct RoundRecord {
  int round = 0;
  RoundKind kind = RoundKind::client;
  double grad_norm_sq = 0.0;            // ||grad F(x_r)||^2 of the population objective
  std::optional<double> dist_sq;        // ||x_r - x*||^2 when x* is known
  double loss = 0.0;                    // F(x_r)
  std::vector<int> participants;        // client ids, empty for server/final rounds
};

// Realized-trajectory quantities feeding the admissible-q formulas.
struct DiagnosticStats {
  double g1 = 0.0;  // max over server rounds of ||grad F(x_r)||^2
  double g2 = 0.0;  // max over client rounds of ||(1/m) sum_i sum_k grad F_i(x_{r,k}^i)||^2
  bool has_g1 = false;
  bool has_g2 = false;
  std::vector<double> g4;  // per client round: (1/m) sum_i [F_i(x_r) - F_i(x*)]
};

struct RunSummary {
  double final_grad_norm_sq = 0.0;
  std::optional<double> final_dist_sq;
  double final_loss = 0.0;
  double min_grad_norm_sq = 0.0;
  int client_rounds = 0;
  int server_rounds = 0;
  std::optional<double> rs_rc_ratio;  // unset when no client rounds happened
  bool rs_rc_warning = false;
  DiagnosticStats diagnostics;
  std::optional<double> test_accuracy;  // dataset scenarios
};

enum class RunStatus { ok, diverged };

struct RunResult {
  RunStatus status = RunStatus::ok;
  std::vector<RoundRecord> records;  // R round records plus one final record
  RunSummary summary;
  Vec final_point;
};

// K stochastic gradient steps from x_r on one client's objective.
inline Vec local_update(const Vec& x_r, const ClientSpec& client, int local_steps, double eta_c,
                        RngStream& rng) {
  if (eta_c < 0.0) throw std::invalid_argument("local_update: eta_c < 0");
  Vec x = x_r;
  for (int k = 0; k < local_steps; ++k) {
    const Vec g = client.objective.stochastic_gradient(x, rng);
    axpy(-eta_c, g, x);
    if (!all_finite(x)) {
      throw divergence_error("local_update: non-finite iterate at client " +
                             std::to_string(client.id) + ", step " + std::to_string(k));
    }
  }
  return x;
}

// Coordinate-wise mean over models tagged with client ids; summation runs in
// ascending id order so results are bit-reproducible.
inline Vec aggregate(std::vector<std::pair<int, Vec>> models) {
  if (models.empty()) throw std::invalid_argument("aggregate: empty list");
  std::sort(models.begin(), models.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  Vec out(models.front().second.size(), 0.0);
  for (const auto& [id, m] : models) {
    require_same_dim(m, out, "aggregate");
    axpy(1.0, m, out);
  }
  scale(out, 1.0 / static_cast<double>(models.size()));
  return out;
}

// Untagged overload: models are brought into a canonical (lexicographic)
// order first, so any permutation of the input yields identical bits.
inline Vec aggregate(std::vector<Vec> models) {
  if (models.empty()) throw std::invalid_argument("aggregate: empty list");
  std::sort(models.begin(), models.end());
  Vec out(models.front().size(), 0.0);
  for (const auto& m : models) {
    require_same_dim(m, out, "aggregate");
    axpy(1.0, m, out);
  }
  scale(out, 1.0 / static_cast<double>(models.size()));
  return out;
}

// One stochastic gradient step on the server objective.
inline Vec server_step(const Vec& x_r, const ServerObjective& server, double eta_s,
                       RngStream& rng) {
  if (eta_s < 0.0) throw std::invalid_argument("server_step: eta_s < 0");
  Vec x = x_r;
  const Vec g = server.objective.stochastic_gradient(x, rng);
  axpy(-eta_s, g, x);
  if (!all_finite(x)) throw divergence_error("server_step: non-finite iterate");
  return x;
}

namespace detail {

inline void fill_summary_from_records(RunSummary& s, const std::vector<RoundRecord>& records) {
  s.min_grad_norm_sq = std::numeric_limits<double>::infinity();
  s.client_rounds = 0;
  s.server_rounds = 0;
  for (const auto& r : records) {
    if (r.kind == RoundKind::client) ++s.client_rounds;
    if (r.kind == RoundKind::server) ++s.server_rounds;
    s.min_grad_norm_sq = std::min(s.min_grad_norm_sq, r.grad_norm_sq);
  }
  const auto& last = records.back();
  s.final_grad_norm_sq = last.grad_norm_sq;
  s.final_dist_sq = last.dist_sq;
  s.final_loss = last.loss;
  if (s.client_rounds > 0) {
    s.rs_rc_ratio = static_cast<double>(s.server_rounds) / static_cast<double>(s.client_rounds);
  }
}

}  // namespace detail

// Runs Algorithm SAFARI: each round is a client round with probability q
// (sample S_r, K local SGD steps per client, average) and a server SGD round
// otherwise. All randomness is drawn from counter streams keyed by
// (seed, purpose, round, client), so runs are deterministic and the coin
// stream never perturbs the data streams.
inline RunResult run_safari(const PopulationSpec& pop, const ParticipationProcess& proc,
                            const std::optional<ServerObjective>& server, const SafariConfig& cfg) {
  cfg.validate();
  pop.validate();
  if (cfg.q < 1.0 && !server.has_value()) {
    throw std::invalid_argument("run_safari: q < 1 requires a server objective");
  }
  if (server.has_value() && server->objective.dim() != pop.dim) {
    throw std::invalid_argument("run_safari: server dimension mismatch");
  }
  const double eta_c = cfg.effective_eta_c();
  const int total = pop.size();

  RunResult out;
  Vec x = cfg.x0.empty() ? zeros(static_cast<std::size_t>(pop.dim)) : cfg.x0;
  if (static_cast<int>(x.size()) != pop.dim) {
    throw std::invalid_argument("run_safari: x0 dimension mismatch");
  }

  const bool has_opt = pop.global_optimum.has_value();
  std::vector<double> f_star;  // per-client loss at x*, for the G4 diagnostic
  if (has_opt && cfg.collect_client_diagnostics) {
    f_star.reserve(static_cast<std::size_t>(total));
    for (const auto& c : pop.clients) f_star.push_back(c.objective.value(*pop.global_optimum));
  }

  auto record_state = [&](int round, RoundKind kind, const Vec& point) {
    RoundRecord rec;
    rec.round = round;
    rec.kind = kind;
    rec.grad_norm_sq = squared_norm(pop.exact_gradient(point));
    rec.loss = pop.value(point);
    if (has_opt) rec.dist_sq = squared_distance(point, *pop.global_optimum);
    return rec;
  };

  for (int r = 0; r < cfg.rounds; ++r) {
    RngStream coin(cfg.seed, StreamPurpose::coin, static_cast<std::uint64_t>(r));
    const bool client_round = coin.bernoulli(cfg.q);
    RoundRecord rec = record_state(r, client_round ? RoundKind::client : RoundKind::server, x);

    Vec next;
    try {
      if (client_round) {
        RngStream part(cfg.seed, StreamPurpose::participation, static_cast<std::uint64_t>(r));
        rec.participants = sample_participation(proc, total, part);
        std::vector<std::pair<int, Vec>> models;
        models.reserve(rec.participants.size());
        Vec diag_sum;  // sum over i,k of exact grad F_i at the local iterates
        if (cfg.collect_client_diagnostics) diag_sum = zeros(static_cast<std::size_t>(pop.dim));
        double g4_acc = 0.0;
        for (int id : rec.participants) {
          const auto& client = pop.clients[static_cast<std::size_t>(id)];
          RngStream noise(cfg.seed, StreamPurpose::client_noise, static_cast<std::uint64_t>(r),
                          static_cast<std::uint64_t>(id));
          if (cfg.collect_client_diagnostics) {
            Vec xi = x;
            for (int k = 0; k < cfg.local_steps; ++k) {
              axpy(1.0, client.objective.exact_gradient(xi), diag_sum);
              const Vec g = client.objective.stochastic_gradient(xi, noise);
              axpy(-eta_c, g, xi);
              if (!all_finite(xi)) {
                throw divergence_error("run_safari: non-finite local iterate");
              }
            }
            models.emplace_back(id, std::move(xi));
            if (has_opt) g4_acc += client.objective.value(x) - f_star[static_cast<std::size_t>(id)];
          } else {
            models.emplace_back(id, local_update(x, client, cfg.local_steps, eta_c, noise));
          }
        }
        if (cfg.collect_client_diagnostics) {
          scale(diag_sum, 1.0 / static_cast<double>(rec.participants.size()));
          const double g2 = squared_norm(diag_sum);
          out.summary.diagnostics.g2 = out.summary.diagnostics.has_g2
                                           ? std::max(out.summary.diagnostics.g2, g2)
                                           : g2;
          out.summary.diagnostics.has_g2 = true;
          if (has_opt) {
            out.summary.diagnostics.g4.push_back(g4_acc /
                                                 static_cast<double>(rec.participants.size()));
          }
        }
        next = aggregate(std::move(models));
      } else {
        RngStream noise(cfg.seed, StreamPurpose::server_noise, static_cast<std::uint64_t>(r));
        next = server_step(x, *server, cfg.eta_s, noise);
        out.summary.diagnostics.g1 = out.summary.diagnostics.has_g1
                                         ? std::max(out.summary.diagnostics.g1, rec.grad_norm_sq)
                                         : rec.grad_norm_sq;
        out.summary.diagnostics.has_g1 = true;
      }
    } catch (const divergence_error&) {
      out.records.push_back(std::move(rec));
      out.records.push_back(record_state(r + 1, RoundKind::final, x));
      out.status = RunStatus::diverged;
      out.final_point = std::move(x);
      detail::fill_summary_from_records(out.summary, out.records);
      return out;
    }

    out.records.push_back(std::move(rec));
    if (!all_finite(next) || norm(next) > cfg.divergence_norm) {
      out.records.push_back(record_state(r + 1, RoundKind::final, x));
      out.status = RunStatus::diverged;
      out.final_point = std::move(x);
      detail::fill_summary_from_records(out.summary, out.records);
      return out;
    }
    x = std::move(next);
  }

  out.records.push_back(record_state(cfg.rounds, RoundKind::final, x));
  out.final_point = std::move(x);
  detail::fill_summary_from_records(out.summary, out.records);
  if (out.summary.rs_rc_ratio.has_value()) {
    const double ratio = *out.summary.rs_rc_ratio;
    if ((cfg.rs_rc_min.has_value() && ratio < *cfg.rs_rc_min) ||
        (cfg.rs_rc_max.has_value() && ratio > *cfg.rs_rc_max)) {
      out.summary.rs_rc_warning = true;
    }
  }
  return out;
}

// Plain FedAvg: SAFARI with the client branch hard-wired on and no server.
inline RunResult run_fedavg(const PopulationSpec& pop, const ParticipationProcess& proc,
                            SafariConfig cfg) {
  cfg.q = 1.0;
  return run_safari(pop, proc, std::nullopt, cfg);
}

// Centralized SGD on the server objective: SAFARI with q hard-wired to 0.
inline RunResult run_centralized(const PopulationSpec& pop, const ServerObjective& server,
                                 SafariConfig cfg) {
  cfg.q = 0.0;
  return run_safari(pop, ParticipationProcess::full(), server, cfg);
}

// ---------------------------------------------------------------------------
// Admissible-q diagnostics (post-hoc: G1..G4 depend on the realized run)

enum class QBoundStatus { ok, vacuous, undefined };

struct QBound {
  double q_max = 1.0;
  QBoundStatus status = QBoundStatus::ok;
};

inline const char* to_string(QBoundStatus s) {
  switch (s) {
    case QBoundStatus::ok: return "ok";
    case QBoundStatus::vacuous: return "vacuous";
    case QBoundStatus::undefined: return "undefined";
  }
  return "?";
}

// Nonconvex admissible q:
//   q <= 1 / ( (4 sigma_G^2 - 4 G2 (1/(2K^2) - 2 L eta_s^2 / K^2))
//              / ((1 - L eta_s) G1) + 1 )
// The fraction <= 0 makes the bound vacuous (clamped to 1).
inline QBound q_bound_nonconvex(double sigma_g_sq, double g1, double g2, int local_steps,
                                double lipschitz, double eta_s) {
  if (lipschitz * eta_s >= 1.0) {
    throw std::invalid_argument("q_bound_nonconvex: requires L * eta_s < 1");
  }
  if (!(g1 > 0.0)) return {1.0, QBoundStatus::undefined};
  const double k2 = static_cast<double>(local_steps) * static_cast<double>(local_steps);
  const double numer =
      4.0 * sigma_g_sq - 4.0 * g2 * (1.0 / (2.0 * k2) - 2.0 * lipschitz * eta_s * eta_s / k2);
  const double fraction = numer / ((1.0 - lipschitz * eta_s) * g1);
  if (fraction <= 0.0) return {1.0, QBoundStatus::vacuous};
  return {1.0 / (fraction + 1.0), QBoundStatus::ok};
}

// Strongly convex admissible q with eta_bar = eta_c K mu / 2 = 2 eta_s L mu / (L + mu):
//   q <= 1 / (1 + ( (4 eta_bar / mu^2)(1 + (30 L eta_bar / mu)(1 + 2 L eta_bar / mu)) G3
//                   - (4 / mu) G4 )
//                 / ( (1/(L+mu) - (L+mu)^2 eta_bar / (4 L^2 mu^2)) G3 ) )
inline QBound q_bound_strongly_convex(double g3, double g4, double lipschitz, double mu,
                                      double eta_bar) {
  if (!(lipschitz > 0.0) || !(mu > 0.0)) {
    throw std::invalid_argument("q_bound_strongly_convex: need L, mu > 0");
  }
  if (!(g3 > 0.0)) return {1.0, QBoundStatus::undefined};
  const double lm = lipschitz + mu;
  const double denom_coeff = 1.0 / lm - lm * lm * eta_bar / (4.0 * lipschitz * lipschitz * mu * mu);
  if (denom_coeff <= 0.0) return {1.0, QBoundStatus::undefined};
  const double numer = (4.0 * eta_bar / (mu * mu)) *
                           (1.0 + (30.0 * lipschitz * eta_bar / mu) *
                                      (1.0 + 2.0 * lipschitz * eta_bar / mu)) *
                           g3 -
                       (4.0 / mu) * g4;
  const double fraction = numer / (denom_coeff * g3);
  if (fraction <= 0.0) return {1.0, QBoundStatus::vacuous};
  return {1.0 / (1.0 + fraction), QBoundStatus::ok};
}

}  // namespace safl
