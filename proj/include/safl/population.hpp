#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "safl/objectives.hpp"
#include "safl/rng.hpp"
#include "safl/vec.hpp"

namespace safl {

struct ClientSpec {
  int id = 0;
  Objective objective;
  double weight = 0.0;  // lambda_i, sums to 1 over the population
  int sample_count = 0;
};

struct PopulationConstants {
  std::optional<double> lipschitz;
  std::optional<double> strong_convexity;
};

// The M-client population. The global objective is the lambda-weighted mixture
// of client objectives; for all-quadratic populations with a common Hessian
// the optimum and the dissimilarity bound sigma_G are exact.
struct PopulationSpec {
  std::vector<ClientSpec> clients;
  std::optional<Vec> global_optimum;
  std::optional<double> sigma_g;
  PopulationConstants constants;
  int dim = 0;

  int size() const { return static_cast<int>(clients.size()); }

  double value(const Vec& x) const {
    double s = 0.0;
    for (const auto& c : clients) s += c.weight * c.objective.value(x);
    return s;
  }

  Vec exact_gradient(const Vec& x) const {
    Vec g(static_cast<std::size_t>(dim), 0.0);
    for (const auto& c : clients) axpy(c.weight, c.objective.exact_gradient(x), g);
    return g;
  }

  void validate() const {
    if (clients.empty()) throw std::invalid_argument("PopulationSpec: no clients");
    double wsum = 0.0;
    for (std::size_t i = 0; i < clients.size(); ++i) {
      if (clients[i].id != static_cast<int>(i)) {
        throw std::invalid_argument("PopulationSpec: client ids must be 0..M-1 in order");
      }
      if (!(clients[i].weight > 0.0) || clients[i].weight > 1.0) {
        throw std::invalid_argument("PopulationSpec: weight outside (0, 1]");
      }
      if (clients[i].objective.dim() != dim) {
        throw std::invalid_argument("PopulationSpec: client dimension mismatch");
      }
      wsum += clients[i].weight;
    }
    if (std::abs(wsum - 1.0) > 1e-9) {
      throw std::invalid_argument("PopulationSpec: weights sum to " + std::to_string(wsum));
    }
  }
};

namespace detail {

// Acklam's rational approximation of the inverse normal CDF; ~1e-9 relative
// accuracy, which is plenty for placing synthetic client centers.
inline double inv_normal_cdf(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double dd[] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("inv_normal_cdf: p outside (0,1)");
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  }
  if (p > 1.0 - plow) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

// Additive-recurrence (R_d) low-discrepancy sequence in [0,1)^d; the seed only
// shifts the index so center layouts stay reproducible.
inline std::vector<Vec> r_sequence(int count, int d, std::uint64_t seed) {
  double phi = 2.0;
  for (int it = 0; it < 64; ++it) {
    phi = std::pow(1.0 + phi, 1.0 / (d + 1));
  }
  std::vector<double> alpha(static_cast<std::size_t>(d));
  double inv = 1.0 / phi;
  for (int j = 0; j < d; ++j) {
    alpha[static_cast<std::size_t>(j)] = inv;
    inv /= phi;
  }
  const double offset = static_cast<double>(mix64(seed) % (1ULL << 20));
  std::vector<Vec> pts(static_cast<std::size_t>(count), Vec(static_cast<std::size_t>(d)));
  for (int i = 0; i < count; ++i) {
    for (int j = 0; j < d; ++j) {
      double v = 0.5 + alpha[static_cast<std::size_t>(j)] * (offset + static_cast<double>(i) + 1.0);
      pts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = v - std::floor(v);
    }
  }
  return pts;
}

}  // namespace detail

inline std::vector<double> balanced_weights(int m) {
  return std::vector<double>(static_cast<std::size_t>(m), 1.0 / static_cast<double>(m));
}

// Quadratic population from explicit centers; exact x*, sigma_G, L, mu.
inline PopulationSpec make_population_from_centers(const std::vector<Vec>& centers,
                                                   const Vec& hess_diag, double noise_std,
                                                   std::vector<double> weights = {}) {
  if (centers.empty()) throw std::invalid_argument("make_population_from_centers: no centers");
  const int m = static_cast<int>(centers.size());
  const int d = static_cast<int>(centers.front().size());
  if (weights.empty()) weights = balanced_weights(m);
  if (static_cast<int>(weights.size()) != m) {
    throw std::invalid_argument("make_population_from_centers: weight count mismatch");
  }

  PopulationSpec pop;
  pop.dim = d;
  Vec xstar(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < m; ++i) {
    axpy(weights[static_cast<std::size_t>(i)], centers[static_cast<std::size_t>(i)], xstar);
  }
  double sigma_g = 0.0;
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      const double g = hess_diag[static_cast<std::size_t>(j)] *
                       (centers[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] -
                        xstar[static_cast<std::size_t>(j)]);
      s += g * g;
    }
    sigma_g = std::max(sigma_g, std::sqrt(s));
  }
  for (int i = 0; i < m; ++i) {
    pop.clients.push_back(ClientSpec{
        i, Objective(QuadraticObjective(hess_diag, centers[static_cast<std::size_t>(i)], noise_std)),
        weights[static_cast<std::size_t>(i)], 0});
  }
  pop.global_optimum = std::move(xstar);
  pop.sigma_g = sigma_g;
  pop.constants.lipschitz = *std::max_element(hess_diag.begin(), hess_diag.end());
  pop.constants.strong_convexity = *std::min_element(hess_diag.begin(), hess_diag.end());
  pop.validate();
  return pop;
}

// Synthetic quadratic population: centers sit at base_center + spread * u_i,
// where the u_i come from a seeded low-discrepancy sequence, are re-centered
// so the weighted mean vanishes, and are scaled so max_i ||u_i|| = 1. This
// pins x* at base_center and makes sigma_G monotone in spread.
inline PopulationSpec make_quadratic_population(int clients, int d, double center_spread,
                                                const Vec& hess_diag, double noise_std,
                                                std::uint64_t seed,
                                                const Vec& base_center = {},
                                                std::vector<double> weights = {}) {
  if (clients < 1 || d < 1) throw std::invalid_argument("make_quadratic_population: need M,d >= 1");
  if (center_spread < 0.0) throw std::invalid_argument("make_quadratic_population: spread < 0");
  if (static_cast<int>(hess_diag.size()) != d) {
    throw std::invalid_argument("make_quadratic_population: hessian dimension mismatch");
  }
  if (weights.empty()) weights = balanced_weights(clients);
  Vec base = base_center.empty() ? zeros(static_cast<std::size_t>(d)) : base_center;
  if (static_cast<int>(base.size()) != d) {
    throw std::invalid_argument("make_quadratic_population: base center dimension mismatch");
  }

  std::vector<Vec> dirs = detail::r_sequence(clients, d, seed);
  for (auto& v : dirs) {
    for (double& x : v) x = detail::inv_normal_cdf(std::clamp(x, 1e-12, 1.0 - 1e-12));
    const double n = norm(v);
    if (n > 0.0) scale(v, 1.0 / n);
  }
  Vec mean_dir(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < clients; ++i) axpy(weights[static_cast<std::size_t>(i)], dirs[static_cast<std::size_t>(i)], mean_dir);
  double max_norm = 0.0;
  for (auto& v : dirs) {
    for (int j = 0; j < d; ++j) v[static_cast<std::size_t>(j)] -= mean_dir[static_cast<std::size_t>(j)];
    max_norm = std::max(max_norm, norm(v));
  }
  if (max_norm > 0.0) {
    for (auto& v : dirs) scale(v, 1.0 / max_norm);
  }

  std::vector<Vec> centers(static_cast<std::size_t>(clients), base);
  for (int i = 0; i < clients; ++i) {
    axpy(center_spread, dirs[static_cast<std::size_t>(i)], centers[static_cast<std::size_t>(i)]);
  }
  return make_population_from_centers(centers, hess_diag, noise_std, std::move(weights));
}

// MLP population for the nonconvex experiments: client i holds a two-blob
// binary classification problem rotated to angle 2*pi*i/M, so clients are
// heterogeneous but the mixture is balanced.
inline PopulationSpec make_mlp_blob_population(int clients, int hidden, int samples_per_client,
                                               double blob_noise, int batch_size,
                                               std::uint64_t seed) {
  if (clients < 1) throw std::invalid_argument("make_mlp_blob_population: M >= 1");
  PopulationSpec pop;
  for (int i = 0; i < clients; ++i) {
    RngStream rng(seed, StreamPurpose::data, 0, static_cast<std::uint64_t>(i));
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(i) / clients;
    const double mx = std::cos(theta);
    const double my = std::sin(theta);
    DataMatrix data;
    data.count = samples_per_client;
    data.feature_dim = 2;
    data.classes = 2;
    data.features.resize(static_cast<std::size_t>(samples_per_client) * 2);
    data.labels.resize(static_cast<std::size_t>(samples_per_client));
    const int n0 = samples_per_client / 2;
    for (int s = 0; s < samples_per_client; ++s) {
      const int label = s < n0 ? 0 : 1;
      const double sgn = label == 0 ? 1.0 : -1.0;
      data.features[static_cast<std::size_t>(s) * 2] = sgn * mx + blob_noise * rng.normal();
      data.features[static_cast<std::size_t>(s) * 2 + 1] = sgn * my + blob_noise * rng.normal();
      data.labels[static_cast<std::size_t>(s)] = label;
    }
    MlpObjective obj({2, hidden, 2}, Activation::tanh, std::move(data), batch_size);
    pop.dim = obj.dim();
    pop.clients.push_back(ClientSpec{i, Objective(std::move(obj)),
                                     1.0 / static_cast<double>(clients), samples_per_client});
  }
  pop.validate();
  return pop;
}

// ---------------------------------------------------------------------------
// Participation processes

enum class ParticipationKind { full, uniform, excluded, adversarial };

struct ParticipationProcess {
  ParticipationKind kind = ParticipationKind::full;
  int sample_count = 0;   // m, for uniform/excluded
  int excluded_count = 0; // s, for excluded

  static ParticipationProcess full() { return {ParticipationKind::full, 0, 0}; }
  static ParticipationProcess uniform(int m) { return {ParticipationKind::uniform, m, 0}; }
  static ParticipationProcess excluded(int s, int m) { return {ParticipationKind::excluded, m, s}; }
  static ParticipationProcess adversarial() { return {ParticipationKind::adversarial, 0, 0}; }

  double capacity(int total_clients) const {
    if (kind == ParticipationKind::full) return 1.0;
    return static_cast<double>(sample_count) / static_cast<double>(total_clients);
  }
};

inline std::vector<int> sample_participation(const ParticipationProcess& proc, int total_clients,
                                             RngStream& rng) {
  switch (proc.kind) {
    case ParticipationKind::full: {
      std::vector<int> ids(static_cast<std::size_t>(total_clients));
      std::iota(ids.begin(), ids.end(), 0);
      return ids;
    }
    case ParticipationKind::uniform: {
      if (proc.sample_count < 1 || proc.sample_count > total_clients) {
        throw std::invalid_argument("sample_participation: infeasible m for uniform");
      }
      return rng.sample_distinct(total_clients, proc.sample_count);
    }
    case ParticipationKind::excluded: {
      const int pool = total_clients - proc.excluded_count;
      if (proc.excluded_count < 0 || pool < 1 || proc.sample_count < 1 ||
          proc.sample_count > pool) {
        throw std::invalid_argument("sample_participation: infeasible (m, s, M)");
      }
      return rng.sample_distinct(pool, proc.sample_count);
    }
    case ParticipationKind::adversarial:
      throw std::invalid_argument(
          "sample_participation: adversarial selection is resolved by the learnability module");
  }
  throw std::logic_error("sample_participation: unreachable");
}

inline std::vector<int> sample_participation(const ParticipationProcess& proc, int total_clients,
                                             std::uint64_t seed, std::uint64_t round) {
  RngStream rng(seed, StreamPurpose::participation, round);
  return sample_participation(proc, total_clients, rng);
}

// Equal-weight mean of the included centers: the unique fixed point of the
// noiseless FedAvg map over that set for any K >= 1 and eta_c in (0, 1/L).
inline Vec fedavg_fixed_point(const PopulationSpec& pop, const std::vector<int>& included) {
  if (included.empty()) throw std::invalid_argument("fedavg_fixed_point: empty set");
  const QuadraticObjective* first = nullptr;
  Vec acc(static_cast<std::size_t>(pop.dim), 0.0);
  for (int id : included) {
    if (id < 0 || id >= pop.size()) throw std::invalid_argument("fedavg_fixed_point: bad id");
    const auto* q = pop.clients[static_cast<std::size_t>(id)].objective.as_quadratic();
    if (q == nullptr) throw std::invalid_argument("fedavg_fixed_point: client not quadratic");
    if (first == nullptr) {
      first = q;
    } else if (q->hess_diag() != first->hess_diag()) {
      throw std::invalid_argument("fedavg_fixed_point: heterogeneous Hessians");
    }
    axpy(1.0, q->center(), acc);
  }
  scale(acc, 1.0 / static_cast<double>(included.size()));
  return acc;
}

// ---------------------------------------------------------------------------
// Server objective

// The server draws stochastic gradients of an objective built from the
// auxiliary dataset T. For quadratic populations T is modeled as an
// infinite sample from P: the exact population quadratic plus noise sigma_s,
// optionally displaced by `shift` to model T ~ P'.
struct ServerObjective {
  Objective objective;
  int aux_sample_count = 0;  // n_T; 0 means the synthetic infinite-sample model
};

inline ServerObjective make_quadratic_server(const PopulationSpec& pop, double noise_std,
                                             const Vec& shift = {}) {
  if (!pop.global_optimum.has_value()) {
    throw std::invalid_argument("make_quadratic_server: population has no analytic optimum");
  }
  const auto* q = pop.clients.front().objective.as_quadratic();
  if (q == nullptr) throw std::invalid_argument("make_quadratic_server: population not quadratic");
  Vec center = *pop.global_optimum;
  if (!shift.empty()) {
    require_same_dim(shift, center, "make_quadratic_server");
    center = add(center, shift);
  }
  return ServerObjective{Objective(QuadraticObjective(q->hess_diag(), std::move(center), noise_std)),
                         0};
}

// ---------------------------------------------------------------------------
// Label-based partition (the non-i.i.d. index p)

// Assigns sample indices to M clients so that every client draws from exactly
// p distinct classes, classes are spread round-robin over clients, and each
// class's samples are split evenly (within one) among its holders. Samples of
// classes held by nobody stay unassigned.
inline std::vector<std::vector<int>> label_partition(const std::vector<int>& labels, int p, int m,
                                                     RngStream& rng) {
  if (m < 1) throw std::invalid_argument("label_partition: M >= 1 required");
  int classes = 0;
  for (int y : labels) {
    if (y < 0) throw std::invalid_argument("label_partition: negative label");
    classes = std::max(classes, y + 1);
  }
  if (classes == 0) throw std::invalid_argument("label_partition: no samples");
  if (p < 1 || p > classes) {
    throw std::invalid_argument("label_partition: p must lie in [1, " + std::to_string(classes) + "]");
  }

  std::vector<int> class_order(static_cast<std::size_t>(classes));
  std::iota(class_order.begin(), class_order.end(), 0);
  rng.shuffle(class_order.begin(), class_order.end());

  // Client i holds class slots [i*p, (i+1)*p) of the repeated class sequence;
  // consecutive slots mod C are distinct because p <= C.
  std::vector<std::vector<int>> holders(static_cast<std::size_t>(classes));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < p; ++j) {
      const int cls = class_order[static_cast<std::size_t>((i * p + j) % classes)];
      holders[static_cast<std::size_t>(cls)].push_back(i);
    }
  }

  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    by_class[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
  }

  std::vector<std::vector<int>> assignment(static_cast<std::size_t>(m));
  for (int cls = 0; cls < classes; ++cls) {
    auto& owners = holders[static_cast<std::size_t>(cls)];
    if (owners.empty()) continue;
    auto& idx = by_class[static_cast<std::size_t>(cls)];
    if (idx.size() < owners.size()) {
      throw std::invalid_argument("label_partition: insufficient samples in class " +
                                  std::to_string(cls));
    }
    rng.shuffle(idx.begin(), idx.end());
    const std::size_t base = idx.size() / owners.size();
    const std::size_t extra = idx.size() % owners.size();
    std::size_t pos = 0;
    for (std::size_t o = 0; o < owners.size(); ++o) {
      const std::size_t take = base + (o < extra ? 1 : 0);
      auto& dst = assignment[static_cast<std::size_t>(owners[o])];
      dst.insert(dst.end(), idx.begin() + static_cast<std::ptrdiff_t>(pos),
                 idx.begin() + static_cast<std::ptrdiff_t>(pos + take));
      pos += take;
    }
  }
  for (auto& a : assignment) std::sort(a.begin(), a.end());
  return assignment;
}

}  // namespace safl
