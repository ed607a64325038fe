#include "safl/population.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include "safl/rng.hpp"

using namespace safl;

TEST(Population, TwoClientClosedForm) {
  // M=2, balanced, H=I, centers (1,0) and (-1,0): x* = (0,0), sigma_G = 1.
  const auto pop = make_population_from_centers({{1.0, 0.0}, {-1.0, 0.0}}, {1.0, 1.0}, 0.0);
  EXPECT_EQ(*pop.global_optimum, (Vec{0.0, 0.0}));
  EXPECT_DOUBLE_EQ(*pop.sigma_g, 1.0);
  EXPECT_DOUBLE_EQ(*pop.constants.lipschitz, 1.0);
}

TEST(Population, ZeroSpreadIsHomogeneous) {
  const auto pop = make_quadratic_population(8, 4, 0.0, Vec(4, 1.0), 0.0, 3);
  EXPECT_DOUBLE_EQ(*pop.sigma_g, 0.0);
  for (const auto& c : pop.clients) {
    EXPECT_EQ(c.objective.as_quadratic()->center(), *pop.global_optimum);
  }
}

TEST(Population, BalancedWeightsSumToOne) {
  const auto pop = make_quadratic_population(10, 10, 1.0, Vec(10, 1.0), 0.1, 1);
  double sum = 0.0;
  for (const auto& c : pop.clients) sum += c.weight;
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Population, OptimumEqualsWeightedCenterMean) {
  const auto pop = make_quadratic_population(10, 6, 2.0, Vec(6, 1.5), 0.0, 7);
  Vec mean_center(6, 0.0);
  for (const auto& c : pop.clients) axpy(c.weight, c.objective.as_quadratic()->center(), mean_center);
  EXPECT_EQ(mean_center, *pop.global_optimum);  // identical construction, bit for bit
}

TEST(Population, SigmaGMonotoneInSpreadAndExact) {
  const auto lo = make_quadratic_population(10, 5, 0.5, Vec(5, 2.0), 0.0, 5);
  const auto hi = make_quadratic_population(10, 5, 1.5, Vec(5, 2.0), 0.0, 5);
  EXPECT_LT(*lo.sigma_g, *hi.sigma_g);
  // With H = hI and max ||u_i|| = 1 the certificate is h * spread exactly.
  EXPECT_NEAR(*hi.sigma_g, 2.0 * 1.5, 1e-9);
}

TEST(Population, GradientIdentityAtRandomPoints) {
  const auto pop = make_quadratic_population(10, 8, 1.0, Vec(8, 1.0), 0.0, 11);
  RngStream rng(12, StreamPurpose::init);
  for (int t = 0; t < 100; ++t) {
    Vec x(8);
    for (double& v : x) v = 3.0 * rng.normal();
    const Vec g = pop.exact_gradient(x);
    Vec manual(8, 0.0);
    for (const auto& c : pop.clients) axpy(c.weight, c.objective.exact_gradient(x), manual);
    EXPECT_LE(norm(sub(g, manual)), 1e-12);
  }
}

TEST(Population, SigmaGCertificate) {
  // For common-H quadratics, ||grad F_i(x) - grad F(x)|| is x-independent and
  // its max equals the reported sigma_G.
  const auto pop = make_quadratic_population(10, 5, 1.3, Vec(5, 2.0), 0.0, 13);
  RngStream rng(14, StreamPurpose::init);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    Vec x(5);
    for (double& v : x) v = 2.0 * rng.normal();
    const Vec g = pop.exact_gradient(x);
    for (const auto& c : pop.clients) {
      worst = std::max(worst, norm(sub(c.objective.exact_gradient(x), g)));
    }
  }
  EXPECT_NEAR(worst, *pop.sigma_g, 1e-10);
}

TEST(Participation, FullReturnsEveryone) {
  RngStream rng(1, StreamPurpose::participation);
  const auto ids = sample_participation(ParticipationProcess::full(), 10, rng);
  ASSERT_EQ(ids.size(), 10u);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(ids[static_cast<std::size_t>(i)], i);
}

TEST(Participation, ExcludedNeverSamplesExcludedIds) {
  const auto proc = ParticipationProcess::excluded(4, 5);
  for (int round = 0; round < 10000; ++round) {
    const auto ids = sample_participation(proc, 10, 77, static_cast<std::uint64_t>(round));
    ASSERT_EQ(ids.size(), 5u);
    for (int id : ids) ASSERT_LT(id, 6);
  }
}

TEST(Participation, UniformFrequencies) {
  const auto proc = ParticipationProcess::uniform(5);
  std::vector<int> counts(10, 0);
  const int rounds = 100000;
  for (int round = 0; round < rounds; ++round) {
    for (int id : sample_participation(proc, 10, 99, static_cast<std::uint64_t>(round))) {
      ++counts[static_cast<std::size_t>(id)];
    }
  }
  for (int c : counts) {
    EXPECT_NEAR(static_cast<double>(c) / rounds, 0.5, 0.01);
  }
}

TEST(Participation, DeterministicPerSeedAndRound) {
  const auto proc = ParticipationProcess::uniform(5);
  EXPECT_EQ(sample_participation(proc, 10, 5, 3), sample_participation(proc, 10, 5, 3));
  EXPECT_NE(sample_participation(proc, 10, 5, 3), sample_participation(proc, 10, 5, 4));
}

TEST(Participation, InfeasibleCombinationsThrow) {
  RngStream rng(1, StreamPurpose::participation);
  EXPECT_THROW(sample_participation(ParticipationProcess::excluded(6, 5), 10, rng),
               std::invalid_argument);
  EXPECT_THROW(sample_participation(ParticipationProcess::uniform(11), 10, rng),
               std::invalid_argument);
  EXPECT_THROW(sample_participation(ParticipationProcess::adversarial(), 10, rng),
               std::invalid_argument);
}

TEST(FixedPoint, FullInclusionGivesOptimum) {
  const auto pop = make_quadratic_population(10, 4, 1.0, Vec(4, 1.0), 0.0, 21);
  std::vector<int> all(10);
  std::iota(all.begin(), all.end(), 0);
  const Vec fp = fedavg_fixed_point(pop, all);
  EXPECT_LE(norm(sub(fp, *pop.global_optimum)), 1e-14);
}

TEST(FixedPoint, SingletonIsThatCenter) {
  const auto pop = make_population_from_centers({{1.0, 0.0}, {-1.0, 0.0}}, {1.0, 1.0}, 0.0);
  EXPECT_EQ(fedavg_fixed_point(pop, {0}), (Vec{1.0, 0.0}));
}

TEST(FixedPoint, HeterogeneousHessiansRejected) {
  std::vector<ClientSpec> clients;
  clients.push_back({0, Objective(QuadraticObjective({1.0}, {0.0}, 0.0)), 0.5, 0});
  clients.push_back({1, Objective(QuadraticObjective({2.0}, {1.0}, 0.0)), 0.5, 0});
  PopulationSpec pop{std::move(clients), Vec{0.5}, 0.5, {}, 1};
  EXPECT_THROW(fedavg_fixed_point(pop, {0, 1}), std::invalid_argument);
}

TEST(Server, ExactGradientMatchesPopulation) {
  const auto pop = make_quadratic_population(10, 6, 1.0, Vec(6, 2.0), 0.0, 31);
  const auto server = make_quadratic_server(pop, 0.0);
  RngStream rng(32, StreamPurpose::init);
  for (int t = 0; t < 50; ++t) {
    Vec x(6);
    for (double& v : x) v = rng.normal();
    EXPECT_LE(norm(sub(server.objective.exact_gradient(x), pop.exact_gradient(x))), 1e-12);
  }
}

TEST(Server, ShiftDisplacesCenter) {
  const auto pop = make_quadratic_population(4, 3, 1.0, Vec(3, 1.0), 0.0, 33);
  const Vec shift = {0.5, 0.0, -0.5};
  const auto server = make_quadratic_server(pop, 0.0, shift);
  const Vec expect = add(*pop.global_optimum, shift);
  EXPECT_EQ(server.objective.as_quadratic()->center(), expect);
}

TEST(LabelPartition, FullClassCase) {
  std::vector<int> labels;
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < 40; ++i) labels.push_back(c);
  }
  RngStream rng(41, StreamPurpose::data);
  const auto assignment = label_partition(labels, 4, 5, rng);
  ASSERT_EQ(assignment.size(), 5u);
  for (const auto& idx : assignment) {
    std::set<int> classes;
    for (int i : idx) classes.insert(labels[static_cast<std::size_t>(i)]);
    EXPECT_EQ(classes.size(), 4u);
  }
}

TEST(LabelPartition, OneClassPerClientCounting) {
  std::vector<int> labels;
  for (int c = 0; c < 6; ++c) {
    for (int i = 0; i < 100; ++i) labels.push_back(c);
  }
  RngStream rng(42, StreamPurpose::data);
  const auto assignment = label_partition(labels, 1, 6, rng);
  for (const auto& idx : assignment) {
    ASSERT_EQ(idx.size(), 100u);
    std::set<int> classes;
    for (int i : idx) classes.insert(labels[static_cast<std::size_t>(i)]);
    EXPECT_EQ(classes.size(), 1u);
  }
}

TEST(LabelPartition, TwoClassesPerClientPartitionSoundness) {
  std::vector<int> labels;
  RngStream shuffle_rng(43, StreamPurpose::data);
  for (int c = 0; c < 10; ++c) {
    for (int i = 0; i < 57; ++i) labels.push_back(c);
  }
  shuffle_rng.shuffle(labels.begin(), labels.end());
  RngStream rng(44, StreamPurpose::data);
  const auto assignment = label_partition(labels, 2, 10, rng);
  std::set<int> seen;
  for (const auto& idx : assignment) {
    std::set<int> classes;
    std::map<int, int> per_class;
    for (int i : idx) {
      EXPECT_TRUE(seen.insert(i).second) << "sample assigned twice";
      classes.insert(labels[static_cast<std::size_t>(i)]);
      ++per_class[labels[static_cast<std::size_t>(i)]];
    }
    EXPECT_EQ(classes.size(), 2u);
  }
  // Each class is held by exactly two clients here, so per-holder shares of a
  // class differ by at most one.
  std::map<int, std::vector<int>> class_shares;
  for (const auto& idx : assignment) {
    std::map<int, int> per_class;
    for (int i : idx) ++per_class[labels[static_cast<std::size_t>(i)]];
    for (const auto& [cls, n] : per_class) class_shares[cls].push_back(n);
  }
  for (const auto& [cls, shares] : class_shares) {
    ASSERT_EQ(shares.size(), 2u);
    EXPECT_LE(std::abs(shares[0] - shares[1]), 1);
    EXPECT_EQ(shares[0] + shares[1], 57);
  }
}

TEST(LabelPartition, Errors) {
  std::vector<int> labels = {0, 1, 2};
  RngStream rng(45, StreamPurpose::data);
  EXPECT_THROW(label_partition(labels, 4, 2, rng), std::invalid_argument);
  // Two holders for a single-sample class cannot both get a sample.
  std::vector<int> sparse = {0, 0, 0, 1};
  EXPECT_THROW(label_partition(sparse, 2, 2, rng), std::invalid_argument);
}
