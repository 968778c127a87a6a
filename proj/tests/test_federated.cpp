#include <random>

#include <gtest/gtest.h>

#include "htcl/federated.hpp"

using namespace htcl;

namespace {

ParamVector vec(std::initializer_list<double> xs) {
  ParamVector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

struct Fixture {
  std::vector<TaskDataset> tasks = gen_split_gaussians(8, 2, 2, 20, 3.0, 31);
  ModelSpec spec{{2, 6, 2}};
  LearnerConfig cfg;
  Fixture() {
    cfg.epochs_per_task = 2;
    cfg.batch_size = 16;
    cfg.buffer_capacity = 20;
  }
};

}  // namespace

TEST(Aggregate, UniformAndWeighted) {
  EXPECT_EQ(fedavg_aggregate({vec({0, 0}), vec({2, 4})}), vec({1, 2}));
  EXPECT_EQ(fedavg_aggregate({vec({0}), vec({4})}, std::vector<double>{0.25, 0.75}), vec({3}));
  const ParamVector x = vec({1.5, -2.0, 7.0});
  EXPECT_EQ(fedavg_aggregate({x, x, x}), x);
  EXPECT_THROW(fedavg_aggregate({}), std::invalid_argument);
  EXPECT_THROW(fedavg_aggregate({vec({1}), vec({1, 2})}), std::invalid_argument);
  EXPECT_THROW(fedavg_aggregate({vec({1}), vec({2})}, std::vector<double>{0.5, 0.6}), std::invalid_argument);
  EXPECT_THROW(fedavg_aggregate({vec({1})}, std::vector<double>{0.5, 0.5}), std::invalid_argument);
}

TEST(Aggregate, OrderInvariantUpToRounding) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  std::vector<ParamVector> ms(5, ParamVector(8));
  for (auto& m : ms)
    for (Eigen::Index i = 0; i < 8; ++i) m(i) = nd(rng);
  const ParamVector a = fedavg_aggregate(ms);
  std::reverse(ms.begin(), ms.end());
  EXPECT_LE((fedavg_aggregate(ms) - a).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Prox, TermValue) {
  EXPECT_EQ(prox_term(vec({1, 2}), vec({1, 2}), 5.0), 0.0);
  EXPECT_DOUBLE_EQ(prox_term(vec({1, 2}), vec({0, 0}), 2.0), 5.0);
}

TEST(Prox, ZeroStrengthMatchesPlainTraining) {
  Fixture f;
  const ParamVector anchor = init_params(f.spec, 4);
  const auto prox = fedprox_train_local(f.tasks[2], anchor, f.cfg, f.spec, 0.0);
  const auto plain = train_seq(Permutation{{2}}, f.tasks, anchor, f.cfg, f.spec, {});
  EXPECT_EQ(prox.params, plain.params);
  const auto pulled = fedprox_train_local(f.tasks[2], anchor, f.cfg, f.spec, 100.0);
  EXPECT_LT((pulled.params - anchor).norm(), (plain.params - anchor).norm());
  EXPECT_THROW(fedprox_train_local(f.tasks[2], anchor, f.cfg, f.spec, -1.0), std::invalid_argument);
}

TEST(FedRun, SingleTaskGlobalIsLocal) {
  Fixture f;
  const ParamVector init = init_params(f.spec, 2);
  const auto run = fed_compare_run(f.tasks, Permutation{{3}}, init, f.cfg, FedConfig{}, f.spec);
  const auto local = train_seq(Permutation{{3}}, f.tasks, init, f.cfg, f.spec, {});
  EXPECT_EQ(run.global, local.params);
  EXPECT_EQ(run.accuracy.tasks(), 1);
}

TEST(FedRun, RunningAndPairwiseAgreeOnTwoTasksOnly) {
  Fixture f;
  const ParamVector init = init_params(f.spec, 2);
  FedConfig running, pairwise;
  pairwise.averaging = FedAveraging::pairwise;
  const auto r2 = fed_compare_run(f.tasks, Permutation{{0, 1}}, init, f.cfg, running, f.spec);
  const auto p2 = fed_compare_run(f.tasks, Permutation{{0, 1}}, init, f.cfg, pairwise, f.spec);
  EXPECT_EQ(r2.global, p2.global);
  const auto r4 = fed_compare_run(f.tasks, Permutation{{0, 1, 2, 3}}, init, f.cfg, running, f.spec);
  const auto p4 = fed_compare_run(f.tasks, Permutation{{0, 1, 2, 3}}, init, f.cfg, pairwise, f.spec);
  EXPECT_NE(r4.global, p4.global);
  EXPECT_EQ(r4.accuracy.tasks(), 4);
  EXPECT_TRUE(r4.global.allFinite());
}

TEST(FedRun, FedproxZeroMuEqualsFedavg) {
  Fixture f;
  const ParamVector init = init_params(f.spec, 9);
  FedConfig avg, prox;
  prox.kind = FedKind::fedprox;
  prox.prox_mu = 0.0;
  const auto a = fed_compare_run(f.tasks, Permutation{{3, 1, 0, 2}}, init, f.cfg, avg, f.spec);
  const auto b = fed_compare_run(f.tasks, Permutation{{3, 1, 0, 2}}, init, f.cfg, prox, f.spec);
  EXPECT_EQ(a.global, b.global);
  EXPECT_EQ(a.accuracy.values, b.accuracy.values);
  EXPECT_EQ(method_name(FedKind::fedprox), "fedprox");
}
