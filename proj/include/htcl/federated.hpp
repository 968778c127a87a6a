// Federated-aggregation baselines applied to sequential consolidation: each
// task of the sequence plays the role of one client.
#ifndef HTCL_FEDERATED_HPP
#define HTCL_FEDERATED_HPP

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "htcl/learners.hpp"
#include "htcl/metrics.hpp"
#include "htcl/model.hpp"
#include "htcl/tasks.hpp"

namespace htcl {

enum class FedKind { fedavg, fedprox };

enum class FedAveraging {
  running,   // global = mean of every local model so far
  pairwise,  // global = (global + local) / 2
};

struct FedConfig {
  FedKind kind = FedKind::fedavg;
  double prox_mu = 0.01;
  FedAveraging averaging = FedAveraging::running;

  void validate() const {
    if (prox_mu < 0.0) throw std::invalid_argument("prox_mu must be nonnegative");
  }
};

inline std::string method_name(FedKind k) { return k == FedKind::fedavg ? "fedavg" : "fedprox"; }

/// Weighted mean of equally sized models; uniform weights when none given.
inline ParamVector fedavg_aggregate(const std::vector<ParamVector>& models,
                                    const std::optional<std::vector<double>>& weights = std::nullopt) {
  if (models.empty()) throw std::invalid_argument("fedavg_aggregate: no models");
  const Eigen::Index p = models.front().size();
  for (const auto& m : models)
    if (m.size() != p) throw std::invalid_argument("fedavg_aggregate: model length mismatch");
  ParamVector out = ParamVector::Zero(p);
  if (!weights) {
    for (const auto& m : models) out += m;
    return out / static_cast<double>(models.size());
  }
  if (weights->size() != models.size()) throw std::invalid_argument("fedavg_aggregate: one weight per model");
  double total = 0.0;
  for (double w : *weights) {
    if (w < 0.0) throw std::invalid_argument("fedavg_aggregate: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("fedavg_aggregate: weights must sum to 1");
  for (std::size_t i = 0; i < models.size(); ++i) out += (*weights)[i] * models[i];
  return out;
}

/// (mu / 2) ||w - anchor||^2.
inline double prox_term(const ParamVector& w, const ParamVector& anchor, double mu) {
  return 0.5 * mu * (w - anchor).squaredNorm();
}

/// One task of local training from `anchor` with the proximal pull toward
/// it. With mu = 0 this is exactly the plain learner.
inline LearnerState fedprox_train_local(const TaskDataset& task, const ParamVector& anchor, const LearnerConfig& cfg,
                                        const ModelSpec& spec, double prox_mu, LearnerMemory memory = {}) {
  if (prox_mu < 0.0) throw std::invalid_argument("prox_mu must be nonnegative");
  const Permutation single{{task.task_id}};
  const std::vector<TaskDataset> tasks{task};
  return train_seq(single, tasks, anchor, cfg, spec, std::move(memory), ProximalTerm{anchor, prox_mu});
}

struct FedRun {
  AccuracyMatrix accuracy;
  ParamVector global;
};

/// For each task in order: train a local model from the current global
/// model with the base learner (carrying its memory), then aggregate it
/// into the global model. Row i of the accuracy matrix is the global model
/// on every task after sequence position i.
inline FedRun fed_compare_run(const std::vector<TaskDataset>& tasks, const Permutation& full_perm,
                              const ParamVector& init, const LearnerConfig& learner, const FedConfig& fed,
                              const ModelSpec& spec) {
  fed.validate();
  const auto n = static_cast<Eigen::Index>(full_perm.size());
  if (n == 0 || !full_perm.has_distinct_ids()) throw std::invalid_argument("fed_compare_run: invalid task order");
  FedRun run;
  run.accuracy = AccuracyMatrix(n);
  run.global = init;
  LearnerMemory memory;
  std::vector<ParamVector> locals;
  for (Eigen::Index pos = 0; pos < n; ++pos) {
    const TaskDataset& task = task_by_id(tasks, full_perm[static_cast<std::size_t>(pos)]);
    LearnerConfig lc = learner;
    lc.seed = learner.seed + static_cast<std::uint64_t>(pos);
    const double mu = fed.kind == FedKind::fedprox ? fed.prox_mu : 0.0;
    LearnerState local = fedprox_train_local(task, run.global, lc, spec, mu, std::move(memory));
    memory = std::move(local.memory);
    locals.push_back(local.params);
    if (pos == 0)
      run.global = local.params;
    else if (fed.averaging == FedAveraging::running)
      run.global = fedavg_aggregate(locals);
    else
      run.global = fedavg_aggregate({run.global, local.params});
    for (Eigen::Index j = 0; j < n; ++j)
      run.accuracy(pos, j) = accuracy_eval(run.global, task_by_id(tasks, full_perm[static_cast<std::size_t>(j)]).test, spec);
  }
  return run;
}

}  // namespace htcl

#endif  // HTCL_FEDERATED_HPP
