// Local continual learners: plain SGD, experience replay and EWC.
#ifndef HTCL_LEARNERS_HPP
#define HTCL_LEARNERS_HPP

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "htcl/model.hpp"
#include "htcl/replay_buffer.hpp"
#include "htcl/tasks.hpp"

namespace htcl {

enum class LearnerKind { sgd, er, ewc };

inline std::string to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::sgd: return "sgd";
    case LearnerKind::er: return "er";
    case LearnerKind::ewc: return "ewc";
  }
  return "?";
}

inline LearnerKind parse_learner_kind(const std::string& s) {
  if (s == "sgd") return LearnerKind::sgd;
  if (s == "er") return LearnerKind::er;
  if (s == "ewc") return LearnerKind::ewc;
  throw std::invalid_argument("unknown learner kind: " + s);
}

struct LearnerConfig {
  LearnerKind kind = LearnerKind::er;
  double learning_rate = 0.01;
  int epochs_per_task = 10;
  int batch_size = 64;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t buffer_capacity = 50;
  double ewc_strength = 100.0;
  std::optional<double> clip_grad_norm;
  std::uint64_t seed = 42;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (epochs_per_task < 1) throw std::invalid_argument("epochs_per_task must be at least 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be nonnegative");
    if (ewc_strength < 0.0) throw std::invalid_argument("ewc_strength must be nonnegative");
    if (clip_grad_norm && !(*clip_grad_norm > 0.0)) throw std::invalid_argument("clip norm must be positive");
  }
};

struct EwcAnchor {
  ParamVector weights;
  ParamVector fisher;
};

/// State a learner carries from one training call to the next.
struct LearnerMemory {
  ReplayBuffer buffer;
  std::vector<EwcAnchor> anchors;
};

struct LearnerState {
  ParamVector params;
  LearnerMemory memory;
  std::map<int, std::size_t> replayed_by_source;  // replay provenance counts
};

/// Mean elementwise squared per-sample gradient.
inline ParamVector fisher_diagonal(const ParamVector& params, const Batch& batch, const ModelSpec& spec) {
  if (batch.empty()) throw std::invalid_argument("fisher_diagonal: empty batch");
  const Matrix g = per_sample_grads(params, batch, spec);
  return g.array().square().colwise().mean().transpose();
}

/// (strength / 2) * sum over anchors of sum_i F_i (w_i - w*_i)^2.
inline double ewc_penalty(const ParamVector& params, const std::vector<EwcAnchor>& anchors, double strength) {
  double total = 0.0;
  for (const auto& a : anchors) {
    if (a.weights.size() != params.size() || a.fisher.size() != params.size())
      throw std::invalid_argument("ewc_penalty: anchor length mismatch");
    total += (a.fisher.array() * (params - a.weights).array().square()).sum();
  }
  return 0.5 * strength * total;
}

inline ParamVector ewc_penalty_grad(const ParamVector& params, const std::vector<EwcAnchor>& anchors,
                                    double strength) {
  ParamVector g = ParamVector::Zero(params.size());
  for (const auto& a : anchors) g.array() += a.fisher.array() * (params - a.weights).array();
  return strength * g;
}

/// Quadratic pull toward a fixed point, used by proximal local training.
struct ProximalTerm {
  ParamVector anchor;
  double mu = 0.0;
};

inline const TaskDataset& task_by_id(const std::vector<TaskDataset>& tasks, int id) {
  auto it = std::find_if(tasks.begin(), tasks.end(), [id](const TaskDataset& t) { return t.task_id == id; });
  if (it == tasks.end()) throw std::invalid_argument("unknown task id " + std::to_string(id));
  return *it;
}

/// Called after each task with its position in the sequence and the weights.
using TaskEndHook = std::function<void(std::size_t position, const ParamVector& params)>;

/// Trains through `perm` in order, `epochs_per_task` epochs per task, with
/// momentum SGD. ER concatenates an equally sized replay minibatch to each
/// step once the buffer holds data and feeds each training sample of a task
/// into the reservoir once (during its first epoch). EWC anchors the Fisher
/// diagonal at the end of every task. Deterministic in (inputs, cfg.seed).
inline LearnerState train_seq(const Permutation& perm, const std::vector<TaskDataset>& tasks,
                              const ParamVector& init, const LearnerConfig& cfg, const ModelSpec& spec,
                              LearnerMemory memory, const std::optional<ProximalTerm>& prox = std::nullopt,
                              const TaskEndHook& on_task_end = {}) {
  cfg.validate();
  spec.validate();
  if (tasks.empty() || perm.size() == 0) throw std::invalid_argument("train_seq: empty task list");
  detail::check_params(init, spec);
  if (cfg.kind == LearnerKind::er && memory.buffer.capacity() == 0) {
    if (cfg.buffer_capacity == 0) throw std::invalid_argument("train_seq: replay needs a positive buffer capacity");
    memory.buffer = ReplayBuffer(cfg.buffer_capacity);
  }
  if (prox && prox->anchor.size() != init.size()) throw std::invalid_argument("train_seq: proximal anchor length");

  std::mt19937_64 rng(cfg.seed);
  LearnerState state;
  state.params = init;
  ParamVector velocity = ParamVector::Zero(init.size());
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (std::size_t step = 0; step < perm.size(); ++step) {
    const TaskDataset& task = task_by_id(tasks, perm[step]);
    const Batch& data = task.train;
    if (data.empty()) throw std::invalid_argument("train_seq: task without training data");
    std::vector<Eigen::Index> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    for (int epoch = 0; epoch < cfg.epochs_per_task; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t begin = 0; begin < order.size(); begin += bs) {
        const std::size_t end = std::min(order.size(), begin + bs);
        std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                      order.begin() + static_cast<std::ptrdiff_t>(end));
        Batch current = select_rows(data, idx);
        Batch step_batch;
        if (cfg.kind == LearnerKind::er && !memory.buffer.empty()) {
          const auto ridx = memory.buffer.sample_indices(idx.size(), rng);
          for (auto r : ridx) ++state.replayed_by_source[memory.buffer.entries()[r].source_task];
          Batch replay = memory.buffer.gather(ridx, spec);
          step_batch = concat_batches({&current, &replay});
        } else {
          step_batch = current;
        }

        ParamVector grad = loss_and_grad(state.params, step_batch, spec).grad;
        if (cfg.kind == LearnerKind::ewc && !memory.anchors.empty())
          grad += ewc_penalty_grad(state.params, memory.anchors, cfg.ewc_strength);
        if (prox && prox->mu != 0.0) grad += prox->mu * (state.params - prox->anchor);
        if (cfg.weight_decay != 0.0) grad += cfg.weight_decay * state.params;
        if (cfg.clip_grad_norm) {
          const double n = grad.norm();
          if (n > *cfg.clip_grad_norm) grad *= *cfg.clip_grad_norm / n;
        }
        velocity = cfg.momentum * velocity + grad;
        state.params -= cfg.learning_rate * velocity;

        if (cfg.kind == LearnerKind::er && epoch == 0) {
          for (Eigen::Index r = 0; r < current.size(); ++r) {
            ReplaySample s;
            s.input = current.inputs.row(r).transpose();
            if (spec.task_kind == TaskKind::classification)
              s.label = current.labels[static_cast<std::size_t>(r)];
            else
              s.value = current.values(r);
            s.source_task = task.task_id;
            memory.buffer.insert_reservoir(std::move(s), rng);
          }
        }
      }
    }
    if (cfg.kind == LearnerKind::ewc)
      memory.anchors.push_back({state.params, fisher_diagonal(state.params, data, spec)});
    if (on_task_end) on_task_end(step, state.params);
  }
  if (!state.params.allFinite()) throw std::runtime_error("train_seq: training diverged (non-finite parameters)");
  state.memory = std::move(memory);
  return state;
}

}  // namespace htcl

#endif  // HTCL_LEARNERS_HPP
