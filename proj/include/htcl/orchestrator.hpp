// Grouped permutation search with hierarchical second-order consolidation.
//
// Tasks arrive in a full order and are cut into positional groups. Inside a
// group every ordering is trained from the same starting weights and the
// same learner memory; the best-scoring ordering becomes the local model,
// which is then consolidated into the hierarchy. After the final group a
// short catch-up phase repeats the consolidation toward the last local
// model. The top level of the hierarchy is the delivered model.
#ifndef HTCL_ORCHESTRATOR_HPP
#define HTCL_ORCHESTRATOR_HPP

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "htcl/consolidation.hpp"
#include "htcl/curvature.hpp"
#include "htcl/learners.hpp"
#include "htcl/metrics.hpp"
#include "htcl/model.hpp"
#include "htcl/tasks.hpp"

namespace htcl {

enum class EvalPolicy {
  group_validation,  // mean validation accuracy over the current group's tasks
  seen_test,         // mean test accuracy over every task seen so far
};

struct CurvatureConfig {
  CurvatureKind kind = CurvatureKind::diagonal;
  int rank = 10;
  std::size_t sample_cap = kDefaultCurvatureSamples;
};

struct HtclConfig {
  int group_size = 2;
  int levels = 1;
  double lambda = 1.0;
  double lambda_ratio = 1.0;
  TaylorStep step{0.9, std::nullopt};
  int n_catch = 2;
  CurvatureConfig curvature{};
  EvalPolicy eval = EvalPolicy::group_validation;
  std::uint64_t seed = 42;

  void validate(int num_tasks) const {
    if (group_size < 1) throw std::invalid_argument("group size must be at least 1");
    if (group_size > num_tasks) throw std::invalid_argument("group size exceeds the number of tasks");
    if (levels < 1) throw std::invalid_argument("hierarchy needs at least one level");
    if (n_catch < 0) throw std::invalid_argument("catch-up iterations must be nonnegative");
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
    if (!(lambda_ratio > 0.0)) throw std::invalid_argument("lambda ratio must be positive");
    if (!(step.eta > 0.0)) throw std::invalid_argument("eta must be positive");
    if (curvature.kind == CurvatureKind::lowrank && curvature.rank < 1)
      throw std::invalid_argument("low-rank curvature needs a positive rank");
  }
};

/// splitmix64 finalizer; derives independent seeds from a base seed.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct PermutationScore {
  Permutation perm;
  double score = 0.0;
};

struct GroupExplorationResult {
  TaskGroup group;
  Permutation best_perm;
  double best_score = 0.0;
  LearnerState best_state;
  std::vector<PermutationScore> per_perm_scores;  // lexicographic order
  std::size_t trainings_performed = 0;

  double mean_score() const {
    double s = 0.0;
    double hi = per_perm_scores.front().score;
    for (const auto& p : per_perm_scores) {
      s += p.score;
      hi = std::max(hi, p.score);
    }
    // The exact mean never exceeds the max; rounding of the sum can.
    return std::min(s / static_cast<double>(per_perm_scores.size()), hi);
  }
};

namespace detail {

inline std::vector<int> sorted_ids(std::vector<int> ids) {
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline double selection_score(const ParamVector& params, const std::vector<TaskDataset>& tasks,
                              const std::vector<int>& group_ids, const std::vector<int>& seen_ids,
                              EvalPolicy policy, const ModelSpec& spec) {
  const std::vector<int> ids = sorted_ids(policy == EvalPolicy::group_validation ? group_ids : seen_ids);
  double total = 0.0;
  for (int id : ids) {
    const TaskDataset& t = task_by_id(tasks, id);
    total += accuracy_eval(params, policy == EvalPolicy::group_validation ? t.validation : t.test, spec);
  }
  return total / static_cast<double>(ids.size());
}

}  // namespace detail

/// Trains every intra-group ordering from `init` and a private copy of
/// `memory`, scores each with `policy`, and keeps the best. Ties go to the
/// lexicographically smallest ordering. `seen_before` lists tasks from
/// earlier groups (used by the seen-test policy).
inline GroupExplorationResult explore_group(const TaskGroup& group, const std::vector<TaskDataset>& tasks,
                                            const ParamVector& init, const LearnerMemory& memory,
                                            const LearnerConfig& learner, const ModelSpec& spec, EvalPolicy policy,
                                            const std::vector<int>& seen_before = {}) {
  const auto perms = enumerate_intra_group_perms(group);
  std::vector<int> seen = seen_before;
  seen.insert(seen.end(), group.task_ids.begin(), group.task_ids.end());

  GroupExplorationResult out;
  out.group = group;
  bool have_best = false;
  for (const auto& perm : perms) {
    LearnerState state = train_seq(perm, tasks, init, learner, spec, memory);
    ++out.trainings_performed;
    const double score = detail::selection_score(state.params, tasks, group.task_ids, seen, policy, spec);
    out.per_perm_scores.push_back({perm, score});
    // Strict comparison over lexicographic enumeration keeps the smallest on ties.
    if (!have_best || score > out.best_score) {
      have_best = true;
      out.best_score = score;
      out.best_perm = perm;
      out.best_state = std::move(state);
    }
  }
  return out;
}

struct SelectionAuditReport {
  double sum_best = 0.0;
  double sum_mean = 0.0;
  double gap = 0.0;  // sum_best - sum_mean
  std::size_t draws = 0;
  std::size_t violations = 0;

  bool ok() const { return violations == 0 && sum_best >= sum_mean; }
};

/// Checks that the summed best group scores dominate the summed scores of
/// `draws` uniformly random intra-group selections and the summed means.
inline SelectionAuditReport selection_audit(const std::vector<GroupExplorationResult>& results, std::mt19937_64& rng,
                                            std::size_t draws = 1000) {
  SelectionAuditReport rep;
  rep.draws = draws;
  for (const auto& r : results) {
    if (r.per_perm_scores.empty()) throw std::invalid_argument("selection_audit: group without scores");
    rep.sum_best += r.best_score;
    rep.sum_mean += r.mean_score();
  }
  for (std::size_t d = 0; d < draws; ++d) {
    double sum_random = 0.0;
    for (const auto& r : results) {
      std::uniform_int_distribution<std::size_t> pick(0, r.per_perm_scores.size() - 1);
      sum_random += r.per_perm_scores[pick(rng)].score;
    }
    if (sum_random > rep.sum_best) ++rep.violations;
  }
  rep.gap = rep.sum_best - rep.sum_mean;
  if (rep.gap < 0.0) ++rep.violations;
  return rep;
}

struct GroupLog {
  int group_index = 0;
  std::vector<int> task_ids;
  std::vector<PermutationScore> scores;
  Permutation selected;
  double selected_score = 0.0;
  std::vector<double> step_norms;  // one per level; empty for the first group
};

struct HtclRun {
  HierarchyState hierarchy;
  AccuracyMatrix accuracy;  // columns follow sequence positions of full_perm
  std::vector<GroupExplorationResult> groups;
  std::vector<GroupLog> log;
  std::vector<std::vector<double>> level_step_norms;  // [level][update], catch-up included
  std::vector<double> catch_up_norms;                 // top-level step norms in catch-up
  std::size_t trainings = 0;
  std::size_t consolidation_steps = 0;
  SelectionAuditReport audit;
  LearnerMemory memory;
};

inline nlohmann::json to_json(const GroupLog& g) {
  nlohmann::json perms = nlohmann::json::array();
  for (const auto& s : g.scores) perms.push_back({{"permutation", s.perm.order}, {"score", s.score}});
  return {{"group", g.group_index},   {"tasks", g.task_ids},
          {"scores", perms},          {"selected", g.selected.order},
          {"selected_score", g.selected_score}, {"step_norms", g.step_norms}};
}

/// One JSON object per line, one line per group.
inline void write_run_log(std::ostream& os, const std::vector<GroupLog>& log) {
  for (const auto& g : log) os << to_json(g).dump() << '\n';
}

/// Full pipeline over `tasks` arriving in `full_perm` order, starting from
/// `init`. Row i of the accuracy matrix is the top level evaluated on every
/// task after the group containing sequence position i has been
/// consolidated (the last group's rows include the catch-up phase).
inline HtclRun run_htcl(const std::vector<TaskDataset>& tasks, const Permutation& full_perm, const ParamVector& init,
                        const LearnerConfig& learner, const HtclConfig& cfg, const ModelSpec& spec) {
  const int n = static_cast<int>(full_perm.size());
  if (n == 0 || !full_perm.has_distinct_ids()) throw std::invalid_argument("run_htcl: invalid task order");
  cfg.validate(n);
  if (cfg.curvature.kind == CurvatureKind::dense && spec.param_count() > kMaxOracleParams)
    throw std::invalid_argument("run_htcl: dense curvature limited to small models");

  const auto positional = partition_into_groups(n, cfg.group_size);
  HtclRun run;
  run.accuracy = AccuracyMatrix(n);
  run.level_step_norms.resize(static_cast<std::size_t>(cfg.levels));
  run.memory.buffer = ReplayBuffer(learner.kind == LearnerKind::er ? learner.buffer_capacity : 0);
  const auto lambdas = lambda_schedule(static_cast<std::size_t>(cfg.levels), cfg.lambda, cfg.lambda_ratio);

  auto source_for = [&](const std::vector<int>& group_ids, std::size_t group_index) {
    const std::vector<int> ids = detail::sorted_ids(group_ids);
    std::vector<const Batch*> data;
    for (int id : ids) data.push_back(&task_by_id(tasks, id).train);
    auto pool = std::make_shared<Batch>(make_curvature_pool(run.memory.buffer, data, spec, cfg.curvature.sample_cap,
                                                            mix_seed(cfg.seed, 1000 + group_index)));
    return QuadraticSource([pool, &spec, &cfg](const ParamVector& w, std::size_t) {
      LocalQuadratic q;
      q.gradient = estimate_gradient(w, *pool, spec);
      switch (cfg.curvature.kind) {
        case CurvatureKind::diagonal: q.curvature = estimate_diag_curvature(w, *pool, spec); break;
        case CurvatureKind::lowrank: q.curvature = estimate_lowrank_curvature(w, *pool, spec, cfg.curvature.rank); break;
        case CurvatureKind::dense: q.curvature = exact_dense_hessian_oracle(w, *pool, spec); break;
      }
      return q;
    });
  };

  auto record_rows = [&](const TaskGroup& positions) {
    Eigen::RowVectorXd row(n);
    for (int pos = 0; pos < n; ++pos) row(pos) = accuracy_eval(run.hierarchy.top(), task_by_id(tasks, full_perm[pos]).test, spec);
    for (int pos : positions.task_ids) run.accuracy.values.row(pos) = row;
  };

  std::vector<int> seen;
  ParamVector last_local;
  for (std::size_t j = 0; j < positional.size(); ++j) {
    TaskGroup group;
    group.index = static_cast<int>(j);
    for (int pos : positional[j].task_ids) group.task_ids.push_back(full_perm[static_cast<std::size_t>(pos)]);

    LearnerConfig lc = learner;
    lc.seed = mix_seed(cfg.seed, j);
    const ParamVector& start = (j == 0) ? init : run.hierarchy.levels.front();
    GroupExplorationResult res = explore_group(group, tasks, start, run.memory, lc, spec, cfg.eval, seen);
    run.trainings += res.trainings_performed;
    run.memory = res.best_state.memory;
    last_local = res.best_state.params;

    GroupLog entry;
    entry.group_index = group.index;
    entry.task_ids = group.task_ids;
    entry.scores = res.per_perm_scores;
    entry.selected = res.best_perm;
    entry.selected_score = res.best_score;

    if (j == 0) {
      run.hierarchy = make_hierarchy(last_local, lambdas);
    } else {
      std::vector<double> norms;
      run.hierarchy = multi_level_consolidate(run.hierarchy, last_local, source_for(group.task_ids, j), cfg.step, &norms);
      ++run.consolidation_steps;
      for (std::size_t l = 0; l < norms.size(); ++l) run.level_step_norms[l].push_back(norms[l]);
      entry.step_norms = norms;
    }
    seen.insert(seen.end(), group.task_ids.begin(), group.task_ids.end());

    if (j + 1 == positional.size() && cfg.n_catch > 0) {
      const QuadraticSource source = source_for(group.task_ids, j);
      for (int i = 0; i < cfg.n_catch; ++i) {
        std::vector<double> norms;
        run.hierarchy = multi_level_consolidate(run.hierarchy, last_local, source, cfg.step, &norms);
        ++run.consolidation_steps;
        for (std::size_t l = 0; l < norms.size(); ++l) run.level_step_norms[l].push_back(norms[l]);
        run.catch_up_norms.push_back(norms.back());
      }
    }
    record_rows(positional[j]);
    run.log.push_back(std::move(entry));
    run.groups.push_back(std::move(res));
  }

  std::mt19937_64 audit_rng(mix_seed(cfg.seed, 0xa0d17));
  run.audit = selection_audit(run.groups, audit_rng);
  if (!run.audit.ok()) throw std::logic_error("selection audit violated: best group scores below a random selection");
  return run;
}

}  // namespace htcl

#endif  // HTCL_ORCHESTRATOR_HPP
