// Continual-learning metrics over an accuracy matrix A, where A(i, j) is the
// test accuracy on the j-th task of the sequence after training stage i.
#ifndef HTCL_METRICS_HPP
#define HTCL_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "htcl/model.hpp"

namespace htcl {

struct AccuracyMatrix {
  Matrix values;  // T x T

  AccuracyMatrix() = default;
  explicit AccuracyMatrix(Eigen::Index tasks) : values(Matrix::Zero(tasks, tasks)) {}
  explicit AccuracyMatrix(Matrix m) : values(std::move(m)) {
    if (values.rows() != values.cols()) throw std::invalid_argument("accuracy matrix must be square");
  }

  Eigen::Index tasks() const { return values.rows(); }
  double operator()(Eigen::Index stage, Eigen::Index task) const { return values(stage, task); }
  double& operator()(Eigen::Index stage, Eigen::Index task) { return values(stage, task); }
};

struct MetricsRecord {
  std::string method;
  std::uint64_t seed = 0;
  std::string permutation;
  double mean_accuracy = 0.0;
  double avg_forgetting = 0.0;
  double wall_time_seconds = 0.0;
};

/// Mean of the final row.
inline double mean_accuracy(const AccuracyMatrix& a) {
  if (a.tasks() == 0) throw std::invalid_argument("mean_accuracy: empty matrix");
  return a.values.row(a.tasks() - 1).mean();
}

/// (1/(T-1)) sum_{j<T} max_{l<T} (A(l, j) - A(T, j)) with 1-based T; the
/// final task is excluded from the sum and the final stage from the max.
/// Zero for a single task.
inline double avg_forgetting(const AccuracyMatrix& a) {
  const Eigen::Index t = a.tasks();
  if (t == 0) throw std::invalid_argument("avg_forgetting: empty matrix");
  if (t == 1) return 0.0;
  double total = 0.0;
  for (Eigen::Index j = 0; j + 1 < t; ++j) {
    double peak_drop = -std::numeric_limits<double>::infinity();
    for (Eigen::Index l = 0; l + 1 < t; ++l) peak_drop = std::max(peak_drop, a(l, j) - a(t - 1, j));
    total += peak_drop;
  }
  return total / static_cast<double>(t - 1);
}

/// Population standard deviation (1/P).
inline double population_std(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("population_std: no values");
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

inline double std_across_permutations(const std::vector<MetricsRecord>& records) {
  std::vector<double> acc;
  acc.reserve(records.size());
  for (const auto& r : records) acc.push_back(r.mean_accuracy);
  return population_std(acc);
}

/// Per-task population std of final accuracies across runs, with tasks
/// indexed by their id. `task_order[r][pos]` is the task id at sequence
/// position `pos` of run r.
inline std::vector<double> per_task_std(const std::vector<AccuracyMatrix>& runs,
                                        const std::vector<std::vector<int>>& task_order) {
  if (runs.empty() || runs.size() != task_order.size()) throw std::invalid_argument("per_task_std: bad input");
  const Eigen::Index t = runs.front().tasks();
  std::vector<std::vector<double>> by_task(static_cast<std::size_t>(t));
  for (std::size_t r = 0; r < runs.size(); ++r)
    for (Eigen::Index pos = 0; pos < t; ++pos)
      by_task.at(static_cast<std::size_t>(task_order[r].at(static_cast<std::size_t>(pos))))
          .push_back(runs[r](t - 1, pos));
  std::vector<double> out;
  for (const auto& v : by_task) out.push_back(population_std(v));
  return out;
}

}  // namespace htcl

#endif  // HTCL_METRICS_HPP
