// Synthetic task streams, positional grouping and permutation utilities.
#ifndef HTCL_TASKS_HPP
#define HTCL_TASKS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "htcl/model.hpp"

namespace htcl {

struct SineTask {
  double amplitude = 1.0;
  double phase = 0.0;
};

struct TaskDataset {
  int task_id = 0;
  Batch train;
  Batch validation;
  Batch test;
  std::vector<int> class_ids;
  std::optional<SineTask> sine;
};

struct TaskGroup {
  int index = 0;
  std::vector<int> task_ids;
};

struct Permutation {
  std::vector<int> order;

  std::size_t size() const { return order.size(); }
  int operator[](std::size_t i) const { return order[i]; }
  auto operator<=>(const Permutation&) const = default;

  bool has_distinct_ids() const {
    std::vector<int> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    return std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end();
  }

  /// True when `order` is a rearrangement of 0..n-1.
  bool is_bijection() const {
    std::vector<int> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i)
      if (sorted[i] != static_cast<int>(i)) return false;
    return true;
  }

  std::string to_string(char sep = '-') const {
    std::string s;
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (i) s += sep;
      s += std::to_string(order[i]);
    }
    return s;
  }
};

inline Permutation identity_permutation(int n) {
  Permutation p;
  p.order.resize(static_cast<std::size_t>(n));
  std::iota(p.order.begin(), p.order.end(), 0);
  return p;
}

/// Output-head layout for split classification streams.
enum class LabelSpace {
  shared_head,  // labels remapped to the position of the class inside its task
  global,       // labels are the original class ids
};

struct SplitOptions {
  double validation_fraction = 0.15;
  double test_fraction = 0.25;
  LabelSpace labels = LabelSpace::shared_head;
};

namespace detail {

inline void require_positive(long long v, const char* what) {
  if (v <= 0) throw std::invalid_argument(std::string(what) + " must be positive");
}

// Splits rows into train/validation/test in a fixed shuffled order.
inline void split_rows(const Matrix& x, const std::vector<int>& labels, const Eigen::VectorXd& values,
                       bool classification, const SplitOptions& opts, std::mt19937_64& rng,
                       TaskDataset& out) {
  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n_test = static_cast<std::size_t>(std::round(opts.test_fraction * static_cast<double>(n)));
  auto n_val = static_cast<std::size_t>(std::round(opts.validation_fraction * static_cast<double>(n)));
  n_test = std::max<std::size_t>(n_test, 1);
  n_val = std::max<std::size_t>(n_val, 1);
  if (n_test + n_val >= n) throw std::invalid_argument("task too small for train/validation/test split");

  auto take = [&](std::size_t begin, std::size_t end, Batch& b) {
    const auto m = static_cast<Eigen::Index>(end - begin);
    b.inputs.resize(m, x.cols());
    if (classification)
      b.labels.resize(static_cast<std::size_t>(m));
    else
      b.values.resize(m);
    for (std::size_t r = begin; r < end; ++r) {
      const auto row = static_cast<Eigen::Index>(r - begin);
      b.inputs.row(row) = x.row(static_cast<Eigen::Index>(idx[r]));
      if (classification)
        b.labels[static_cast<std::size_t>(row)] = labels[idx[r]];
      else
        b.values(row) = values(static_cast<Eigen::Index>(idx[r]));
    }
  };
  const std::size_t n_train = n - n_test - n_val;
  take(0, n_train, out.train);
  take(n_train, n_train + n_val, out.validation);
  take(n_train + n_val, n, out.test);
}

}  // namespace detail

inline std::uint64_t factorial(std::size_t n) {
  std::uint64_t f = 1;
  for (std::size_t i = 2; i <= n; ++i) {
    if (f > std::numeric_limits<std::uint64_t>::max() / i) return std::numeric_limits<std::uint64_t>::max();
    f *= i;
  }
  return f;
}

/// Number of outputs a split-classification stream needs.
inline int split_output_dim(int num_classes, int classes_per_task, LabelSpace labels) {
  return labels == LabelSpace::global ? num_classes : std::min(num_classes, classes_per_task);
}

/// One isotropic Gaussian cluster per class, classes dealt out to tasks in
/// consecutive blocks; a trailing partial block joins the last task.
inline std::vector<TaskDataset> gen_split_gaussians(int num_classes, int classes_per_task, int dim,
                                                    int samples_per_class, double spread,
                                                    std::uint64_t seed, const SplitOptions& opts = {}) {
  detail::require_positive(num_classes, "num_classes");
  detail::require_positive(classes_per_task, "classes_per_task");
  detail::require_positive(dim, "dim");
  detail::require_positive(samples_per_class, "samples_per_class");
  if (!(spread > 0.0)) throw std::invalid_argument("spread must be positive");
  if (classes_per_task > num_classes) throw std::invalid_argument("classes_per_task exceeds num_classes");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix means(num_classes, dim);
  for (int c = 0; c < num_classes; ++c)
    for (int d = 0; d < dim; ++d) means(c, d) = spread * normal(rng);

  const int num_tasks = num_classes / classes_per_task;
  std::vector<TaskDataset> tasks(static_cast<std::size_t>(num_tasks));
  for (int t = 0; t < num_tasks; ++t) {
    TaskDataset& task = tasks[static_cast<std::size_t>(t)];
    task.task_id = t;
    const int first = t * classes_per_task;
    const int last = (t == num_tasks - 1) ? num_classes : first + classes_per_task;
    for (int c = first; c < last; ++c) task.class_ids.push_back(c);

    const auto n = static_cast<Eigen::Index>(task.class_ids.size()) * samples_per_class;
    Matrix x(n, dim);
    std::vector<int> labels(static_cast<std::size_t>(n));
    Eigen::Index row = 0;
    for (std::size_t ci = 0; ci < task.class_ids.size(); ++ci) {
      const int c = task.class_ids[ci];
      const int label = opts.labels == LabelSpace::global ? c : static_cast<int>(ci);
      for (int s = 0; s < samples_per_class; ++s, ++row) {
        for (int d = 0; d < dim; ++d) x(row, d) = means(c, d) + normal(rng);
        labels[static_cast<std::size_t>(row)] = label;
      }
    }
    detail::split_rows(x, labels, {}, true, opts, rng, task);
  }
  return tasks;
}

/// A shared Gaussian classification problem whose input coordinates are
/// shuffled by a fixed random permutation per task. Task 0 is unpermuted.
inline std::vector<TaskDataset> gen_permuted_features(std::uint64_t base_seed, int num_tasks, int dim,
                                                      int num_classes = 2, int samples_per_class = 100,
                                                      double spread = 2.0, const SplitOptions& opts = {}) {
  detail::require_positive(num_tasks, "num_tasks");
  detail::require_positive(dim, "dim");
  detail::require_positive(num_classes, "num_classes");
  detail::require_positive(samples_per_class, "samples_per_class");
  if (dim < 20 && static_cast<std::uint64_t>(num_tasks) > factorial(static_cast<std::size_t>(dim)))
    throw std::invalid_argument("not enough distinct feature permutations for the requested task count");

  SplitOptions base_opts = opts;
  base_opts.labels = LabelSpace::global;
  auto base = gen_split_gaussians(num_classes, num_classes, dim, samples_per_class, spread, base_seed,
                                  base_opts);
  TaskDataset& proto = base.front();

  std::mt19937_64 rng(base_seed ^ 0x9e3779b97f4a7c15ULL);
  std::set<std::vector<int>> used;
  std::vector<TaskDataset> tasks;
  for (int t = 0; t < num_tasks; ++t) {
    std::vector<int> perm = identity_permutation(dim).order;
    if (t > 0) {
      do {
        std::shuffle(perm.begin(), perm.end(), rng);
      } while (used.count(perm) != 0);
    }
    used.insert(perm);
    auto apply = [&](const Batch& src) {
      Batch b = src;
      for (int d = 0; d < dim; ++d) b.inputs.col(d) = src.inputs.col(perm[static_cast<std::size_t>(d)]);
      return b;
    };
    TaskDataset task;
    task.task_id = t;
    task.class_ids = proto.class_ids;
    task.train = apply(proto.train);
    task.validation = apply(proto.validation);
    task.test = apply(proto.test);
    tasks.push_back(std::move(task));
  }
  return tasks;
}

struct SineOptions {
  int samples = 200;
  double noise_std = 0.0;
  double x_min = -5.0;
  double x_max = 5.0;
  double amplitude_min = 0.1;
  double amplitude_max = 5.0;
  SplitOptions split{};
};

/// Sine regression tasks y = A sin(x + phase) + noise with per-task
/// amplitude and phase.
inline std::vector<TaskDataset> gen_sine_tasks(int num_tasks, std::uint64_t seed, const SineOptions& opts = {}) {
  detail::require_positive(num_tasks, "num_tasks");
  detail::require_positive(opts.samples, "samples");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> amp(opts.amplitude_min, opts.amplitude_max);
  std::uniform_real_distribution<double> phase(0.0, std::numbers::pi);
  std::uniform_real_distribution<double> xs(opts.x_min, opts.x_max);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<TaskDataset> tasks;
  for (int t = 0; t < num_tasks; ++t) {
    TaskDataset task;
    task.task_id = t;
    task.sine = SineTask{amp(rng), phase(rng)};
    Matrix x(opts.samples, 1);
    Eigen::VectorXd y(opts.samples);
    for (int i = 0; i < opts.samples; ++i) {
      x(i, 0) = xs(rng);
      y(i) = task.sine->amplitude * std::sin(x(i, 0) + task.sine->phase);
      if (opts.noise_std > 0.0) y(i) += opts.noise_std * noise(rng);
    }
    detail::split_rows(x, {}, y, false, opts.split, rng, task);
    tasks.push_back(std::move(task));
  }
  return tasks;
}

/// Positional groups of size k; the final group absorbs the remainder.
inline std::vector<TaskGroup> partition_into_groups(int num_tasks, int k) {
  if (k < 1) throw std::invalid_argument("group size must be at least 1");
  if (num_tasks < 1) throw std::invalid_argument("num_tasks must be positive");
  if (k > num_tasks) throw std::invalid_argument("group size exceeds the number of tasks");
  const int m = num_tasks / k;
  std::vector<TaskGroup> groups(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    groups[static_cast<std::size_t>(j)].index = j;
    const int end = (j == m - 1) ? num_tasks : (j + 1) * k;
    for (int t = j * k; t < end; ++t) groups[static_cast<std::size_t>(j)].task_ids.push_back(t);
  }
  return groups;
}

inline constexpr std::size_t kMaxGroupSize = 6;


/// All orderings of the group's tasks in lexicographic order, starting from
/// the sorted ids (so the result does not depend on the group's own order).
inline std::vector<Permutation> enumerate_intra_group_perms(const TaskGroup& group) {
  const std::size_t k = group.task_ids.size();
  if (k == 0) throw std::invalid_argument("empty task group");
  if (k > kMaxGroupSize)
    throw std::invalid_argument("group size " + std::to_string(k) + " exceeds the exhaustive search limit of " +
                                std::to_string(kMaxGroupSize));
  if (k >= 5)
    std::clog << "warning: group of size " << k << " requires " << factorial(k) << " local trainings\n";
  std::vector<int> ids = group.task_ids;
  std::sort(ids.begin(), ids.end());
  std::vector<Permutation> perms;
  perms.reserve(static_cast<std::size_t>(factorial(k)));
  do {
    perms.push_back(Permutation{ids});
  } while (std::next_permutation(ids.begin(), ids.end()));
  return perms;
}

/// Full-sequence orderings: every ordering (lexicographic) when requested
/// and affordable, otherwise distinct uniform samples.
inline std::vector<Permutation> sample_full_permutations(int num_tasks, std::size_t how_many, std::uint64_t seed,
                                                         bool exhaustive_if_possible) {
  detail::require_positive(num_tasks, "num_tasks");
  const std::uint64_t total = factorial(static_cast<std::size_t>(num_tasks));
  std::vector<Permutation> out;
  if (exhaustive_if_possible && total <= how_many) {
    Permutation p = identity_permutation(num_tasks);
    do {
      out.push_back(p);
    } while (std::next_permutation(p.order.begin(), p.order.end()));
    return out;
  }
  const std::size_t target = static_cast<std::size_t>(std::min<std::uint64_t>(how_many, total));
  std::mt19937_64 rng(seed);
  std::set<Permutation> seen;
  Permutation p = identity_permutation(num_tasks);
  while (out.size() < target) {
    std::shuffle(p.order.begin(), p.order.end(), rng);
    if (seen.insert(p).second) out.push_back(p);
  }
  return out;
}

// Text dump: a header line, then one sample per line as
//   task_id,split,feature_1,...,feature_d,target
// where target is the integer label or the real regression value.
inline void write_datasets(std::ostream& os, const std::vector<TaskDataset>& tasks, TaskKind kind) {
  if (tasks.empty()) throw std::invalid_argument("write_datasets: no tasks");
  const auto dim = tasks.front().train.inputs.cols();
  os << "# htcl-dataset kind=" << (kind == TaskKind::classification ? "classification" : "regression")
     << " dim=" << dim << '\n';
  os << std::setprecision(17);
  auto dump = [&](int id, const char* split, const Batch& b) {
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      os << id << ',' << split;
      for (Eigen::Index d = 0; d < b.inputs.cols(); ++d) os << ',' << b.inputs(i, d);
      if (kind == TaskKind::classification)
        os << ',' << b.labels[static_cast<std::size_t>(i)];
      else
        os << ',' << b.values(i);
      os << '\n';
    }
  };
  for (const auto& t : tasks) {
    dump(t.task_id, "train", t.train);
    dump(t.task_id, "validation", t.validation);
    dump(t.task_id, "test", t.test);
  }
}

inline std::vector<TaskDataset> read_datasets(std::istream& is, TaskKind* kind_out = nullptr) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("# htcl-dataset", 0) != 0)
    throw std::runtime_error("read_datasets: missing header");
  const bool classification = line.find("kind=classification") != std::string::npos;
  const auto dim_pos = line.find("dim=");
  if (dim_pos == std::string::npos) throw std::runtime_error("read_datasets: header lacks dim");
  const int dim = std::stoi(line.substr(dim_pos + 4));
  if (kind_out) *kind_out = classification ? TaskKind::classification : TaskKind::regression;

  struct Rows {
    std::vector<std::vector<double>> x;
    std::vector<double> y;
  };
  std::vector<std::array<Rows, 3>> rows;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    const int id = std::stoi(field);
    std::getline(ss, field, ',');
    int split = field == "train" ? 0 : field == "validation" ? 1 : field == "test" ? 2 : -1;
    if (split < 0 || id < 0) throw std::runtime_error("read_datasets: malformed line: " + line);
    std::vector<double> values;
    while (std::getline(ss, field, ',')) values.push_back(std::stod(field));
    if (static_cast<int>(values.size()) != dim + 1)
      throw std::runtime_error("read_datasets: wrong field count: " + line);
    if (static_cast<std::size_t>(id) >= rows.size()) rows.resize(static_cast<std::size_t>(id) + 1);
    auto& r = rows[static_cast<std::size_t>(id)][static_cast<std::size_t>(split)];
    r.y.push_back(values.back());
    values.pop_back();
    r.x.push_back(std::move(values));
  }
  std::vector<TaskDataset> tasks;
  for (std::size_t id = 0; id < rows.size(); ++id) {
    TaskDataset t;
    t.task_id = static_cast<int>(id);
    Batch* targets[3] = {&t.train, &t.validation, &t.test};
    for (std::size_t s = 0; s < 3; ++s) {
      const Rows& r = rows[id][s];
      Batch& b = *targets[s];
      b.inputs.resize(static_cast<Eigen::Index>(r.x.size()), dim);
      for (std::size_t i = 0; i < r.x.size(); ++i)
        for (int d = 0; d < dim; ++d) b.inputs(static_cast<Eigen::Index>(i), d) = r.x[i][static_cast<std::size_t>(d)];
      if (classification) {
        for (double y : r.y) b.labels.push_back(static_cast<int>(y));
      } else {
        b.values = Eigen::Map<const Eigen::VectorXd>(r.y.data(), static_cast<Eigen::Index>(r.y.size()));
      }
    }
    tasks.push_back(std::move(t));
  }
  return tasks;
}

}  // namespace htcl

#endif  // HTCL_TASKS_HPP
