// Permutation-sweep experiments: configuration, runner, CSV records and
// per-method summaries.
#ifndef HTCL_EXPERIMENT_HPP
#define HTCL_EXPERIMENT_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "htcl/federated.hpp"
#include "htcl/learners.hpp"
#include "htcl/metrics.hpp"
#include "htcl/orchestrator.hpp"
#include "htcl/tasks.hpp"

namespace htcl {

enum class DatasetKind { gaussians, permuted, sine };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::gaussians;
  int num_classes = 10;
  int classes_per_task = 2;
  int num_tasks = 5;  // permuted and sine streams
  int dim = 2;
  int samples_per_class = 100;
  double spread = 3.0;
  double noise = 0.1;  // sine
  LabelSpace labels = LabelSpace::shared_head;
};

enum class Method { baseline, htcl, fedavg, fedprox };

struct ExperimentConfig {
  DatasetConfig dataset{};
  std::vector<int> hidden{32};
  Activation activation = Activation::tanh;
  LearnerConfig learner{};
  HtclConfig htcl{};
  FedConfig fed{};
  std::vector<Method> methods{Method::baseline, Method::htcl};
  std::optional<std::size_t> perms;  // empty = every ordering
  std::vector<std::uint64_t> seeds{42};
  std::string out_path = "results.csv";
  std::string log_path;       // optional per-group run log (JSON lines)
  std::string snapshot_dir;   // optional final hierarchy per HTCL run
  int threads = 1;

  void validate() const {
    if (seeds.empty()) throw std::invalid_argument("at least one seed required");
    if (methods.empty()) throw std::invalid_argument("at least one method required");
    if (threads < 1) throw std::invalid_argument("threads must be at least 1");
    if (perms && *perms == 0) throw std::invalid_argument("permutation budget must be positive");
    for (int h : hidden)
      if (h < 1) throw std::invalid_argument("hidden widths must be positive");
    learner.validate();
    fed.validate();
  }
};

// ---------------------------------------------------------------------------
// Config text: one `section.key = value` per line, `#` starts a comment.

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::map<std::string, std::string> parse_key_values(std::istream& is) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline CurvatureConfig parse_curvature(const std::string& s) {
  CurvatureConfig c;
  if (s == "diag" || s == "diagonal") {
    c.kind = CurvatureKind::diagonal;
  } else if (s == "dense") {
    c.kind = CurvatureKind::dense;
  } else if (s.rfind("lowrank", 0) == 0) {
    c.kind = CurvatureKind::lowrank;
    const auto colon = s.find(':');
    if (colon != std::string::npos) c.rank = std::stoi(s.substr(colon + 1));
  } else {
    throw std::invalid_argument("unknown curvature variant: " + s);
  }
  return c;
}

inline DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "gaussians") return DatasetKind::gaussians;
  if (s == "permuted") return DatasetKind::permuted;
  if (s == "sine") return DatasetKind::sine;
  throw std::invalid_argument("unknown dataset: " + s);
}

inline Method parse_method(const std::string& s) {
  if (s == "baseline") return Method::baseline;
  if (s == "htcl") return Method::htcl;
  if (s == "fedavg") return Method::fedavg;
  if (s == "fedprox") return Method::fedprox;
  throw std::invalid_argument("unknown method: " + s);
}

inline std::optional<std::size_t> parse_perm_budget(const std::string& s) {
  if (s == "all") return std::nullopt;
  const long long v = std::stoll(s);
  if (v <= 0) throw std::invalid_argument("permutation budget must be positive");
  return static_cast<std::size_t>(v);
}

/// Applies `key = value` settings on top of `cfg`. Unknown keys are errors.
inline void apply_settings(ExperimentConfig& cfg, const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    try {
      if (key == "dataset.kind") cfg.dataset.kind = parse_dataset_kind(value);
      else if (key == "dataset.num_classes") cfg.dataset.num_classes = std::stoi(value);
      else if (key == "dataset.classes_per_task") cfg.dataset.classes_per_task = std::stoi(value);
      else if (key == "dataset.num_tasks") cfg.dataset.num_tasks = std::stoi(value);
      else if (key == "dataset.dim") cfg.dataset.dim = std::stoi(value);
      else if (key == "dataset.samples_per_class") cfg.dataset.samples_per_class = std::stoi(value);
      else if (key == "dataset.spread") cfg.dataset.spread = std::stod(value);
      else if (key == "dataset.noise") cfg.dataset.noise = std::stod(value);
      else if (key == "dataset.labels") {
        if (value == "shared") cfg.dataset.labels = LabelSpace::shared_head;
        else if (value == "global") cfg.dataset.labels = LabelSpace::global;
        else throw std::invalid_argument("expected shared or global");
      }
      else if (key == "model.hidden") {
        cfg.hidden.clear();
        for (const auto& h : split_list(value)) cfg.hidden.push_back(std::stoi(h));
      }
      else if (key == "model.activation") {
        if (value == "tanh") cfg.activation = Activation::tanh;
        else if (value == "relu") cfg.activation = Activation::relu;
        else throw std::invalid_argument("expected tanh or relu");
      }
      else if (key == "learner.kind") cfg.learner.kind = parse_learner_kind(value);
      else if (key == "learner.lr") cfg.learner.learning_rate = std::stod(value);
      else if (key == "learner.epochs") cfg.learner.epochs_per_task = std::stoi(value);
      else if (key == "learner.batch_size") cfg.learner.batch_size = std::stoi(value);
      else if (key == "learner.momentum") cfg.learner.momentum = std::stod(value);
      else if (key == "learner.weight_decay") cfg.learner.weight_decay = std::stod(value);
      else if (key == "learner.buffer") cfg.learner.buffer_capacity = static_cast<std::size_t>(std::stoul(value));
      else if (key == "learner.ewc_strength") cfg.learner.ewc_strength = std::stod(value);
      else if (key == "learner.clip") {
        if (value == "none") cfg.learner.clip_grad_norm.reset();
        else cfg.learner.clip_grad_norm = std::stod(value);
      }
      else if (key == "htcl.group_size") cfg.htcl.group_size = std::stoi(value);
      else if (key == "htcl.levels") cfg.htcl.levels = std::stoi(value);
      else if (key == "htcl.lambda") cfg.htcl.lambda = std::stod(value);
      else if (key == "htcl.lambda_ratio") cfg.htcl.lambda_ratio = std::stod(value);
      else if (key == "htcl.eta") cfg.htcl.step.eta = std::stod(value);
      else if (key == "htcl.clip") {
        if (value == "none") cfg.htcl.step.max_step_norm.reset();
        else cfg.htcl.step.max_step_norm = std::stod(value);
      }
      else if (key == "htcl.catchup") cfg.htcl.n_catch = std::stoi(value);
      else if (key == "htcl.curvature") {
        const auto cap = cfg.htcl.curvature.sample_cap;
        cfg.htcl.curvature = parse_curvature(value);
        cfg.htcl.curvature.sample_cap = cap;
      }
      else if (key == "htcl.curvature_samples") cfg.htcl.curvature.sample_cap = static_cast<std::size_t>(std::stoul(value));
      else if (key == "htcl.eval") {
        if (value == "group_validation") cfg.htcl.eval = EvalPolicy::group_validation;
        else if (value == "seen_test") cfg.htcl.eval = EvalPolicy::seen_test;
        else throw std::invalid_argument("expected group_validation or seen_test");
      }
      else if (key == "fed.prox_mu") cfg.fed.prox_mu = std::stod(value);
      else if (key == "fed.averaging") {
        if (value == "running") cfg.fed.averaging = FedAveraging::running;
        else if (value == "pairwise") cfg.fed.averaging = FedAveraging::pairwise;
        else throw std::invalid_argument("expected running or pairwise");
      }
      else if (key == "run.methods") {
        cfg.methods.clear();
        for (const auto& m : split_list(value)) cfg.methods.push_back(parse_method(m));
      }
      else if (key == "run.perms") cfg.perms = parse_perm_budget(value);
      else if (key == "run.seeds") {
        cfg.seeds.clear();
        for (const auto& s : split_list(value)) cfg.seeds.push_back(std::stoull(s));
      }
      else if (key == "run.out") cfg.out_path = value;
      else if (key == "run.log") cfg.log_path = value;
      else if (key == "run.snapshots") cfg.snapshot_dir = value;
      else if (key == "run.threads") cfg.threads = std::stoi(value);
      else throw std::invalid_argument("unknown key");
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config key '" + key + "' = '" + value + "': " + e.what());
    } catch (const std::out_of_range&) {
      throw std::invalid_argument("config key '" + key + "' = '" + value + "': value out of range");
    }
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  ExperimentConfig cfg;
  apply_settings(cfg, parse_key_values(in));
  return cfg;
}

// ---------------------------------------------------------------------------

struct Workload {
  std::vector<TaskDataset> tasks;
  ModelSpec spec;
};

inline Workload make_workload(const ExperimentConfig& cfg, std::uint64_t seed) {
  Workload w;
  const auto& d = cfg.dataset;
  int inputs = d.dim;
  int outputs = 1;
  switch (d.kind) {
    case DatasetKind::gaussians: {
      SplitOptions opts;
      opts.labels = d.labels;
      w.tasks = gen_split_gaussians(d.num_classes, d.classes_per_task, d.dim, d.samples_per_class, d.spread, seed, opts);
      outputs = split_output_dim(d.num_classes, d.classes_per_task, d.labels);
      w.spec.task_kind = TaskKind::classification;
      break;
    }
    case DatasetKind::permuted:
      w.tasks = gen_permuted_features(seed, d.num_tasks, d.dim, d.num_classes, d.samples_per_class, d.spread);
      outputs = d.num_classes;
      w.spec.task_kind = TaskKind::classification;
      break;
    case DatasetKind::sine: {
      SineOptions opts;
      opts.noise_std = d.noise;
      w.tasks = gen_sine_tasks(d.num_tasks, seed, opts);
      inputs = 1;
      w.spec.task_kind = TaskKind::regression;
      break;
    }
  }
  w.spec.layer_widths.push_back(inputs);
  for (int h : cfg.hidden) w.spec.layer_widths.push_back(h);
  w.spec.layer_widths.push_back(outputs);
  w.spec.activation = cfg.activation;
  w.spec.validate();
  return w;
}

inline std::string method_tag(const ExperimentConfig& cfg, Method m) {
  const std::string base = to_string(cfg.learner.kind);
  switch (m) {
    case Method::baseline: return base;
    // Depth counts the local model plus the hierarchical levels.
    case Method::htcl: return base + "+htcl-L" + std::to_string(cfg.htcl.levels + 1);
    case Method::fedavg: return base + "+fedavg";
    case Method::fedprox: return base + "+fedprox";
  }
  return base;
}

/// Sequential training with the base learner alone, evaluated after every task.
inline AccuracyMatrix run_baseline(const std::vector<TaskDataset>& tasks, const Permutation& perm,
                                   const ParamVector& init, const LearnerConfig& learner, const ModelSpec& spec) {
  const auto n = static_cast<Eigen::Index>(perm.size());
  AccuracyMatrix a(n);
  train_seq(perm, tasks, init, learner, spec, {}, std::nullopt, [&](std::size_t pos, const ParamVector& w) {
    for (Eigen::Index j = 0; j < n; ++j)
      a(static_cast<Eigen::Index>(pos), j) = accuracy_eval(w, task_by_id(tasks, perm[static_cast<std::size_t>(j)]).test, spec);
  });
  return a;
}

struct RunOutcome {
  MetricsRecord record;
  AccuracyMatrix accuracy;
  std::vector<int> order;
  std::vector<GroupLog> log;
  std::optional<HierarchyState> hierarchy;
  std::optional<SelectionAuditReport> audit;
};

inline RunOutcome run_single(const ExperimentConfig& cfg, const Workload& w, std::uint64_t seed, const Permutation& perm,
                             Method m) {
  const auto t0 = std::chrono::steady_clock::now();
  const ParamVector init = init_params(w.spec, seed);
  LearnerConfig learner = cfg.learner;
  learner.seed = seed;
  RunOutcome out;
  out.order = perm.order;
  switch (m) {
    case Method::baseline: out.accuracy = run_baseline(w.tasks, perm, init, learner, w.spec); break;
    case Method::htcl: {
      HtclConfig h = cfg.htcl;
      h.seed = seed;
      HtclRun r = run_htcl(w.tasks, perm, init, learner, h, w.spec);
      out.accuracy = std::move(r.accuracy);
      out.log = std::move(r.log);
      out.hierarchy = std::move(r.hierarchy);
      out.audit = r.audit;
      break;
    }
    case Method::fedavg:
    case Method::fedprox: {
      FedConfig f = cfg.fed;
      f.kind = (m == Method::fedavg) ? FedKind::fedavg : FedKind::fedprox;
      out.accuracy = fed_compare_run(w.tasks, perm, init, learner, f, w.spec).accuracy;
      break;
    }
  }
  out.record.method = method_tag(cfg, m);
  out.record.seed = seed;
  out.record.permutation = perm.to_string();
  out.record.mean_accuracy = mean_accuracy(out.accuracy);
  out.record.avg_forgetting = avg_forgetting(out.accuracy);
  out.record.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kCsvHeader = "method,seed,permutation,mean_accuracy,avg_forgetting,wall_time_seconds";

inline void write_csv_row(std::ostream& os, const MetricsRecord& r) {
  os << r.method << ',' << r.seed << ',' << r.permutation << ',' << std::setprecision(17) << r.mean_accuracy << ','
     << r.avg_forgetting << ',' << std::setprecision(6) << r.wall_time_seconds << '\n';
}

inline void write_matrix_rows(std::ostream& os, const RunOutcome& o) {
  os << std::setprecision(17);
  for (Eigen::Index i = 0; i < o.accuracy.tasks(); ++i) {
    os << o.record.method << ',' << o.record.seed << ',' << o.record.permutation << ',' << i;
    for (Eigen::Index j = 0; j < o.accuracy.tasks(); ++j) os << ',' << o.accuracy(i, j);
    os << '\n';
  }
}

inline std::vector<MetricsRecord> read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || trim(line) != kCsvHeader) throw std::runtime_error("read_csv: unexpected header");
  std::vector<MetricsRecord> out;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw std::runtime_error("read_csv: malformed row: " + line);
    MetricsRecord r;
    r.method = f[0];
    r.seed = std::stoull(f[1]);
    r.permutation = f[2];
    r.mean_accuracy = std::stod(f[3]);
    r.avg_forgetting = std::stod(f[4]);
    r.wall_time_seconds = std::stod(f[5]);
    out.push_back(std::move(r));
  }
  return out;
}

/// Matrix dump path that accompanies a CSV path.
inline std::string matrices_path(const std::string& csv_path) {
  const auto dot = csv_path.rfind('.');
  const auto slash = csv_path.find_last_of('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return csv_path + ".matrices.csv";
  return csv_path.substr(0, dot) + ".matrices" + csv_path.substr(dot);
}

struct StoredMatrix {
  std::string method;
  std::uint64_t seed = 0;
  std::string permutation;
  AccuracyMatrix accuracy;
};

inline std::vector<StoredMatrix> read_matrices(std::istream& is) {
  std::string line;
  std::getline(is, line);  // header
  std::vector<StoredMatrix> out;
  std::vector<std::vector<double>> rows;
  std::string key;
  auto flush = [&]() {
    if (rows.empty()) return;
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.size()) throw std::runtime_error("read_matrices: matrix is not square");
      for (std::size_t j = 0; j < rows.size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    out.back().accuracy = AccuracyMatrix(std::move(m));
    rows.clear();
  };
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> f = split_list(line);
    if (f.size() < 5) throw std::runtime_error("read_matrices: malformed row");
    const std::string this_key = f[0] + ',' + f[1] + ',' + f[2];
    if (std::stoi(f[3]) == 0) {
      flush();
      out.push_back({f[0], std::stoull(f[1]), f[2], {}});
      key = this_key;
    } else if (this_key != key) {
      throw std::runtime_error("read_matrices: interleaved matrix rows");
    }
    std::vector<double> r;
    for (std::size_t i = 4; i < f.size(); ++i) r.push_back(std::stod(f[i]));
    rows.push_back(std::move(r));
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// Summaries

struct MethodSummary {
  std::string method;
  std::size_t runs = 0;
  double mean_accuracy = 0.0;
  double perm_std = 0.0;
  double mean_forgetting = 0.0;
  double forgetting_std = 0.0;
  double mean_wall_time = 0.0;
};

/// One summary per method, in first-appearance order.
inline std::vector<MethodSummary> summarize(const std::vector<MetricsRecord>& records) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const MetricsRecord*>> by_method;
  for (const auto& r : records) {
    if (!by_method.count(r.method)) order.push_back(r.method);
    by_method[r.method].push_back(&r);
  }
  std::vector<MethodSummary> out;
  for (const auto& m : order) {
    const auto& rs = by_method[m];
    MethodSummary s;
    s.method = m;
    s.runs = rs.size();
    std::vector<double> acc, fgt;
    double wall = 0.0;
    for (const auto* r : rs) {
      acc.push_back(r->mean_accuracy);
      fgt.push_back(r->avg_forgetting);
      wall += r->wall_time_seconds;
    }
    for (double a : acc) s.mean_accuracy += a;
    s.mean_accuracy /= static_cast<double>(acc.size());
    for (double f : fgt) s.mean_forgetting += f;
    s.mean_forgetting /= static_cast<double>(fgt.size());
    s.perm_std = population_std(acc);
    s.forgetting_std = population_std(fgt);
    s.mean_wall_time = wall / static_cast<double>(rs.size());
    out.push_back(s);
  }
  return out;
}

/// Summaries per (method, seed): the permutation std within one seed.
inline std::map<std::pair<std::string, std::uint64_t>, MethodSummary> summarize_by_seed(
    const std::vector<MetricsRecord>& records) {
  std::map<std::pair<std::string, std::uint64_t>, std::vector<MetricsRecord>> groups;
  for (const auto& r : records) groups[{r.method, r.seed}].push_back(r);
  std::map<std::pair<std::string, std::uint64_t>, MethodSummary> out;
  for (const auto& [k, rs] : groups) out[k] = summarize(rs).front();
  return out;
}

inline void print_summary_table(std::ostream& os, const std::vector<MethodSummary>& rows) {
  os << std::left << std::setw(22) << "method" << std::right << std::setw(8) << "runs" << std::setw(14) << "mean_acc(%)"
     << std::setw(12) << "std(%)" << std::setw(16) << "forgetting(%)" << std::setw(12) << "time(s)" << '\n';
  os << std::fixed << std::setprecision(2);
  for (const auto& s : rows)
    os << std::left << std::setw(22) << s.method << std::right << std::setw(8) << s.runs << std::setw(14)
       << 100.0 * s.mean_accuracy << std::setw(12) << 100.0 * s.perm_std << std::setw(16) << 100.0 * s.mean_forgetting
       << std::setw(12) << std::setprecision(3) << s.mean_wall_time << std::setprecision(2) << '\n';
  os.unsetf(std::ios::floatfield);
}

struct ExperimentResult {
  std::vector<RunOutcome> runs;  // (seed, permutation, method) order
  std::vector<MetricsRecord> records() const {
    std::vector<MetricsRecord> r;
    for (const auto& o : runs) r.push_back(o.record);
    return r;
  }
  std::vector<MethodSummary> summary() const { return summarize(records()); }
};

/// Runs every method on every sampled ordering for every seed. Rows are
/// written in (seed, permutation, method) order after each seed completes,
/// independently of how many worker threads computed them. Empty
/// `out_path` skips file output.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::ofstream csv, matrices, log;
  if (!cfg.out_path.empty()) {
    csv.open(cfg.out_path);
    if (!csv) throw std::runtime_error("cannot write output file: " + cfg.out_path);
    matrices.open(matrices_path(cfg.out_path));
    if (!matrices) throw std::runtime_error("cannot write output file: " + matrices_path(cfg.out_path));
    csv << kCsvHeader << '\n';
    matrices << "method,seed,permutation,stage,accuracies...\n";
  }
  if (!cfg.snapshot_dir.empty()) std::filesystem::create_directories(cfg.snapshot_dir);
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path);
    if (!log) throw std::runtime_error("cannot write log file: " + cfg.log_path);
  }

  ExperimentResult result;
  for (std::uint64_t seed : cfg.seeds) {
    const Workload w = make_workload(cfg, seed);
    const int n = static_cast<int>(w.tasks.size());
    cfg.htcl.validate(n);
    const auto total = factorial(static_cast<std::size_t>(n));
    const std::size_t budget = cfg.perms ? *cfg.perms : static_cast<std::size_t>(std::min<std::uint64_t>(total, 1u << 20));
    const auto perms = sample_full_permutations(n, budget, seed, !cfg.perms.has_value() || budget >= total);

    std::vector<std::pair<std::size_t, Method>> jobs;
    for (std::size_t p = 0; p < perms.size(); ++p)
      for (Method m : cfg.methods) jobs.emplace_back(p, m);
    std::vector<RunOutcome> outcomes(jobs.size());
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    auto worker = [&]() {
      for (std::size_t i = next++; i < jobs.size(); i = next++) {
        try {
          outcomes[i] = run_single(cfg, w, seed, perms[jobs[i].first], jobs[i].second);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    };
    if (cfg.threads == 1) {
      worker();
    } else {
      std::vector<std::jthread> pool;
      for (int t = 0; t < cfg.threads; ++t) pool.emplace_back(worker);
    }
    if (error) std::rethrow_exception(error);

    for (auto& o : outcomes) {
      if (csv.is_open()) {
        write_csv_row(csv, o.record);
        write_matrix_rows(matrices, o);
      }
      if (!cfg.snapshot_dir.empty() && o.hierarchy) {
        const auto path = std::filesystem::path(cfg.snapshot_dir) /
                          (o.record.method + "_s" + std::to_string(seed) + "_" + o.record.permutation + ".hier");
        std::ofstream snap(path);
        if (!snap) throw std::runtime_error("cannot write snapshot: " + path.string());
        write_hierarchy(snap, *o.hierarchy);
      }
      if (log.is_open() && !o.log.empty()) {
        for (const auto& g : o.log) {
          auto j = to_json(g);
          j["method"] = o.record.method;
          j["seed"] = o.record.seed;
          j["permutation"] = o.record.permutation;
          log << j.dump() << '\n';
        }
      }
      result.runs.push_back(std::move(o));
    }
    if (csv.is_open()) {
      csv.flush();
      matrices.flush();
    }
  }
  return result;
}

}  // namespace htcl

#endif  // HTCL_EXPERIMENT_HPP
