// Command-line driver: run | audit | gen | report
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "htcl/htcl.hpp"

namespace {

struct Overrides {
  std::string config;
  std::string dataset, learner, curvature, perms, out, log, snapshots;
  std::optional<int> group_size, levels, catchup, threads;
  std::optional<double> lambda, eta;
  std::optional<std::uint64_t> seed;
};

void add_common_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Config file (key = value lines)");
  cmd->add_option("--dataset", o.dataset, "gaussians | permuted | sine");
  cmd->add_option("--learner", o.learner, "sgd | er | ewc");
  cmd->add_option("--group-size", o.group_size, "Tasks per group (k)");
  cmd->add_option("--levels", o.levels, "Hierarchy levels above the local model");
  cmd->add_option("--lambda", o.lambda, "Consolidation regularizer");
  cmd->add_option("--eta", o.eta, "Consolidation step size");
  cmd->add_option("--catchup", o.catchup, "Catch-up iterations after the last group");
  cmd->add_option("--curvature", o.curvature, "diag | lowrank:R | dense");
  cmd->add_option("--perms", o.perms, "Number of sampled orderings, or 'all'");
  cmd->add_option("--seed", o.seed, "Single seed (replaces the configured list)");
  cmd->add_option("--out", o.out, "Output path");
}

htcl::ExperimentConfig resolve(const Overrides& o) {
  htcl::ExperimentConfig cfg = o.config.empty() ? htcl::ExperimentConfig{} : htcl::load_config(o.config);
  std::map<std::string, std::string> kv;
  if (!o.dataset.empty()) kv["dataset.kind"] = o.dataset;
  if (!o.learner.empty()) kv["learner.kind"] = o.learner;
  if (!o.curvature.empty()) kv["htcl.curvature"] = o.curvature;
  if (!o.perms.empty()) kv["run.perms"] = o.perms;
  if (!o.out.empty()) kv["run.out"] = o.out;
  if (!o.log.empty()) kv["run.log"] = o.log;
  if (!o.snapshots.empty()) kv["run.snapshots"] = o.snapshots;
  if (o.group_size) kv["htcl.group_size"] = std::to_string(*o.group_size);
  if (o.levels) kv["htcl.levels"] = std::to_string(*o.levels);
  if (o.catchup) kv["htcl.catchup"] = std::to_string(*o.catchup);
  if (o.threads) kv["run.threads"] = std::to_string(*o.threads);
  htcl::apply_settings(cfg, kv);
  // Numeric values are assigned directly so they keep full precision.
  if (o.lambda) cfg.htcl.lambda = *o.lambda;
  if (o.eta) cfg.htcl.step.eta = *o.eta;
  if (o.seed) cfg.seeds = {*o.seed};
  return cfg;
}

int cmd_run(const Overrides& o) {
  if (o.config.empty()) throw std::runtime_error("run: --config is required");
  const auto cfg = resolve(o);
  const auto result = htcl::run_experiment(cfg);
  htcl::print_summary_table(std::cout, result.summary());
  std::cout << "wrote " << cfg.out_path << '\n';
  return 0;
}

int cmd_audit(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : htcl::run_all_audits(seed)) {
    std::cout << r << '\n';
    ok = ok && r.passed();
  }
  return ok ? 0 : 1;
}

int cmd_gen(const Overrides& o) {
  const auto cfg = resolve(o);
  const auto w = htcl::make_workload(cfg, cfg.seeds.front());
  if (o.out.empty()) {
    htcl::write_datasets(std::cout, w.tasks, w.spec.task_kind);
    return 0;
  }
  std::ofstream os(o.out);
  if (!os) throw std::runtime_error("cannot write " + o.out);
  htcl::write_datasets(os, w.tasks, w.spec.task_kind);
  std::cout << "wrote " << w.tasks.size() << " tasks to " << o.out << '\n';
  return 0;
}

int cmd_report(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open " + csv_path);
  const auto records = htcl::read_csv(in);
  if (records.empty()) throw std::runtime_error("no records in " + csv_path);
  htcl::print_summary_table(std::cout, htcl::summarize(records));

  std::ifstream mat(htcl::matrices_path(csv_path));
  if (!mat) return 0;
  std::map<std::string, std::pair<std::vector<htcl::AccuracyMatrix>, std::vector<std::vector<int>>>> by_method;
  for (auto& m : htcl::read_matrices(mat)) {
    std::vector<int> order;
    for (const auto& t : htcl::split_list(m.permutation, '-')) order.push_back(std::stoi(t));
    by_method[m.method].first.push_back(std::move(m.accuracy));
    by_method[m.method].second.push_back(std::move(order));
  }
  std::cout << "\nper-task std of final accuracy (%), by task id\n";
  for (const auto& [method, runs] : by_method) {
    std::cout << method;
    std::cout << std::fixed << std::setprecision(2);
    for (double s : htcl::per_task_std(runs.first, runs.second)) std::cout << ' ' << 100.0 * s;
    std::cout.unsetf(std::ios::floatfield);
    std::cout << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical task-order consolidation experiments"};
  app.require_subcommand(1);

  Overrides run_opts;
  auto* run = app.add_subcommand("run", "Run a permutation sweep from a config file");
  add_common_flags(run, run_opts);
  run->add_option("--log", run_opts.log, "Per-group run log (JSON lines)");
  run->add_option("--snapshots", run_opts.snapshots, "Directory for final hierarchy snapshots");
  run->add_option("--threads", run_opts.threads, "Worker threads");

  std::uint64_t audit_seed = 7;
  auto* audit = app.add_subcommand("audit", "Run the consolidation and selection property suites");
  audit->add_option("--seed", audit_seed, "Seed");

  Overrides gen_opts;
  auto* gen = app.add_subcommand("gen", "Dump a generated task stream");
  add_common_flags(gen, gen_opts);

  std::string report_csv;
  auto* report = app.add_subcommand("report", "Summarize a results CSV per method");
  report->add_option("csv", report_csv, "Results CSV")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(run_opts);
    if (*audit) return cmd_audit(audit_seed);
    if (*gen) return cmd_gen(gen_opts);
    if (*report) return cmd_report(report_csv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
