#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "htcl/experiment.hpp"

using namespace htcl;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config(const fs::path& dir) {
  ExperimentConfig c;
  c.dataset.num_classes = 6;
  c.dataset.classes_per_task = 2;
  c.dataset.samples_per_class = 20;
  c.hidden = {8};
  c.learner.epochs_per_task = 2;
  c.learner.batch_size = 16;
  c.learner.buffer_capacity = 20;
  c.htcl.lambda = 5.0;
  c.methods = {Method::baseline, Method::htcl, Method::fedavg};
  c.seeds = {3};
  c.out_path = (dir / "results.csv").string();
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("htcl_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string without_wall_time(const std::string& csv) {
  std::stringstream in(csv), out;
  std::string line;
  while (std::getline(in, line)) out << line.substr(0, line.rfind(',')) << '\n';
  return out.str();
}

}  // namespace

TEST(Config, ParsesKeyValueText) {
  std::stringstream text(
      "# comment\n"
      "dataset.kind = sine   # trailing\n"
      "dataset.num_tasks = 4\n"
      "model.hidden = 16, 8\n"
      "learner.kind = ewc\n"
      "learner.clip = 2.5\n"
      "htcl.curvature = lowrank:7\n"
      "htcl.curvature_samples = 99\n"
      "htcl.levels = 3\n"
      "run.methods = htcl, fedprox\n"
      "run.perms = 10\n"
      "run.seeds = 1, 2, 3\n");
  ExperimentConfig c;
  apply_settings(c, parse_key_values(text));
  EXPECT_EQ(c.dataset.kind, DatasetKind::sine);
  EXPECT_EQ(c.dataset.num_tasks, 4);
  EXPECT_EQ(c.hidden, (std::vector<int>{16, 8}));
  EXPECT_EQ(c.learner.kind, LearnerKind::ewc);
  EXPECT_EQ(c.learner.clip_grad_norm, 2.5);
  EXPECT_EQ(c.htcl.curvature.kind, CurvatureKind::lowrank);
  EXPECT_EQ(c.htcl.curvature.rank, 7);
  EXPECT_EQ(c.htcl.curvature.sample_cap, 99u);
  EXPECT_EQ(c.htcl.levels, 3);
  EXPECT_EQ(c.methods, (std::vector<Method>{Method::htcl, Method::fedprox}));
  EXPECT_EQ(c.perms, std::optional<std::size_t>(10));
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(method_tag(c, Method::htcl), "ewc+htcl-L4");
}

TEST(Config, LaterSettingsOverrideAndErrorsNameTheKey) {
  ExperimentConfig c;
  apply_settings(c, {{"run.perms", "5"}});
  apply_settings(c, {{"run.perms", "all"}});
  EXPECT_FALSE(c.perms.has_value());
  try {
    apply_settings(c, {{"htcl.bogus", "1"}});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("htcl.bogus"), std::string::npos);
  }
  EXPECT_THROW(apply_settings(c, {{"htcl.curvature", "full"}}), std::invalid_argument);
  EXPECT_THROW(apply_settings(c, {{"run.perms", "0"}}), std::invalid_argument);
  EXPECT_THROW(apply_settings(c, {{"learner.lr", "fast"}}), std::invalid_argument);
  std::stringstream bad("no equals sign\n");
  EXPECT_THROW(parse_key_values(bad), std::invalid_argument);
  EXPECT_THROW(load_config("/nonexistent/htcl.conf"), std::runtime_error);
}

TEST(Config, ShippedSampleConfigLoads) {
  const auto c = load_config(HTCL_SOURCE_DIR "/configs/split_gaussians.conf");
  EXPECT_NO_THROW(c.validate());
  const auto w = make_workload(c, c.seeds.front());
  EXPECT_EQ(w.tasks.size(), 5u);
}

TEST(Workload, ShapesPerDataset) {
  ExperimentConfig c;
  c.dataset.kind = DatasetKind::sine;
  c.dataset.num_tasks = 3;
  auto w = make_workload(c, 1);
  EXPECT_EQ(w.spec.task_kind, TaskKind::regression);
  EXPECT_EQ(w.spec.layer_widths.front(), 1);
  EXPECT_EQ(w.spec.layer_widths.back(), 1);
  c.dataset.kind = DatasetKind::permuted;
  c.dataset.dim = 4;
  c.dataset.num_classes = 3;
  c.dataset.samples_per_class = 10;
  w = make_workload(c, 1);
  EXPECT_EQ(w.tasks.size(), 3u);
  EXPECT_EQ(w.spec.layer_widths.back(), 3);
  c.dataset.kind = DatasetKind::gaussians;
  c.dataset.num_classes = 10;
  c.dataset.labels = LabelSpace::global;
  EXPECT_EQ(make_workload(c, 1).spec.layer_widths.back(), 10);
}

TEST(Experiment, EveryOrderingForEveryMethod) {
  const auto dir = scratch("all");
  auto c = small_config(dir);
  c.log_path = (dir / "run.jsonl").string();
  c.snapshot_dir = (dir / "snap").string();
  const auto r = run_experiment(c);
  const auto summary = r.summary();
  ASSERT_EQ(summary.size(), 3u);
  for (const auto& s : summary) EXPECT_EQ(s.runs, 6u);
  EXPECT_EQ(summary[1].method, "er+htcl-L2");

  std::ifstream csv(c.out_path);
  const auto rows = read_csv(csv);
  ASSERT_EQ(rows.size(), 18u);
  std::set<std::string> perms;
  for (const auto& row : rows) perms.insert(row.permutation);
  EXPECT_EQ(perms.size(), 6u);

  // One log line per group per HTCL run.
  std::ifstream log(c.log_path);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("method").get<std::string>(), "er+htcl-L2");
    ++lines;
  }
  EXPECT_EQ(lines, 6u * partition_into_groups(3, 2).size());
  std::size_t snaps = 0;
  for (const auto& e : fs::directory_iterator(c.snapshot_dir)) {
    std::ifstream in(e.path());
    EXPECT_EQ(read_hierarchy(in).depth(), 1u);
    ++snaps;
  }
  EXPECT_EQ(snaps, 6u);
}

TEST(Experiment, RerunIsDeterministicAndThreadCountInvariant) {
  const auto dir = scratch("det");
  auto c = small_config(dir);
  c.perms = 4;
  run_experiment(c);
  const std::string first = slurp(c.out_path);
  const std::string first_m = slurp(matrices_path(c.out_path));
  run_experiment(c);
  EXPECT_EQ(without_wall_time(slurp(c.out_path)), without_wall_time(first));
  c.threads = 3;
  run_experiment(c);
  EXPECT_EQ(without_wall_time(slurp(c.out_path)), without_wall_time(first));
  EXPECT_EQ(slurp(matrices_path(c.out_path)), first_m);
}

TEST(Experiment, CsvRoundTripAndStoredMatrices) {
  const auto dir = scratch("csv");
  auto c = small_config(dir);
  c.perms = 3;
  const auto r = run_experiment(c);
  std::ifstream csv(c.out_path);
  const auto rows = read_csv(csv);
  ASSERT_EQ(rows.size(), r.runs.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].method, r.runs[i].record.method);
    EXPECT_EQ(rows[i].permutation, r.runs[i].record.permutation);
    EXPECT_EQ(rows[i].mean_accuracy, r.runs[i].record.mean_accuracy);
    EXPECT_EQ(rows[i].avg_forgetting, r.runs[i].record.avg_forgetting);
  }
  const auto from_file = summarize(rows);
  const auto direct = r.summary();
  for (std::size_t i = 0; i < direct.size(); ++i) {
    EXPECT_EQ(from_file[i].mean_accuracy, direct[i].mean_accuracy);
    EXPECT_EQ(from_file[i].perm_std, direct[i].perm_std);
  }
  std::ifstream mf(matrices_path(c.out_path));
  const auto mats = read_matrices(mf);
  ASSERT_EQ(mats.size(), rows.size());
  for (std::size_t i = 0; i < mats.size(); ++i) {
    EXPECT_NEAR(mean_accuracy(mats[i].accuracy), rows[i].mean_accuracy, 1e-12);
    EXPECT_NEAR(avg_forgetting(mats[i].accuracy), rows[i].avg_forgetting, 1e-12);
  }
}

TEST(Experiment, HeaderAndPaths) {
  EXPECT_STREQ(kCsvHeader, "method,seed,permutation,mean_accuracy,avg_forgetting,wall_time_seconds");
  EXPECT_EQ(matrices_path("out/results.csv"), "out/results.matrices.csv");
  EXPECT_EQ(matrices_path("a.b/results"), "a.b/results.matrices.csv");
  std::stringstream bad("method,seed\n");
  EXPECT_THROW(read_csv(bad), std::runtime_error);
  std::stringstream short_row(std::string(kCsvHeader) + "\ner,1,0-1,0.5\n");
  EXPECT_THROW(read_csv(short_row), std::runtime_error);
}

TEST(Experiment, UnwritableOutputFails) {
  auto c = small_config(scratch("bad"));
  c.out_path = "/nonexistent_dir/results.csv";
  EXPECT_THROW(run_experiment(c), std::runtime_error);
}

TEST(Experiment, SummaryStatistics) {
  std::vector<MetricsRecord> rs(4);
  const double acc[] = {0.5, 0.7, 0.2, 0.4};
  for (int i = 0; i < 4; ++i) {
    rs[static_cast<std::size_t>(i)].method = i < 2 ? "a" : "b";
    rs[static_cast<std::size_t>(i)].seed = static_cast<std::uint64_t>(i % 2);
    rs[static_cast<std::size_t>(i)].mean_accuracy = acc[i];
  }
  const auto s = summarize(rs);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].method, "a");
  EXPECT_DOUBLE_EQ(s[0].mean_accuracy, 0.6);
  EXPECT_NEAR(s[0].perm_std, 0.1, 1e-15);
  const auto by_seed = summarize_by_seed(rs);
  EXPECT_EQ(by_seed.size(), 4u);
  EXPECT_EQ(by_seed.at({"b", 1}).mean_accuracy, 0.4);
  std::stringstream table;
  print_summary_table(table, s);
  EXPECT_NE(table.str().find("60.00"), std::string::npos);
}
