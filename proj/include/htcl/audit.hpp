// Property suites for the consolidation rule and the group selection:
//   closed-form step vs a gradient-descent minimizer of the surrogate,
//   the two-step recursive identity, and the best-vs-random selection audit.
#ifndef HTCL_AUDIT_HPP
#define HTCL_AUDIT_HPP

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "htcl/consolidation.hpp"
#include "htcl/curvature.hpp"
#include "htcl/orchestrator.hpp"
#include "htcl/tasks.hpp"

namespace htcl {

struct SuiteResult {
  std::string name;
  std::size_t cases = 0;
  std::size_t failures = 0;
  double worst = 0.0;  // worst observed error (or smallest gap for the selection audit)
  double tolerance = 0.0;
  double seconds = 0.0;

  bool passed() const { return cases > 0 && failures == 0; }
};

inline std::ostream& operator<<(std::ostream& os, const SuiteResult& r) {
  return os << (r.passed() ? "PASS " : "FAIL ") << r.name << ": cases=" << r.cases << " failures=" << r.failures
            << " worst=" << r.worst << " tol=" << r.tolerance << " time=" << r.seconds << "s";
}

inline ParamVector random_vector(Eigen::Index p, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  ParamVector v(p);
  for (Eigen::Index i = 0; i < p; ++i) v(i) = n(rng);
  return v;
}

inline Matrix random_orthogonal(Eigen::Index p, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix a(p, p);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < p; ++j) a(i, j) = n(rng);
  Eigen::HouseholderQR<Matrix> qr(a);
  return qr.householderQ() * Matrix::Identity(p, p);
}

/// Q diag(eigs) Q^T with a random orthogonal Q.
inline Matrix symmetric_with_spectrum(const Eigen::VectorXd& eigs, std::mt19937_64& rng) {
  const Matrix q = random_orthogonal(eigs.size(), rng);
  Matrix h = q * eigs.asDiagonal() * q.transpose();
  return 0.5 * (h + h.transpose());
}

/// Minimizes the surrogate by plain gradient descent with step 1/B, where B
/// is a Gershgorin bound on the largest eigenvalue of H + lambda I.
inline ParamVector surrogate_descent_minimizer(const ParamVector& g, const Matrix& h, double lambda,
                                               const ParamVector& target_gap, std::size_t max_iters = 2000000,
                                               double grad_tol = 1e-13) {
  const Eigen::Index p = g.size();
  double bound = 0.0;
  for (Eigen::Index i = 0; i < p; ++i) bound = std::max(bound, h.row(i).cwiseAbs().sum() + lambda);
  const double step = 1.0 / bound;
  ParamVector x = ParamVector::Zero(p);
  const double scale = std::max(1.0, (lambda * target_gap - g).norm());
  for (std::size_t it = 0; it < max_iters; ++it) {
    const ParamVector grad = g + h * x + lambda * (x - target_gap);
    if (grad.norm() <= grad_tol * scale) break;
    x -= step * grad;
  }
  return x;
}

/// Random dense instances with lambda just above the positive-definiteness
/// threshold: closed-form step vs the descent minimizer, and a local
/// minimum probe along random unit directions.
inline SuiteResult closed_form_optimality_suite(std::uint64_t seed, std::size_t instances = 100, Eigen::Index p = 20,
                                                double tolerance = 1e-6) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult r;
  r.name = "closed-form step minimizes the surrogate";
  r.tolerance = tolerance;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> eig(-2.0, 3.0);
  std::uniform_real_distribution<double> margin(0.1, 2.0);
  for (std::size_t k = 0; k < instances; ++k) {
    Eigen::VectorXd eigs(p);
    for (Eigen::Index i = 0; i < p; ++i) eigs(i) = eig(rng);
    const double mu_min = eigs.minCoeff();
    const double lambda = std::max(-mu_min, 0.0) + margin(rng);
    const Matrix h = symmetric_with_spectrum(eigs, rng);
    const CurvatureEstimate curv = CurvatureEstimate::dense(h);
    const ParamVector w_prev = random_vector(p, rng);
    const ParamVector w_target = random_vector(p, rng);
    const ParamVector g = random_vector(p, rng);
    const ParamVector gap = w_target - w_prev;

    const ParamVector dw = taylor_step(w_prev, w_target, g, curv, lambda);
    const ParamVector oracle = surrogate_descent_minimizer(g, h, lambda, gap);
    double err = (dw - oracle).norm() / std::max(oracle.norm(), 1e-300);

    const double at_min = surrogate_value(g, curv, lambda, gap, dw);
    for (int d = 0; d < 100; ++d) {
      ParamVector u = random_vector(p, rng);
      u.normalize();
      if (surrogate_value(g, curv, lambda, gap, dw + 1e-3 * u) < at_min) err = std::max(err, 1.0);
    }
    ++r.cases;
    r.worst = std::max(r.worst, err);
    if (!(err <= tolerance)) ++r.failures;
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Two sequential exact updates vs the explicit two-term closed form, with
/// PSD curvature and lambda drawn from {0.1, 1, 10}.
inline SuiteResult two_step_identity_suite(std::uint64_t seed, std::size_t instances = 1000, Eigen::Index p = 20,
                                           double tolerance = 1e-10) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult r;
  r.name = "two sequential updates equal the two-term closed form";
  r.tolerance = tolerance;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> eig(0.0, 2.0);
  const double lambdas[] = {0.1, 1.0, 10.0};
  for (std::size_t k = 0; k < instances; ++k) {
    const double lambda = lambdas[k % 3];
    auto quad = [&]() {
      Eigen::VectorXd e(p);
      for (Eigen::Index i = 0; i < p; ++i) e(i) = eig(rng);
      return LocalQuadratic{random_vector(p, rng), CurvatureEstimate::dense(symmetric_with_spectrum(e, rng))};
    };
    const LocalQuadratic first = quad();
    const LocalQuadratic second = quad();
    const ParamVector w0 = random_vector(p, rng);
    const ParamVector t1 = random_vector(p, rng);
    const ParamVector t2 = random_vector(p, rng);
    const double diff = two_step_recursive_check(w0, t1, t2, first, second, lambda);
    ++r.cases;
    r.worst = std::max(r.worst, diff);
    if (!(diff <= tolerance)) ++r.failures;
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Runs the pipeline on small split-Gaussian streams and re-audits each run:
/// summed best group scores against `draws` random selections per run.
inline SuiteResult selection_audit_suite(std::uint64_t seed, std::size_t runs = 6, std::size_t draws = 1000) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult r;
  r.name = "best intra-group selection dominates random selections";
  r.tolerance = 0.0;
  r.worst = std::numeric_limits<double>::infinity();
  const auto tasks = gen_split_gaussians(8, 2, 2, 40, 3.0, seed);
  ModelSpec spec{{2, 8, 2}, Activation::tanh, TaskKind::classification};
  LearnerConfig learner;
  learner.epochs_per_task = 3;
  learner.learning_rate = 0.05;
  learner.buffer_capacity = 20;
  const auto perms = sample_full_permutations(4, runs, seed, false);
  for (std::size_t i = 0; i < perms.size(); ++i) {
    HtclConfig cfg;
    cfg.group_size = 2;
    cfg.seed = mix_seed(seed, i);
    HtclRun run;
    try {
      run = run_htcl(tasks, perms[i], init_params(spec, cfg.seed), learner, cfg, spec);
    } catch (const std::logic_error&) {
      ++r.cases;
      ++r.failures;
      continue;
    }
    std::mt19937_64 rng(mix_seed(seed, 100 + i));
    const SelectionAuditReport rep = selection_audit(run.groups, rng, draws);
    r.cases += rep.draws;
    r.failures += rep.violations;
    r.worst = std::min(r.worst, rep.gap);
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline std::vector<SuiteResult> run_all_audits(std::uint64_t seed) {
  return {closed_form_optimality_suite(mix_seed(seed, 1)), two_step_identity_suite(mix_seed(seed, 2)),
          selection_audit_suite(mix_seed(seed, 3))};
}

}  // namespace htcl

#endif  // HTCL_AUDIT_HPP
