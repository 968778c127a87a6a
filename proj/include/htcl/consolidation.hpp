// Second-order consolidation of a target model into a hierarchy of slower
// models.
//
// One consolidation step minimizes the quadratic surrogate
//
//   s(dw) = g^T dw + 1/2 dw^T H dw + lambda/2 || dw - dd ||^2,  dd = w_target - w_prev,
//
// whose minimizer is dw* = (H + lambda I)^{-1} (lambda dd - g) whenever
// H + lambda I is positive definite. Levels of the hierarchy apply the same
// step in sequence, each pulled toward the freshly updated level below it.
#ifndef HTCL_CONSOLIDATION_HPP
#define HTCL_CONSOLIDATION_HPP

#include <cmath>
#include <functional>
#include <iomanip>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "htcl/curvature.hpp"
#include "htcl/model.hpp"

namespace htcl {

struct HierarchyState {
  std::vector<ParamVector> levels;  // levels[0] is closest to the local model
  std::vector<double> lambdas;
  int group_counter = 0;

  std::size_t depth() const { return levels.size(); }
  const ParamVector& top() const { return levels.back(); }

  void validate() const {
    if (levels.empty()) throw std::invalid_argument("hierarchy needs at least one level");
    if (lambdas.size() != levels.size()) throw std::invalid_argument("hierarchy: one lambda per level required");
    for (const auto& l : levels)
      if (l.size() != levels.front().size()) throw std::invalid_argument("hierarchy: level length mismatch");
    for (double lam : lambdas)
      if (!(lam > 0.0)) throw std::invalid_argument("hierarchy: lambdas must be positive");
  }
};

/// Per-level strengths lambda * ratio^i for i = 0..L-1 (ratio 1 gives a
/// constant schedule).
inline std::vector<double> lambda_schedule(std::size_t levels, double lambda, double ratio = 1.0) {
  if (levels < 1) throw std::invalid_argument("lambda_schedule: at least one level");
  std::vector<double> out(levels);
  double v = lambda;
  for (auto& x : out) {
    x = v;
    v *= ratio;
  }
  return out;
}

inline HierarchyState make_hierarchy(const ParamVector& init, std::vector<double> lambdas) {
  HierarchyState s;
  s.levels.assign(lambdas.size(), init);
  s.lambdas = std::move(lambdas);
  s.validate();
  return s;
}

/// Step size and optional cap on the consolidation step norm. The default
/// constructed value (eta = 1, no cap) is the exact closed-form minimizer.
struct TaylorStep {
  double eta = 1.0;
  std::optional<double> max_step_norm;
};

/// Gradient and curvature of the cumulative loss at some weights.
struct LocalQuadratic {
  ParamVector gradient;
  CurvatureEstimate curvature;
};

/// Supplies (g, H) at given weights for a given hierarchy level.
using QuadraticSource = std::function<LocalQuadratic(const ParamVector& weights, std::size_t level)>;

/// Surrogate objective value (without the constant J(w_prev) term).
inline double surrogate_value(const ParamVector& g, const CurvatureEstimate& curv, double lambda,
                              const ParamVector& target_gap, const ParamVector& step) {
  return g.dot(step) + 0.5 * step.dot(curv.apply(step)) + 0.5 * lambda * (step - target_gap).squaredNorm();
}

/// dw* = (H + lambda I)^{-1} (lambda (w_target - w_prev) - g).
inline ParamVector taylor_step(const ParamVector& w_prev, const ParamVector& w_target, const ParamVector& g,
                               const CurvatureEstimate& curv, double lambda) {
  if (w_prev.size() != w_target.size() || w_prev.size() != g.size())
    throw std::invalid_argument("taylor_step: length mismatch");
  const ParamVector rhs = lambda * (w_target - w_prev) - g;
  return regularized_solve(curv, lambda, rhs).x;
}

/// w_prev + eta * dw*, with the step optionally capped in norm.
inline ParamVector taylor_consolidate(const ParamVector& w_prev, const ParamVector& w_target, const ParamVector& g,
                                      const CurvatureEstimate& curv, double lambda, const TaylorStep& step = {}) {
  if (!(step.eta > 0.0)) throw std::invalid_argument("taylor_consolidate: eta must be positive");
  ParamVector dw = taylor_step(w_prev, w_target, g, curv, lambda);
  if (step.eta != 1.0) dw *= step.eta;
  if (step.max_step_norm) {
    const double n = dw.norm();
    if (n > *step.max_step_norm) dw *= *step.max_step_norm / n;
  }
  return w_prev + dw;
}

/// Repeats the consolidation toward `w_target` n_catch times, re-estimating
/// (g, H) at the current weights before each step.
inline ParamVector catch_up(ParamVector weights, const ParamVector& w_target, const QuadraticSource& source,
                            int n_catch, double lambda, const TaylorStep& step = {}, std::size_t level = 0) {
  if (n_catch < 0) throw std::invalid_argument("catch_up: negative iteration count");
  for (int i = 0; i < n_catch; ++i) {
    const LocalQuadratic q = source(weights, level);
    weights = taylor_consolidate(weights, w_target, q.gradient, q.curvature, lambda, step);
  }
  return weights;
}

/// Updates levels 1..L in order: level 1 is pulled toward `w_local`, level
/// i > 1 toward the freshly updated level i - 1. Step norms per level are
/// appended to `step_norms` when given.
inline HierarchyState multi_level_consolidate(HierarchyState state, const ParamVector& w_local,
                                              const QuadraticSource& source, const TaylorStep& step = {},
                                              std::vector<double>* step_norms = nullptr) {
  state.validate();
  if (w_local.size() != state.levels.front().size())
    throw std::invalid_argument("multi_level_consolidate: local model length mismatch");
  for (std::size_t i = 0; i < state.depth(); ++i) {
    const ParamVector& target = (i == 0) ? w_local : state.levels[i - 1];
    const LocalQuadratic q = source(state.levels[i], i);
    ParamVector updated = taylor_consolidate(state.levels[i], target, q.gradient, q.curvature, state.lambdas[i], step);
    if (step_norms) step_norms->push_back((updated - state.levels[i]).norm());
    state.levels[i] = std::move(updated);
  }
  ++state.group_counter;
  return state;
}

/// Two sequential exact updates versus the two-term closed form
///   w0 + A0^{-1}[lambda (t1 - w0) - g0] + A1^{-1}[lambda (t2 - w1) - g1],
/// with A_s = H_s + lambda I inverted explicitly through an
/// eigendecomposition. Returns the largest elementwise difference.
inline double two_step_recursive_check(const ParamVector& w0, const ParamVector& target1, const ParamVector& target2,
                                       const LocalQuadratic& first, const LocalQuadratic& second, double lambda) {
  const ParamVector w1 = taylor_consolidate(w0, target1, first.gradient, first.curvature, lambda);
  const ParamVector sequential = taylor_consolidate(w1, target2, second.gradient, second.curvature, lambda);

  auto explicit_inverse = [lambda](const CurvatureEstimate& c) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(c.to_dense());
    const Eigen::VectorXd shifted = es.eigenvalues().array() + lambda;
    if ((shifted.array() <= 0.0).any()) throw PositiveDefinitenessError("two_step_recursive_check: H + lambda I not PD");
    return Matrix(es.eigenvectors() * shifted.cwiseInverse().asDiagonal() * es.eigenvectors().transpose());
  };
  const Matrix inv0 = explicit_inverse(first.curvature);
  const Matrix inv1 = explicit_inverse(second.curvature);
  const ParamVector term0 = inv0 * (lambda * (target1 - w0) - first.gradient);
  const ParamVector mid = w0 + term0;
  const ParamVector term1 = inv1 * (lambda * (target2 - mid) - second.gradient);
  const ParamVector closed_form = w0 + term0 + term1;
  return (sequential - closed_form).cwiseAbs().maxCoeff();
}

// Snapshot format: a header line, then one line per level:
//   level_index lambda v_1 ... v_p
inline void write_hierarchy(std::ostream& os, const HierarchyState& state) {
  state.validate();
  os << "# htcl-hierarchy levels=" << state.depth() << " params=" << state.levels.front().size()
     << " group_counter=" << state.group_counter << '\n';
  os << std::setprecision(17);
  for (std::size_t i = 0; i < state.depth(); ++i) {
    os << i << ' ' << state.lambdas[i];
    for (Eigen::Index j = 0; j < state.levels[i].size(); ++j) os << ' ' << state.levels[i](j);
    os << '\n';
  }
}

inline HierarchyState read_hierarchy(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("# htcl-hierarchy", 0) != 0)
    throw std::runtime_error("read_hierarchy: missing header");
  auto field = [&](const std::string& key) {
    const auto pos = line.find(key + "=");
    if (pos == std::string::npos) throw std::runtime_error("read_hierarchy: header lacks " + key);
    return std::stoll(line.substr(pos + key.size() + 1));
  };
  const auto levels = static_cast<std::size_t>(field("levels"));
  const auto params = static_cast<Eigen::Index>(field("params"));
  HierarchyState s;
  s.group_counter = static_cast<int>(field("group_counter"));
  for (std::size_t i = 0; i < levels; ++i) {
    if (!std::getline(is, line)) throw std::runtime_error("read_hierarchy: truncated file");
    std::istringstream ls(line);
    std::size_t index = 0;
    double lambda = 0.0;
    ls >> index >> lambda;
    if (!ls || index != i) throw std::runtime_error("read_hierarchy: bad level line");
    ParamVector v(params);
    for (Eigen::Index j = 0; j < params; ++j)
      if (!(ls >> v(j))) throw std::runtime_error("read_hierarchy: short level vector");
    s.levels.push_back(std::move(v));
    s.lambdas.push_back(lambda);
  }
  s.validate();
  return s;
}

}  // namespace htcl

#endif  // HTCL_CONSOLIDATION_HPP
