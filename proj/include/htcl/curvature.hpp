// Gradient and curvature estimates of the cumulative loss, and solves of
// the regularized system (H + lambda I) x = v for diagonal, low-rank and
// dense curvature.
#ifndef HTCL_CURVATURE_HPP
#define HTCL_CURVATURE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "htcl/learners.hpp"
#include "htcl/model.hpp"
#include "htcl/replay_buffer.hpp"

namespace htcl {

enum class CurvatureKind { diagonal, lowrank, dense };

/// H ~ diag(diag), U diag(d) U^T, or an explicit symmetric matrix.
struct CurvatureEstimate {
  CurvatureKind kind = CurvatureKind::diagonal;
  ParamVector diag;
  Matrix factors;          // U, p x r, orthonormal columns
  Eigen::VectorXd values;  // d, nonincreasing, >= 0
  Matrix matrix;
  std::size_t source_sample_count = 0;

  Eigen::Index dim() const {
    switch (kind) {
      case CurvatureKind::diagonal: return diag.size();
      case CurvatureKind::lowrank: return factors.rows();
      case CurvatureKind::dense: return matrix.rows();
    }
    return 0;
  }

  static CurvatureEstimate diagonal(ParamVector d, std::size_t samples = 0) {
    if ((d.array() < 0.0).any()) throw std::invalid_argument("diagonal curvature must be nonnegative");
    CurvatureEstimate c;
    c.kind = CurvatureKind::diagonal;
    c.diag = std::move(d);
    c.source_sample_count = samples;
    return c;
  }

  static CurvatureEstimate lowrank(Matrix u, Eigen::VectorXd d, std::size_t samples = 0) {
    if (u.cols() != d.size()) throw std::invalid_argument("low-rank factor/value count mismatch");
    if (u.cols() > u.rows()) throw std::invalid_argument("low-rank rank exceeds dimension");
    if ((d.array() < 0.0).any()) throw std::invalid_argument("low-rank curvature values must be nonnegative");
    CurvatureEstimate c;
    c.kind = CurvatureKind::lowrank;
    c.factors = std::move(u);
    c.values = std::move(d);
    c.source_sample_count = samples;
    return c;
  }

  static CurvatureEstimate dense(Matrix h, std::size_t samples = 0) {
    if (h.rows() != h.cols()) throw std::invalid_argument("dense curvature must be square");
    if ((h - h.transpose()).cwiseAbs().maxCoeff() > 1e-8 * std::max(1.0, h.cwiseAbs().maxCoeff()))
      throw std::invalid_argument("dense curvature must be symmetric");
    CurvatureEstimate c;
    c.kind = CurvatureKind::dense;
    c.matrix = 0.5 * (h + h.transpose());
    c.source_sample_count = samples;
    return c;
  }

  /// H v.
  ParamVector apply(const ParamVector& v) const {
    switch (kind) {
      case CurvatureKind::diagonal: return diag.cwiseProduct(v);
      case CurvatureKind::lowrank: return factors * (values.cwiseProduct(factors.transpose() * v));
      case CurvatureKind::dense: return matrix * v;
    }
    return v;
  }

  Matrix to_dense() const {
    switch (kind) {
      case CurvatureKind::diagonal: return diag.asDiagonal();
      case CurvatureKind::lowrank: return factors * values.asDiagonal() * factors.transpose();
      case CurvatureKind::dense: return matrix;
    }
    return {};
  }
};

class PositiveDefinitenessError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct SolveResult {
  ParamVector x;
  double lambda_used = 0.0;
  std::optional<double> min_eig_bound;
};

inline constexpr std::size_t kDefaultCurvatureSamples = 512;

/// Replay buffer contents followed by the current group's samples, reduced
/// to at most `sample_cap` rows drawn uniformly without replacement (kept in
/// pool order).
inline Batch make_curvature_pool(const ReplayBuffer& buffer, const std::vector<const Batch*>& group_data,
                                 const ModelSpec& spec, std::size_t sample_cap = kDefaultCurvatureSamples,
                                 std::uint64_t seed = 0) {
  const Batch replay = buffer.to_batch(spec);
  std::vector<const Batch*> parts{&replay};
  parts.insert(parts.end(), group_data.begin(), group_data.end());
  Batch pool = concat_batches(parts);
  if (pool.empty()) throw std::invalid_argument("curvature pool: no samples in buffer or current group");
  if (sample_cap > 0 && static_cast<std::size_t>(pool.size()) > sample_cap) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(pool.size()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(sample_cap);
    std::sort(idx.begin(), idx.end());
    pool = select_rows(pool, idx);
  }
  return pool;
}

/// Mean gradient of the loss over the pool.
inline ParamVector estimate_gradient(const ParamVector& params, const Batch& pool, const ModelSpec& spec) {
  if (pool.empty()) throw std::invalid_argument("estimate_gradient: no samples");
  return loss_and_grad(params, pool, spec).grad;
}

inline ParamVector estimate_gradient(const ParamVector& params, const ReplayBuffer& buffer,
                                     const std::vector<const Batch*>& group_data, const ModelSpec& spec) {
  return estimate_gradient(params, make_curvature_pool(buffer, group_data, spec, 0), spec);
}

/// Empirical Fisher diagonal over the pool.
inline CurvatureEstimate estimate_diag_curvature(const ParamVector& params, const Batch& pool, const ModelSpec& spec) {
  return CurvatureEstimate::diagonal(fisher_diagonal(params, pool, spec), static_cast<std::size_t>(pool.size()));
}

inline CurvatureEstimate estimate_diag_curvature(const ParamVector& params, const ReplayBuffer& buffer,
                                                 const std::vector<const Batch*>& group_data, const ModelSpec& spec) {
  return estimate_diag_curvature(params, make_curvature_pool(buffer, group_data, spec, 0), spec);
}

/// Top-r eigenpairs of the empirical Fisher G^T G / n, with G the n x p
/// matrix of per-sample gradients. Eigenvalues at or below a relative 1e-12
/// of the largest are dropped, so the rank never exceeds min(r, n, p).
inline CurvatureEstimate lowrank_from_sample_grads(const Matrix& grads, int rank) {
  if (rank < 1) throw std::invalid_argument("low-rank curvature: rank must be positive");
  const Eigen::Index n = grads.rows();
  const Eigen::Index p = grads.cols();
  if (n == 0) throw std::invalid_argument("low-rank curvature: no samples");
  const double inv_n = 1.0 / static_cast<double>(n);

  Eigen::VectorXd evals;
  Matrix evecs;
  const bool gram_route = n < p;
  if (gram_route) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(inv_n * (grads * grads.transpose()));
    evals = es.eigenvalues();
    evecs = es.eigenvectors();
  } else {
    Eigen::SelfAdjointEigenSolver<Matrix> es(inv_n * (grads.transpose() * grads));
    evals = es.eigenvalues();
    evecs = es.eigenvectors();
  }
  // SelfAdjointEigenSolver sorts ascending.
  const double top = std::max(evals.maxCoeff(), 0.0);
  const double floor = 1e-12 * std::max(top, 1e-300);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = evals.size(); i-- > 0 && static_cast<Eigen::Index>(keep.size()) < rank;)
    if (evals(i) > floor) keep.push_back(i);

  Matrix u(p, static_cast<Eigen::Index>(keep.size()));
  Eigen::VectorXd d(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    d(col) = evals(keep[j]);
    if (gram_route) {
      // F u = mu u with u = G^T v / sqrt(n mu) whenever (G G^T / n) v = mu v.
      u.col(col) = grads.transpose() * evecs.col(keep[j]) / std::sqrt(static_cast<double>(n) * d(col));
    } else {
      u.col(col) = evecs.col(keep[j]);
    }
  }
  if (gram_route && u.cols() > 0) {
    // Rayleigh-Ritz on the span of the lifted vectors restores exact
    // orthonormality lost to small Gram eigenvalues.
    const Eigen::Index r = u.cols();
    Eigen::HouseholderQR<Matrix> qr(u);
    const Matrix q = qr.householderQ() * Matrix::Identity(p, r);
    const Matrix gq = grads * q;
    Eigen::SelfAdjointEigenSolver<Matrix> small(inv_n * (gq.transpose() * gq));
    for (Eigen::Index j = 0; j < r; ++j) {
      d(j) = std::max(small.eigenvalues()(r - 1 - j), 0.0);
      u.col(j) = q * small.eigenvectors().col(r - 1 - j);
    }
  }
  return CurvatureEstimate::lowrank(std::move(u), std::move(d), static_cast<std::size_t>(n));
}

inline CurvatureEstimate estimate_lowrank_curvature(const ParamVector& params, const Batch& pool,
                                                    const ModelSpec& spec, int rank = 10) {
  if (pool.empty()) throw std::invalid_argument("estimate_lowrank_curvature: no samples");
  return lowrank_from_sample_grads(per_sample_grads(params, pool, spec), rank);
}

inline CurvatureEstimate estimate_lowrank_curvature(const ParamVector& params, const ReplayBuffer& buffer,
                                                    const std::vector<const Batch*>& group_data,
                                                    const ModelSpec& spec, int rank = 10) {
  return estimate_lowrank_curvature(params, make_curvature_pool(buffer, group_data, spec, 0), spec, rank);
}

/// Finite-difference Hessian of the mean loss over `data`; p <= 200 only.
inline CurvatureEstimate exact_dense_hessian_oracle(const ParamVector& params, const Batch& data,
                                                    const ModelSpec& spec) {
  if (spec.param_count() > kMaxOracleParams)
    throw std::invalid_argument("dense Hessian oracle limited to " + std::to_string(kMaxOracleParams) +
                                " parameters");
  if (data.empty()) throw std::invalid_argument("exact_dense_hessian_oracle: no samples");
  return CurvatureEstimate::dense(finite_diff_hessian(params, data, spec), static_cast<std::size_t>(data.size()));
}

/// Smallest eigenvalue of a dense estimate. Above the oracle size a
/// Gershgorin lower bound is returned instead.
inline double min_eig_lower_bound(const CurvatureEstimate& curv) {
  if (curv.kind != CurvatureKind::dense) throw std::invalid_argument("min_eig_lower_bound: dense estimate required");
  const Matrix& h = curv.matrix;
  if (h.rows() == 0) throw std::invalid_argument("min_eig_lower_bound: empty matrix");
  if (static_cast<std::size_t>(h.rows()) > kMaxOracleParams) {
    double bound = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < h.rows(); ++i)
      bound = std::min(bound, h(i, i) - (h.row(i).cwiseAbs().sum() - std::abs(h(i, i))));
    return bound;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(h, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// Solves (H + lambda I) x = rhs.
inline SolveResult regularized_solve(const CurvatureEstimate& curv, double lambda, const ParamVector& rhs) {
  if (!std::isfinite(lambda) || !rhs.allFinite()) throw std::invalid_argument("regularized_solve: non-finite input");
  if (rhs.size() != curv.dim()) throw std::invalid_argument("regularized_solve: dimension mismatch");
  SolveResult out;
  out.lambda_used = lambda;
  switch (curv.kind) {
    case CurvatureKind::diagonal:
      if (!(lambda > 0.0)) throw PositiveDefinitenessError("diagonal solve requires lambda > 0");
      out.x = rhs.array() / (curv.diag.array() + lambda);
      break;
    case CurvatureKind::lowrank: {
      if (!(lambda > 0.0)) throw PositiveDefinitenessError("low-rank solve requires lambda > 0");
      // Woodbury with orthonormal U.
      const Eigen::VectorXd proj = curv.factors.transpose() * rhs;
      const Eigen::VectorXd shrink = curv.values.array() / (curv.values.array() + lambda);
      out.x = (rhs - curv.factors * shrink.cwiseProduct(proj)) / lambda;
      break;
    }
    case CurvatureKind::dense: {
      const double mu = min_eig_lower_bound(curv);
      out.min_eig_bound = mu;
      if (!(lambda > -mu))
        throw PositiveDefinitenessError("lambda " + std::to_string(lambda) +
                                        " does not exceed -min eigenvalue " + std::to_string(-mu));
      Matrix a = curv.matrix;
      a.diagonal().array() += lambda;
      Eigen::LLT<Matrix> llt(a);
      if (llt.info() != Eigen::Success) throw PositiveDefinitenessError("regularized matrix is not positive definite");
      out.x = llt.solve(rhs);
      break;
    }
  }
  if (!out.x.allFinite()) throw std::runtime_error("regularized_solve: non-finite solution");
  return out;
}

}  // namespace htcl

#endif  // HTCL_CURVATURE_HPP
