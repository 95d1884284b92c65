#include "concept_lens/solver.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "concept_lens/errors.hpp"

namespace concept_lens {

namespace {

constexpr double kZeroClamp = 1e-12;
constexpr double kColumnNormTolerance = 1e-5;

void check_shapes(const Eigen::MatrixXd& C, const Eigen::VectorXd& z) {
  if (C.rows() != z.size()) {
    throw ValidationError("dimension mismatch: dictionary has " + std::to_string(C.rows()) +
                          " rows, vector has length " + std::to_string(z.size()));
  }
  if (C.cols() == 0) throw ValidationError("dictionary has no columns");
}

}  // namespace

void SolverConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda must be finite and >= 0");
  if (!(tolerance > 0.0)) throw ValidationError("tolerance must be > 0");
  if (max_sweeps < 1) throw ValidationError("max_sweeps must be >= 1");
  if (epsilon_target && !(*epsilon_target > 0.0 && *epsilon_target < 1.0)) {
    throw ValidationError("epsilon_target must lie in (0, 1)");
  }
}

std::size_t SparseSolution::l0() const {
  return static_cast<std::size_t>((weights.array() > 0.0).count());
}

Dictionary::Dictionary(Eigen::MatrixXd columns) : columns_(std::move(columns)) {
  if (columns_.cols() == 0 || columns_.rows() == 0) throw ValidationError("empty dictionary");
  if (!columns_.allFinite()) throw ValidationError("dictionary has non-finite entries");
  squared_norms_ = columns_.colwise().squaredNorm().transpose();
  for (Eigen::Index j = 0; j < columns_.cols(); ++j) {
    if (std::abs(std::sqrt(squared_norms_[j]) - 1.0) > kColumnNormTolerance) {
      throw ValidationError("dictionary column " + std::to_string(j) + " is not unit norm");
    }
  }
}

double soft_threshold_nonneg(double x, double t) { return x > t ? x - t : 0.0; }

double objective(const Eigen::MatrixXd& C, const Eigen::VectorXd& z, const Eigen::VectorXd& w, double lambda) {
  return (C * w - z).squaredNorm() + lambda * w.sum();
}

double lambda_max(const Eigen::MatrixXd& C, const Eigen::VectorXd& z) {
  check_shapes(C, z);
  return std::max(0.0, 2.0 * (C.transpose() * z).maxCoeff());
}

double kkt_check(const Eigen::MatrixXd& C, const Eigen::VectorXd& z, const Eigen::VectorXd& w, double lambda) {
  const Eigen::VectorXd grad = 2.0 * (C.transpose() * (C * w - z)).array() + lambda;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    const double v = w[j] > 0.0 ? std::abs(grad[j]) : std::max(0.0, -grad[j]);
    worst = std::max(worst, v);
  }
  return worst;
}

SparseSolution solve(const Dictionary& dict, const Eigen::VectorXd& z, const SolverConfig& cfg) {
  cfg.validate();
  const Eigen::MatrixXd& C = dict.matrix();
  check_shapes(C, z);
  if (!z.allFinite()) throw ValidationError("target vector has non-finite entries");

  const Eigen::VectorXd& norms = dict.squared_norms();
  const double threshold = 0.5 * cfg.lambda;

  SparseSolution sol;
  sol.weights = Eigen::VectorXd::Zero(C.cols());
  Eigen::VectorXd residual = z;  // z - C w
  Eigen::VectorXd& w = sol.weights;
  sol.status = SolveStatus::max_sweeps_reached;

  for (int sweep = 1; sweep <= cfg.max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < C.cols(); ++j) {
      const double old = w[j];
      const double rho = C.col(j).dot(residual) + norms[j] * old;
      const double updated = soft_threshold_nonneg(rho, threshold) / norms[j];
      const double delta = updated - old;
      if (delta != 0.0) {
        residual.noalias() -= delta * C.col(j);
        w[j] = updated;
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    sol.sweeps_used = sweep;
    if (cfg.record_objective) sol.objective_trace.push_back(residual.squaredNorm() + cfg.lambda * w.sum());
    if (max_change < cfg.tolerance) {
      sol.status = SolveStatus::converged;
      break;
    }
  }

  for (Eigen::Index j = 0; j < w.size(); ++j) {
    if (w[j] < kZeroClamp) w[j] = 0.0;
  }
  sol.objective = objective(C, z, w, cfg.lambda);
  sol.kkt_residual = kkt_check(C, z, w, cfg.lambda);
  return sol;
}

SparseSolution solve(const Eigen::MatrixXd& C, const Eigen::VectorXd& z, const SolverConfig& cfg) {
  return solve(Dictionary(C), z, cfg);
}

}  // namespace concept_lens
