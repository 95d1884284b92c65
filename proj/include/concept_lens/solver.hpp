#pragma once

// Non-negative L1-regularized least squares by cyclic coordinate descent:
//
//   minimize_w  ||C w - z||_2^2 + lambda * sum_j w_j   subject to  w >= 0
//
// C is d x c with unit-norm columns (the concept dictionary), z has length d.

#include <optional>
#include <vector>

#include <Eigen/Core>

namespace concept_lens {

struct SolverConfig {
  double lambda = 0.05;
  int max_sweeps = 10000;
  // Convergence when the largest absolute coordinate change in a sweep is
  // below this value.
  double tolerance = 1e-6;
  // Reconstruction-similarity target; informational only.
  std::optional<double> epsilon_target;
  // Keep the objective after every sweep in SparseSolution::objective_trace.
  bool record_objective = false;

  void validate() const;
};

enum class SolveStatus { converged, max_sweeps_reached };

struct SparseSolution {
  Eigen::VectorXd weights;
  double objective = 0.0;
  int sweeps_used = 0;
  double kkt_residual = 0.0;
  SolveStatus status = SolveStatus::converged;
  std::vector<double> objective_trace;

  bool converged() const { return status == SolveStatus::converged; }
  std::size_t l0() const;
};

// Validated dictionary with cached squared column norms. Shareable read-only
// across concurrent solves.
class Dictionary {
 public:
  // Throws ValidationError unless every column norm is within 1e-5 of 1 and
  // all entries are finite.
  explicit Dictionary(Eigen::MatrixXd columns);

  const Eigen::MatrixXd& matrix() const { return columns_; }
  Eigen::Index dim() const { return columns_.rows(); }
  Eigen::Index size() const { return columns_.cols(); }
  const Eigen::VectorXd& squared_norms() const { return squared_norms_; }

 private:
  Eigen::MatrixXd columns_;
  Eigen::VectorXd squared_norms_;
};

// max(0, x - t).
double soft_threshold_nonneg(double x, double t);

double objective(const Eigen::MatrixXd& C, const Eigen::VectorXd& z, const Eigen::VectorXd& w, double lambda);

// Smallest lambda at which w = 0 is optimal: 2 * max_j max(0, c_j^T z).
double lambda_max(const Eigen::MatrixXd& C, const Eigen::VectorXd& z);

// Worst violation of the optimality conditions. With g_j = 2 c_j^T (Cw - z) +
// lambda, coordinates with w_j > 0 contribute |g_j| and coordinates with
// w_j = 0 contribute max(0, -g_j). Zero at an exact optimum.
double kkt_check(const Eigen::MatrixXd& C, const Eigen::VectorXd& z, const Eigen::VectorXd& w, double lambda);

SparseSolution solve(const Dictionary& dict, const Eigen::VectorXd& z, const SolverConfig& cfg);
SparseSolution solve(const Eigen::MatrixXd& C, const Eigen::VectorXd& z, const SolverConfig& cfg);

}  // namespace concept_lens
