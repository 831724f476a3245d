#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "cwsl/core_model.hpp"
#include "cwsl/ode_engine.hpp"
#include "cwsl/param_recovery.hpp"
#include "cwsl/spectral_forward.hpp"

namespace cwsl {

/// One data/model index pair k: z_{k0} = lambda_k, z_{k1} = model lambda_k.
struct IndexPair {
  int branch = 1;
  int k = 0;
  int seed_k = 0;
  cplx z0, z1;
  cplx beta0, beta1;
  cplx rho0, rho1;
  double xi = 0.0;
  double theta = 1.0;
  bool dropped = false;
};

struct SequenceWeights {
  /// Branch-major.
  std::vector<IndexPair> pairs;
  std::size_t active_count() const;
};

enum class Execution { serial, parallel };

/// Robin and jump constants of a model problem.
struct ModelBoundary {
  cplx h, H, d2;
};

/// Model problem with b, a_k and d1 from `rec`, q = 0 and the given h, H, d2.
ProblemSpec build_model(const RecoveredConstants& rec, double T, const ModelBoundary& bc = {}, std::size_t q_nodes = 2);

struct ModelFit {
  RecoveredConstants constants;
  ModelBoundary boundary;
  /// RMS of the residual per fitted entry.
  double residual = 0.0;
  int iterations = 0;
};

/// Adjusts b, a_k, d1 and the model's h, H, d2 (q~ = 0) by Levenberg-Marquardt
/// so the model eigenvalues follow the data for k >= from_fraction * N. With
/// weight_M > 0 the relative misfit of the Weyl coefficients enters too.
ModelFit fit_model(const SpectralData& W, double T, const RecoveredConstants& start, double from_fraction = 0.25,
                   int max_iter = 60, double weight_M = 0.0);

/// theta_k and xi_k; pairs with xi_k < eps_xi (1 + |rho_k|) are dropped.
SequenceWeights compute_weights(const SpectralData& W, const SpectralData& W_model, const DerivedConstants& consts,
                                double eps_xi = 1e-12);

/// phi(x, z) of one spec at every z_{ki}, with lambda-derivatives, plus the
/// integral form of D for nearly equal z. Trace id of (k, i) is 2k + i.
class KernelTable {
 public:
  KernelTable(const ProblemSpec& spec, const SequenceWeights& w, const XGrid& grid, const KernelOptions& opts,
              Execution exec);

  const XGrid& grid() const { return grid_; }
  const SolutionTrace& trace(std::size_t pair, int i) const { return traces_.at(2 * pair + i); }
  /// D(x_s, z_a, z_b) for trace ids a, b.
  cplx D(std::size_t station, std::size_t a, std::size_t b) const;
  /// dD/dx = r phi(z_a) phi(z_b).
  cplx dD(std::size_t station, std::size_t a, std::size_t b) const;
  cplx weight(std::size_t station) const;
  std::size_t near_pairs() const { return near_.size(); }

 private:
  ProblemSpec spec_;
  XGrid grid_;
  std::vector<cplx> z_;
  std::vector<SolutionTrace> traces_;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<cplx>> near_;
};

struct MainEquationSystem {
  std::size_t station = 0;
  double x = 0.0;
  /// Pair ids of the unknowns; unknown 2a + i belongs to active[a].
  std::vector<std::size_t> active;
  Eigen::MatrixXcd matrix;   // I + A~(x)
  Eigen::VectorXcd rhs;      // f~(x)
  Eigen::MatrixXcd dmatrix;  // A~'(x)
  Eigen::VectorXcd drhs;     // f~'(x)
};

MainEquationSystem assemble_main_equation(std::size_t station, const SequenceWeights& w, const KernelTable& model);

/// Operator A~(x) alone (no identity), for diagnostics.
Eigen::MatrixXcd main_operator(std::size_t station, const SequenceWeights& w, const KernelTable& table);

/// f(x) from the model relation, applied to the traces of a spec: f_{k0} = (phi_k0 - phi_k1) / (xi theta),
/// f_{k1} = phi_k1 / theta.
Eigen::VectorXcd sequence_vector(std::size_t station, const SequenceWeights& w, const KernelTable& table);

struct MainEquationCheck {
  double x = 0.0;
  /// sup |f~ - (I + A~) f| for the true f.
  double defect = 0.0;
  /// sup of (I + A~)(I - A) - I over the pairs with k < N / 2.
  double identity = 0.0;
  double f_sup = 0.0;
};

/// Checks the main equation against the traces of a known problem at the given stations.
std::vector<MainEquationCheck> check_main_equation(const ProblemSpec& truth, const ProblemSpec& model,
                                                   const SequenceWeights& w, const XGrid& grid,
                                                   const std::vector<std::size_t>& stations, Execution exec,
                                                   const KernelOptions& opts = {});

struct MainEquationSolution {
  Eigen::VectorXcd f;
  Eigen::VectorXcd fp;
  /// Reciprocal condition estimate of I + A~ in the 1-norm.
  double rcond = 1.0;
};

MainEquationSolution solve_main_equation(const MainEquationSystem& sys, double min_rcond = 1e-15);

/// Assemble and solve at every station of the model grid.
std::vector<MainEquationSolution> solve_all_stations(const SequenceWeights& w, const KernelTable& model,
                                                     Execution exec, double min_rcond = 1e-15);

/// Reconstructed phi(x, z_{ki}) and derivative at every station.
struct ReconstructedSolutions {
  /// [pair][station], i = 0 and 1.
  std::vector<std::vector<SolutionSample>> phi0, phi1;
};

ReconstructedSolutions reconstruct_solutions(const std::vector<MainEquationSolution>& sols, const SequenceWeights& w,
                                             const KernelTable& model);

struct QReconstruction {
  std::vector<double> x;
  std::vector<cplx> q;
  /// sup_x of the last retained term of each branch, relative to sup_x of the sum.
  double tail_estimate = 0.0;
};

/// q = q~ - 2 r d/dx sum_k (M_k phi~_k0 phi_k0 - M~_k phi~_k1 phi_k1), with q~ == 0.
/// With `sigma` the k-th term of a branch of n terms is scaled by sin(u)/u, u = pi k / n.
QReconstruction reconstruct_q(const ReconstructedSolutions& phis, const SequenceWeights& w, const KernelTable& model,
                              double tail_limit = 1.0, bool sigma = false);

/// Replaces q within width_j of 0, b and T (j the layer) by the least-squares
/// polynomial of `degree` fitted on the adjacent 2 width_j of the same layer.
void patch_boundary_layers(QReconstruction& qr, double T, double b, double width1, double width2, int degree = 2);

struct BoundaryEstimate {
  cplx value;
  double spread = 0.0;
  int used = 0;
};

struct BoundaryParams {
  BoundaryEstimate h, H, d2;
};

BoundaryParams extract_boundary_params(const ReconstructedSolutions& phis, const SequenceWeights& w,
                                       const XGrid& grid, cplx d1, double spread_limit = 1.0);

struct BoundaryFit {
  cplx h, H, d2;
  /// RMS of the scaled characteristic function over the fitted eigenvalues.
  double residual = 0.0;
  int iterations = 0;
};

/// Least-squares h, H, d2 making Delta vanish at the given eigenvalues of the
/// problem with potential q and the constants in `rec`, by Gauss-Newton from `start`.
/// Delta is affine in each of the three, so a few steps suffice.
BoundaryFit fit_boundary_params(const std::vector<cplx>& lambdas, const RecoveredConstants& rec, double T,
                                const Potential& q, const ModelBoundary& start, Execution exec,
                                const IntegratorOptions& opts = {}, int max_iter = 20);

struct ForwardResidual {
  int branch = 1;
  int k = 0;
  cplx lambda_data;
  cplx lambda_resolved;
  double rel_err = 0.0;
};

struct ReconstructionResult {
  std::vector<double> x;
  std::vector<cplx> q;
  cplx h, H, d2;
  RecoveredConstants constants;
  int N = 0;
  int dropped = 0;
  double h_spread = 0.0, H_spread = 0.0, d2_spread = 0.0;
  double tail_estimate = 0.0;
  double min_rcond = 1.0;
  /// Model the main equation was solved against.
  ModelFit model;
  /// Estimates of h, H, d2 from the reconstructed solutions.
  BoundaryParams solution_estimates;
  double fit_residual = 0.0;
  std::vector<ForwardResidual> forward;
  double max_forward_residual = 0.0;
};

struct InverseConfig {
  int N = 40;
  std::size_t grid_points = 201;
  double eps_xi = 1e-12;
  double tail_limit = 1.0;
  double min_rcond = 1e-15;
  double spread_limit = 1.0;
  /// Forward re-solve for k <= resolve_fraction * N on each branch.
  double resolve_fraction = 0.5;
  bool verify = true;
  /// Fit the model constants to the tail of the data (fit_model); otherwise
  /// the recovered constants with h~ = H~ = d2~ = 0 (or model_boundary).
  bool fit_model = true;
  double model_fit_from = 0.25;
  /// A fit of rho and M to all entries with RMS residual below this replaces the tail fit.
  double exact_model_tol = 1e-10;
  /// Lanczos sigma factors on the series for q.
  bool sigma = true;
  /// Boundary layers of q patched over layer_width * l_j / N on each side; 0 disables.
  double layer_width = 4.0;
  /// Eigenvalues with k < min(fit_count, N / 2) on each branch enter the h, H, d2 fit.
  int fit_count = 5;
  RecoveryOptions recovery;
  /// Skip parameter recovery and use these model constants.
  std::optional<RecoveredConstants> model_constants;
  /// Robin and jump constants of the model when fit_model is off; zero when empty.
  std::optional<ModelBoundary> model_boundary;
  KernelOptions kernel;
  LocateOptions locate;
  Execution execution = Execution::parallel;
};

/// Spectral data truncated to the first N entries of each branch.
SpectralData truncate(const SpectralData& W, int N);

ReconstructionResult invert(const SpectralData& W, double T, const InverseConfig& config = {});

/// Spec with the reconstructed q (on the x-grid), h, H, d2 and recovered b, a_k, d1.
ProblemSpec reconstructed_spec(const ReconstructionResult& r, double T);

}  // namespace cwsl
