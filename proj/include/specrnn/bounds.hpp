#pragma once

#include <cstdint>
#include <vector>

#include "specrnn/covariance.hpp"
#include "specrnn/index_set.hpp"
#include "specrnn/linalg.hpp"
#include "specrnn/rnn.hpp"

namespace specrnn {

// Eigen data of a hidden covariance, with eigenvalues clamped at 0.
struct SpectralProfile {
  std::vector<double> eigenvalues;  // descending
  Matrix u;                         // orthogonal
  // Filled by annotate(): sampled (lambda, N(lambda)) pairs and the leverage
  // scores at the annotated lambda.
  std::vector<std::pair<double, double>> dof_curve;
  std::vector<double> leverage;
  double annotated_lambda = 0.0;
  static SpectralProfile from_covariance(const HiddenCovariance& cov);
  void annotate(double lambda, std::size_t curve_points = 33);
};

// N(lambda) = sum_j mu_j / (mu_j + lambda).
double degrees_of_freedom(const SpectralProfile& profile, double lambda);

// tau'_k = (1/N(lambda)) sum_j U_{kj}^2 mu_j/(mu_j+lambda); sums to 1.
std::vector<double> leverage_scores(const SpectralProfile& profile, double lambda);

// Smallest lambda in [1e-12*mu_max, 1e6*mu_max] with
// m_sharp >= 5*N(lambda)*log(16*N(lambda)/delta_tilde); +inf when infeasible.
double solve_lambda(const SpectralProfile& profile, std::size_t m_sharp,
                    double delta_tilde);

struct SampledIndexSet {
  IndexSet j;                    // deduplicated draws
  std::vector<std::size_t> raw;  // the m_sharp i.i.d. draws in order
  std::size_t collisions = 0;    // m_sharp - |j|
};

// m_sharp i.i.d. draws from the leverage-score distribution via inverse CDF.
SampledIndexSet sample_index_set(const SpectralProfile& profile, double lambda,
                                 std::size_t m_sharp, std::uint64_t seed);

struct Prop2Report {
  double lambda = 0.0;
  double threshold = 0.0;  // 4*lambda
  double success_rate = 0.0;
  std::size_t trials = 0;
  std::vector<double> trial_losses;
  std::size_t total_collisions = 0;
};

// Monte-Carlo check that the leverage-regularized input information loss of a
// sampled index set stays below 4*lambda at the solved lambda.
Prop2Report check_prop2(const HiddenCovariance& cov, std::size_t m_sharp,
                        double delta_tilde, std::size_t trials, std::uint64_t seed);

// Norm budget of a compressed network (Frobenius norms for weights, Euclidean
// for biases) plus data/loss constants; hat_* fields hold the trained-network
// budgets used by the spectral variants.
struct NormBudget {
  double r_o = 0.0, r_h = 0.0, r_i = 0.0;
  double rb_o = 0.0, rb_hi = 0.0;
  double r_x = 0.0;
  double rho_sigma = 1.0;
  double rho_psi = 1.0;
  double r_y = 0.0;
  double hat_r_o = 0.0, hat_r_h = 0.0, hat_r_i = 0.0;
  double hat_rb_o = 0.0, hat_rb_hi = 0.0;
};

struct BoundDims {
  std::size_t m_sharp = 0;
  std::size_t d_x = 0;
  std::size_t d_y = 0;
};

// R_inf,t = R_o rho (R_i R_x + Rb_hi) sum_{l=1..t} (R_h rho)^{l-1} + Rb_o.
double r_infinity(const NormBudget& budget, std::size_t t);

// Three-term M_t including the double geometric sum.
double m_t(const NormBudget& budget, const BoundDims& dims, std::size_t t);

// log-covering-number bound 10 * m_sharp * sqrt(n) * M_t / eps.
double covering_bound(std::size_t m_sharp, std::size_t n, double m_t_value,
                      double eps);

// Data-dependent discrepancy terms between a trained net and its compression.
struct BoundMeasurements {
  double w_out_phi_err = 0.0;  // ||W_out_hat phi - W_out_sharp phi_J||_{n,T}
  double w_hid_phi_err = 0.0;  // ||W_hid_hat_{J,:} phi - W_hid_sharp phi_J||_{n,T}
  double w_in_op_err = 0.0;    // ||W_in_hat_{J,:} - W_in_sharp||_op
  double b_hid_err = 0.0;      // ||b_hid_hat_J - b_hid_sharp||_2
  double b_out_err = 0.0;      // ||b_out_hat - b_out_sharp||_2
  double train_error = 0.0;    // empirical training error of the trained net
};

// sqrt(3) * { ... } approximation-error bound.
double approx_bound_rhs(const NormBudget& budget, const BoundMeasurements& measured,
                        std::size_t steps);

// train error + rho_psi * approx bound + (1/sqrt(n)) * variance terms,
// c_hat = 192*sqrt(5); requires delta >= log 2.
double generalization_bound_rhs(const NormBudget& budget,
                                const BoundMeasurements& measured,
                                const BoundDims& dims, std::size_t n,
                                std::size_t steps, double delta);

struct SpectralBoundQuantities {
  double r_inf_hat = 0.0;
  double m_t_hat = 0.0;
};

// Hatted quantities: r_infinity / m_t with the substitutions
// R_o -> 2*hat_R_o*sqrt(m/(1-2*delta_tilde)), R_h -> 2*hat_R_h*sqrt(...),
// and the remaining budgets replaced by their hatted variants.
SpectralBoundQuantities spectral_bound_quantities(const NormBudget& budget,
                                                  std::size_t m, double delta_tilde,
                                                  const BoundDims& dims,
                                                  std::size_t t);

// --- measurement helpers ---

// Budget of a concrete parameter set: r_o/r_h/r_i/rb_o/rb_hi measured from the
// given params, r_x from the dataset.
NormBudget measure_budget(const RnnParams& compressed, const SequenceBatch& dataset,
                          double rho_psi = 1.0, double r_y = 0.0);

// Fills the hat_* fields from the trained network.
void measure_hat_budget(NormBudget& budget, const RnnParams& trained);

// ||f_hat - f_sharp||_{n,T}: root mean squared output distance over the data.
double output_distance(const RnnParams& trained, const RnnParams& compressed,
                       const SequenceBatch& dataset);

// The five discrepancy terms of the approximation bound, measured on data.
// `j` maps compressed nodes to trained nodes (full set for mask methods).
BoundMeasurements measure_compression_terms(const RnnParams& trained,
                                            const RnnParams& compressed,
                                            const IndexSet& j,
                                            const SequenceBatch& dataset);

}  // namespace specrnn
