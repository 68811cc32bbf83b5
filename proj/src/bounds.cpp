#include "specrnn/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "specrnn/pruning.hpp"
#include "specrnn/rng.hpp"

namespace specrnn {

namespace {

constexpr double kLambdaLow = 1e-12;
constexpr double kLambdaHigh = 1e6;

void check_lambda(double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw InvalidInputError("lambda must be positive and finite");
  }
}

void check_delta_tilde(double delta_tilde) {
  if (!(delta_tilde > 0.0 && delta_tilde < 0.5)) {
    throw InvalidInputError("delta_tilde must lie in (0, 1/2)");
  }
}

// sum_{l=1}^{t} base^{l-1}, computed termwise to stay exact at base = 1.
double geometric_sum(double base, std::size_t t) {
  double acc = 0.0;
  double pow_l = 1.0;
  for (std::size_t l = 1; l <= t; ++l) {
    acc += pow_l;
    pow_l *= base;
  }
  return acc;
}

double vec_norm(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

double vec_diff_norm(const std::vector<double>& a,
                     const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw DimensionError("bias vectors differ in length");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace

SpectralProfile SpectralProfile::from_covariance(const HiddenCovariance& cov) {
  SymEig eig = sym_eig(cov.sigma);
  clamp_psd_eigenvalues(eig.eigenvalues, "hidden covariance spectrum");
  SpectralProfile profile;
  profile.eigenvalues = std::move(eig.eigenvalues);
  profile.u = std::move(eig.eigenvectors);
  return profile;
}

void SpectralProfile::annotate(double lambda, std::size_t curve_points) {
  check_lambda(lambda);
  double mu_max = eigenvalues.empty() ? 0.0 : eigenvalues.front();
  double scale = mu_max > 0.0 ? mu_max : 1.0;
  double lo = kLambdaLow * scale;
  double hi = kLambdaHigh * scale;
  dof_curve.clear();
  if (curve_points == 1) {
    dof_curve.emplace_back(lambda, degrees_of_freedom(*this, lambda));
  } else if (curve_points > 1) {
    double log_lo = std::log(lo);
    double step = (std::log(hi) - log_lo) /
                  static_cast<double>(curve_points - 1);
    for (std::size_t i = 0; i < curve_points; ++i) {
      double l = std::exp(log_lo + step * static_cast<double>(i));
      dof_curve.emplace_back(l, degrees_of_freedom(*this, l));
    }
  }
  leverage = leverage_scores(*this, lambda);
  annotated_lambda = lambda;
}

double degrees_of_freedom(const SpectralProfile& profile, double lambda) {
  check_lambda(lambda);
  double acc = 0.0;
  for (double mu : profile.eigenvalues) {
    if (mu > 0.0) acc += mu / (mu + lambda);
  }
  return acc;
}

std::vector<double> leverage_scores(const SpectralProfile& profile,
                                    double lambda) {
  check_lambda(lambda);
  const std::size_t m = profile.eigenvalues.size();
  double dof = degrees_of_freedom(profile, lambda);
  if (!(dof > 0.0)) {
    throw InvalidInputError("leverage scores undefined for all-zero spectrum");
  }
  std::vector<double> filtered(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    double mu = profile.eigenvalues[j];
    filtered[j] = mu > 0.0 ? mu / (mu + lambda) : 0.0;
  }
  std::vector<double> scores(m, 0.0);
  for (std::size_t k = 0; k < m; ++k) {
    const double* row = profile.u.row_ptr(k);
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) acc += row[j] * row[j] * filtered[j];
    scores[k] = acc / dof;
  }
  return scores;
}

double solve_lambda(const SpectralProfile& profile, std::size_t m_sharp,
                    double delta_tilde) {
  check_delta_tilde(delta_tilde);
  if (m_sharp == 0) throw InvalidInputError("m_sharp must be >= 1");
  double mu_max = profile.eigenvalues.empty() ? 0.0 : profile.eigenvalues.front();
  double scale = mu_max > 0.0 ? mu_max : 1.0;
  double lo = kLambdaLow * scale;
  double hi = kLambdaHigh * scale;
  auto feasible = [&](double lambda) {
    double dof = degrees_of_freedom(profile, lambda);
    if (dof <= 0.0) return true;  // the requirement degenerates to m_sharp >= -inf
    double required = 5.0 * dof * std::log(16.0 * dof / delta_tilde);
    return static_cast<double>(m_sharp) >= required;
  };
  if (feasible(lo)) return lo;
  if (!feasible(hi)) return std::numeric_limits<double>::infinity();
  // The feasible set is an up-set in lambda: N(lambda) decreases, and the
  // requirement is increasing in N wherever it is positive.
  double log_lo = std::log(lo);
  double log_hi = std::log(hi);
  while (log_hi - log_lo > 1e-9) {
    double mid = 0.5 * (log_lo + log_hi);
    if (feasible(std::exp(mid))) {
      log_hi = mid;
    } else {
      log_lo = mid;
    }
  }
  return std::exp(log_hi);
}

SampledIndexSet sample_index_set(const SpectralProfile& profile, double lambda,
                                 std::size_t m_sharp, std::uint64_t seed) {
  std::vector<double> scores = leverage_scores(profile, lambda);
  const std::size_t m = scores.size();
  std::vector<double> cdf(m, 0.0);
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < m; ++k) {
    acc += scores[k];
    cdf[k] = acc;
    if (scores[k] > 0.0) last_positive = k;
  }
  SplitMix64 rng(seed);
  SampledIndexSet out;
  out.raw.reserve(m_sharp);
  for (std::size_t i = 0; i < m_sharp; ++i) {
    double u = rng.next_double() * acc;
    std::size_t idx = static_cast<std::size_t>(
        std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    if (idx > last_positive) idx = last_positive;
    out.raw.push_back(idx);
  }
  out.j = IndexSet(out.raw);
  out.collisions = m_sharp - out.j.size();
  return out;
}

Prop2Report check_prop2(const HiddenCovariance& cov, std::size_t m_sharp,
                        double delta_tilde, std::size_t trials,
                        std::uint64_t seed) {
  check_delta_tilde(delta_tilde);
  if (trials == 0) throw InvalidInputError("check requires at least one trial");
  SpectralProfile profile = SpectralProfile::from_covariance(cov);
  double lambda = solve_lambda(profile, m_sharp, delta_tilde);
  if (!std::isfinite(lambda)) {
    throw InvalidInputError(
        "sample-size condition unsatisfiable for m_sharp=" +
        std::to_string(m_sharp) +
        ": no lambda in the search bracket meets m_sharp >= 5 N(lambda) "
        "log(16 N(lambda)/delta_tilde)");
  }
  profile.annotate(lambda);
  const std::vector<double>& scores = profile.leverage;

  Prop2Report report;
  report.lambda = lambda;
  report.threshold = 4.0 * lambda;
  report.trials = trials;
  report.trial_losses.reserve(trials);

  SplitMix64 master(seed);
  std::vector<std::uint64_t> trial_seeds(trials);
  for (auto& s : trial_seeds) s = master.next_u64();

  std::size_t successes = 0;
  for (std::size_t i = 0; i < trials; ++i) {
    SampledIndexSet sampled =
        sample_index_set(profile, lambda, m_sharp, trial_seeds[i]);
    report.total_collisions += sampled.collisions;
    std::vector<double> tau(sampled.j.size(), 0.0);
    double tau_scale = lambda * static_cast<double>(sampled.j.size());
    for (std::size_t k = 0; k < sampled.j.size(); ++k) {
      tau[k] = tau_scale * scores[sampled.j.indices[k]];
    }
    double loss = input_information_loss(cov, sampled.j, tau);
    report.trial_losses.push_back(loss);
    if (loss <= report.threshold) ++successes;
  }
  report.success_rate =
      static_cast<double>(successes) / static_cast<double>(trials);
  return report;
}

double r_infinity(const NormBudget& budget, std::size_t t) {
  if (t == 0) throw InvalidInputError("horizon t must be >= 1");
  double geo = geometric_sum(budget.r_h * budget.rho_sigma, t);
  return budget.r_o * budget.rho_sigma *
             (budget.r_i * budget.r_x + budget.rb_hi) * geo +
         budget.rb_o;
}

double m_t(const NormBudget& budget, const BoundDims& dims, std::size_t t) {
  if (t == 0) throw InvalidInputError("horizon t must be >= 1");
  double rho = budget.rho_sigma;
  double rh_rho = budget.r_h * rho;
  double sqrt_msharp = std::sqrt(static_cast<double>(dims.m_sharp));
  double dy = static_cast<double>(dims.d_y);
  double dx = static_cast<double>(dims.d_x);
  double min_y = std::min(sqrt_msharp, std::sqrt(dy));
  double min_x = std::min(sqrt_msharp, std::sqrt(dx));

  // sum_{l=0}^{t-1} (R_h rho)^l == geometric_sum(rh_rho, t).
  double term1 = budget.r_o * rho *
                 ((dy * min_y + dx * min_x) * budget.r_i * budget.r_x +
                  (dy * min_y + 1.0) * budget.rb_hi) *
                 geometric_sum(rh_rho, t);

  double double_sum = 0.0;
  for (std::size_t l = 1; l + 1 <= t; ++l) {
    for (std::size_t k = 0; k < l; ++k) {
      double exponent = static_cast<double>(t - 1 - l + k);
      double_sum += std::pow(rh_rho, exponent);
    }
  }
  double term2 = std::pow(static_cast<double>(dims.m_sharp), 1.5) *
                 budget.r_h * rho * rho * budget.r_o *
                 (budget.r_i * budget.r_x + budget.rb_hi) * double_sum;

  double term3 = dy * budget.rb_o;
  return term1 + term2 + term3;
}

double covering_bound(std::size_t m_sharp, std::size_t n, double m_t_value,
                      double eps) {
  if (!(eps > 0.0)) throw InvalidInputError("covering radius must be > 0");
  return 10.0 * static_cast<double>(m_sharp) *
         std::sqrt(static_cast<double>(n)) * m_t_value / eps;
}

double approx_bound_rhs(const NormBudget& budget,
                        const BoundMeasurements& measured, std::size_t steps) {
  if (steps == 0) throw InvalidInputError("horizon must be >= 1");
  double rho = budget.rho_sigma;
  double rh_rho = budget.r_h * rho;
  double exponent = static_cast<double>(steps) - 2.0;
  double pow_term;
  if (rh_rho > 0.0) {
    pow_term = std::pow(rh_rho, exponent);
  } else {
    pow_term = exponent == 0.0 ? 1.0 : 0.0;
  }
  double hidden_factor = budget.r_o * rho * std::max(1.0, pow_term) *
                         static_cast<double>(steps);
  double geo = geometric_sum(rh_rho, steps);
  double input_term = budget.r_o * rho * geo *
                      (budget.r_x * measured.w_in_op_err + measured.b_hid_err);
  return std::sqrt(3.0) *
         (measured.w_out_phi_err + hidden_factor * measured.w_hid_phi_err +
          input_term + measured.b_out_err);
}

double generalization_bound_rhs(const NormBudget& budget,
                                const BoundMeasurements& measured,
                                const BoundDims& dims, std::size_t n,
                                std::size_t steps, double delta) {
  if (delta < std::log(2.0)) {
    throw InvalidInputError("delta must be >= log 2");
  }
  if (n == 0) throw InvalidInputError("sample count must be >= 1");
  double approx = budget.rho_psi * approx_bound_rhs(budget, measured, steps);
  double c_hat = 192.0 * std::sqrt(5.0);
  double sum_mt_rinf = 0.0;
  for (std::size_t t = 1; t <= steps; ++t) {
    sum_mt_rinf +=
        std::sqrt(m_t(budget, dims, t)) * std::sqrt(r_infinity(budget, t));
  }
  double complexity = c_hat * budget.rho_psi *
                      std::sqrt(static_cast<double>(dims.m_sharp)) *
                      sum_mt_rinf / static_cast<double>(steps);
  double tail = 3.0 * std::sqrt(2.0 * delta) *
                (budget.rho_psi * r_infinity(budget, steps) + budget.r_y);
  double variance = (complexity + tail) / std::sqrt(static_cast<double>(n));
  return measured.train_error + approx + variance;
}

SpectralBoundQuantities spectral_bound_quantities(const NormBudget& budget,
                                                  std::size_t m,
                                                  double delta_tilde,
                                                  const BoundDims& dims,
                                                  std::size_t t) {
  check_delta_tilde(delta_tilde);
  if (m == 0) throw InvalidInputError("m must be >= 1");
  double blow_up =
      2.0 * std::sqrt(static_cast<double>(m) / (1.0 - 2.0 * delta_tilde));
  NormBudget sub;
  sub.r_o = blow_up * budget.hat_r_o;
  sub.r_h = blow_up * budget.hat_r_h;
  sub.r_i = budget.hat_r_i;
  sub.rb_o = budget.hat_rb_o;
  sub.rb_hi = budget.hat_rb_hi;
  sub.r_x = budget.r_x;
  sub.rho_sigma = budget.rho_sigma;
  sub.rho_psi = budget.rho_psi;
  sub.r_y = budget.r_y;
  SpectralBoundQuantities out;
  out.r_inf_hat = r_infinity(sub, t);
  out.m_t_hat = m_t(sub, dims, t);
  return out;
}

NormBudget measure_budget(const RnnParams& compressed,
                          const SequenceBatch& dataset, double rho_psi,
                          double r_y) {
  compressed.check_consistent();
  NormBudget budget;
  budget.r_o = compressed.w_out.frobenius_norm();
  budget.r_h = compressed.w_hid.frobenius_norm();
  budget.r_i = compressed.w_in.frobenius_norm();
  budget.rb_o = vec_norm(compressed.b_out);
  budget.rb_hi = vec_norm(compressed.b_hid);
  budget.r_x = dataset.max_input_norm();
  budget.rho_sigma = 1.0;  // both supported activations are 1-Lipschitz
  budget.rho_psi = rho_psi;
  budget.r_y = r_y;
  return budget;
}

void measure_hat_budget(NormBudget& budget, const RnnParams& trained) {
  trained.check_consistent();
  budget.hat_r_o = trained.w_out.frobenius_norm();
  budget.hat_r_h = trained.w_hid.frobenius_norm();
  budget.hat_r_i = trained.w_in.frobenius_norm();
  budget.hat_rb_o = vec_norm(trained.b_out);
  budget.hat_rb_hi = vec_norm(trained.b_hid);
}

double output_distance(const RnnParams& trained, const RnnParams& compressed,
                       const SequenceBatch& dataset) {
  trained.check_consistent();
  compressed.check_consistent();
  if (trained.d_y() != compressed.d_y() || trained.d_x() != compressed.d_x()) {
    throw DimensionError("output distance: incompatible model shapes");
  }
  if (dataset.n == 0 || dataset.steps == 0) {
    throw InvalidInputError("output distance requires a nonempty dataset");
  }
  constexpr std::size_t kChunk = 512;
  double acc = 0.0;
  for (std::size_t start = 0; start < dataset.n; start += kChunk) {
    std::size_t stop = std::min(dataset.n, start + kChunk);
    std::vector<std::size_t> idx(stop - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    SequenceBatch chunk = dataset.select(idx);
    ForwardResult a = forward(trained, chunk);
    ForwardResult b = forward(compressed, chunk);
    for (std::size_t t = 0; t < dataset.steps; ++t) {
      const Matrix& fa = a.outputs[t];
      const Matrix& fb = b.outputs[t];
      for (std::size_t i = 0; i < fa.rows(); ++i) {
        const double* ra = fa.row_ptr(i);
        const double* rb = fb.row_ptr(i);
        for (std::size_t c = 0; c < fa.cols(); ++c) {
          double d = ra[c] - rb[c];
          acc += d * d;
        }
      }
    }
  }
  double denom =
      static_cast<double>(dataset.n) * static_cast<double>(dataset.steps);
  return std::sqrt(acc / denom);
}

BoundMeasurements measure_compression_terms(const RnnParams& trained,
                                            const RnnParams& compressed,
                                            const IndexSet& j,
                                            const SequenceBatch& dataset) {
  trained.check_consistent();
  compressed.check_consistent();
  const std::size_t m = trained.m();
  j.check_bounds(m);
  if (compressed.m() != j.size()) {
    throw DimensionError("compressed width does not match |J|");
  }
  if (dataset.n == 0 || dataset.steps == 0) {
    throw InvalidInputError("compression terms require a nonempty dataset");
  }

  Matrix w_hid_rows = trained.w_hid.select_rows(j.indices);  // k x m
  double acc_out = 0.0;
  double acc_hid = 0.0;
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < dataset.n; start += kChunk) {
    std::size_t stop = std::min(dataset.n, start + kChunk);
    std::vector<std::size_t> idx(stop - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    SequenceBatch chunk = dataset.select(idx);
    ForwardResult run = forward(trained, chunk);
    for (std::size_t t = 0; t < dataset.steps; ++t) {
      const Matrix& phi = run.trace.states[t];           // n x m
      Matrix phi_j = phi.select_cols(j.indices);         // n x k
      Matrix out_full = matmul_nt(phi, trained.w_out);   // n x d_y
      Matrix out_sub = matmul_nt(phi_j, compressed.w_out);
      out_full -= out_sub;
      double f1 = out_full.frobenius_norm();
      acc_out += f1 * f1;
      Matrix hid_full = matmul_nt(phi, w_hid_rows);      // n x k
      Matrix hid_sub = matmul_nt(phi_j, compressed.w_hid);
      hid_full -= hid_sub;
      double f2 = hid_full.frobenius_norm();
      acc_hid += f2 * f2;
    }
  }
  double denom =
      static_cast<double>(dataset.n) * static_cast<double>(dataset.steps);

  BoundMeasurements out;
  out.w_out_phi_err = std::sqrt(acc_out / denom);
  out.w_hid_phi_err = std::sqrt(acc_hid / denom);
  Matrix w_in_diff = trained.w_in.select_rows(j.indices);
  w_in_diff -= compressed.w_in;
  out.w_in_op_err = operator_norm(w_in_diff);
  std::vector<double> b_hid_sel(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    b_hid_sel[i] = trained.b_hid[j.indices[i]];
  }
  out.b_hid_err = vec_diff_norm(b_hid_sel, compressed.b_hid);
  out.b_out_err = vec_diff_norm(trained.b_out, compressed.b_out);
  out.train_error = 0.0;  // task-level; filled by the caller when needed
  return out;
}

}  // namespace specrnn
