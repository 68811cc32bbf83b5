#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "specrnn/covariance.hpp"
#include "specrnn/index_set.hpp"
#include "specrnn/matrix.hpp"
#include "specrnn/rnn.hpp"

namespace specrnn {

enum class TauMode { kZero, kScalar, kLeverage };

// Regularization for the reconstruction problem: none, a constant added to
// every retained node, or lambda * |J| * leverage_score per node.
struct TauSpec {
  TauMode mode = TauMode::kZero;
  double value = 0.0;  // scalar c (>= 0) or leverage lambda (> 0)

  static TauSpec zero() { return {TauMode::kZero, 0.0}; }
  static TauSpec scalar(double c);
  static TauSpec leverage(double lambda);
  bool is_zero() const;
};

// Convex combination weights for the three information losses.
struct Theta {
  double input = 1.0;  // theta_1, on L^A
  double out_o = 0.0;  // theta_2, on L^{B,o}
  double out_h = 0.0;  // theta_3, on L^{B,h}
  void validate() const;
};

// Output/recurrent weights consulted when theta puts mass on the output
// losses; may be null otherwise.
struct OutputWeights {
  const Matrix* w_out = nullptr;
  const Matrix* w_hid = nullptr;
};

struct PruneResult {
  IndexSet j;
  Matrix a_j;  // m x |J| reconstruction matrix
  RnnParams compressed;
  double loss_input = 0.0;  // L^A
  double loss_out_o = 0.0;  // L^{B,o}
  double loss_out_h = 0.0;  // L^{B,h}
  double objective = 0.0;
  TauMode tau_mode = TauMode::kZero;
  double tau_value = 0.0;
  bool used_pseudo_inverse_fallback = false;
};

// Per-node regularizer values for J.  Leverage mode uses |J| as the node
// budget in tau = lambda * m_sharp * tau'.
std::vector<double> tau_vector(const TauSpec& spec, const IndexSet& j,
                               const HiddenCovariance& cov);

struct ReconstructionMatrix {
  Matrix a_j;
  bool used_pseudo_inverse_fallback = false;
};

// A_J = Sigma_{[m],J} (Sigma_{J,J} + I_tau)^{-1}; the tau = 0 path and the
// singular-fallback path use the pseudo-inverse.
ReconstructionMatrix reconstruction_matrix_full(const HiddenCovariance& cov,
                                                const IndexSet& j, const TauSpec& tau);
Matrix reconstruction_matrix(const HiddenCovariance& cov, const IndexSet& j,
                             const TauSpec& tau);

// L^A_tau(J) = Tr[Sigma - Sigma_{[m],J}(Sigma_{J,J}+I_tau)^{-1}Sigma_{J,[m]}],
// tiny negatives clamped to 0.
double input_information_loss(const HiddenCovariance& cov, const IndexSet& j,
                              const TauSpec& tau);
// Same loss with an explicit per-node regularizer vector (length |J|).
double input_information_loss(const HiddenCovariance& cov, const IndexSet& j,
                              const std::vector<double>& tau_values);

// (L^{B,o}, L^{B,h}): the same residual pushed through w_out and the J-rows
// of w_hid.
std::pair<double, double> output_information_losses(const HiddenCovariance& cov,
                                                    const IndexSet& j,
                                                    const TauSpec& tau,
                                                    const Matrix& w_out,
                                                    const Matrix& w_hid);

// theta.input * L^A + theta.out_o * L^{B,o} + theta.out_h * L^{B,h}.
double objective_value(const HiddenCovariance& cov, const IndexSet& j,
                       const TauSpec& tau, const OutputWeights& weights,
                       const Theta& theta);

enum class GreedyMode { kAuto, kIncremental, kRecompute };

// Forward greedy selection; ties toward the smallest index.  kAuto runs the
// incremental residual-update path for zero/scalar tau and recomputes the
// objective per candidate in leverage mode (tau depends on |J| there).
IndexSet greedy_select(const HiddenCovariance& cov, std::size_t m_sharp,
                       const TauSpec& tau, const OutputWeights& weights,
                       const Theta& theta, GreedyMode mode = GreedyMode::kAuto);

struct GreedyCurve {
  std::vector<std::size_t> order;    // node added at each step
  std::vector<double> objectives;    // objective after each step (sizes 1..m_sharp)
};

// Greedy selection with the whole prefix curve (objectives recomputed in
// closed form at every size).
GreedyCurve greedy_curve(const HiddenCovariance& cov, std::size_t m_sharp,
                         const TauSpec& tau, const OutputWeights& weights,
                         const Theta& theta);

// Global minimizer by subset enumeration; C(m, m_sharp) capped at 1e6; ties
// toward the lexicographically smallest subset.
IndexSet exhaustive_select(const HiddenCovariance& cov, std::size_t m_sharp,
                           const TauSpec& tau, const OutputWeights& weights,
                           const Theta& theta);

// Compressed model: W_out A_J, W_hid_{J,:} A_J, W_in_{J,:}, b_hid_J, b_out.
PruneResult compress(const RnnParams& trained, const HiddenCovariance& cov,
                     const IndexSet& j, const TauSpec& tau,
                     const Theta& theta = Theta{});

enum class Selector { kGreedy, kExhaustive };

struct SpectralPruneConfig {
  std::size_t m_sharp = 0;
  TauSpec tau = TauSpec::zero();
  Theta theta;
  Selector selector = Selector::kGreedy;
};

// Shared node selection for the spectral methods (with/without rewiring).
IndexSet select_nodes(const HiddenCovariance& cov, const RnnParams& trained,
                      const SpectralPruneConfig& config);

// Full pipeline: hidden covariance of the dataset -> selection -> compress.
PruneResult spectral_prune(const RnnParams& trained, const SequenceBatch& dataset,
                           const SpectralPruneConfig& config);
PruneResult spectral_prune_with_cov(const RnnParams& trained,
                                    const HiddenCovariance& cov,
                                    const SpectralPruneConfig& config);

}  // namespace specrnn
