#pragma once

#include <cstdint>
#include <vector>

#include "specrnn/covariance.hpp"
#include "specrnn/index_set.hpp"
#include "specrnn/pruning.hpp"
#include "specrnn/rnn.hpp"

namespace specrnn {

// Binary keep-mask over the recurrent weight matrix.
struct WeightMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> keep;  // row-major, 1 = kept
  std::size_t kept_count = 0;

  WeightMask() = default;
  WeightMask(std::size_t r, std::size_t c);
  void set(std::size_t r, std::size_t c, bool value);
  bool kept(std::size_t r, std::size_t c) const;
  // Zeroes every masked-out entry of `w`.
  void apply(Matrix& w) const;
  // Kept entries as (row, col) pairs in row-major order.
  std::vector<std::pair<std::size_t, std::size_t>> kept_entries() const;
};

struct MaskedModel {
  RnnParams params;
  WeightMask mask;
};

// Same node selection as spectral pruning, but the surviving columns are
// copied verbatim: W_out keeps columns J and W_hid keeps the (J, J) block.
PruneResult spectral_no_reconstruction(const RnnParams& trained,
                                       const HiddenCovariance& cov,
                                       const SpectralPruneConfig& config);

// Uniformly random node subset; optionally rebuilt with the reconstruction
// map (zero regularization) instead of verbatim extraction.
PruneResult random_node_prune(const RnnParams& trained,
                              const HiddenCovariance& cov, std::size_t m_sharp,
                              bool with_reconstruction, std::uint64_t seed);

// Keeps the `kept` largest-magnitude recurrent weights; ties break toward the
// smaller (row, col) position. Hidden size is unchanged.
MaskedModel magnitude_weight_prune(const RnnParams& trained, std::size_t kept);

// Keeps a uniformly random subset of `kept` recurrent weights.
MaskedModel random_weight_prune(const RnnParams& trained, std::size_t kept,
                                std::uint64_t seed);

struct ColumnSparsifyConfig {
  TrainConfig train;
  std::size_t kept_cols = 0;
  // Zero-mean Gaussian perturbation applied to the recurrent matrix before
  // each masking step, identity-initialized (ReLU) nets only; breaks exact
  // column-norm ties.
  double noise_sigma = 1e-4;
  std::uint64_t noise_seed = 0;
};

// Training loop that zeroes the lowest-norm recurrent columns after every
// optimizer step. kept_cols == m leaves the trajectory bit-identical to train.
TrainResult column_sparsify_train(const RnnParams& initial,
                                  const SequenceBatch& dataset,
                                  const ColumnSparsifyConfig& config);

// Recurrent matrix replaced by its rank-k truncated SVD, kept in factored
// form (two skinny matrices) so the parameter count is 2mk.
struct LowRankRnn {
  Matrix w_out, w_in;
  std::vector<double> b_out, b_hid;
  Activation activation = Activation::kRelu;
  Matrix u_k;                // m x k
  std::vector<double> s_k;   // k singular values
  Matrix v_k;                // m x k

  std::size_t m() const { return u_k.rows(); }
  std::size_t rank() const { return s_k.size(); }
  // Dense equivalent with w_hid = U_k diag(s) V_k^T.
  RnnParams materialize() const;
};

LowRankRnn low_rank_factorize(const RnnParams& trained, std::size_t k);

// Factored-form forward pass metrics (never materializes the dense matrix).
EvalResult low_rank_evaluate(const LowRankRnn& model,
                             const SequenceBatch& dataset);

// Continues training; when `mask` is given it is reapplied after every step
// so pruned weights stay dead.
TrainResult finetune(const RnnParams& start, const SequenceBatch& dataset,
                     const TrainConfig& config,
                     const WeightMask* mask = nullptr);

// --- parameter accounting (weight matrices only, biases excluded) ---

std::size_t count_nonzero(const Matrix& a);
// Nonzero entries of w_in + w_hid + w_out.
std::size_t count_nonzero_weights(const RnnParams& params);
std::size_t node_param_count(std::size_t m_sharp, std::size_t d_x,
                             std::size_t d_y);
std::size_t weight_param_count(std::size_t m, std::size_t d_x, std::size_t d_y,
                               std::size_t kept);
std::size_t column_param_count(std::size_t m, std::size_t d_x, std::size_t d_y,
                               std::size_t kept_cols);
std::size_t low_rank_param_count(std::size_t m, std::size_t d_x,
                                 std::size_t d_y, std::size_t k);

}  // namespace specrnn
