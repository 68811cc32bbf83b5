#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "specrnn/matrix.hpp"

namespace specrnn {

enum class Activation { kRelu, kTanh };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// Elman cell: f_t = W^o h_t + b^o,  h_t = sigma(W^h h_{t-1} + W^i x_t + b^{hi}),
// h_0 = 0.
struct RnnParams {
  Matrix w_out;               // d_y x m
  Matrix w_hid;               // m x m
  Matrix w_in;                // m x d_x
  std::vector<double> b_out;  // d_y
  std::vector<double> b_hid;  // m
  Activation activation = Activation::kRelu;

  std::size_t m() const { return w_hid.rows(); }
  std::size_t d_x() const { return w_in.cols(); }
  std::size_t d_y() const { return w_out.rows(); }
  void check_consistent() const;
};

enum class TargetKind { kFinalLabel, kStepLabels, kStepTargets };

// A batch of n sequences of T steps.  Inputs are stored time-major so the
// per-step n x d_x slice is contiguous.
struct SequenceBatch {
  std::size_t n = 0;
  std::size_t steps = 0;  // T
  std::size_t d_x = 0;
  std::vector<Matrix> inputs;        // T matrices of shape n x d_x
  TargetKind target_kind = TargetKind::kFinalLabel;
  std::size_t num_classes = 0;       // d_y for classification targets
  std::vector<int> labels;           // n (kFinalLabel)
  std::vector<int> step_labels;      // n*T, index i*T+t (kStepLabels)
  std::vector<Matrix> step_targets;  // T matrices of shape n x d_y (kStepTargets)

  double input(std::size_t i, std::size_t t, std::size_t k) const {
    return inputs[t](i, k);
  }
  // Row subset (same steps), used for mini-batching.
  SequenceBatch select(const std::vector<std::size_t>& idx) const;
  // Empirical R_x: max over (i, t) of the per-step input Euclidean norm.
  double max_input_norm() const;
};

struct HiddenTrace {
  std::vector<Matrix> states;          // T matrices of n x m, h_t
  std::vector<Matrix> preactivations;  // T matrices of n x m
};

struct ForwardResult {
  std::vector<Matrix> outputs;  // T matrices of n x d_y, f_t
  HiddenTrace trace;
};

ForwardResult forward(const RnnParams& params, const SequenceBatch& batch);

enum class LossKind { kCrossEntropyFinal, kCrossEntropyPerStep, kSquaredError };

struct RnnGradients {
  Matrix w_out, w_hid, w_in;
  std::vector<double> b_out, b_hid;
  double loss = 0.0;  // mean loss of the batch at the evaluated point
};

// Exact reverse-mode gradients of the mean loss; ReLU subgradient at 0 is 0.
RnnGradients bptt_gradients(const RnnParams& params, const SequenceBatch& batch,
                            LossKind loss);

// Mean loss only (used by finite-difference checks).
double batch_loss(const RnnParams& params, const SequenceBatch& batch, LossKind loss);

struct AdamState {
  Matrix m_w_out, m_w_hid, m_w_in;
  std::vector<double> m_b_out, m_b_hid;
  Matrix v_w_out, v_w_hid, v_w_in;
  std::vector<double> v_b_out, v_b_hid;
  std::int64_t step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 0.0;  // <= 0 disables clipping

  static AdamState init(const RnnParams& params, double lr, double clip_norm);
};

// Global-norm clipping to clip_norm first, then Adam with bias correction.
void adam_step(AdamState& state, RnnParams& params, const RnnGradients& grads);

struct TrainConfig {
  std::size_t epochs = 0;
  std::size_t batch = 120;
  double lr = 1e-4;
  double decay = 0.95;        // multiplicative lr decay factor
  std::size_t decay_step = 10;  // epochs between decays
  double clip = 1.0;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kCrossEntropyFinal;
  // Optional mutation applied after every optimizer step (mask re-application,
  // column sparsification, ...).
  std::function<void(RnnParams&, std::size_t)> post_step;
};

struct TrainResult {
  RnnParams params;
  std::vector<double> loss_history;  // per-epoch mean mini-batch loss
};

// Mini-batch Adam with step-decayed learning rate and deterministic seeded
// epoch-wise reshuffling.
TrainResult train(const RnnParams& initial, const SequenceBatch& dataset,
                  const TrainConfig& config);

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

// Sequence-final classification metrics; argmax ties break toward the lowest
// class index.
EvalResult evaluate(const RnnParams& params, const SequenceBatch& dataset);

// Identity recurrent init: w_hid = I, biases 0, ReLU; w_in/w_out uniform in
// (-1/sqrt(fan_in), 1/sqrt(fan_in)).
RnnParams init_irnn(std::size_t m, std::size_t d_x, std::size_t d_y,
                    std::uint64_t seed);

// Standard init: every weight uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)),
// biases 0, tanh by default.
RnnParams init_uniform(std::size_t m, std::size_t d_x, std::size_t d_y,
                       std::uint64_t seed, Activation activation = Activation::kTanh);

}  // namespace specrnn
