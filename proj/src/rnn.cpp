#include "specrnn/rnn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "specrnn/rng.hpp"

namespace specrnn {

const char* activation_name(Activation a) {
  return a == Activation::kRelu ? "relu" : "tanh";
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw InvalidInputError("unknown activation: " + name);
}

void RnnParams::check_consistent() const {
  const std::size_t mm = m();
  if (w_out.cols() != mm || w_hid.cols() != mm || w_in.rows() != mm ||
      b_out.size() != d_y() || b_hid.size() != mm)
    throw DimensionError("RnnParams: inconsistent dimensions");
  if (w_out.has_non_finite() || w_hid.has_non_finite() || w_in.has_non_finite())
    throw InvalidInputError("RnnParams: non-finite weight");
}

SequenceBatch SequenceBatch::select(const std::vector<std::size_t>& idx) const {
  SequenceBatch out;
  out.n = idx.size();
  out.steps = steps;
  out.d_x = d_x;
  out.target_kind = target_kind;
  out.num_classes = num_classes;
  out.inputs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) out.inputs.push_back(inputs[t].select_rows(idx));
  if (target_kind == TargetKind::kFinalLabel) {
    out.labels.reserve(idx.size());
    for (std::size_t i : idx) out.labels.push_back(labels[i]);
  } else if (target_kind == TargetKind::kStepLabels) {
    out.step_labels.reserve(idx.size() * steps);
    for (std::size_t i : idx)
      for (std::size_t t = 0; t < steps; ++t) out.step_labels.push_back(step_labels[i * steps + t]);
  } else {
    out.step_targets.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) out.step_targets.push_back(step_targets[t].select_rows(idx));
  }
  return out;
}

double SequenceBatch::max_input_norm() const {
  double best = 0.0;
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < n; ++i) {
      double sq = 0.0;
      const double* row = inputs[t].row_ptr(i);
      for (std::size_t k = 0; k < d_x; ++k) sq += row[k] * row[k];
      best = std::max(best, sq);
    }
  return std::sqrt(best);
}

namespace {

void add_row_broadcast(Matrix& a, const std::vector<double>& b) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* row = a.row_ptr(i);
    for (std::size_t j = 0; j < a.cols(); ++j) row[j] += b[j];
  }
}

Matrix apply_activation(const Matrix& pre, Activation act) {
  Matrix h = pre;
  if (act == Activation::kRelu) {
    for (double& x : h.data()) x = x > 0.0 ? x : 0.0;
  } else {
    for (double& x : h.data()) x = std::tanh(x);
  }
  return h;
}

// sigma'(pre) elementwise; ReLU subgradient at 0 is 0.
double activation_derivative(double pre, double state, Activation act) {
  if (act == Activation::kRelu) return pre > 0.0 ? 1.0 : 0.0;
  return 1.0 - state * state;
}

std::vector<double> column_sums(const Matrix& a) {
  std::vector<double> s(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* row = a.row_ptr(i);
    for (std::size_t j = 0; j < a.cols(); ++j) s[j] += row[j];
  }
  return s;
}

// Mean loss over the batch and, when grad_out is non-null, dLoss/dF_t.
double loss_and_output_grads(const std::vector<Matrix>& outputs,
                             const SequenceBatch& batch, LossKind loss,
                             std::vector<Matrix>* grad_out) {
  const std::size_t n = batch.n, steps = batch.steps;
  if (n == 0 || steps == 0) throw InvalidInputError("loss: empty batch");
  const std::size_t d_y = outputs[0].cols();
  if (grad_out) grad_out->assign(steps, Matrix(n, d_y));

  double total = 0.0;
  auto cross_entropy_row = [&](const Matrix& f, std::size_t i, int label, double weight,
                               Matrix* g) {
    if (label < 0 || static_cast<std::size_t>(label) >= d_y)
      throw InvalidInputError("loss: label out of range");
    const double* row = f.row_ptr(i);
    double zmax = row[0];
    for (std::size_t j = 1; j < d_y; ++j) zmax = std::max(zmax, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < d_y; ++j) sum += std::exp(row[j] - zmax);
    total += weight * (std::log(sum) - (row[static_cast<std::size_t>(label)] - zmax));
    if (g) {
      double* grow = g->row_ptr(i);
      for (std::size_t j = 0; j < d_y; ++j) grow[j] = weight * std::exp(row[j] - zmax) / sum;
      grow[static_cast<std::size_t>(label)] -= weight;
    }
  };

  switch (loss) {
    case LossKind::kCrossEntropyFinal: {
      if (batch.target_kind != TargetKind::kFinalLabel)
        throw InvalidInputError("loss: final-label targets required");
      const double w = 1.0 / static_cast<double>(n);
      const std::size_t t = steps - 1;
      for (std::size_t i = 0; i < n; ++i)
        cross_entropy_row(outputs[t], i, batch.labels[i], w,
                          grad_out ? &(*grad_out)[t] : nullptr);
      break;
    }
    case LossKind::kCrossEntropyPerStep: {
      if (batch.target_kind != TargetKind::kStepLabels)
        throw InvalidInputError("loss: per-step labels required");
      const double w = 1.0 / static_cast<double>(n * steps);
      for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t i = 0; i < n; ++i)
          cross_entropy_row(outputs[t], i, batch.step_labels[i * steps + t], w,
                            grad_out ? &(*grad_out)[t] : nullptr);
      break;
    }
    case LossKind::kSquaredError: {
      if (batch.target_kind != TargetKind::kStepTargets)
        throw InvalidInputError("loss: per-step targets required");
      const double w = 1.0 / static_cast<double>(n * steps);
      for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
          const double* f = outputs[t].row_ptr(i);
          const double* y = batch.step_targets[t].row_ptr(i);
          for (std::size_t j = 0; j < d_y; ++j) {
            const double diff = f[j] - y[j];
            total += 0.5 * w * diff * diff;
            if (grad_out) (*grad_out)[t](i, j) = w * diff;
          }
        }
      }
      break;
    }
    default:
      throw InvalidInputError("loss: unknown loss kind");
  }
  return total;
}

}  // namespace

ForwardResult forward(const RnnParams& params, const SequenceBatch& batch) {
  params.check_consistent();
  if (batch.d_x != params.d_x()) throw DimensionError("forward: input width mismatch");
  const std::size_t n = batch.n, steps = batch.steps, m = params.m();

  ForwardResult result;
  result.outputs.reserve(steps);
  result.trace.states.reserve(steps);
  result.trace.preactivations.reserve(steps);

  Matrix h_prev(n, m);  // h_0 = 0
  for (std::size_t t = 0; t < steps; ++t) {
    Matrix pre = matmul_nt(h_prev, params.w_hid);
    pre += matmul_nt(batch.inputs[t], params.w_in);
    add_row_broadcast(pre, params.b_hid);
    Matrix h = apply_activation(pre, params.activation);
    Matrix f = matmul_nt(h, params.w_out);
    add_row_broadcast(f, params.b_out);
    result.trace.preactivations.push_back(std::move(pre));
    result.outputs.push_back(std::move(f));
    h_prev = h;
    result.trace.states.push_back(std::move(h));
  }
  return result;
}

double batch_loss(const RnnParams& params, const SequenceBatch& batch, LossKind loss) {
  const ForwardResult fr = forward(params, batch);
  return loss_and_output_grads(fr.outputs, batch, loss, nullptr);
}

RnnGradients bptt_gradients(const RnnParams& params, const SequenceBatch& batch,
                            LossKind loss) {
  const ForwardResult fr = forward(params, batch);
  std::vector<Matrix> g_f;
  const double loss_value = loss_and_output_grads(fr.outputs, batch, loss, &g_f);

  const std::size_t n = batch.n, steps = batch.steps, m = params.m();
  RnnGradients g;
  g.loss = loss_value;
  g.w_out = Matrix(params.d_y(), m);
  g.w_hid = Matrix(m, m);
  g.w_in = Matrix(m, params.d_x());
  g.b_out.assign(params.d_y(), 0.0);
  g.b_hid.assign(m, 0.0);

  Matrix carry(n, m);  // dLoss/dh_t contribution flowing back through W^h
  for (std::size_t t = steps; t-- > 0;) {
    const Matrix& h_t = fr.trace.states[t];

    g.w_out += matmul_tn(g_f[t], h_t);
    {
      const std::vector<double> cs = column_sums(g_f[t]);
      for (std::size_t j = 0; j < cs.size(); ++j) g.b_out[j] += cs[j];
    }

    Matrix g_h = matmul(g_f[t], params.w_out);
    g_h += carry;

    Matrix d_t(n, m);  // dLoss/d pre_t
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        d_t(i, j) = g_h(i, j) * activation_derivative(fr.trace.preactivations[t](i, j),
                                                      h_t(i, j), params.activation);

    if (t > 0) g.w_hid += matmul_tn(d_t, fr.trace.states[t - 1]);
    g.w_in += matmul_tn(d_t, batch.inputs[t]);
    {
      const std::vector<double> cs = column_sums(d_t);
      for (std::size_t j = 0; j < m; ++j) g.b_hid[j] += cs[j];
    }
    carry = matmul(d_t, params.w_hid);
  }
  return g;
}

AdamState AdamState::init(const RnnParams& params, double lr, double clip_norm) {
  AdamState s;
  s.m_w_out = Matrix(params.w_out.rows(), params.w_out.cols());
  s.m_w_hid = Matrix(params.w_hid.rows(), params.w_hid.cols());
  s.m_w_in = Matrix(params.w_in.rows(), params.w_in.cols());
  s.m_b_out.assign(params.b_out.size(), 0.0);
  s.m_b_hid.assign(params.b_hid.size(), 0.0);
  s.v_w_out = s.m_w_out;
  s.v_w_hid = s.m_w_hid;
  s.v_w_in = s.m_w_in;
  s.v_b_out = s.m_b_out;
  s.v_b_hid = s.m_b_hid;
  s.lr = lr;
  s.clip_norm = clip_norm;
  return s;
}

namespace {

double squared_sum(const Matrix& a) {
  double s = 0.0;
  for (double x : a.data()) s += x * x;
  return s;
}

double squared_sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

void adam_update_array(double* p, double* m, double* v, const double* g,
                       std::size_t len, double scale, double lr_t, double beta1,
                       double beta2, double epsilon) {
  for (std::size_t i = 0; i < len; ++i) {
    const double gi = g[i] * scale;
    m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
    v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
    p[i] -= lr_t * m[i] / (std::sqrt(v[i]) + epsilon);
  }
}

}  // namespace

void adam_step(AdamState& state, RnnParams& params, const RnnGradients& grads) {
  double norm = std::sqrt(squared_sum(grads.w_out) + squared_sum(grads.w_hid) +
                          squared_sum(grads.w_in) + squared_sum(grads.b_out) +
                          squared_sum(grads.b_hid));
  double scale = 1.0;
  if (state.clip_norm > 0.0 && norm > state.clip_norm) scale = state.clip_norm / norm;

  state.step += 1;
  const double t = static_cast<double>(state.step);
  // Fold both bias corrections into the step size.
  const double lr_t = state.lr * std::sqrt(1.0 - std::pow(state.beta2, t)) /
                      (1.0 - std::pow(state.beta1, t));

  auto upd = [&](Matrix& p, Matrix& m, Matrix& v, const Matrix& g) {
    adam_update_array(p.data().data(), m.data().data(), v.data().data(),
                      g.data().data(), p.data().size(), scale, lr_t, state.beta1,
                      state.beta2, state.epsilon);
  };
  upd(params.w_out, state.m_w_out, state.v_w_out, grads.w_out);
  upd(params.w_hid, state.m_w_hid, state.v_w_hid, grads.w_hid);
  upd(params.w_in, state.m_w_in, state.v_w_in, grads.w_in);
  adam_update_array(params.b_out.data(), state.m_b_out.data(), state.v_b_out.data(),
                    grads.b_out.data(), params.b_out.size(), scale, lr_t, state.beta1,
                    state.beta2, state.epsilon);
  adam_update_array(params.b_hid.data(), state.m_b_hid.data(), state.v_b_hid.data(),
                    grads.b_hid.data(), params.b_hid.size(), scale, lr_t, state.beta1,
                    state.beta2, state.epsilon);
}

TrainResult train(const RnnParams& initial, const SequenceBatch& dataset,
                  const TrainConfig& config) {
  if (dataset.n == 0) throw InvalidInputError("train: empty dataset");
  if (config.batch == 0) throw InvalidInputError("train: batch size must be positive");
  if (config.decay_step == 0) throw InvalidInputError("train: decay_step must be positive");

  TrainResult result;
  result.params = initial;
  AdamState adam = AdamState::init(result.params, config.lr, config.clip);

  SplitMix64 rng(config.seed);
  std::vector<std::size_t> perm(dataset.n);
  for (std::size_t i = 0; i < dataset.n; ++i) perm[i] = i;

  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    adam.lr = config.lr * std::pow(config.decay,
                                   static_cast<double>(epoch / config.decay_step));
    rng.shuffle(perm);

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < dataset.n; start += config.batch) {
      const std::size_t stop = std::min(dataset.n, start + config.batch);
      const std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                         perm.begin() + static_cast<std::ptrdiff_t>(stop));
      const SequenceBatch sub = dataset.select(idx);
      const RnnGradients grads = bptt_gradients(result.params, sub, config.loss);
      adam_step(adam, result.params, grads);
      if (config.post_step) config.post_step(result.params, global_step);
      ++global_step;
      epoch_loss += grads.loss;
      ++batches;
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(batches));
  }
  return result;
}

EvalResult evaluate(const RnnParams& params, const SequenceBatch& dataset) {
  if (dataset.target_kind != TargetKind::kFinalLabel)
    throw InvalidInputError("evaluate: classification targets required");
  if (dataset.n == 0) throw InvalidInputError("evaluate: empty dataset");

  const std::size_t chunk = 512;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < dataset.n; start += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(dataset.n, start + chunk); ++i) idx.push_back(i);
    const SequenceBatch sub = dataset.select(idx);
    const ForwardResult fr = forward(params, sub);
    const Matrix& final_out = fr.outputs.back();
    for (std::size_t i = 0; i < sub.n; ++i) {
      const double* row = final_out.row_ptr(i);
      std::size_t arg = 0;
      for (std::size_t j = 1; j < final_out.cols(); ++j)
        if (row[j] > row[arg]) arg = j;  // ties keep the lowest index
      if (static_cast<int>(arg) == sub.labels[i]) ++correct;
    }
    loss_sum += loss_and_output_grads(fr.outputs, sub, LossKind::kCrossEntropyFinal,
                                      nullptr) *
                static_cast<double>(sub.n);
  }
  EvalResult r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.n);
  r.mean_loss = loss_sum / static_cast<double>(dataset.n);
  return r;
}

RnnParams init_irnn(std::size_t m, std::size_t d_x, std::size_t d_y,
                    std::uint64_t seed) {
  if (m == 0 || d_x == 0 || d_y == 0) throw DimensionError("init_irnn: dims must be >= 1");
  SplitMix64 rng(seed);
  RnnParams p;
  p.activation = Activation::kRelu;
  p.w_hid = Matrix::identity(m);
  p.b_hid.assign(m, 0.0);
  p.b_out.assign(d_y, 0.0);
  p.w_in = Matrix(m, d_x);
  const double bound_in = 1.0 / std::sqrt(static_cast<double>(d_x));
  for (double& x : p.w_in.data()) x = rng.next_uniform(-bound_in, bound_in);
  p.w_out = Matrix(d_y, m);
  const double bound_out = 1.0 / std::sqrt(static_cast<double>(m));
  for (double& x : p.w_out.data()) x = rng.next_uniform(-bound_out, bound_out);
  return p;
}

RnnParams init_uniform(std::size_t m, std::size_t d_x, std::size_t d_y,
                       std::uint64_t seed, Activation activation) {
  if (m == 0 || d_x == 0 || d_y == 0)
    throw DimensionError("init_uniform: dims must be >= 1");
  SplitMix64 rng(seed);
  RnnParams p;
  p.activation = activation;
  p.b_hid.assign(m, 0.0);
  p.b_out.assign(d_y, 0.0);
  p.w_in = Matrix(m, d_x);
  const double bound_in = 1.0 / std::sqrt(static_cast<double>(d_x));
  for (double& x : p.w_in.data()) x = rng.next_uniform(-bound_in, bound_in);
  p.w_hid = Matrix(m, m);
  const double bound_hid = 1.0 / std::sqrt(static_cast<double>(m));
  for (double& x : p.w_hid.data()) x = rng.next_uniform(-bound_hid, bound_hid);
  p.w_out = Matrix(d_y, m);
  for (double& x : p.w_out.data()) x = rng.next_uniform(-bound_hid, bound_hid);
  return p;
}

}  // namespace specrnn
