#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "specrnn/data.hpp"
#include "specrnn/rnn.hpp"

using namespace specrnn;

namespace {

// Batch of n scalar-input sequences with final labels.
SequenceBatch scalar_batch(const std::vector<std::vector<double>>& seqs,
                           const std::vector<int>& labels, std::size_t classes) {
  SequenceBatch b;
  b.n = seqs.size();
  b.steps = seqs.front().size();
  b.d_x = 1;
  b.inputs.assign(b.steps, Matrix(b.n, 1));
  for (std::size_t i = 0; i < b.n; ++i)
    for (std::size_t t = 0; t < b.steps; ++t) b.inputs[t](i, 0) = seqs[i][t];
  b.labels = labels;
  b.num_classes = classes;
  return b;
}

RnnParams random_params(std::size_t m, std::size_t d_x, std::size_t d_y,
                        Activation act, SplitMix64& rng) {
  RnnParams p;
  p.w_out = oracle::random_matrix(d_y, m, rng);
  p.w_hid = oracle::random_matrix(m, m, rng);
  p.w_in = oracle::random_matrix(m, d_x, rng);
  p.b_out.assign(d_y, 0.0);
  p.b_hid.assign(m, 0.0);
  for (double& v : p.b_out) v = rng.next_uniform(-0.5, 0.5);
  for (double& v : p.b_hid) v = rng.next_uniform(-0.5, 0.5);
  p.activation = act;
  // keep the recurrence contractive so hidden states stay O(1)
  p.w_hid *= 0.3;
  return p;
}

SequenceBatch random_batch(std::size_t n, std::size_t steps, std::size_t d_x,
                           std::size_t classes, SplitMix64& rng) {
  SequenceBatch b;
  b.n = n;
  b.steps = steps;
  b.d_x = d_x;
  b.inputs.assign(steps, Matrix(n, d_x));
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d_x; ++k)
        b.inputs[t](i, k) = rng.next_uniform(-1.0, 1.0);
  b.num_classes = classes;
  b.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    b.labels[i] = static_cast<int>(rng.next_below(classes));
  return b;
}

double flat_max_rel_grad_error(const RnnParams& params, const SequenceBatch& batch,
                               LossKind loss) {
  RnnGradients g = bptt_gradients(params, batch, loss);
  const double h = 1e-5;
  double worst = 0.0;
  auto check_matrix = [&](const Matrix& grad, Matrix RnnParams::*field) {
    RnnParams p = params;
    for (std::size_t i = 0; i < grad.rows(); ++i)
      for (std::size_t j = 0; j < grad.cols(); ++j) {
        const double keep = (p.*field)(i, j);
        (p.*field)(i, j) = keep + h;
        const double up = batch_loss(p, batch, loss);
        (p.*field)(i, j) = keep - h;
        const double down = batch_loss(p, batch, loss);
        (p.*field)(i, j) = keep;
        const double fd = (up - down) / (2.0 * h);
        const double denom = std::max({1e-6, std::fabs(fd), std::fabs(grad(i, j))});
        worst = std::max(worst, std::fabs(fd - grad(i, j)) / denom);
      }
  };
  auto check_vector = [&](const std::vector<double>& grad,
                          std::vector<double> RnnParams::*field) {
    RnnParams p = params;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double keep = (p.*field)[i];
      (p.*field)[i] = keep + h;
      const double up = batch_loss(p, batch, loss);
      (p.*field)[i] = keep - h;
      const double down = batch_loss(p, batch, loss);
      (p.*field)[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double denom = std::max({1e-6, std::fabs(fd), std::fabs(grad[i])});
      worst = std::max(worst, std::fabs(fd - grad[i]) / denom);
    }
  };
  check_matrix(g.w_out, &RnnParams::w_out);
  check_matrix(g.w_hid, &RnnParams::w_hid);
  check_matrix(g.w_in, &RnnParams::w_in);
  check_vector(g.b_out, &RnnParams::b_out);
  check_vector(g.b_hid, &RnnParams::b_hid);
  return worst;
}

}  // namespace

TEST_CASE("init_irnn identity recurrence and zero biases") {
  RnnParams p = init_irnn(3, 2, 2, 4);
  CHECK(p.w_hid == Matrix::identity(3));
  for (double v : p.b_hid) CHECK(v == 0.0);
  for (double v : p.b_out) CHECK(v == 0.0);
  CHECK(p.activation == Activation::kRelu);

  RnnParams q = init_irnn(3, 2, 2, 4);
  CHECK(p.w_in == q.w_in);
  CHECK(p.w_out == q.w_out);

  RnnParams big = init_irnn(64, 5, 3, 0);
  CHECK((big.w_hid - Matrix::identity(64)).frobenius_norm() == 0.0);
}

TEST_CASE("init_uniform ranges and determinism") {
  RnnParams p = init_uniform(8, 4, 3, 9);
  CHECK(p.activation == Activation::kTanh);
  const double lim_in = 1.0 / std::sqrt(4.0);
  const double lim_hid = 1.0 / std::sqrt(8.0);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::fabs(p.w_in(i, j)) < lim_in);
    for (std::size_t j = 0; j < 8; ++j) CHECK(std::fabs(p.w_hid(i, j)) < lim_hid);
  }
  CHECK(init_uniform(8, 4, 3, 9).w_hid == p.w_hid);
  CHECK(init_uniform(8, 4, 3, 10).w_hid != p.w_hid);
}

TEST_CASE("activation names round-trip") {
  CHECK(activation_from_name("relu") == Activation::kRelu);
  CHECK(activation_from_name("tanh") == Activation::kTanh);
  CHECK(activation_from_name(activation_name(Activation::kRelu)) == Activation::kRelu);
  CHECK_THROWS_AS(activation_from_name("sigmoid"), InvalidInputError);
}

TEST_CASE("forward zero network produces zero outputs") {
  RnnParams p;
  p.w_out = Matrix(2, 3);
  p.w_hid = Matrix(3, 3);
  p.w_in = Matrix(3, 1);
  p.b_out.assign(2, 0.0);
  p.b_hid.assign(3, 0.0);
  SequenceBatch b = scalar_batch({{1.0, -1.0, 2.0}}, {0}, 2);
  ForwardResult f = forward(p, b);
  for (const Matrix& out : f.outputs) CHECK(out.max_abs() == 0.0);
  for (const Matrix& hm : f.trace.states) CHECK(hm.max_abs() == 0.0);
}

TEST_CASE("forward hand recurrence m=1 relu") {
  RnnParams p;
  p.w_out = Matrix(1, 1);
  p.w_out(0, 0) = 1.0;
  p.w_hid = Matrix(1, 1);
  p.w_hid(0, 0) = 1.0;
  p.w_in = Matrix(1, 1);
  p.w_in(0, 0) = 1.0;
  p.b_out.assign(1, 0.0);
  p.b_hid.assign(1, 0.0);
  p.activation = Activation::kRelu;
  SequenceBatch b = scalar_batch({{1.0, 1.0}}, {0}, 1);
  ForwardResult f = forward(p, b);
  CHECK(f.trace.states[0](0, 0) == 1.0);  // h_1 = relu(0 + 1)
  CHECK(f.trace.states[1](0, 0) == 2.0);  // h_2 = relu(1 + 1)
  CHECK(f.outputs[1](0, 0) == 2.0);
  // states equal activated preactivations
  CHECK(f.trace.preactivations[1](0, 0) == 2.0);
}

TEST_CASE("forward of concatenated batch equals concatenated forwards") {
  SplitMix64 rng(5);
  RnnParams p = random_params(6, 3, 4, Activation::kTanh, rng);
  SequenceBatch whole = random_batch(7, 4, 3, 4, rng);
  std::vector<std::size_t> first = {0, 1, 2};
  std::vector<std::size_t> second = {3, 4, 5, 6};
  ForwardResult fw = forward(p, whole);
  ForwardResult fa = forward(p, whole.select(first));
  ForwardResult fb = forward(p, whole.select(second));
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t k = 0; k < 4; ++k)
        CHECK(fw.outputs[t](i, k) == fa.outputs[t](i, k));
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t k = 0; k < 4; ++k)
        CHECK(fw.outputs[t](3 + i, k) == fb.outputs[t](i, k));
  }
  SequenceBatch bad = random_batch(2, 3, 5, 4, rng);
  CHECK_THROWS_AS(forward(p, bad), DimensionError);
}

TEST_CASE("activations vanish at zero and are 1-Lipschitz") {
  // single unit pass-through: h_1 = sigma(x)
  for (Activation act : {Activation::kRelu, Activation::kTanh}) {
    RnnParams p;
    p.w_out = Matrix(1, 1);
    p.w_out(0, 0) = 1.0;
    p.w_hid = Matrix(1, 1);
    p.w_in = Matrix(1, 1);
    p.w_in(0, 0) = 1.0;
    p.b_out.assign(1, 0.0);
    p.b_hid.assign(1, 0.0);
    p.activation = act;
    std::vector<std::vector<double>> grid;
    for (int i = -20; i <= 20; ++i) grid.push_back({0.2 * i});
    SequenceBatch b = scalar_batch(grid, std::vector<int>(grid.size(), 0), 1);
    ForwardResult f = forward(p, b);
    double at_zero = f.trace.states[0](20, 0);
    CHECK(at_zero == 0.0);
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
      double ds = std::fabs(f.trace.states[0](i + 1, 0) - f.trace.states[0](i, 0));
      CHECK(ds <= 0.2 + 1e-12);
    }
  }
}

TEST_CASE("bptt gradients vanish at a squared-error minimum") {
  // zero net, zero targets: outputs equal targets everywhere
  RnnParams p;
  p.w_out = Matrix(2, 3);
  p.w_hid = Matrix(3, 3);
  p.w_in = Matrix(3, 2);
  p.b_out.assign(2, 0.0);
  p.b_hid.assign(3, 0.0);
  SequenceBatch b;
  b.n = 2;
  b.steps = 3;
  b.d_x = 2;
  b.inputs.assign(3, Matrix(2, 2, 0.5));
  b.target_kind = TargetKind::kStepTargets;
  b.num_classes = 2;
  b.step_targets.assign(3, Matrix(2, 2));
  RnnGradients g = bptt_gradients(p, b, LossKind::kSquaredError);
  CHECK(g.loss == 0.0);
  CHECK(g.w_out.max_abs() == 0.0);
  CHECK(g.w_hid.max_abs() == 0.0);
  CHECK(g.w_in.max_abs() == 0.0);
}

TEST_CASE("bptt matches central finite differences") {
  SplitMix64 rng(13);
  SUBCASE("tanh, final-step cross entropy") {
    RnnParams p = random_params(8, 2, 3, Activation::kTanh, rng);
    SequenceBatch b = random_batch(3, 5, 2, 3, rng);
    CHECK(flat_max_rel_grad_error(p, b, LossKind::kCrossEntropyFinal) < 1e-5);
  }
  SUBCASE("relu, final-step cross entropy") {
    RnnParams p = random_params(8, 2, 3, Activation::kRelu, rng);
    SequenceBatch b = random_batch(3, 5, 2, 3, rng);
    CHECK(flat_max_rel_grad_error(p, b, LossKind::kCrossEntropyFinal) < 1e-5);
  }
  SUBCASE("tanh, per-step cross entropy") {
    RnnParams p = random_params(6, 2, 3, Activation::kTanh, rng);
    SequenceBatch b = random_batch(3, 4, 2, 3, rng);
    b.target_kind = TargetKind::kStepLabels;
    b.step_labels.resize(b.n * b.steps);
    for (int& v : b.step_labels) v = static_cast<int>(rng.next_below(3));
    CHECK(flat_max_rel_grad_error(p, b, LossKind::kCrossEntropyPerStep) < 1e-5);
  }
  SUBCASE("tanh, squared error") {
    RnnParams p = random_params(6, 2, 2, Activation::kTanh, rng);
    SequenceBatch b = random_batch(3, 4, 2, 2, rng);
    b.target_kind = TargetKind::kStepTargets;
    b.step_targets.assign(b.steps, Matrix(b.n, 2));
    for (Matrix& t : b.step_targets)
      for (std::size_t i = 0; i < b.n; ++i)
        for (std::size_t k = 0; k < 2; ++k) t(i, k) = rng.next_uniform(-1.0, 1.0);
    CHECK(flat_max_rel_grad_error(p, b, LossKind::kSquaredError) < 1e-5);
  }
}

TEST_CASE("duplicating the batch leaves mean gradients unchanged") {
  SplitMix64 rng(17);
  RnnParams p = random_params(5, 2, 3, Activation::kTanh, rng);
  SequenceBatch b = random_batch(4, 3, 2, 3, rng);
  std::vector<std::size_t> twice = {0, 1, 2, 3, 0, 1, 2, 3};
  SequenceBatch doubled = b.select(twice);
  RnnGradients g1 = bptt_gradients(p, b, LossKind::kCrossEntropyFinal);
  RnnGradients g2 = bptt_gradients(p, doubled, LossKind::kCrossEntropyFinal);
  CHECK(oracle::max_abs_diff(g1.w_hid, g2.w_hid) < 1e-14);
  CHECK(oracle::max_abs_diff(g1.w_out, g2.w_out) < 1e-14);
  CHECK(g1.loss == doctest::Approx(g2.loss).epsilon(1e-14));
}

TEST_CASE("adam first step moves by the learning rate") {
  // f(w) = w^2 at w=1: bias-corrected first update has magnitude exactly lr
  RnnParams p;
  p.w_out = Matrix(1, 1);
  p.w_out(0, 0) = 1.0;
  p.w_hid = Matrix(1, 1);
  p.w_in = Matrix(1, 1);
  p.b_out.assign(1, 0.0);
  p.b_hid.assign(1, 0.0);
  AdamState st = AdamState::init(p, 0.1, 0.0);
  RnnGradients g;
  g.w_out = Matrix(1, 1);
  g.w_out(0, 0) = 2.0;  // d/dw w^2 at 1
  g.w_hid = Matrix(1, 1);
  g.w_in = Matrix(1, 1);
  g.b_out.assign(1, 0.0);
  g.b_hid.assign(1, 0.0);
  adam_step(st, p, g);
  CHECK(p.w_out(0, 0) == doctest::Approx(1.0 - 0.1).epsilon(1e-6));

  SUBCASE("zero gradient leaves parameters unchanged") {
    RnnParams q = p;
    RnnGradients zero = g;
    zero.w_out(0, 0) = 0.0;
    AdamState st2 = AdamState::init(q, 0.1, 0.0);
    adam_step(st2, q, zero);
    CHECK(q.w_out(0, 0) == p.w_out(0, 0));
  }
}

TEST_CASE("gradient clipping rescales the global norm") {
  RnnParams p;
  p.w_out = Matrix(1, 2);
  p.w_hid = Matrix(2, 2);
  p.w_in = Matrix(2, 1);
  p.b_out.assign(1, 0.0);
  p.b_hid.assign(2, 0.0);
  RnnGradients g;
  g.w_out = Matrix(1, 2);
  g.w_hid = Matrix(2, 2);
  g.w_in = Matrix(2, 1);
  g.b_out.assign(1, 0.0);
  g.b_hid.assign(2, 0.0);
  g.w_out(0, 0) = 6.0;
  g.w_out(0, 1) = 8.0;  // global norm 10

  RnnParams clipped = p;
  AdamState st_clip = AdamState::init(clipped, 0.05, 1.0);
  adam_step(st_clip, clipped, g);

  // pre-scaled gradients with clipping disabled give the identical step
  RnnGradients scaled = g;
  scaled.w_out *= 0.1;
  RnnParams plain = p;
  AdamState st_plain = AdamState::init(plain, 0.05, 0.0);
  adam_step(st_plain, plain, scaled);
  CHECK(oracle::max_abs_diff(clipped.w_out, plain.w_out) < 1e-15);
}

TEST_CASE("train with zero learning rate is a no-op") {
  SplitMix64 rng(19);
  RnnParams p = random_params(4, 1, 2, Activation::kTanh, rng);
  SequenceBatch b = scalar_batch({{1.0, -1.0}, {0.5, 0.5}}, {0, 1}, 2);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch = 2;
  tc.lr = 0.0;
  tc.seed = 1;
  TrainResult tr = train(p, b, tc);
  CHECK(tr.params.w_hid == p.w_hid);
  CHECK(tr.params.w_out == p.w_out);
  CHECK(tr.params.w_in == p.w_in);
  REQUIRE(tr.loss_history.size() == 1);
  CHECK(std::isfinite(tr.loss_history[0]));
}

TEST_CASE("train is deterministic and learns the copy task") {
  SequenceBatch data = synthetic_copy(240, 5, 4, 7);
  RnnParams init = init_uniform(16, data.d_x, data.num_classes, 3);
  TrainConfig tc;
  tc.epochs = 40;
  tc.batch = 60;
  tc.lr = 3e-3;
  tc.decay = 0.95;
  tc.decay_step = 10;
  tc.clip = 1.0;
  tc.seed = 5;
  TrainResult tr = train(init, data, tc);
  for (double v : tr.loss_history) CHECK(std::isfinite(v));
  EvalResult ev = evaluate(tr.params, data);
  CHECK(ev.accuracy >= 0.95);

  // linear-separability oracle: nearest class centroid over final hidden states
  ForwardResult f = forward(tr.params, data);
  const Matrix& h = f.trace.states.back();
  const std::size_t m = h.cols(), k = data.num_classes;
  Matrix cent(k, m);
  std::vector<double> cnt(k, 0.0);
  for (std::size_t i = 0; i < data.n; ++i) {
    const auto c = static_cast<std::size_t>(data.labels[i]);
    cnt[c] += 1.0;
    for (std::size_t j = 0; j < m; ++j) cent(c, j) += h(i, j);
  }
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < m; ++j) cent(c, j) /= cnt[c];
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.n; ++i) {
    double best = 1e300;
    std::size_t arg = 0;
    for (std::size_t c = 0; c < k; ++c) {
      double d = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const double v = h(i, j) - cent(c, j);
        d += v * v;
      }
      if (d < best) {
        best = d;
        arg = c;
      }
    }
    if (arg == static_cast<std::size_t>(data.labels[i])) ++hits;
  }
  CHECK(static_cast<double>(hits) / data.n >= 0.95);

  TrainResult again = train(init, data, tc);
  CHECK(again.params.w_hid == tr.params.w_hid);
  CHECK(again.params.w_out == tr.params.w_out);
}

TEST_CASE("evaluate") {
  SUBCASE("perfect and constant predictors") {
    // one hidden unit copying the input sign; labels follow the final input
    RnnParams p;
    p.w_out = Matrix(2, 1);
    p.w_out(1, 0) = 1.0;  // class 1 score = h, class 0 score = 0
    p.w_hid = Matrix(1, 1);
    p.w_in = Matrix(1, 1);
    p.w_in(0, 0) = 1.0;
    p.b_out.assign(2, 0.0);
    p.b_hid.assign(1, 0.0);
    p.activation = Activation::kRelu;
    SequenceBatch b = scalar_batch({{2.0}, {-2.0}, {3.0}, {-1.0}}, {1, 0, 1, 0}, 2);
    CHECK(evaluate(p, b).accuracy == 1.0);

    // zero net scores tie on every class; argmax breaks toward class 0
    RnnParams zero = p;
    zero.w_out = Matrix(2, 1);
    zero.w_in = Matrix(1, 1);
    CHECK(evaluate(zero, b).accuracy == 0.5);
  }
  SUBCASE("agreement with a per-example recount") {
    SplitMix64 rng(23);
    RnnParams p = random_params(6, 2, 4, Activation::kTanh, rng);
    SequenceBatch b = random_batch(40, 4, 2, 4, rng);
    EvalResult ev = evaluate(p, b);
    ForwardResult f = forward(p, b);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < b.n; ++i) {
      std::size_t arg = 0;
      double best = f.outputs.back()(i, 0);
      for (std::size_t c = 1; c < 4; ++c)
        if (f.outputs.back()(i, c) > best) {
          best = f.outputs.back()(i, c);
          arg = c;
        }
      if (arg == static_cast<std::size_t>(b.labels[i])) ++hits;
    }
    CHECK(ev.accuracy == doctest::Approx(static_cast<double>(hits) / b.n));
  }
}

TEST_CASE("max_input_norm reports the largest per-step norm") {
  SequenceBatch b = scalar_batch({{3.0, -4.0}, {1.0, 0.0}}, {0, 1}, 2);
  CHECK(b.max_input_norm() == doctest::Approx(4.0));
}

TEST_CASE("hidden norms respect the geometric budget chain") {
  SplitMix64 rng(29);
  RnnParams p = random_params(6, 3, 2, Activation::kRelu, rng);
  SequenceBatch b = random_batch(10, 6, 3, 2, rng);
  ForwardResult f = forward(p, b);
  // Frobenius norms dominate the operator norms used by the formal bound
  const double r_h = p.w_hid.frobenius_norm();
  const double r_i = p.w_in.frobenius_norm();
  double rb = 0.0;
  for (double v : p.b_hid) rb += v * v;
  rb = std::sqrt(rb);
  const double r_x = b.max_input_norm();
  double geom = 0.0, pw = 1.0;
  for (std::size_t t = 0; t < b.steps; ++t) {
    geom += pw;
    pw *= r_h;
    const Matrix& h = f.trace.states[t];
    double worst = 0.0;
    for (std::size_t i = 0; i < b.n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < h.cols(); ++j) s += h(i, j) * h(i, j);
      worst = std::max(worst, std::sqrt(s));
    }
    CHECK(worst <= (r_i * r_x + rb) * geom + 1e-9);
  }
}
