#include <doctest.h>

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "specrnn/baselines.hpp"
#include "specrnn/covariance.hpp"
#include "specrnn/data.hpp"
#include "specrnn/pruning.hpp"
#include "specrnn/rng.hpp"
#include "specrnn/rnn.hpp"

using namespace specrnn;

namespace {

RnnParams random_net(std::size_t m, std::size_t d_x, std::size_t d_y,
                     SplitMix64& rng, Activation act = Activation::kTanh) {
  RnnParams p;
  p.w_out = oracle::random_matrix(d_y, m, rng);
  p.w_hid = oracle::random_matrix(m, m, rng);
  p.w_hid *= 0.3;
  p.w_in = oracle::random_matrix(m, d_x, rng);
  p.b_out.assign(d_y, 0.0);
  p.b_hid.assign(m, 0.0);
  p.activation = act;
  return p;
}

SequenceBatch random_batch(std::size_t n, std::size_t steps, std::size_t d_x,
                           std::size_t classes, SplitMix64& rng) {
  SequenceBatch b;
  b.n = n;
  b.steps = steps;
  b.d_x = d_x;
  b.num_classes = classes;
  b.inputs.assign(steps, Matrix(n, d_x));
  for (Matrix& x : b.inputs)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d_x; ++k) x(i, k) = rng.next_uniform(-1.0, 1.0);
  b.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) b.labels[i] = rng.next_below(classes);
  return b;
}

double max_param_diff(const RnnParams& a, const RnnParams& b) {
  double worst = oracle::max_abs_diff(a.w_out, b.w_out);
  worst = std::max(worst, oracle::max_abs_diff(a.w_hid, b.w_hid));
  worst = std::max(worst, oracle::max_abs_diff(a.w_in, b.w_in));
  for (std::size_t i = 0; i < a.b_out.size(); ++i)
    worst = std::max(worst, std::abs(a.b_out[i] - b.b_out[i]));
  for (std::size_t i = 0; i < a.b_hid.size(); ++i)
    worst = std::max(worst, std::abs(a.b_hid[i] - b.b_hid[i]));
  return worst;
}

}  // namespace

TEST_CASE("weight mask bookkeeping") {
  WeightMask mask(2, 3);
  CHECK(mask.kept_count == 0);
  mask.set(0, 1, true);
  mask.set(1, 2, true);
  mask.set(0, 1, true);  // idempotent
  CHECK(mask.kept_count == 2);
  CHECK(mask.kept(0, 1));
  CHECK(!mask.kept(0, 0));
  mask.set(0, 1, false);
  CHECK(mask.kept_count == 1);

  Matrix w(2, 3, 1.0);
  mask.apply(w);
  CHECK(w(1, 2) == 1.0);
  CHECK(w(0, 0) == 0.0);
  CHECK(w(0, 1) == 0.0);

  auto entries = mask.kept_entries();
  REQUIRE(entries.size() == 1);
  CHECK(entries[0] == std::make_pair<std::size_t, std::size_t>(1, 2));

  Matrix wrong(3, 2);
  CHECK_THROWS_AS(mask.apply(wrong), DimensionError);
}

TEST_CASE("no-reconstruction pruning extracts verbatim blocks") {
  SplitMix64 rng(211);
  RnnParams p = random_net(6, 2, 3, rng);
  Matrix h = oracle::random_matrix(50, 6, rng);
  HiddenCovariance cov;
  cov.sigma = oracle::sample_covariance(h);
  cov.m = 6;
  cov.samples = 50;

  SpectralPruneConfig cfg;
  cfg.m_sharp = 3;
  PruneResult bare = spectral_no_reconstruction(p, cov, cfg);

  // same node choice as the reconstructing variant
  IndexSet j = select_nodes(cov, p, cfg);
  CHECK(bare.j.indices == j.indices);

  // extracted blocks, no mixing
  CHECK(oracle::max_abs_diff(bare.compressed.w_out, p.w_out.select_cols(j.indices)) ==
        0.0);
  Matrix block = p.w_hid.select_rows(j.indices).select_cols(j.indices);
  CHECK(oracle::max_abs_diff(bare.compressed.w_hid, block) == 0.0);
  CHECK(oracle::max_abs_diff(bare.compressed.w_in, p.w_in.select_rows(j.indices)) ==
        0.0);

  // keeping every node is an exact no-op
  cfg.m_sharp = 6;
  PruneResult full = spectral_no_reconstruction(p, cov, cfg);
  CHECK(max_param_diff(full.compressed, p) == 0.0);
}

TEST_CASE("random node pruning") {
  SplitMix64 rng(223);
  RnnParams p = random_net(6, 2, 2, rng);
  Matrix h = oracle::random_matrix(40, 6, rng);
  HiddenCovariance cov;
  cov.sigma = oracle::sample_covariance(h);
  cov.m = 6;
  cov.samples = 40;

  SUBCASE("keeping all nodes reproduces the model in both modes") {
    PruneResult with = random_node_prune(p, cov, 6, true, 9);
    CHECK(oracle::max_abs_diff(with.compressed.w_out, p.w_out) < 1e-9);
    CHECK(oracle::max_abs_diff(with.compressed.w_hid, p.w_hid) < 1e-9);
    PruneResult without = random_node_prune(p, cov, 6, false, 9);
    CHECK(max_param_diff(without.compressed, p) == 0.0);
  }
  SUBCASE("seed determinism and seed sensitivity") {
    PruneResult a = random_node_prune(p, cov, 3, true, 5);
    PruneResult b = random_node_prune(p, cov, 3, true, 5);
    CHECK(a.j.indices == b.j.indices);
    CHECK(oracle::max_abs_diff(a.compressed.w_hid, b.compressed.w_hid) == 0.0);

    std::set<std::vector<std::size_t>> seen;
    for (std::uint64_t s = 0; s < 16; ++s)
      seen.insert(random_node_prune(p, cov, 3, true, s).j.indices);
    CHECK(seen.size() > 1);
  }
  SUBCASE("both modes share the index choice at a fixed seed") {
    PruneResult with = random_node_prune(p, cov, 3, true, 17);
    PruneResult without = random_node_prune(p, cov, 3, false, 17);
    CHECK(with.j.indices == without.j.indices);
    Matrix block =
        p.w_hid.select_rows(with.j.indices).select_cols(with.j.indices);
    CHECK(oracle::max_abs_diff(without.compressed.w_hid, block) == 0.0);
  }
}

TEST_CASE("magnitude pruning keeps the largest recurrent weights") {
  SplitMix64 rng(227);
  RnnParams p = random_net(4, 2, 2, rng);

  SUBCASE("keeping every entry changes nothing") {
    MaskedModel mm = magnitude_weight_prune(p, 16);
    CHECK(max_param_diff(mm.params, p) == 0.0);
    CHECK(mm.mask.kept_count == 16);
  }
  SUBCASE("known magnitudes") {
    RnnParams q = p;
    q.w_hid = Matrix(3, 3);
    q.w_hid(0, 0) = 3.0;
    q.w_hid(1, 1) = -2.0;
    q.w_hid(2, 2) = 1.0;
    q.w_hid(0, 2) = 0.5;
    q.w_out = Matrix(2, 3, 1.0);
    q.w_in = Matrix(3, 2, 1.0);
    q.b_hid.assign(3, 0.0);
    MaskedModel mm = magnitude_weight_prune(q, 2);
    CHECK(mm.params.w_hid(0, 0) == 3.0);
    CHECK(mm.params.w_hid(1, 1) == -2.0);
    CHECK(mm.params.w_hid(2, 2) == 0.0);
    CHECK(mm.params.w_hid(0, 2) == 0.0);
    CHECK(mm.mask.kept_count == 2);
    // untouched matrices survive
    CHECK(oracle::max_abs_diff(mm.params.w_out, q.w_out) == 0.0);
    CHECK(oracle::max_abs_diff(mm.params.w_in, q.w_in) == 0.0);
  }
  SUBCASE("ties break toward the earlier row-major position") {
    RnnParams q = p;
    q.w_hid = Matrix(2, 2, 1.0);  // four equal magnitudes
    q.w_out = Matrix(2, 2, 1.0);
    q.w_in = Matrix(2, 2, 1.0);
    q.b_hid.assign(2, 0.0);
    MaskedModel mm = magnitude_weight_prune(q, 2);
    CHECK(mm.params.w_hid(0, 0) == 1.0);
    CHECK(mm.params.w_hid(0, 1) == 1.0);
    CHECK(mm.params.w_hid(1, 0) == 0.0);
    CHECK(mm.params.w_hid(1, 1) == 0.0);
  }
  SUBCASE("mask agrees with the zero pattern") {
    MaskedModel mm = magnitude_weight_prune(p, 7);
    CHECK(mm.mask.kept_count == 7);
    std::size_t nonzero = 0;
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        if (mm.mask.kept(r, c)) {
          CHECK(mm.params.w_hid(r, c) == p.w_hid(r, c));
          ++nonzero;
        } else {
          CHECK(mm.params.w_hid(r, c) == 0.0);
        }
      }
    CHECK(nonzero == 7);
    CHECK_THROWS_AS(magnitude_weight_prune(p, 17), InvalidInputError);
  }
}

TEST_CASE("random weight pruning") {
  SplitMix64 rng(229);
  RnnParams p = random_net(5, 2, 2, rng);
  MaskedModel a = random_weight_prune(p, 10, 3);
  MaskedModel b = random_weight_prune(p, 10, 3);
  CHECK(a.mask.keep == b.mask.keep);
  CHECK(a.mask.kept_count == 10);
  CHECK(count_nonzero(a.params.w_hid) <= 10);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c)
      if (!a.mask.kept(r, c)) CHECK(a.params.w_hid(r, c) == 0.0);

  MaskedModel all = random_weight_prune(p, 25, 3);
  CHECK(max_param_diff(all.params, p) == 0.0);
}

TEST_CASE("column sparsification") {
  SplitMix64 rng(233);
  SequenceBatch data = random_batch(40, 4, 3, 2, rng);
  RnnParams init = init_uniform(6, 3, 2, 11, Activation::kTanh);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch = 20;
  tc.lr = 1e-2;
  tc.seed = 4;

  SUBCASE("keeping every column reproduces plain training bit for bit") {
    ColumnSparsifyConfig cfg;
    cfg.train = tc;
    cfg.kept_cols = 6;
    TrainResult dense = train(init, data, tc);
    TrainResult sparse = column_sparsify_train(init, data, cfg);
    CHECK(max_param_diff(dense.params, sparse.params) == 0.0);
    REQUIRE(dense.loss_history.size() == sparse.loss_history.size());
    for (std::size_t i = 0; i < dense.loss_history.size(); ++i)
      CHECK(dense.loss_history[i] == sparse.loss_history[i]);
  }
  SUBCASE("surviving matrix has at least m - kept_cols zero columns") {
    ColumnSparsifyConfig cfg;
    cfg.train = tc;
    cfg.kept_cols = 2;
    TrainResult res = column_sparsify_train(init, data, cfg);
    std::size_t zero_cols = 0;
    for (std::size_t c = 0; c < 6; ++c) {
      double norm = 0.0;
      for (std::size_t r = 0; r < 6; ++r)
        norm += res.params.w_hid(r, c) * res.params.w_hid(r, c);
      if (norm == 0.0) ++zero_cols;
    }
    CHECK(zero_cols >= 4);
    CHECK(column_sparsify_train(init, data, cfg).params.w_hid(0, 0) ==
          res.params.w_hid(0, 0));
  }
  SUBCASE("kept_cols bounds are validated") {
    ColumnSparsifyConfig cfg;
    cfg.train = tc;
    cfg.kept_cols = 0;
    CHECK_THROWS_AS(column_sparsify_train(init, data, cfg), InvalidInputError);
    cfg.kept_cols = 7;
    CHECK_THROWS_AS(column_sparsify_train(init, data, cfg), InvalidInputError);
  }
}

TEST_CASE("low-rank factorization") {
  SplitMix64 rng(239);
  RnnParams p = random_net(6, 2, 3, rng);

  SUBCASE("full rank is exact") {
    LowRankRnn lr = low_rank_factorize(p, 6);
    RnnParams dense = lr.materialize();
    CHECK(oracle::max_abs_diff(dense.w_hid, p.w_hid) < 1e-8);
    CHECK(oracle::max_abs_diff(dense.w_out, p.w_out) == 0.0);
    CHECK(oracle::max_abs_diff(dense.w_in, p.w_in) == 0.0);
  }
  SUBCASE("truncation is the best Frobenius approximation") {
    LowRankRnn lr = low_rank_factorize(p, 2);
    CHECK(lr.rank() == 2);
    Matrix diff = lr.materialize().w_hid;
    diff -= p.w_hid;
    double err = diff.frobenius_norm();
    // tail singular values of w_hid via the symmetric spectrum of w w^T
    Matrix gram = matmul_nt(p.w_hid, p.w_hid);
    SymEig eig = sym_eig(gram);
    double tail = 0.0;
    for (std::size_t i = 2; i < 6; ++i) tail += std::max(0.0, eig.eigenvalues[i]);
    CHECK(oracle::rel_diff(err * err, tail) < 1e-6);
    // singular values arrive in descending order
    for (std::size_t i = 0; i + 1 < lr.s_k.size(); ++i)
      CHECK(lr.s_k[i] >= lr.s_k[i + 1]);
  }
  SUBCASE("factored evaluation matches the dense equivalent") {
    SequenceBatch data = random_batch(25, 4, 2, 3, rng);
    LowRankRnn lr = low_rank_factorize(p, 3);
    EvalResult fact = low_rank_evaluate(lr, data);
    EvalResult dense = evaluate(lr.materialize(), data);
    CHECK(fact.accuracy == dense.accuracy);
    CHECK(fact.mean_loss == doctest::Approx(dense.mean_loss).epsilon(1e-12));
  }
  SUBCASE("rank bounds are validated") {
    CHECK_THROWS_AS(low_rank_factorize(p, 0), InvalidInputError);
    CHECK_THROWS_AS(low_rank_factorize(p, 7), InvalidInputError);
  }
}

TEST_CASE("finetuning") {
  SplitMix64 rng(241);
  SequenceBatch data = random_batch(30, 4, 2, 2, rng);
  RnnParams p = init_uniform(5, 2, 2, 3, Activation::kTanh);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch = 15;
  tc.lr = 1e-2;
  tc.seed = 8;

  SUBCASE("zero learning rate leaves the model untouched") {
    TrainConfig frozen = tc;
    frozen.lr = 0.0;
    TrainResult res = finetune(p, data, frozen);
    CHECK(max_param_diff(res.params, p) == 0.0);
  }
  SUBCASE("without a mask it is exactly continued training") {
    TrainResult a = finetune(p, data, tc);
    TrainResult b = train(p, data, tc);
    CHECK(max_param_diff(a.params, b.params) == 0.0);
  }
  SUBCASE("masked weights stay dead through every step") {
    MaskedModel mm = magnitude_weight_prune(p, 10);
    TrainResult res = finetune(mm.params, data, tc, &mm.mask);
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < 5; ++c)
        if (!mm.mask.kept(r, c)) CHECK(res.params.w_hid(r, c) == 0.0);
    // surviving weights actually moved
    CHECK(oracle::max_abs_diff(res.params.w_hid, mm.params.w_hid) > 0.0);
  }
}

TEST_CASE("parameter accounting") {
  CHECK(node_param_count(42, 1, 10) == 42 * 42 + 42 * 1 + 10 * 42);
  CHECK(node_param_count(42, 1, 10) == 2226);
  CHECK(weight_param_count(128, 1, 10, 1764) == 1764 + 128 + 1280);
  CHECK(weight_param_count(128, 1, 10, 1764) == 3172);
  CHECK(column_param_count(64, 1, 10, 20) == 64 * 20 + 64 + 640);
  CHECK(low_rank_param_count(128, 1, 10, 42) == 2 * 128 * 42 + 128 + 1280);

  Matrix a(3, 3);
  a(0, 0) = 1.0;
  a(2, 1) = -2.0;
  CHECK(count_nonzero(a) == 2);

  SplitMix64 rng(251);
  RnnParams p = random_net(5, 2, 3, rng);
  MaskedModel mm = magnitude_weight_prune(p, 9);
  CHECK(count_nonzero_weights(mm.params) ==
        weight_param_count(5, 2, 3, count_nonzero(mm.params.w_hid)));
  CHECK(count_nonzero(mm.params.w_hid) <= 9);
}
