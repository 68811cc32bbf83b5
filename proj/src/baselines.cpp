#include "specrnn/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "specrnn/linalg.hpp"
#include "specrnn/rng.hpp"

namespace specrnn {

namespace {

// Dense extraction without reconstruction: keep rows/columns J verbatim.
RnnParams extract_submodel(const RnnParams& trained, const IndexSet& j) {
  RnnParams out;
  out.activation = trained.activation;
  out.w_out = trained.w_out.select_cols(j.indices);
  out.w_hid = trained.w_hid.select_rows(j.indices).select_cols(j.indices);
  out.w_in = trained.w_in.select_rows(j.indices);
  out.b_out = trained.b_out;
  out.b_hid.resize(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.b_hid[i] = trained.b_hid[j.indices[i]];
  }
  return out;
}

// Identity embedding I_{[m],J}: the implicit reconstruction map of the
// no-reconstruction variants.
Matrix identity_embedding(std::size_t m, const IndexSet& j) {
  Matrix e(m, j.size());
  for (std::size_t i = 0; i < j.size(); ++i) e(j.indices[i], i) = 1.0;
  return e;
}

PruneResult prune_without_reconstruction(const RnnParams& trained,
                                         const HiddenCovariance& cov,
                                         const IndexSet& j, const TauSpec& tau,
                                         const Theta& theta) {
  trained.check_consistent();
  if (trained.m() != cov.m) {
    throw DimensionError("baseline: model width does not match covariance");
  }
  PruneResult out;
  out.j = j;
  out.a_j = identity_embedding(cov.m, j);
  out.compressed = extract_submodel(trained, j);
  out.loss_input = input_information_loss(cov, j, tau);
  auto out_losses =
      output_information_losses(cov, j, tau, trained.w_out, trained.w_hid);
  out.loss_out_o = out_losses.first;
  out.loss_out_h = out_losses.second;
  out.objective = theta.input * out.loss_input +
                  theta.out_o * out.loss_out_o + theta.out_h * out.loss_out_h;
  out.tau_mode = tau.mode;
  out.tau_value = tau.value;
  out.used_pseudo_inverse_fallback = false;
  return out;
}

std::vector<std::size_t> column_order_by_norm(const Matrix& w) {
  std::vector<double> norms(w.cols(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double* row = w.row_ptr(r);
    for (std::size_t c = 0; c < w.cols(); ++c) norms[c] += row[c] * row[c];
  }
  std::vector<std::size_t> order(w.cols());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (norms[a] != norms[b]) return norms[a] > norms[b];
    return a < b;
  });
  return order;
}

}  // namespace

WeightMask::WeightMask(std::size_t r, std::size_t c)
    : rows(r), cols(c), keep(r * c, 0), kept_count(0) {}

void WeightMask::set(std::size_t r, std::size_t c, bool value) {
  std::uint8_t& slot = keep[r * cols + c];
  if (slot && !value) --kept_count;
  if (!slot && value) ++kept_count;
  slot = value ? 1 : 0;
}

bool WeightMask::kept(std::size_t r, std::size_t c) const {
  return keep[r * cols + c] != 0;
}

void WeightMask::apply(Matrix& w) const {
  if (w.rows() != rows || w.cols() != cols) {
    throw DimensionError("mask shape does not match matrix");
  }
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = w.row_ptr(r);
    const std::uint8_t* mrow = keep.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!mrow[c]) row[c] = 0.0;
    }
  }
}

std::vector<std::pair<std::size_t, std::size_t>> WeightMask::kept_entries()
    const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(kept_count);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (keep[r * cols + c]) out.emplace_back(r, c);
    }
  }
  return out;
}

PruneResult spectral_no_reconstruction(const RnnParams& trained,
                                       const HiddenCovariance& cov,
                                       const SpectralPruneConfig& config) {
  IndexSet j = select_nodes(cov, trained, config);
  return prune_without_reconstruction(trained, cov, j, config.tau,
                                      config.theta);
}

PruneResult random_node_prune(const RnnParams& trained,
                              const HiddenCovariance& cov, std::size_t m_sharp,
                              bool with_reconstruction, std::uint64_t seed) {
  trained.check_consistent();
  if (m_sharp == 0 || m_sharp > trained.m()) {
    throw InvalidInputError("random node prune: m_sharp must be in [1, m]");
  }
  SplitMix64 rng(seed);
  IndexSet j(rng.subset(trained.m(), m_sharp));
  if (with_reconstruction) {
    return compress(trained, cov, j, TauSpec::zero(), Theta{});
  }
  return prune_without_reconstruction(trained, cov, j, TauSpec::zero(),
                                      Theta{});
}

MaskedModel magnitude_weight_prune(const RnnParams& trained,
                                   std::size_t kept) {
  trained.check_consistent();
  const std::size_t m = trained.m();
  if (kept > m * m) {
    throw InvalidInputError("magnitude prune: kept exceeds weight count");
  }
  std::vector<std::size_t> order(m * m);
  std::iota(order.begin(), order.end(), 0);
  const std::vector<double>& w = trained.w_hid.data();
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    double wa = std::fabs(w[a]);
    double wb = std::fabs(w[b]);
    if (wa != wb) return wa > wb;
    return a < b;  // row-major index order == (row, col) order
  });
  MaskedModel out;
  out.params = trained;
  out.mask = WeightMask(m, m);
  for (std::size_t i = 0; i < kept; ++i) {
    out.mask.set(order[i] / m, order[i] % m, true);
  }
  out.mask.apply(out.params.w_hid);
  return out;
}

MaskedModel random_weight_prune(const RnnParams& trained, std::size_t kept,
                                std::uint64_t seed) {
  trained.check_consistent();
  const std::size_t m = trained.m();
  if (kept > m * m) {
    throw InvalidInputError("random prune: kept exceeds weight count");
  }
  SplitMix64 rng(seed);
  std::vector<std::size_t> chosen = rng.subset(m * m, kept);
  MaskedModel out;
  out.params = trained;
  out.mask = WeightMask(m, m);
  for (std::size_t idx : chosen) out.mask.set(idx / m, idx % m, true);
  out.mask.apply(out.params.w_hid);
  return out;
}

TrainResult column_sparsify_train(const RnnParams& initial,
                                  const SequenceBatch& dataset,
                                  const ColumnSparsifyConfig& config) {
  initial.check_consistent();
  const std::size_t m = initial.m();
  if (config.kept_cols == 0 || config.kept_cols > m) {
    throw InvalidInputError("column sparsify: kept_cols must be in [1, m]");
  }
  TrainConfig train_config = config.train;
  if (config.kept_cols == m) {
    // Nothing to mask; keep the trajectory identical to plain training.
    return train(initial, dataset, train_config);
  }
  bool add_noise = initial.activation == Activation::kRelu;
  auto noise_rng = std::make_shared<SplitMix64>(config.noise_seed);
  double sigma = config.noise_sigma;
  std::size_t kept_cols = config.kept_cols;
  auto user_hook = config.train.post_step;
  train_config.post_step = [=](RnnParams& params, std::size_t step) {
    if (add_noise && sigma > 0.0) {
      std::vector<double>& w = params.w_hid.data();
      std::size_t count = params.w_hid.rows() * params.w_hid.cols();
      for (std::size_t i = 0; i < count; ++i) {
        w[i] += sigma * noise_rng->next_gaussian();
      }
    }
    std::vector<std::size_t> order = column_order_by_norm(params.w_hid);
    for (std::size_t i = kept_cols; i < order.size(); ++i) {
      std::size_t c = order[i];
      for (std::size_t r = 0; r < params.w_hid.rows(); ++r) {
        params.w_hid(r, c) = 0.0;
      }
    }
    if (user_hook) user_hook(params, step);
  };
  return train(initial, dataset, train_config);
}

RnnParams LowRankRnn::materialize() const {
  RnnParams out;
  out.activation = activation;
  out.w_out = w_out;
  out.w_in = w_in;
  out.b_out = b_out;
  out.b_hid = b_hid;
  Matrix us = u_k;  // scale columns by singular values
  for (std::size_t r = 0; r < us.rows(); ++r) {
    double* row = us.row_ptr(r);
    for (std::size_t c = 0; c < us.cols(); ++c) row[c] *= s_k[c];
  }
  out.w_hid = matmul_nt(us, v_k);
  return out;
}

LowRankRnn low_rank_factorize(const RnnParams& trained, std::size_t k) {
  trained.check_consistent();
  if (k == 0 || k > trained.m()) {
    throw InvalidInputError("low rank: k must be in [1, m]");
  }
  TruncatedSvd svd = truncated_svd(trained.w_hid, k);
  LowRankRnn out;
  out.w_out = trained.w_out;
  out.w_in = trained.w_in;
  out.b_out = trained.b_out;
  out.b_hid = trained.b_hid;
  out.activation = trained.activation;
  out.u_k = std::move(svd.u);
  out.s_k = std::move(svd.s);
  out.v_k = std::move(svd.v);
  return out;
}

EvalResult low_rank_evaluate(const LowRankRnn& model,
                             const SequenceBatch& dataset) {
  if (dataset.n == 0 || dataset.steps == 0) {
    throw InvalidInputError("evaluation requires a nonempty dataset");
  }
  if (dataset.target_kind != TargetKind::kFinalLabel) {
    throw InvalidInputError("evaluation expects final-step labels");
  }
  const std::size_t m = model.m();
  Matrix us = model.u_k;
  for (std::size_t r = 0; r < us.rows(); ++r) {
    double* row = us.row_ptr(r);
    for (std::size_t c = 0; c < us.cols(); ++c) row[c] *= model.s_k[c];
  }
  constexpr std::size_t kChunk = 512;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < dataset.n; start += kChunk) {
    std::size_t stop = std::min(dataset.n, start + kChunk);
    std::vector<std::size_t> idx(stop - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    SequenceBatch chunk = dataset.select(idx);
    Matrix h(chunk.n, m);
    for (std::size_t t = 0; t < chunk.steps; ++t) {
      // h W'^T = ((h V) diag(s)) U^T via the factored representation.
      Matrix pre = matmul_nt(matmul(h, model.v_k), us);
      pre += matmul_nt(chunk.inputs[t], model.w_in);
      for (std::size_t r = 0; r < pre.rows(); ++r) {
        double* row = pre.row_ptr(r);
        for (std::size_t c = 0; c < m; ++c) {
          double v = row[c] + model.b_hid[c];
          row[c] = model.activation == Activation::kRelu
                       ? (v > 0.0 ? v : 0.0)
                       : std::tanh(v);
        }
      }
      h = std::move(pre);
    }
    Matrix logits = matmul_nt(h, model.w_out);
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      double* row = logits.row_ptr(i);
      for (std::size_t c = 0; c < logits.cols(); ++c) row[c] += model.b_out[c];
      std::size_t arg = 0;
      double best = row[0];
      double max_logit = row[0];
      for (std::size_t c = 1; c < logits.cols(); ++c) {
        if (row[c] > best) {
          best = row[c];
          arg = c;
        }
        max_logit = std::max(max_logit, row[c]);
      }
      if (arg == static_cast<std::size_t>(chunk.labels[i])) ++correct;
      double denom = 0.0;
      for (std::size_t c = 0; c < logits.cols(); ++c) {
        denom += std::exp(row[c] - max_logit);
      }
      loss_sum += std::log(denom) - (row[chunk.labels[i]] - max_logit);
    }
  }
  EvalResult out;
  out.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.n);
  out.mean_loss = loss_sum / static_cast<double>(dataset.n);
  return out;
}

TrainResult finetune(const RnnParams& start, const SequenceBatch& dataset,
                     const TrainConfig& config, const WeightMask* mask) {
  if (mask == nullptr) return train(start, dataset, config);
  WeightMask fixed = *mask;
  TrainConfig masked_config = config;
  auto user_hook = config.post_step;
  masked_config.post_step = [fixed, user_hook](RnnParams& params,
                                               std::size_t step) {
    fixed.apply(params.w_hid);
    if (user_hook) user_hook(params, step);
  };
  RnnParams masked_start = start;
  fixed.apply(masked_start.w_hid);
  return train(masked_start, dataset, masked_config);
}

std::size_t count_nonzero(const Matrix& a) {
  std::size_t count = 0;
  const std::vector<double>& p = a.data();
  std::size_t total = a.rows() * a.cols();
  for (std::size_t i = 0; i < total; ++i) {
    if (p[i] != 0.0) ++count;
  }
  return count;
}

std::size_t count_nonzero_weights(const RnnParams& params) {
  return count_nonzero(params.w_in) + count_nonzero(params.w_hid) +
         count_nonzero(params.w_out);
}

std::size_t node_param_count(std::size_t m_sharp, std::size_t d_x,
                             std::size_t d_y) {
  return m_sharp * d_x + m_sharp * m_sharp + d_y * m_sharp;
}

std::size_t weight_param_count(std::size_t m, std::size_t d_x, std::size_t d_y,
                               std::size_t kept) {
  return m * d_x + kept + d_y * m;
}

std::size_t column_param_count(std::size_t m, std::size_t d_x, std::size_t d_y,
                               std::size_t kept_cols) {
  return m * d_x + m * kept_cols + d_y * m;
}

std::size_t low_rank_param_count(std::size_t m, std::size_t d_x,
                                 std::size_t d_y, std::size_t k) {
  return m * d_x + 2 * m * k + d_y * m;
}

}  // namespace specrnn
