#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "specrnn/baselines.hpp"
#include "specrnn/bounds.hpp"
#include "specrnn/covariance.hpp"
#include "specrnn/data.hpp"
#include "specrnn/pruning.hpp"
#include "specrnn/rnn.hpp"

namespace specrnn {

struct TaskConfig {
  std::string kind = "mnist_rows";  // mnist_rows | mnist_pixels |
                                    // synthetic_copy | synthetic_parity
  std::size_t train_n = 2000;
  std::size_t test_n = 1000;
  std::size_t steps = 16;    // synthetic tasks
  std::size_t symbols = 8;   // copy task
  std::uint64_t seed = 1;    // synthetic data generation
  std::string data_dir;      // IDX directory for the mnist tasks
};

struct ModelConfig {
  std::size_t m = 64;
  std::string init = "irnn";         // irnn | uniform
  std::string activation = "relu";   // relu | tanh
};

struct TrainSection {
  std::size_t epochs = 12;
  std::size_t batch = 120;
  double lr = 1e-4;
  double decay = 0.95;
  std::size_t decay_step = 10;
  double clip = 1.0;
  std::uint64_t seed = 0;
};

struct PruneSection {
  std::string method = "spectral";
  // spectral | spectral_no_rec | random_node | random_node_no_rec |
  // magnitude_weight | random_weight | column_sparsify | low_rank | none
  std::size_t m_sharp = 20;
  std::size_t kept = 0;       // weight-mask methods; 0 -> m_sharp^2
  std::size_t kept_cols = 0;  // column sparsification; 0 -> m_sharp
  std::size_t rank = 0;       // low-rank; 0 -> m_sharp
  std::string tau_mode = "zero";  // zero | scalar | leverage
  double tau_value = 0.0;
  std::array<double, 3> theta = {1.0, 0.0, 0.0};
  double delta_tilde = 0.2;
  std::string selector = "greedy";  // greedy | exhaustive
  std::uint64_t seed = 0;           // randomized methods
};

struct FinetuneSection {
  std::size_t epochs = 0;
  double lr = 5e-5;
};

struct ExperimentConfig {
  TaskConfig task;
  ModelConfig model;
  TrainSection train;
  PruneSection prune;
  FinetuneSection finetune;
  std::string artifact_dir;  // empty -> $SPECRNN_ARTIFACTS or ./artifacts
  std::string run_name = "run";

  void validate() const;
  // Directory this run writes into (artifact root + run name).
  std::string resolved_dir() const;
};

ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& config);
// "section.field=value" assignment, e.g. "prune.m_sharp=42".
void apply_override(ExperimentConfig& config, const std::string& assignment);

// Parameter-count columns of the comparison table (weight matrices only).
struct ParamCounts {
  std::size_t input_hidden = 0;
  std::size_t hidden_hidden = 0;
  std::size_t hidden_out = 0;
  std::size_t total() const { return input_hidden + hidden_hidden + hidden_out; }
};

struct RunResult {
  RnnParams trained;
  HiddenCovariance cov;
  EvalResult trained_eval;

  // Compressed model in dense form (low-rank keeps its factors too).
  RnnParams compressed;
  EvalResult pruned_eval;
  bool has_prune_result = false;
  PruneResult prune;
  bool has_mask = false;
  WeightMask mask;
  bool has_low_rank = false;
  LowRankRnn low_rank;
  ParamCounts params;

  bool finetuned = false;
  EvalResult finetuned_eval;

  // Approximation-error inequality, when the method admits one.
  bool bound_checked = false;
  double bound_lhs = 0.0;
  double bound_rhs = 0.0;

  std::string artifact_dir;
};

// train -> covariance -> prune -> optional finetune -> eval; writes
// config/model/covariance/prune/bound artifacts and metrics.csv.
RunResult run_experiment(const ExperimentConfig& config);

struct SweepRow {
  std::string method;
  std::uint64_t train_seed = 0;
  std::uint64_t prune_seed = 0;
  double accuracy = 0.0;
  double finetuned_accuracy = 0.0;  // NaN when not finetuned
  ParamCounts params;
  bool bound_checked = false;
  double bound_lhs = 0.0;
  double bound_rhs = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;          // sorted by (method, train_seed)
  std::vector<double> spectrum;        // eigenvalues of the first seed's cov
  std::vector<double> loss_curve;      // greedy L^A_0 for m_sharp = 1..m
  std::size_t m_nzr = 0;
  double trained_accuracy_mean = 0.0;
  std::string dir;
};

// One row per (method, seed): shared trained model per seed, every listed
// method applied to it. Writes comparison_raw.csv, spectrum.csv,
// loss_vs_msharp.csv, bounds.csv and the aggregated comparison.csv.
SweepResult run_sweep(const ExperimentConfig& base,
                      const std::vector<std::string>& methods,
                      const std::vector<std::uint64_t>& seeds);

// Aggregates a previously written comparison_raw.csv into comparison.csv
// (mean/std per method); returns the aggregated CSV text.
std::string report_from_dir(const std::string& sweep_dir);

// Trains (or reuses artifacts), then Monte-Carlo checks the sampled-index-set
// loss guarantee; writes prop2.json into the run directory.
Prop2Report check_bounds(const ExperimentConfig& config, std::size_t trials);

// Minimal CSV reader for the files this tool writes (no quoting/escapes).
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

// Mean accuracy per method from sweep rows.
double mean_accuracy(const SweepResult& sweep, const std::string& method,
                     bool finetuned = false);

}  // namespace specrnn
