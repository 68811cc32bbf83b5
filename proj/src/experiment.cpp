#include "specrnn/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "specrnn/serialize.hpp"

namespace specrnn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

const std::vector<std::string> kMethods = {
    "spectral",          "spectral_no_rec", "random_node",
    "random_node_no_rec", "magnitude_weight", "random_weight",
    "column_sparsify",   "low_rank",        "none"};

bool known_method(const std::string& name) {
  return std::find(kMethods.begin(), kMethods.end(), name) != kMethods.end();
}

[[noreturn]] void config_error(const std::string& message) {
  throw InvalidInputError("config: " + message);
}

std::size_t to_count(const std::string& value, const std::string& key) {
  // stoull would silently wrap negatives around.
  if (value.find('-') != std::string::npos) {
    config_error("cannot parse '" + value + "' for " + key);
  }
  std::size_t pos = 0;
  unsigned long long parsed = 0;
  try {
    parsed = std::stoull(value, &pos);
  } catch (const std::exception&) {
    config_error("cannot parse '" + value + "' for " + key);
  }
  if (pos != value.size()) config_error("trailing junk in value for " + key);
  return static_cast<std::size_t>(parsed);
}

double to_real(const std::string& value, const std::string& key) {
  std::size_t pos = 0;
  double parsed = 0.0;
  try {
    parsed = std::stod(value, &pos);
  } catch (const std::exception&) {
    config_error("cannot parse '" + value + "' for " + key);
  }
  if (pos != value.size()) config_error("trailing junk in value for " + key);
  return parsed;
}

std::string escape_json(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

void reject_unknown_keys(const json& j, const std::vector<std::string>& known,
                         const std::string& section) {
  for (const auto& item : j.items()) {
    if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
      config_error("unknown key '" +
                   (section.empty() ? item.key() : section + "." + item.key()) +
                   "'");
    }
  }
}

TrainConfig to_train_config(const TrainSection& section) {
  TrainConfig config;
  config.epochs = section.epochs;
  config.batch = section.batch;
  config.lr = section.lr;
  config.decay = section.decay;
  config.decay_step = section.decay_step;
  config.clip = section.clip;
  config.seed = section.seed;
  config.loss = LossKind::kCrossEntropyFinal;
  return config;
}

TauSpec to_tau_spec(const PruneSection& prune) {
  if (prune.tau_mode == "zero") return TauSpec::zero();
  if (prune.tau_mode == "scalar") return TauSpec::scalar(prune.tau_value);
  if (prune.tau_mode == "leverage") return TauSpec::leverage(prune.tau_value);
  config_error("unknown tau_mode '" + prune.tau_mode + "'");
}

Theta to_theta(const PruneSection& prune) {
  Theta theta;
  theta.input = prune.theta[0];
  theta.out_o = prune.theta[1];
  theta.out_h = prune.theta[2];
  return theta;
}

SpectralPruneConfig to_prune_config(const PruneSection& prune,
                                    std::size_t m_sharp) {
  SpectralPruneConfig config;
  config.m_sharp = m_sharp;
  config.tau = to_tau_spec(prune);
  config.theta = to_theta(prune);
  config.selector = prune.selector == "exhaustive" ? Selector::kExhaustive
                                                   : Selector::kGreedy;
  return config;
}

struct TaskData {
  SequenceBatch train;
  SequenceBatch test;
};

TaskData load_task(const TaskConfig& task) {
  TaskData data;
  if (task.kind == "mnist_rows" || task.kind == "mnist_pixels") {
    if (task.data_dir.empty()) {
      config_error("task '" + task.kind + "' requires task.data_dir");
    }
    SequenceMode mode = task.kind == "mnist_rows" ? SequenceMode::kRows
                                                  : SequenceMode::kPixels;
    fs::path dir(task.data_dir);
    SequenceBatch full_train =
        load_mnist_idx((dir / "train-images-idx3-ubyte").string(),
                       (dir / "train-labels-idx1-ubyte").string(), mode);
    SequenceBatch full_test =
        load_mnist_idx((dir / "t10k-images-idx3-ubyte").string(),
                       (dir / "t10k-labels-idx1-ubyte").string(), mode);
    if (task.train_n > full_train.n || task.test_n > full_test.n) {
      config_error("requested subset exceeds dataset size");
    }
    // Deterministic first-k subset.
    std::vector<std::size_t> idx(task.train_n);
    for (std::size_t i = 0; i < task.train_n; ++i) idx[i] = i;
    data.train = full_train.select(idx);
    idx.resize(task.test_n);
    for (std::size_t i = 0; i < task.test_n; ++i) idx[i] = i;
    data.test = full_test.select(idx);
  } else if (task.kind == "synthetic_parity") {
    data.train = synthetic_parity(task.train_n, task.steps, task.seed);
    data.test = synthetic_parity(task.test_n, task.steps, task.seed + 1);
  } else if (task.kind == "synthetic_copy") {
    data.train = synthetic_copy(task.train_n, task.steps, task.symbols,
                                task.seed);
    data.test = synthetic_copy(task.test_n, task.steps, task.symbols,
                               task.seed + 1);
  } else {
    config_error("unknown task kind '" + task.kind + "'");
  }
  return data;
}

RnnParams init_model(const ExperimentConfig& config, std::size_t d_x,
                     std::size_t d_y) {
  if (config.model.init == "irnn") {
    return init_irnn(config.model.m, d_x, d_y, config.train.seed);
  }
  Activation act = activation_from_name(config.model.activation);
  return init_uniform(config.model.m, d_x, d_y, config.train.seed, act);
}

// One prune method applied to a trained model. `initial` and `train_data`
// feed the methods that retrain instead of transforming.
struct MethodOutcome {
  RnnParams compressed;
  bool has_prune_result = false;
  PruneResult prune;
  bool has_mask = false;
  WeightMask mask;
  bool has_low_rank = false;
  LowRankRnn low_rank;
  ParamCounts params;
  bool bound_applicable = false;
  IndexSet bound_j;  // node map for the bound measurements
};

MethodOutcome apply_method(const std::string& method, const RnnParams& trained,
                           const HiddenCovariance& cov,
                           const ExperimentConfig& config,
                           const RnnParams& initial,
                           const SequenceBatch& train_data,
                           std::uint64_t prune_seed) {
  const std::size_t m = config.model.m;
  const std::size_t d_x = trained.d_x();
  const std::size_t d_y = trained.d_y();
  const PruneSection& prune = config.prune;
  const std::size_t m_sharp = prune.m_sharp;
  const std::size_t kept = prune.kept > 0 ? prune.kept : m_sharp * m_sharp;
  const std::size_t kept_cols =
      prune.kept_cols > 0 ? prune.kept_cols : m_sharp;
  const std::size_t rank = prune.rank > 0 ? prune.rank : m_sharp;

  MethodOutcome out;
  if (method == "none") {
    out.compressed = trained;
    out.params.input_hidden = m * d_x;
    out.params.hidden_hidden = m * m;
    out.params.hidden_out = d_y * m;
    return out;
  }
  if (method == "spectral" || method == "spectral_no_rec" ||
      method == "random_node" || method == "random_node_no_rec") {
    if (method == "spectral") {
      out.prune = spectral_prune_with_cov(trained, cov,
                                          to_prune_config(prune, m_sharp));
    } else if (method == "spectral_no_rec") {
      out.prune = spectral_no_reconstruction(trained, cov,
                                             to_prune_config(prune, m_sharp));
    } else {
      out.prune = random_node_prune(trained, cov, m_sharp,
                                    method == "random_node", prune_seed);
    }
    out.has_prune_result = true;
    out.compressed = out.prune.compressed;
    out.params.input_hidden = m_sharp * d_x;
    out.params.hidden_hidden = m_sharp * m_sharp;
    out.params.hidden_out = d_y * m_sharp;
    out.bound_applicable = true;
    out.bound_j = out.prune.j;
    return out;
  }
  if (method == "magnitude_weight" || method == "random_weight") {
    MaskedModel masked = method == "magnitude_weight"
                             ? magnitude_weight_prune(trained, kept)
                             : random_weight_prune(trained, kept, prune_seed);
    out.compressed = masked.params;
    out.has_mask = true;
    out.mask = masked.mask;
    out.params.input_hidden = m * d_x;
    out.params.hidden_hidden = kept;
    out.params.hidden_out = d_y * m;
    out.bound_applicable = true;
    out.bound_j = IndexSet::full(m);
    return out;
  }
  if (method == "column_sparsify") {
    ColumnSparsifyConfig cs;
    cs.train = to_train_config(config.train);
    cs.kept_cols = kept_cols;
    cs.noise_seed = prune_seed;
    TrainResult result = column_sparsify_train(initial, train_data, cs);
    out.compressed = result.params;
    // Fixed mask over the surviving columns (for fine-tuning).
    out.has_mask = true;
    out.mask = WeightMask(m, m);
    for (std::size_t c = 0; c < m; ++c) {
      bool nonzero = false;
      for (std::size_t r = 0; r < m; ++r) {
        if (out.compressed.w_hid(r, c) != 0.0) {
          nonzero = true;
          break;
        }
      }
      if (nonzero) {
        for (std::size_t r = 0; r < m; ++r) out.mask.set(r, c, true);
      }
    }
    out.params.input_hidden = m * d_x;
    out.params.hidden_hidden = m * kept_cols;
    out.params.hidden_out = d_y * m;
    // No trained-to-compressed pair: the method retrains from scratch.
    out.bound_applicable = false;
    return out;
  }
  if (method == "low_rank") {
    out.low_rank = low_rank_factorize(trained, rank);
    out.has_low_rank = true;
    out.compressed = out.low_rank.materialize();
    out.params.input_hidden = m * d_x;
    out.params.hidden_hidden = 2 * m * rank;
    out.params.hidden_out = d_y * m;
    out.bound_applicable = true;
    out.bound_j = IndexSet::full(m);
    return out;
  }
  config_error("unknown prune method '" + method + "'");
}

struct BoundOutcome {
  double lhs = 0.0;
  double rhs = 0.0;
  NormBudget budget;
  BoundMeasurements measured;
};

BoundOutcome evaluate_bound(const RnnParams& trained,
                            const RnnParams& compressed, const IndexSet& j,
                            const SequenceBatch& train_data,
                            double train_loss) {
  BoundOutcome out;
  out.budget = measure_budget(compressed, train_data);
  measure_hat_budget(out.budget, trained);
  out.measured = measure_compression_terms(trained, compressed, j, train_data);
  out.measured.train_error = train_loss;
  out.lhs = output_distance(trained, compressed, train_data);
  out.rhs = approx_bound_rhs(out.budget, out.measured, train_data.steps);
  return out;
}

std::string bound_report_json(const BoundOutcome& bound,
                              const ExperimentConfig& config,
                              const SequenceBatch& train_data,
                              std::size_t m_sharp) {
  BoundDims dims{m_sharp, train_data.d_x, train_data.num_classes};
  std::size_t steps = train_data.steps;
  double delta = 1.0;  // any value >= log 2
  double gen_rhs = generalization_bound_rhs(bound.budget, bound.measured, dims,
                                            train_data.n, steps, delta);
  SpectralBoundQuantities hatted = spectral_bound_quantities(
      bound.budget, config.model.m, config.prune.delta_tilde, dims, steps);
  std::string out = "{\"version\":1,\"budget\":{";
  out += "\"r_o\":" + format_double(bound.budget.r_o);
  out += ",\"r_h\":" + format_double(bound.budget.r_h);
  out += ",\"r_i\":" + format_double(bound.budget.r_i);
  out += ",\"rb_o\":" + format_double(bound.budget.rb_o);
  out += ",\"rb_hi\":" + format_double(bound.budget.rb_hi);
  out += ",\"r_x\":" + format_double(bound.budget.r_x);
  out += ",\"rho_sigma\":" + format_double(bound.budget.rho_sigma);
  out += ",\"rho_psi\":" + format_double(bound.budget.rho_psi);
  out += ",\"r_y\":" + format_double(bound.budget.r_y);
  out += ",\"hat_r_o\":" + format_double(bound.budget.hat_r_o);
  out += ",\"hat_r_h\":" + format_double(bound.budget.hat_r_h);
  out += ",\"hat_r_i\":" + format_double(bound.budget.hat_r_i);
  out += ",\"hat_rb_o\":" + format_double(bound.budget.hat_rb_o);
  out += ",\"hat_rb_hi\":" + format_double(bound.budget.hat_rb_hi);
  out += "},\"measured\":{";
  out += "\"w_out_phi_err\":" + format_double(bound.measured.w_out_phi_err);
  out += ",\"w_hid_phi_err\":" + format_double(bound.measured.w_hid_phi_err);
  out += ",\"w_in_op_err\":" + format_double(bound.measured.w_in_op_err);
  out += ",\"b_hid_err\":" + format_double(bound.measured.b_hid_err);
  out += ",\"b_out_err\":" + format_double(bound.measured.b_out_err);
  out += ",\"train_error\":" + format_double(bound.measured.train_error);
  out += "},\"approx\":{\"lhs\":" + format_double(bound.lhs) +
         ",\"rhs\":" + format_double(bound.rhs) +
         ",\"holds\":" + (bound.lhs <= bound.rhs ? "true" : "false") + "}";
  out += ",\"generalization\":{\"delta\":" + format_double(delta) +
         ",\"rhs\":" + format_double(gen_rhs) + "}";
  out += ",\"horizon\":{\"r_infinity\":" +
         format_double(r_infinity(bound.budget, steps)) +
         ",\"m_t\":" + format_double(m_t(bound.budget, dims, steps)) + "}";
  out += ",\"spectral_hatted\":{\"r_inf_hat\":" +
         format_double(hatted.r_inf_hat) +
         ",\"m_t_hat\":" + format_double(hatted.m_t_hat) + "}";
  out += "}";
  return out;
}

std::string low_rank_json(const LowRankRnn& model) {
  std::string out =
      "{\"version\":1,\"rank\":" + std::to_string(model.rank()) + ",\"s_k\":[";
  for (std::size_t i = 0; i < model.s_k.size(); ++i) {
    if (i) out += ',';
    out += format_double(model.s_k[i]);
  }
  out += "]}";
  return out;
}

std::string csv_row_for(const SweepRow& row) {
  std::string out = row.method + "," + std::to_string(row.train_seed) + "," +
                    std::to_string(row.prune_seed) + "," +
                    format_double(row.accuracy) + "," +
                    format_double(row.finetuned_accuracy) + "," +
                    std::to_string(row.params.input_hidden) + "," +
                    std::to_string(row.params.hidden_hidden) + "," +
                    std::to_string(row.params.hidden_out) + "," +
                    std::to_string(row.params.total()) + "," +
                    (row.bound_checked ? "1" : "0") + "," +
                    format_double(row.bound_lhs) + "," +
                    format_double(row.bound_rhs);
  return out;
}

constexpr const char* kRawHeader =
    "method,train_seed,prune_seed,accuracy,finetuned_accuracy,params_in,"
    "params_hid,params_out,params_total,bound_checked,bound_lhs,bound_rhs";

}  // namespace

void ExperimentConfig::validate() const {
  static const std::vector<std::string> kTasks = {
      "mnist_rows", "mnist_pixels", "synthetic_copy", "synthetic_parity"};
  if (std::find(kTasks.begin(), kTasks.end(), task.kind) == kTasks.end()) {
    config_error("unknown task kind '" + task.kind + "'");
  }
  if (task.train_n == 0 || task.test_n == 0) {
    config_error("task.train_n and task.test_n must be >= 1");
  }
  if (task.kind == "synthetic_parity" || task.kind == "synthetic_copy") {
    if (task.steps == 0) config_error("task.steps must be >= 1");
    if (task.kind == "synthetic_copy" && task.symbols < 2) {
      config_error("task.symbols must be >= 2");
    }
  }
  if (model.m == 0) config_error("model.m must be >= 1");
  if (model.init != "irnn" && model.init != "uniform") {
    config_error("model.init must be 'irnn' or 'uniform'");
  }
  if (model.activation != "relu" && model.activation != "tanh") {
    config_error("model.activation must be 'relu' or 'tanh'");
  }
  if (model.init == "irnn" && model.activation != "relu") {
    config_error("irnn init implies relu activation");
  }
  if (train.batch == 0) config_error("train.batch must be >= 1");
  if (!(train.lr >= 0.0)) config_error("train.lr must be >= 0");
  if (!(train.decay > 0.0 && train.decay <= 1.0)) {
    config_error("train.decay must lie in (0, 1]");
  }
  if (train.decay_step == 0) config_error("train.decay_step must be >= 1");
  if (!known_method(prune.method)) {
    config_error("unknown prune method '" + prune.method + "'");
  }
  if (prune.method != "none") {
    if (prune.m_sharp == 0 || prune.m_sharp > model.m) {
      config_error("prune.m_sharp must lie in [1, model.m]");
    }
    if (prune.kept > model.m * model.m) {
      config_error("prune.kept exceeds recurrent weight count");
    }
    if (prune.kept_cols > model.m) {
      config_error("prune.kept_cols exceeds model.m");
    }
    if (prune.rank > model.m) config_error("prune.rank exceeds model.m");
  }
  if (prune.tau_mode != "zero" && prune.tau_mode != "scalar" &&
      prune.tau_mode != "leverage") {
    config_error("prune.tau_mode must be zero|scalar|leverage");
  }
  if (prune.tau_mode == "scalar" && !(prune.tau_value >= 0.0)) {
    config_error("scalar tau requires tau_value >= 0");
  }
  if (prune.tau_mode == "leverage" && !(prune.tau_value > 0.0)) {
    config_error("leverage tau requires tau_value > 0");
  }
  if (!(prune.theta[0] >= 0.0 && prune.theta[1] >= 0.0 &&
        prune.theta[2] >= 0.0)) {
    config_error("prune.theta entries must be >= 0");
  }
  if (prune.theta[0] == 0.0 && prune.theta[1] == 0.0 &&
      prune.theta[2] == 0.0) {
    config_error("prune.theta must not be all zero");
  }
  if (!(prune.delta_tilde > 0.0 && prune.delta_tilde < 0.5)) {
    config_error("prune.delta_tilde must lie in (0, 1/2)");
  }
  if (prune.selector != "greedy" && prune.selector != "exhaustive") {
    config_error("prune.selector must be greedy|exhaustive");
  }
  if (!(finetune.lr >= 0.0)) config_error("finetune.lr must be >= 0");
  if (run_name.empty()) config_error("run_name must not be empty");
}

std::string ExperimentConfig::resolved_dir() const {
  if (!artifact_dir.empty()) return artifact_dir;
  const char* root = std::getenv("SPECRNN_ARTIFACTS");
  fs::path base = root != nullptr && root[0] != '\0' ? root : "artifacts";
  return (base / run_name).string();
}

ExperimentConfig config_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    config_error("malformed JSON");
  }
  reject_unknown_keys(j,
                      {"task", "model", "train", "prune", "finetune",
                       "artifact_dir", "run_name"},
                      "");
  ExperimentConfig config;
  if (j.contains("task")) {
    const json& t = j["task"];
    reject_unknown_keys(
        t, {"kind", "train_n", "test_n", "steps", "symbols", "seed",
            "data_dir"},
        "task");
    if (t.contains("kind")) config.task.kind = t["kind"].get<std::string>();
    if (t.contains("train_n")) config.task.train_n = t["train_n"].get<std::size_t>();
    if (t.contains("test_n")) config.task.test_n = t["test_n"].get<std::size_t>();
    if (t.contains("steps")) config.task.steps = t["steps"].get<std::size_t>();
    if (t.contains("symbols")) config.task.symbols = t["symbols"].get<std::size_t>();
    if (t.contains("seed")) config.task.seed = t["seed"].get<std::uint64_t>();
    if (t.contains("data_dir")) config.task.data_dir = t["data_dir"].get<std::string>();
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown_keys(m, {"m", "init", "activation"}, "model");
    if (m.contains("m")) config.model.m = m["m"].get<std::size_t>();
    if (m.contains("init")) config.model.init = m["init"].get<std::string>();
    if (m.contains("activation")) {
      config.model.activation = m["activation"].get<std::string>();
    }
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown_keys(
        t, {"epochs", "batch", "lr", "decay", "decay_step", "clip", "seed"},
        "train");
    if (t.contains("epochs")) config.train.epochs = t["epochs"].get<std::size_t>();
    if (t.contains("batch")) config.train.batch = t["batch"].get<std::size_t>();
    if (t.contains("lr")) config.train.lr = t["lr"].get<double>();
    if (t.contains("decay")) config.train.decay = t["decay"].get<double>();
    if (t.contains("decay_step")) {
      config.train.decay_step = t["decay_step"].get<std::size_t>();
    }
    if (t.contains("clip")) config.train.clip = t["clip"].get<double>();
    if (t.contains("seed")) config.train.seed = t["seed"].get<std::uint64_t>();
  }
  if (j.contains("prune")) {
    const json& p = j["prune"];
    reject_unknown_keys(p,
                        {"method", "m_sharp", "kept", "kept_cols", "rank",
                         "tau_mode", "tau_value", "theta", "delta_tilde",
                         "selector", "seed"},
                        "prune");
    if (p.contains("method")) config.prune.method = p["method"].get<std::string>();
    if (p.contains("m_sharp")) config.prune.m_sharp = p["m_sharp"].get<std::size_t>();
    if (p.contains("kept")) config.prune.kept = p["kept"].get<std::size_t>();
    if (p.contains("kept_cols")) {
      config.prune.kept_cols = p["kept_cols"].get<std::size_t>();
    }
    if (p.contains("rank")) config.prune.rank = p["rank"].get<std::size_t>();
    if (p.contains("tau_mode")) {
      config.prune.tau_mode = p["tau_mode"].get<std::string>();
    }
    if (p.contains("tau_value")) {
      config.prune.tau_value = p["tau_value"].get<double>();
    }
    if (p.contains("theta")) {
      const json& th = p["theta"];
      if (!th.is_array() || th.size() != 3) {
        config_error("prune.theta must be a 3-element array");
      }
      for (std::size_t i = 0; i < 3; ++i) {
        config.prune.theta[i] = th[i].get<double>();
      }
    }
    if (p.contains("delta_tilde")) {
      config.prune.delta_tilde = p["delta_tilde"].get<double>();
    }
    if (p.contains("selector")) {
      config.prune.selector = p["selector"].get<std::string>();
    }
    if (p.contains("seed")) config.prune.seed = p["seed"].get<std::uint64_t>();
  }
  if (j.contains("finetune")) {
    const json& f = j["finetune"];
    reject_unknown_keys(f, {"epochs", "lr"}, "finetune");
    if (f.contains("epochs")) {
      config.finetune.epochs = f["epochs"].get<std::size_t>();
    }
    if (f.contains("lr")) config.finetune.lr = f["lr"].get<double>();
  }
  if (j.contains("artifact_dir")) {
    config.artifact_dir = j["artifact_dir"].get<std::string>();
  }
  if (j.contains("run_name")) {
    config.run_name = j["run_name"].get<std::string>();
  }
  config.validate();
  return config;
}

std::string config_to_json(const ExperimentConfig& c) {
  std::string out = "{";
  out += "\"task\":{\"kind\":\"" + escape_json(c.task.kind) + "\"";
  out += ",\"train_n\":" + std::to_string(c.task.train_n);
  out += ",\"test_n\":" + std::to_string(c.task.test_n);
  out += ",\"steps\":" + std::to_string(c.task.steps);
  out += ",\"symbols\":" + std::to_string(c.task.symbols);
  out += ",\"seed\":" + std::to_string(c.task.seed);
  out += ",\"data_dir\":\"" + escape_json(c.task.data_dir) + "\"}";
  out += ",\"model\":{\"m\":" + std::to_string(c.model.m);
  out += ",\"init\":\"" + escape_json(c.model.init) + "\"";
  out += ",\"activation\":\"" + escape_json(c.model.activation) + "\"}";
  out += ",\"train\":{\"epochs\":" + std::to_string(c.train.epochs);
  out += ",\"batch\":" + std::to_string(c.train.batch);
  out += ",\"lr\":" + format_double(c.train.lr);
  out += ",\"decay\":" + format_double(c.train.decay);
  out += ",\"decay_step\":" + std::to_string(c.train.decay_step);
  out += ",\"clip\":" + format_double(c.train.clip);
  out += ",\"seed\":" + std::to_string(c.train.seed) + "}";
  out += ",\"prune\":{\"method\":\"" + escape_json(c.prune.method) + "\"";
  out += ",\"m_sharp\":" + std::to_string(c.prune.m_sharp);
  out += ",\"kept\":" + std::to_string(c.prune.kept);
  out += ",\"kept_cols\":" + std::to_string(c.prune.kept_cols);
  out += ",\"rank\":" + std::to_string(c.prune.rank);
  out += ",\"tau_mode\":\"" + escape_json(c.prune.tau_mode) + "\"";
  out += ",\"tau_value\":" + format_double(c.prune.tau_value);
  out += ",\"theta\":[" + format_double(c.prune.theta[0]) + "," +
         format_double(c.prune.theta[1]) + "," +
         format_double(c.prune.theta[2]) + "]";
  out += ",\"delta_tilde\":" + format_double(c.prune.delta_tilde);
  out += ",\"selector\":\"" + escape_json(c.prune.selector) + "\"";
  out += ",\"seed\":" + std::to_string(c.prune.seed) + "}";
  out += ",\"finetune\":{\"epochs\":" + std::to_string(c.finetune.epochs);
  out += ",\"lr\":" + format_double(c.finetune.lr) + "}";
  out += ",\"artifact_dir\":\"" + escape_json(c.artifact_dir) + "\"";
  out += ",\"run_name\":\"" + escape_json(c.run_name) + "\"";
  out += "}";
  return out;
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  std::size_t eq = assignment.find('=');
  if (eq == std::string::npos) {
    config_error("override '" + assignment + "' is not key=value");
  }
  std::string key = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);
  if (key == "task.kind") config.task.kind = value;
  else if (key == "task.train_n") config.task.train_n = to_count(value, key);
  else if (key == "task.test_n") config.task.test_n = to_count(value, key);
  else if (key == "task.steps") config.task.steps = to_count(value, key);
  else if (key == "task.symbols") config.task.symbols = to_count(value, key);
  else if (key == "task.seed") config.task.seed = to_count(value, key);
  else if (key == "task.data_dir") config.task.data_dir = value;
  else if (key == "model.m") config.model.m = to_count(value, key);
  else if (key == "model.init") config.model.init = value;
  else if (key == "model.activation") config.model.activation = value;
  else if (key == "train.epochs") config.train.epochs = to_count(value, key);
  else if (key == "train.batch") config.train.batch = to_count(value, key);
  else if (key == "train.lr") config.train.lr = to_real(value, key);
  else if (key == "train.decay") config.train.decay = to_real(value, key);
  else if (key == "train.decay_step") {
    config.train.decay_step = to_count(value, key);
  } else if (key == "train.clip") config.train.clip = to_real(value, key);
  else if (key == "train.seed") config.train.seed = to_count(value, key);
  else if (key == "prune.method") config.prune.method = value;
  else if (key == "prune.m_sharp") config.prune.m_sharp = to_count(value, key);
  else if (key == "prune.kept") config.prune.kept = to_count(value, key);
  else if (key == "prune.kept_cols") {
    config.prune.kept_cols = to_count(value, key);
  } else if (key == "prune.rank") config.prune.rank = to_count(value, key);
  else if (key == "prune.tau_mode") config.prune.tau_mode = value;
  else if (key == "prune.tau_value") {
    config.prune.tau_value = to_real(value, key);
  } else if (key == "prune.theta") {
    std::stringstream ss(value);
    std::string part;
    std::size_t i = 0;
    while (std::getline(ss, part, ',')) {
      if (i >= 3) config_error("prune.theta takes exactly 3 values");
      config.prune.theta[i++] = to_real(part, key);
    }
    if (i != 3) config_error("prune.theta takes exactly 3 values");
  } else if (key == "prune.delta_tilde") {
    config.prune.delta_tilde = to_real(value, key);
  } else if (key == "prune.selector") config.prune.selector = value;
  else if (key == "prune.seed") config.prune.seed = to_count(value, key);
  else if (key == "finetune.epochs") {
    config.finetune.epochs = to_count(value, key);
  } else if (key == "finetune.lr") config.finetune.lr = to_real(value, key);
  else if (key == "artifact_dir") config.artifact_dir = value;
  else if (key == "run_name") config.run_name = value;
  else config_error("unknown override key '" + key + "'");
}

RunResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  RunResult result;
  result.artifact_dir = config.resolved_dir();
  fs::create_directories(result.artifact_dir);
  fs::path dir(result.artifact_dir);
  write_text_file((dir / "config.json").string(), config_to_json(config));

  TaskData data = load_task(config.task);

  RnnParams initial =
      init_model(config, data.train.d_x, data.train.num_classes);
  TrainResult training;
  try {
    training = train(initial, data.train, to_train_config(config.train));
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("train stage: ") + e.what());
  }
  result.trained = training.params;
  write_text_file((dir / "trained.json").string(),
                  model_to_json(result.trained));
  result.trained_eval = evaluate(result.trained, data.test);
  EvalResult trained_on_train = evaluate(result.trained, data.train);

  try {
    result.cov = covariance_of(result.trained, data.train);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("covariance stage: ") + e.what());
  }
  write_text_file((dir / "covariance.json").string(),
                  covariance_to_json(result.cov));

  MethodOutcome outcome;
  try {
    outcome = apply_method(config.prune.method, result.trained, result.cov,
                           config, initial, data.train, config.prune.seed);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("prune stage: ") + e.what());
  }
  result.compressed = outcome.compressed;
  result.params = outcome.params;
  write_text_file((dir / "compressed.json").string(),
                  model_to_json(result.compressed));
  if (outcome.has_prune_result) {
    result.has_prune_result = true;
    result.prune = outcome.prune;
    write_text_file((dir / "prune_result.json").string(),
                    prune_result_to_json(result.prune));
  }
  if (outcome.has_mask) {
    result.has_mask = true;
    result.mask = outcome.mask;
    write_text_file((dir / "mask.json").string(), mask_to_json(result.mask));
  }
  if (outcome.has_low_rank) {
    result.has_low_rank = true;
    result.low_rank = outcome.low_rank;
    write_text_file((dir / "low_rank.json").string(),
                    low_rank_json(result.low_rank));
  }
  result.pruned_eval = outcome.has_low_rank
                           ? low_rank_evaluate(result.low_rank, data.test)
                           : evaluate(result.compressed, data.test);

  if (config.finetune.epochs > 0 && config.prune.method != "none" &&
      !outcome.has_low_rank) {
    TrainConfig ft = to_train_config(config.train);
    ft.epochs = config.finetune.epochs;
    ft.lr = config.finetune.lr;
    ft.seed = config.train.seed ^ 0x9e3779b97f4a7c15ULL;
    try {
      TrainResult tuned =
          finetune(result.compressed, data.train, ft,
                   outcome.has_mask ? &result.mask : nullptr);
      result.finetuned = true;
      result.finetuned_eval = evaluate(tuned.params, data.test);
      write_text_file((dir / "finetuned.json").string(),
                      model_to_json(tuned.params));
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("finetune stage: ") + e.what());
    }
  }

  if (outcome.bound_applicable) {
    try {
      BoundOutcome bound =
          evaluate_bound(result.trained, result.compressed, outcome.bound_j,
                         data.train, trained_on_train.mean_loss);
      result.bound_checked = true;
      result.bound_lhs = bound.lhs;
      result.bound_rhs = bound.rhs;
      write_text_file(
          (dir / "bounds.json").string(),
          bound_report_json(bound, config, data.train,
                            outcome.bound_j.size()));
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("bounds stage: ") + e.what());
    }
  }

  std::string metrics = "stage,metric,value\n";
  metrics += "trained,test_accuracy," + format_double(result.trained_eval.accuracy) + "\n";
  metrics += "trained,test_loss," + format_double(result.trained_eval.mean_loss) + "\n";
  metrics += "trained,train_accuracy," + format_double(trained_on_train.accuracy) + "\n";
  metrics += "trained,train_loss," + format_double(trained_on_train.mean_loss) + "\n";
  metrics += "pruned,test_accuracy," + format_double(result.pruned_eval.accuracy) + "\n";
  metrics += "pruned,test_loss," + format_double(result.pruned_eval.mean_loss) + "\n";
  metrics += "pruned,input_loss," +
             format_double(result.has_prune_result ? result.prune.loss_input : kNan) + "\n";
  metrics += "pruned,out_o_loss," +
             format_double(result.has_prune_result ? result.prune.loss_out_o : kNan) + "\n";
  metrics += "pruned,out_h_loss," +
             format_double(result.has_prune_result ? result.prune.loss_out_h : kNan) + "\n";
  metrics += "pruned,objective," +
             format_double(result.has_prune_result ? result.prune.objective : kNan) + "\n";
  metrics += "pruned,params_input_hidden," + std::to_string(result.params.input_hidden) + "\n";
  metrics += "pruned,params_hidden_hidden," + std::to_string(result.params.hidden_hidden) + "\n";
  metrics += "pruned,params_hidden_out," + std::to_string(result.params.hidden_out) + "\n";
  metrics += "pruned,params_total," + std::to_string(result.params.total()) + "\n";
  metrics += "finetuned,test_accuracy," +
             format_double(result.finetuned ? result.finetuned_eval.accuracy : kNan) + "\n";
  metrics += "bounds,approx_lhs," +
             format_double(result.bound_checked ? result.bound_lhs : kNan) + "\n";
  metrics += "bounds,approx_rhs," +
             format_double(result.bound_checked ? result.bound_rhs : kNan) + "\n";
  write_text_file((dir / "metrics.csv").string(), metrics);
  return result;
}

SweepResult run_sweep(const ExperimentConfig& base,
                      const std::vector<std::string>& methods,
                      const std::vector<std::uint64_t>& seeds) {
  base.validate();
  for (const std::string& method : methods) {
    if (!known_method(method) || method == "none") {
      config_error("sweep: invalid method '" + method + "'");
    }
  }
  if (seeds.empty()) config_error("sweep: needs at least one seed");

  SweepResult sweep;
  sweep.dir = base.resolved_dir();
  fs::create_directories(sweep.dir);
  fs::path dir(sweep.dir);
  write_text_file((dir / "config.json").string(), config_to_json(base));

  TaskData data = load_task(base.task);
  double trained_acc_sum = 0.0;

  for (std::size_t si = 0; si < seeds.size(); ++si) {
    ExperimentConfig config = base;
    config.train.seed = seeds[si];
    config.prune.seed = seeds[si];

    RnnParams initial =
        init_model(config, data.train.d_x, data.train.num_classes);
    TrainResult training;
    try {
      training = train(initial, data.train, to_train_config(config.train));
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("sweep train stage: ") + e.what());
    }
    const RnnParams& trained = training.params;
    EvalResult trained_eval = evaluate(trained, data.test);
    trained_acc_sum += trained_eval.accuracy;
    HiddenCovariance cov = covariance_of(trained, data.train);

    if (si == 0) {
      sweep.spectrum = spectrum(cov).eigenvalues;
      sweep.m_nzr = nonzero_rows(cov).m_nzr;
      GreedyCurve curve =
          greedy_curve(cov, cov.m, TauSpec::zero(), OutputWeights{}, Theta{});
      sweep.loss_curve = curve.objectives;
    }

    for (const std::string& method : methods) {
      MethodOutcome outcome;
      try {
        outcome = apply_method(method, trained, cov, config, initial,
                               data.train, config.prune.seed);
      } catch (const std::exception& e) {
        throw std::runtime_error("sweep prune stage (" + method + "): " +
                                 e.what());
      }
      SweepRow row;
      row.method = method;
      row.train_seed = seeds[si];
      row.prune_seed = config.prune.seed;
      row.params = outcome.params;
      EvalResult pruned_eval =
          outcome.has_low_rank
              ? low_rank_evaluate(outcome.low_rank, data.test)
              : evaluate(outcome.compressed, data.test);
      row.accuracy = pruned_eval.accuracy;
      row.finetuned_accuracy = kNan;
      if (base.finetune.epochs > 0 && !outcome.has_low_rank) {
        TrainConfig ft = to_train_config(config.train);
        ft.epochs = base.finetune.epochs;
        ft.lr = base.finetune.lr;
        ft.seed = config.train.seed ^ 0x9e3779b97f4a7c15ULL;
        TrainResult tuned =
            finetune(outcome.compressed, data.train, ft,
                     outcome.has_mask ? &outcome.mask : nullptr);
        row.finetuned_accuracy = evaluate(tuned.params, data.test).accuracy;
      }
      if (outcome.bound_applicable) {
        BoundOutcome bound = evaluate_bound(trained, outcome.compressed,
                                            outcome.bound_j, data.train, 0.0);
        row.bound_checked = true;
        row.bound_lhs = bound.lhs;
        row.bound_rhs = bound.rhs;
      }
      sweep.rows.push_back(std::move(row));
    }
  }
  sweep.trained_accuracy_mean =
      trained_acc_sum / static_cast<double>(seeds.size());

  std::sort(sweep.rows.begin(), sweep.rows.end(),
            [](const SweepRow& a, const SweepRow& b) {
              if (a.method != b.method) return a.method < b.method;
              return a.train_seed < b.train_seed;
            });

  std::string raw = std::string(kRawHeader) + "\n";
  for (const SweepRow& row : sweep.rows) raw += csv_row_for(row) + "\n";
  write_text_file((dir / "comparison_raw.csv").string(), raw);

  std::string spectrum_csv = "index,eigenvalue\n";
  for (std::size_t i = 0; i < sweep.spectrum.size(); ++i) {
    spectrum_csv +=
        std::to_string(i) + "," + format_double(sweep.spectrum[i]) + "\n";
  }
  write_text_file((dir / "spectrum.csv").string(), spectrum_csv);

  std::string loss_csv = "m_sharp,input_loss\n";
  for (std::size_t i = 0; i < sweep.loss_curve.size(); ++i) {
    loss_csv += std::to_string(i + 1) + "," +
                format_double(sweep.loss_curve[i]) + "\n";
  }
  write_text_file((dir / "loss_vs_msharp.csv").string(), loss_csv);

  std::string bounds_csv = "method,train_seed,prune_seed,lhs,rhs,holds\n";
  for (const SweepRow& row : sweep.rows) {
    if (!row.bound_checked) continue;
    bounds_csv += row.method + "," + std::to_string(row.train_seed) + "," +
                  std::to_string(row.prune_seed) + "," +
                  format_double(row.bound_lhs) + "," +
                  format_double(row.bound_rhs) + "," +
                  (row.bound_lhs <= row.bound_rhs ? "1" : "0") + "\n";
  }
  write_text_file((dir / "bounds.csv").string(), bounds_csv);

  report_from_dir(sweep.dir);
  return sweep;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::stringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream fs_line(line);
    std::string field;
    while (std::getline(fs_line, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    rows.push_back(std::move(fields));
  }
  return rows;
}

std::string report_from_dir(const std::string& sweep_dir) {
  fs::path dir(sweep_dir);
  fs::path raw_path = dir / "comparison_raw.csv";
  if (!fs::exists(raw_path)) {
    throw InvalidInputError("missing artifact: " + raw_path.string());
  }
  std::vector<std::vector<std::string>> rows =
      parse_csv(read_text_file(raw_path.string()));
  if (rows.empty() || rows[0] != parse_csv(std::string(kRawHeader) + "\n")[0]) {
    throw InvalidInputError("comparison_raw.csv has an unexpected header");
  }

  struct Agg {
    std::vector<double> accuracies;
    std::vector<double> finetuned;
    std::string params[4];
  };
  std::map<std::string, Agg> by_method;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 12) {
      throw InvalidInputError("comparison_raw.csv row has wrong arity");
    }
    Agg& agg = by_method[r[0]];
    agg.accuracies.push_back(to_real(r[3], "accuracy"));
    double ft = to_real(r[4], "finetuned_accuracy");
    if (!std::isnan(ft)) agg.finetuned.push_back(ft);
    agg.params[0] = r[5];
    agg.params[1] = r[6];
    agg.params[2] = r[7];
    agg.params[3] = r[8];
  }

  std::string out =
      "method,accuracy_mean,accuracy_std,finetuned_mean,params_in,params_hid,"
      "params_out,params_total\n";
  for (const auto& [method, agg] : by_method) {
    double mean = 0.0;
    for (double a : agg.accuracies) mean += a;
    mean /= static_cast<double>(agg.accuracies.size());
    double var = 0.0;
    for (double a : agg.accuracies) var += (a - mean) * (a - mean);
    var /= static_cast<double>(agg.accuracies.size());
    double ft_mean = kNan;
    if (!agg.finetuned.empty()) {
      ft_mean = 0.0;
      for (double a : agg.finetuned) ft_mean += a;
      ft_mean /= static_cast<double>(agg.finetuned.size());
    }
    out += method + "," + format_double(mean) + "," +
           format_double(std::sqrt(var)) + "," + format_double(ft_mean) + "," +
           agg.params[0] + "," + agg.params[1] + "," + agg.params[2] + "," +
           agg.params[3] + "\n";
  }
  write_text_file((dir / "comparison.csv").string(), out);
  return out;
}

Prop2Report check_bounds(const ExperimentConfig& config, std::size_t trials) {
  config.validate();
  std::string run_dir = config.resolved_dir();
  fs::create_directories(run_dir);
  fs::path dir(run_dir);

  TaskData data = load_task(config.task);
  RnnParams initial =
      init_model(config, data.train.d_x, data.train.num_classes);
  TrainResult training =
      train(initial, data.train, to_train_config(config.train));
  HiddenCovariance cov = covariance_of(training.params, data.train);
  Prop2Report report = check_prop2(cov, config.prune.m_sharp,
                                   config.prune.delta_tilde, trials,
                                   config.prune.seed);

  std::string out =
      "{\"version\":1,\"lambda\":" + format_double(report.lambda) +
      ",\"threshold\":" + format_double(report.threshold) +
      ",\"success_rate\":" + format_double(report.success_rate) +
      ",\"trials\":" + std::to_string(report.trials) +
      ",\"total_collisions\":" + std::to_string(report.total_collisions) +
      ",\"trial_losses\":[";
  for (std::size_t i = 0; i < report.trial_losses.size(); ++i) {
    if (i) out += ',';
    out += format_double(report.trial_losses[i]);
  }
  out += "]}";
  write_text_file((dir / "prop2.json").string(), out);
  return report;
}

double mean_accuracy(const SweepResult& sweep, const std::string& method,
                     bool finetuned) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const SweepRow& row : sweep.rows) {
    if (row.method != method) continue;
    double value = finetuned ? row.finetuned_accuracy : row.accuracy;
    if (std::isnan(value)) continue;
    sum += value;
    ++count;
  }
  if (count == 0) {
    throw InvalidInputError("no sweep rows for method '" + method + "'");
  }
  return sum / static_cast<double>(count);
}

}  // namespace specrnn
