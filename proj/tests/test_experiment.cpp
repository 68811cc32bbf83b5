#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "specrnn/experiment.hpp"
#include "specrnn/serialize.hpp"

using namespace specrnn;

namespace {

namespace fs = std::filesystem;

struct TempTree {
  fs::path path;
  explicit TempTree(const std::string& tag) {
    path = fs::temp_directory_path() / ("specrnn_exp_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempTree() { fs::remove_all(path); }
};

// parity task small enough that a full run takes well under a second
ExperimentConfig tiny_config(const std::string& dir) {
  ExperimentConfig c;
  c.task.kind = "synthetic_parity";
  c.task.train_n = 60;
  c.task.test_n = 30;
  c.task.steps = 6;
  c.task.seed = 13;
  c.model.m = 8;
  c.model.init = "uniform";
  c.model.activation = "tanh";
  c.train.epochs = 2;
  c.train.batch = 30;
  c.train.lr = 1e-2;
  c.train.seed = 1;
  c.prune.method = "spectral";
  c.prune.m_sharp = 4;
  c.artifact_dir = dir;
  c.run_name = "tiny";
  return c;
}

}  // namespace

TEST_CASE("config json round trip covers every field") {
  ExperimentConfig c = tiny_config("/tmp/somewhere");
  c.task.symbols = 5;
  c.prune.kept = 9;
  c.prune.kept_cols = 3;
  c.prune.rank = 2;
  c.prune.tau_mode = "scalar";
  c.prune.tau_value = 0.25;
  c.prune.theta = {0.5, 0.3, 0.2};
  c.prune.delta_tilde = 0.1;
  c.prune.selector = "exhaustive";
  c.prune.seed = 77;
  c.finetune.epochs = 3;
  c.finetune.lr = 1e-3;
  c.run_name = "roundtrip";

  std::string text = config_to_json(c);
  ExperimentConfig back = config_from_json(text);
  CHECK(back.task.kind == c.task.kind);
  CHECK(back.task.train_n == c.task.train_n);
  CHECK(back.task.test_n == c.task.test_n);
  CHECK(back.task.steps == c.task.steps);
  CHECK(back.task.symbols == c.task.symbols);
  CHECK(back.task.seed == c.task.seed);
  CHECK(back.task.data_dir == c.task.data_dir);
  CHECK(back.model.m == c.model.m);
  CHECK(back.model.init == c.model.init);
  CHECK(back.model.activation == c.model.activation);
  CHECK(back.train.epochs == c.train.epochs);
  CHECK(back.train.batch == c.train.batch);
  CHECK(back.train.lr == c.train.lr);
  CHECK(back.train.decay == c.train.decay);
  CHECK(back.train.decay_step == c.train.decay_step);
  CHECK(back.train.clip == c.train.clip);
  CHECK(back.train.seed == c.train.seed);
  CHECK(back.prune.method == c.prune.method);
  CHECK(back.prune.m_sharp == c.prune.m_sharp);
  CHECK(back.prune.kept == c.prune.kept);
  CHECK(back.prune.kept_cols == c.prune.kept_cols);
  CHECK(back.prune.rank == c.prune.rank);
  CHECK(back.prune.tau_mode == c.prune.tau_mode);
  CHECK(back.prune.tau_value == c.prune.tau_value);
  CHECK(back.prune.theta == c.prune.theta);
  CHECK(back.prune.delta_tilde == c.prune.delta_tilde);
  CHECK(back.prune.selector == c.prune.selector);
  CHECK(back.prune.seed == c.prune.seed);
  CHECK(back.finetune.epochs == c.finetune.epochs);
  CHECK(back.finetune.lr == c.finetune.lr);
  CHECK(back.artifact_dir == c.artifact_dir);
  CHECK(back.run_name == c.run_name);
  CHECK(config_to_json(back) == text);
}

TEST_CASE("config json rejects unknown keys per section") {
  CHECK_THROWS_AS(config_from_json("this is not json"), InvalidInputError);
  CHECK_THROWS_AS(config_from_json("{\"bogus\":1}"), InvalidInputError);
  CHECK_THROWS_AS(config_from_json("{\"task\":{\"bogus\":1}}"),
                  InvalidInputError);
  CHECK_THROWS_AS(config_from_json("{\"model\":{\"width\":4}}"),
                  InvalidInputError);
  CHECK_THROWS_AS(config_from_json("{\"train\":{\"momentum\":0.9}}"),
                  InvalidInputError);
  CHECK_THROWS_AS(config_from_json("{\"prune\":{\"sparsity\":0.5}}"),
                  InvalidInputError);
  CHECK_THROWS_AS(config_from_json("{\"finetune\":{\"steps\":2}}"),
                  InvalidInputError);
  // an empty object takes every default
  ExperimentConfig d = config_from_json("{}");
  CHECK(d.model.m == 64);
  CHECK(d.prune.method == "spectral");
}

TEST_CASE("command-line overrides") {
  ExperimentConfig c = tiny_config("/tmp/elsewhere");

  apply_override(c, "task.kind=synthetic_copy");
  CHECK(c.task.kind == "synthetic_copy");
  apply_override(c, "task.symbols=6");
  CHECK(c.task.symbols == 6);
  apply_override(c, "model.m=32");
  CHECK(c.model.m == 32);
  apply_override(c, "train.lr=0.005");
  CHECK(c.train.lr == 0.005);
  apply_override(c, "train.epochs=9");
  CHECK(c.train.epochs == 9);
  apply_override(c, "prune.method=low_rank");
  CHECK(c.prune.method == "low_rank");
  apply_override(c, "prune.m_sharp=12");
  CHECK(c.prune.m_sharp == 12);
  apply_override(c, "prune.theta=0.5,0.25,0.25");
  CHECK(c.prune.theta == std::array<double, 3>{0.5, 0.25, 0.25});
  apply_override(c, "run_name=alt");
  CHECK(c.run_name == "alt");
  apply_override(c, "artifact_dir=/tmp/other");
  CHECK(c.artifact_dir == "/tmp/other");

  CHECK_THROWS_AS(apply_override(c, "no_equals_sign"), InvalidInputError);
  CHECK_THROWS_AS(apply_override(c, "nothing.here=1"), InvalidInputError);
  CHECK_THROWS_AS(apply_override(c, "train.lr=abc"), InvalidInputError);
  CHECK_THROWS_AS(apply_override(c, "train.lr=0.1x"), InvalidInputError);
  CHECK_THROWS_AS(apply_override(c, "model.m=-3"), InvalidInputError);
  CHECK_THROWS_AS(apply_override(c, "prune.theta=1,2"), InvalidInputError);
  CHECK_THROWS_AS(apply_override(c, "prune.theta=1,2,3,4"), InvalidInputError);
}

TEST_CASE("config validation rejects each malformed field") {
  ExperimentConfig good = tiny_config("/tmp/validate");
  good.validate();  // baseline sanity

  auto rejects = [&](auto mutate) {
    ExperimentConfig c = tiny_config("/tmp/validate");
    mutate(c);
    CHECK_THROWS_AS(c.validate(), InvalidInputError);
  };
  rejects([](ExperimentConfig& c) { c.task.kind = "sudoku"; });
  rejects([](ExperimentConfig& c) { c.task.train_n = 0; });
  rejects([](ExperimentConfig& c) { c.task.test_n = 0; });
  rejects([](ExperimentConfig& c) { c.task.steps = 0; });
  rejects([](ExperimentConfig& c) {
    c.task.kind = "synthetic_copy";
    c.task.symbols = 1;
  });
  rejects([](ExperimentConfig& c) { c.model.m = 0; });
  rejects([](ExperimentConfig& c) { c.model.init = "xavier"; });
  rejects([](ExperimentConfig& c) { c.model.activation = "sigmoid"; });
  rejects([](ExperimentConfig& c) {
    c.model.init = "irnn";
    c.model.activation = "tanh";
  });
  rejects([](ExperimentConfig& c) { c.train.batch = 0; });
  rejects([](ExperimentConfig& c) { c.train.lr = -1.0; });
  rejects([](ExperimentConfig& c) { c.train.decay = 0.0; });
  rejects([](ExperimentConfig& c) { c.train.decay = 1.5; });
  rejects([](ExperimentConfig& c) { c.train.decay_step = 0; });
  rejects([](ExperimentConfig& c) { c.prune.method = "lottery"; });
  rejects([](ExperimentConfig& c) { c.prune.m_sharp = 0; });
  rejects([](ExperimentConfig& c) { c.prune.m_sharp = 9; });
  rejects([](ExperimentConfig& c) { c.prune.kept = 65; });
  rejects([](ExperimentConfig& c) { c.prune.kept_cols = 9; });
  rejects([](ExperimentConfig& c) { c.prune.rank = 9; });
  rejects([](ExperimentConfig& c) { c.prune.tau_mode = "auto"; });
  rejects([](ExperimentConfig& c) {
    c.prune.tau_mode = "scalar";
    c.prune.tau_value = -0.1;
  });
  rejects([](ExperimentConfig& c) {
    c.prune.tau_mode = "leverage";
    c.prune.tau_value = 0.0;
  });
  rejects([](ExperimentConfig& c) { c.prune.theta = {-0.1, 0.5, 0.6}; });
  rejects([](ExperimentConfig& c) { c.prune.theta = {0.0, 0.0, 0.0}; });
  rejects([](ExperimentConfig& c) { c.prune.delta_tilde = 0.0; });
  rejects([](ExperimentConfig& c) { c.prune.delta_tilde = 0.5; });
  rejects([](ExperimentConfig& c) { c.prune.selector = "random"; });
  rejects([](ExperimentConfig& c) { c.finetune.lr = -1e-3; });
  rejects([](ExperimentConfig& c) { c.run_name = ""; });

  // method "none" skips the pruning-parameter checks
  ExperimentConfig none = tiny_config("/tmp/validate");
  none.prune.method = "none";
  none.prune.m_sharp = 0;
  none.validate();
}

TEST_CASE("artifact directory resolution") {
  ExperimentConfig c = tiny_config("/tmp/explicit");
  c.run_name = "namecheck";
  CHECK(c.resolved_dir() == "/tmp/explicit");

  c.artifact_dir.clear();
  ::setenv("SPECRNN_ARTIFACTS", "/tmp/envroot", 1);
  CHECK(c.resolved_dir() == "/tmp/envroot/namecheck");
  ::unsetenv("SPECRNN_ARTIFACTS");
  CHECK(c.resolved_dir() == fs::path("artifacts/namecheck").string());
}

TEST_CASE("csv parser") {
  auto rows = parse_csv("a,b,c\n1,2,3\n4,,6\n");
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == std::vector<std::string>{"a", "b", "c"});
  CHECK(rows[1] == std::vector<std::string>{"1", "2", "3"});
  CHECK(rows[2] == std::vector<std::string>{"4", "", "6"});
  CHECK(parse_csv("").empty());
  auto trailing = parse_csv("x,\n");
  REQUIRE(trailing.size() == 1);
  CHECK(trailing[0] == std::vector<std::string>{"x", ""});
}

TEST_CASE("single experiment run") {
  TempTree tree("single");
  ExperimentConfig c = tiny_config((tree.path / "run").string());

  RunResult res = run_experiment(c);
  CHECK(res.artifact_dir == c.resolved_dir());
  CHECK(res.trained.m() == 8);
  CHECK(res.compressed.m() == 4);
  CHECK(res.has_prune_result);
  CHECK(res.prune.j.size() == 4);
  CHECK(!res.has_mask);
  CHECK(!res.has_low_rank);
  CHECK(!res.finetuned);
  CHECK(res.bound_checked);
  CHECK(res.bound_lhs <= res.bound_rhs);
  CHECK(res.params.input_hidden == 4);       // m_sharp * d_x
  CHECK(res.params.hidden_hidden == 16);     // m_sharp^2
  CHECK(res.params.hidden_out == 8);         // d_y * m_sharp
  CHECK(res.params.total() == 28);

  fs::path dir(res.artifact_dir);
  for (const char* name :
       {"config.json", "trained.json", "covariance.json", "compressed.json",
        "prune_result.json", "bounds.json", "metrics.csv"}) {
    CHECK(fs::exists(dir / name));
  }

  // artifacts reload to the same objects
  RnnParams trained_back =
      model_from_json(read_text_file((dir / "trained.json").string()));
  CHECK(oracle::max_abs_diff(trained_back.w_hid, res.trained.w_hid) == 0.0);
  PruneResult prune_back =
      prune_result_from_json(read_text_file((dir / "prune_result.json").string()));
  CHECK(prune_back.j.indices == res.prune.j.indices);

  // a rerun of the same config is byte-identical
  std::string metrics = read_text_file((dir / "metrics.csv").string());
  run_experiment(c);
  CHECK(read_text_file((dir / "metrics.csv").string()) == metrics);
}

TEST_CASE("keeping the full width loses nothing") {
  TempTree tree("full_width");
  ExperimentConfig c = tiny_config((tree.path / "run").string());
  c.prune.m_sharp = 8;
  RunResult res = run_experiment(c);
  CHECK(res.pruned_eval.accuracy == res.trained_eval.accuracy);
}

TEST_CASE("method none skips compression") {
  TempTree tree("none");
  ExperimentConfig c = tiny_config((tree.path / "run").string());
  c.prune.method = "none";
  RunResult res = run_experiment(c);
  CHECK(!res.has_prune_result);
  CHECK(!res.bound_checked);
  CHECK(res.compressed.m() == 8);
  CHECK(oracle::max_abs_diff(res.compressed.w_hid, res.trained.w_hid) == 0.0);
  CHECK(res.pruned_eval.accuracy == res.trained_eval.accuracy);
  CHECK(!fs::exists(fs::path(res.artifact_dir) / "prune_result.json"));
}

TEST_CASE("masked method with finetuning") {
  TempTree tree("masked");
  ExperimentConfig c = tiny_config((tree.path / "run").string());
  c.prune.method = "magnitude_weight";
  c.prune.kept = 20;
  c.finetune.epochs = 1;
  c.finetune.lr = 1e-3;
  RunResult res = run_experiment(c);
  CHECK(res.has_mask);
  CHECK(res.mask.kept_count == 20);
  CHECK(res.compressed.m() == 8);  // width unchanged, weights masked
  CHECK(count_nonzero(res.compressed.w_hid) <= 20);
  CHECK(res.finetuned);
  CHECK(res.params.hidden_hidden == 20);
  fs::path dir(res.artifact_dir);
  CHECK(fs::exists(dir / "mask.json"));
  CHECK(fs::exists(dir / "finetuned.json"));

  // the finetuned model still honors the mask
  RnnParams tuned =
      model_from_json(read_text_file((dir / "finetuned.json").string()));
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t col = 0; col < 8; ++col)
      if (!res.mask.kept(r, col)) CHECK(tuned.w_hid(r, col) == 0.0);
}

TEST_CASE("factored method keeps its factors and skips finetuning") {
  TempTree tree("factored");
  ExperimentConfig c = tiny_config((tree.path / "run").string());
  c.prune.method = "low_rank";
  c.prune.rank = 3;
  c.finetune.epochs = 2;  // requested but not supported in factored form
  RunResult res = run_experiment(c);
  CHECK(res.has_low_rank);
  CHECK(res.low_rank.rank() == 3);
  CHECK(!res.finetuned);
  CHECK(res.params.hidden_hidden == 2 * 8 * 3);
  CHECK(fs::exists(fs::path(res.artifact_dir) / "low_rank.json"));
}

TEST_CASE("method sweep") {
  TempTree tree("sweep");
  ExperimentConfig c = tiny_config((tree.path / "sweepdir").string());
  std::vector<std::string> methods = {"spectral", "random_node",
                                      "magnitude_weight"};
  std::vector<std::uint64_t> seeds = {0, 1};
  SweepResult sweep = run_sweep(c, methods, seeds);

  REQUIRE(sweep.rows.size() == 6);
  // sorted by (method, train_seed)
  for (std::size_t i = 0; i + 1 < sweep.rows.size(); ++i) {
    const SweepRow& a = sweep.rows[i];
    const SweepRow& b = sweep.rows[i + 1];
    CHECK((a.method < b.method ||
           (a.method == b.method && a.train_seed < b.train_seed)));
  }
  for (const SweepRow& row : sweep.rows) {
    CHECK(row.prune_seed == row.train_seed);
    CHECK(row.accuracy >= 0.0);
    CHECK(row.accuracy <= 1.0);
    CHECK(std::isnan(row.finetuned_accuracy));  // no finetune epochs configured
  }

  CHECK(sweep.spectrum.size() == 8);
  for (std::size_t i = 0; i + 1 < 8; ++i)
    CHECK(sweep.spectrum[i] >= sweep.spectrum[i + 1]);
  REQUIRE(sweep.loss_curve.size() == 8);
  for (std::size_t i = 0; i + 1 < 8; ++i)
    CHECK(sweep.loss_curve[i + 1] <= sweep.loss_curve[i] + 1e-10);
  CHECK(sweep.m_nzr <= 8);
  CHECK(sweep.trained_accuracy_mean >= 0.0);
  CHECK(sweep.trained_accuracy_mean <= 1.0);

  fs::path dir(sweep.dir);
  for (const char* name : {"config.json", "comparison_raw.csv",
                           "comparison.csv", "spectrum.csv",
                           "loss_vs_msharp.csv", "bounds.csv"}) {
    CHECK(fs::exists(dir / name));
  }

  // node-selection methods carry bound rows; every recorded bound holds
  auto bound_rows = parse_csv(read_text_file((dir / "bounds.csv").string()));
  REQUIRE(bound_rows.size() >= 2);
  for (std::size_t i = 1; i < bound_rows.size(); ++i)
    CHECK(bound_rows[i][5] == "1");

  // mean helper agrees with a direct average
  double spectral_sum = 0.0;
  std::size_t spectral_count = 0;
  for (const SweepRow& row : sweep.rows) {
    if (row.method == "spectral") {
      spectral_sum += row.accuracy;
      ++spectral_count;
    }
  }
  REQUIRE(spectral_count == 2);
  CHECK(mean_accuracy(sweep, "spectral") ==
        doctest::Approx(spectral_sum / 2.0).epsilon(1e-15));
  CHECK_THROWS_AS(mean_accuracy(sweep, "lottery"), InvalidInputError);

  // aggregation matches a hand recomputation (population std over seeds)
  std::string agg = report_from_dir(sweep.dir);
  auto agg_rows = parse_csv(agg);
  REQUIRE(agg_rows.size() == 4);  // header + three methods
  CHECK(agg_rows[0][0] == "method");
  bool found = false;
  for (std::size_t i = 1; i < agg_rows.size(); ++i) {
    if (agg_rows[i][0] != "spectral") continue;
    found = true;
    double mean = std::strtod(agg_rows[i][1].c_str(), nullptr);
    double std_dev = std::strtod(agg_rows[i][2].c_str(), nullptr);
    double a = sweep.rows[4].accuracy;  // spectral rows sort last
    double b = sweep.rows[5].accuracy;
    CHECK(mean == doctest::Approx((a + b) / 2.0).epsilon(1e-15));
    CHECK(std_dev == doctest::Approx(std::abs(a - b) / 2.0).epsilon(1e-12));
  }
  CHECK(found);

  CHECK_THROWS_AS(run_sweep(c, {"none"}, seeds), InvalidInputError);
  CHECK_THROWS_AS(run_sweep(c, methods, {}), InvalidInputError);
  CHECK_THROWS_AS(report_from_dir((tree.path / "missing").string()),
                  InvalidInputError);
}

TEST_CASE("sampled-loss certificate runner") {
  TempTree tree("prop2");
  ExperimentConfig c = tiny_config((tree.path / "run").string());
  c.prune.m_sharp = 6;
  c.prune.delta_tilde = 0.2;
  Prop2Report rep = check_bounds(c, 40);
  CHECK(rep.trials == 40);
  CHECK(rep.trial_losses.size() == 40);
  CHECK(rep.threshold == 4.0 * rep.lambda);
  CHECK(rep.success_rate >= 0.0);
  CHECK(rep.success_rate <= 1.0);
  fs::path dir(c.resolved_dir());
  REQUIRE(fs::exists(dir / "prop2.json"));
  std::string text = read_text_file((dir / "prop2.json").string());
  CHECK(text.find("success_rate") != std::string::npos);
  CHECK(text.find("lambda") != std::string::npos);
}
