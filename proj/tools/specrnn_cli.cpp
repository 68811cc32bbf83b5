// Experiment driver: train/prune/finetune/eval/sweep/report/check-bounds.
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "specrnn/experiment.hpp"
#include "specrnn/serialize.hpp"

namespace {

using namespace specrnn;

// Dotted-path overrides arrive as unparsed "--section.field=value" extras.
void apply_extras(ExperimentConfig& config,
                  const std::vector<std::string>& extras) {
  for (const std::string& extra : extras) {
    if (extra.rfind("--", 0) != 0 || extra.find('=') == std::string::npos) {
      throw InvalidInputError("unrecognized argument '" + extra +
                              "' (expected --section.field=value)");
    }
    apply_override(config, extra.substr(2));
  }
}

ExperimentConfig load_config(const std::string& config_path,
                             const std::vector<std::string>& extras) {
  ExperimentConfig config;
  if (!config_path.empty()) {
    config = config_from_json(read_text_file(config_path));
  }
  apply_extras(config, extras);
  config.validate();
  return config;
}

void print_run(const RunResult& result) {
  std::printf("artifacts: %s\n", result.artifact_dir.c_str());
  std::printf("trained accuracy: %s\n",
              format_double(result.trained_eval.accuracy).c_str());
  std::printf("pruned accuracy: %s\n",
              format_double(result.pruned_eval.accuracy).c_str());
  if (result.finetuned) {
    std::printf("finetuned accuracy: %s\n",
                format_double(result.finetuned_eval.accuracy).c_str());
  }
  if (result.bound_checked) {
    std::printf("approx bound: lhs=%s rhs=%s holds=%s\n",
                format_double(result.bound_lhs).c_str(),
                format_double(result.bound_rhs).c_str(),
                result.bound_lhs <= result.bound_rhs ? "yes" : "no");
  }
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::string current;
  for (char c : text) {
    if (c == ',') {
      seeds.push_back(std::stoull(current));
      current.clear();
    } else {
      current += c;
    }
  }
  if (!current.empty()) seeds.push_back(std::stoull(current));
  return seeds;
}

std::vector<std::string> parse_name_list(const std::string& text) {
  std::vector<std::string> names;
  std::string current;
  for (char c : text) {
    if (c == ',') {
      names.push_back(current);
      current.clear();
    } else {
      current += c;
    }
  }
  if (!current.empty()) names.push_back(current);
  return names;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent-network spectral compression toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string model_path;
  std::string report_dir;
  std::string methods_arg =
      "spectral,spectral_no_rec,random_node,random_node_no_rec,"
      "magnitude_weight,random_weight,column_sparsify,low_rank";
  std::string seeds_arg = "0,1,2,3,4";
  std::size_t trials = 200;

  auto add_config_option = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->allow_extras();  // --section.field=value overrides
  };

  CLI::App* cmd_train =
      app.add_subcommand("train", "Train a model; no compression");
  add_config_option(cmd_train);
  CLI::App* cmd_prune = app.add_subcommand(
      "prune", "Train (or reuse config seed) and compress; no fine-tuning");
  add_config_option(cmd_prune);
  CLI::App* cmd_finetune = app.add_subcommand(
      "finetune", "Full pipeline including fine-tuning the compressed model");
  add_config_option(cmd_finetune);
  CLI::App* cmd_eval =
      app.add_subcommand("eval", "Evaluate a stored model JSON on the task");
  add_config_option(cmd_eval);
  cmd_eval->add_option("--model", model_path, "model JSON file")->required();
  CLI::App* cmd_sweep = app.add_subcommand(
      "sweep", "Method x seed comparison; writes the report CSVs");
  add_config_option(cmd_sweep);
  cmd_sweep->add_option("--methods", methods_arg, "comma-separated methods");
  cmd_sweep->add_option("--seeds", seeds_arg, "comma-separated seeds");
  CLI::App* cmd_report = app.add_subcommand(
      "report", "Re-aggregate comparison.csv from a sweep directory");
  cmd_report->add_option("--dir", report_dir, "sweep artifact directory")
      ->required();
  CLI::App* cmd_check = app.add_subcommand(
      "check-bounds", "Monte-Carlo check of the sampled-subset loss bound");
  add_config_option(cmd_check);
  cmd_check->add_option("--trials", trials, "number of sampled index sets");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_train->parsed()) {
      ExperimentConfig config =
          load_config(config_path, cmd_train->remaining());
      config.prune.method = "none";
      config.finetune.epochs = 0;
      print_run(run_experiment(config));
    } else if (cmd_prune->parsed()) {
      ExperimentConfig config =
          load_config(config_path, cmd_prune->remaining());
      config.finetune.epochs = 0;
      print_run(run_experiment(config));
    } else if (cmd_finetune->parsed()) {
      ExperimentConfig config =
          load_config(config_path, cmd_finetune->remaining());
      if (config.finetune.epochs == 0) {
        throw InvalidInputError("finetune: finetune.epochs must be >= 1");
      }
      print_run(run_experiment(config));
    } else if (cmd_eval->parsed()) {
      ExperimentConfig config = load_config(config_path, cmd_eval->remaining());
      RnnParams model = model_from_json(read_text_file(model_path));
      // Evaluate on the configured task's train/test split; no training.
      auto run_eval = [&](const SequenceBatch& batch, const char* name) {
        EvalResult result = evaluate(model, batch);
        std::printf("%s,accuracy,%s\n", name,
                    format_double(result.accuracy).c_str());
        std::printf("%s,mean_loss,%s\n", name,
                    format_double(result.mean_loss).c_str());
      };
      if (config.task.kind == "synthetic_parity") {
        run_eval(synthetic_parity(config.task.train_n, config.task.steps,
                                  config.task.seed),
                 "train");
        run_eval(synthetic_parity(config.task.test_n, config.task.steps,
                                  config.task.seed + 1),
                 "test");
      } else if (config.task.kind == "synthetic_copy") {
        run_eval(synthetic_copy(config.task.train_n, config.task.steps,
                                config.task.symbols, config.task.seed),
                 "train");
        run_eval(synthetic_copy(config.task.test_n, config.task.steps,
                                config.task.symbols, config.task.seed + 1),
                 "test");
      } else {
        SequenceMode mode = config.task.kind == "mnist_rows"
                                ? SequenceMode::kRows
                                : SequenceMode::kPixels;
        std::string dir = config.task.data_dir;
        run_eval(load_mnist_idx(dir + "/train-images-idx3-ubyte",
                                dir + "/train-labels-idx1-ubyte", mode),
                 "train");
        run_eval(load_mnist_idx(dir + "/t10k-images-idx3-ubyte",
                                dir + "/t10k-labels-idx1-ubyte", mode),
                 "test");
      }
    } else if (cmd_sweep->parsed()) {
      ExperimentConfig config =
          load_config(config_path, cmd_sweep->remaining());
      SweepResult sweep = run_sweep(config, parse_name_list(methods_arg),
                                    parse_seed_list(seeds_arg));
      std::printf("sweep artifacts: %s\n", sweep.dir.c_str());
      std::printf("%s", report_from_dir(sweep.dir).c_str());
    } else if (cmd_report->parsed()) {
      std::printf("%s", report_from_dir(report_dir).c_str());
    } else if (cmd_check->parsed()) {
      ExperimentConfig config =
          load_config(config_path, cmd_check->remaining());
      Prop2Report report = check_bounds(config, trials);
      std::printf("lambda,%s\n", format_double(report.lambda).c_str());
      std::printf("threshold,%s\n", format_double(report.threshold).c_str());
      std::printf("success_rate,%s\n",
                  format_double(report.success_rate).c_str());
      std::printf("target_rate,%s\n",
                  format_double(1.0 - config.prune.delta_tilde).c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
