#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"
#include "flowcast/errors.hpp"

using namespace flowcast;

int main(int argc, char** argv) {
  CLI::App app{"flowcast - streamflow forecasting with CNN-LSTM and LSTM models"};
  app.require_subcommand(1);

  std::string spec_path, out_dir = ".";
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic basin dataset");
  synth->add_option("--spec", spec_path, "Synthetic basin spec file (key = value)")
      ->required();
  synth->add_option("--out", out_dir, "Output directory");

  std::string config_path;
  CLI::App* train = app.add_subcommand("train", "Train a model from a run config");
  train->add_option("--config", config_path, "Run config file (key = value)")->required();

  std::string ckpt_path, precip_override, temp_override, gauge_override, eval_out;
  CLI::App* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on its test split");
  evaluate->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  evaluate->add_option("--precip", precip_override, "Override precipitation grid file");
  evaluate->add_option("--temp", temp_override, "Override temperature grid file");
  evaluate->add_option("--gauge", gauge_override, "Override gauge file");
  evaluate->add_option("--out", eval_out, "Output directory (default: checkpoint out_dir)");

  std::vector<std::string> compare_ckpts;
  std::string compare_out = ".";
  CLI::App* compare = app.add_subcommand("compare", "Summarize paired lstm/cnn-lstm runs");
  compare->add_option("checkpoints", compare_ckpts, "Checkpoint files (one lstm and one cnn-lstm per basin)")
      ->required()
      ->expected(-2);
  compare->add_option("--out", compare_out, "Output directory");

  cli::GradCheckOptions gc;
  CLI::App* grad = app.add_subcommand("grad-check", "Finite-difference gradient check");
  grad->add_option("--model", gc.model, "lstm, cnn-lstm or both");
  grad->add_option("--grid", gc.grid, "Grid extent for the reduced cnn-lstm");
  grad->add_option("--lookback", gc.lookback, "Lookback window");
  grad->add_option("--hidden", gc.hidden, "LSTM hidden size");
  grad->add_option("--epsilon", gc.epsilon, "Central-difference step");
  grad->add_option("--threshold", gc.threshold, "Pass threshold on the max relative error");
  grad->add_option("--seed", gc.seed, "RNG seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfigError;
  }

  try {
    if (*synth) return cli::cmd_synth(spec_path, out_dir);
    if (*train) return cli::cmd_train(config_path);
    if (*evaluate) {
      return cli::cmd_evaluate(ckpt_path, precip_override, temp_override, gauge_override,
                               eval_out);
    }
    if (*compare) return cli::cmd_compare(compare_ckpts, compare_out);
    if (*grad) return cli::cmd_grad_check(gc);
  } catch (const ConfigError& e) {
    std::cerr << "error (config): " << e.what() << "\n";
    return kExitConfigError;
  } catch (const DataError& e) {
    std::cerr << "error (data): " << e.what() << "\n";
    return kExitDataError;
  } catch (const NumericError& e) {
    std::cerr << "error (numeric): " << e.what() << "\n";
    return kExitNumericError;
  } catch (const ShapeError& e) {
    std::cerr << "error (data): " << e.what() << "\n";
    return kExitDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
