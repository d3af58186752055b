#pragma once

#include <string>
#include <vector>

namespace flowcast::cli {

struct GradCheckOptions {
  std::string model = "both";  // lstm | cnn-lstm | both
  std::size_t grid = 3;
  std::size_t lookback = 3;
  std::size_t hidden = 4;
  double epsilon = 1e-5;
  double threshold = 1e-4;
  std::uint64_t seed = 7;
};

int cmd_synth(const std::string& spec_path, const std::string& out_dir);
int cmd_train(const std::string& config_path);
int cmd_evaluate(const std::string& checkpoint_path, const std::string& precip_override,
                 const std::string& temp_override, const std::string& gauge_override,
                 const std::string& out_dir_override);
int cmd_compare(const std::vector<std::string>& checkpoint_paths, const std::string& out_dir);
int cmd_grad_check(const GradCheckOptions& options);

}  // namespace flowcast::cli
