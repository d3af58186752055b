#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "flowcast/data.hpp"
#include "flowcast/training.hpp"

namespace flowcast {

/// Flat `key = value` files with '#' comments. Unknown keys are rejected.
class KvReader {
 public:
  explicit KvReader(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get_string(const std::string& key, const std::string& fallback);
  std::string require_string(const std::string& key);
  double get_double(const std::string& key, double fallback);
  std::size_t get_size(const std::string& key, std::size_t fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  bool get_bool(const std::string& key, bool fallback);
  int get_int(const std::string& key, int fallback);

  /// Throws ConfigError if any key was never consumed (typo guard).
  void finish() const;

 private:
  std::string take(const std::string& key);
  std::string path_;
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> used_;
};

/// One run = one model trained on one basin's files. Keys in the config file
/// mirror these field names exactly.
struct RunConfig {
  std::string model = "cnn-lstm";
  std::string precip;
  std::string temp;
  std::string gauge;
  std::string out_dir = ".";
  std::string basin;  // defaults to the gauge file stem
  std::size_t lookback = 182;
  std::size_t epochs = 100;
  std::size_t batch_size = 50;
  double train_fraction = 0.7;
  double val_fraction = 0.3;
  double clip_max_norm = 1.0;
  double learning_rate = 0.001;
  std::size_t lstm_hidden = 80;
  double dropout = 0.3;
  std::uint64_t seed = 0;
};

RunConfig load_run_config(const std::string& path);

/// Checks ranges and that the referenced data files exist.
void validate_run_config(const RunConfig& config);

TrainConfig train_config_of(const RunConfig& config);

SyntheticBasinSpec load_synth_spec(const std::string& path);

}  // namespace flowcast
