#include "flowcast/config.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>

#include "flowcast/errors.hpp"
#include "flowcast/model.hpp"

namespace flowcast {

namespace {
std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}
}  // namespace

KvReader::KvReader(const std::string& path) : path_(path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(trimmed.substr(0, eq));
    const std::string value = trim(trimmed.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
    }
    if (values_.count(key)) {
      throw ConfigError(path + ": duplicate key '" + key + "'");
    }
    values_[key] = value;
    used_[key] = false;
  }
}

std::string KvReader::take(const std::string& key) {
  used_[key] = true;
  return values_.at(key);
}

std::string KvReader::get_string(const std::string& key, const std::string& fallback) {
  return has(key) ? take(key) : fallback;
}

std::string KvReader::require_string(const std::string& key) {
  if (!has(key)) throw ConfigError(path_ + ": missing required key '" + key + "'");
  return take(key);
}

double KvReader::get_double(const std::string& key, double fallback) {
  if (!has(key)) return fallback;
  const std::string s = take(key);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(path_ + ": key '" + key + "': '" + s + "' is not a number");
  }
  return v;
}

std::size_t KvReader::get_size(const std::string& key, std::size_t fallback) {
  if (!has(key)) return fallback;
  const std::string s = take(key);
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(path_ + ": key '" + key + "': '" + s + "' is not a non-negative integer");
  }
  return v;
}

std::uint64_t KvReader::get_u64(const std::string& key, std::uint64_t fallback) {
  return get_size(key, static_cast<std::size_t>(fallback));
}

int KvReader::get_int(const std::string& key, int fallback) {
  if (!has(key)) return fallback;
  const std::string s = take(key);
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(path_ + ": key '" + key + "': '" + s + "' is not an integer");
  }
  return v;
}

bool KvReader::get_bool(const std::string& key, bool fallback) {
  if (!has(key)) return fallback;
  const std::string s = take(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(path_ + ": key '" + key + "': '" + s + "' is not a boolean");
}

void KvReader::finish() const {
  for (const auto& [key, used] : used_) {
    if (!used) throw ConfigError(path_ + ": unknown key '" + key + "'");
  }
}

RunConfig load_run_config(const std::string& path) {
  KvReader kv(path);
  RunConfig c;
  c.model = kv.get_string("model", c.model);
  c.precip = kv.require_string("precip");
  c.temp = kv.require_string("temp");
  c.gauge = kv.require_string("gauge");
  c.out_dir = kv.get_string("out_dir", c.out_dir);
  c.basin = kv.get_string("basin", "");
  c.lookback = kv.get_size("lookback", c.lookback);
  c.epochs = kv.get_size("epochs", c.epochs);
  c.batch_size = kv.get_size("batch_size", c.batch_size);
  c.train_fraction = kv.get_double("train_fraction", c.train_fraction);
  c.val_fraction = kv.get_double("val_fraction", c.val_fraction);
  c.clip_max_norm = kv.get_double("clip_max_norm", c.clip_max_norm);
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.lstm_hidden = kv.get_size("lstm_hidden", c.lstm_hidden);
  c.dropout = kv.get_double("dropout", c.dropout);
  c.seed = kv.get_u64("seed", c.seed);
  kv.finish();

  if (c.basin.empty()) {
    c.basin = std::filesystem::path(c.gauge).stem().string();
  }
  return c;
}

void validate_run_config(const RunConfig& c) {
  model_kind_from_string(c.model);  // throws on unknown kinds
  if (c.lookback == 0) throw ConfigError("lookback must be >= 1");
  if (c.epochs == 0) throw ConfigError("epochs must be >= 1");
  if (c.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0,1)");
  }
  if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0)) {
    throw ConfigError("val_fraction must lie in (0,1)");
  }
  if (c.clip_max_norm <= 0.0) throw ConfigError("clip_max_norm must be positive");
  if (c.learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
  if (c.lstm_hidden == 0) throw ConfigError("lstm_hidden must be >= 1");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
  for (const std::string& path : {c.precip, c.temp, c.gauge}) {
    if (!std::filesystem::exists(path)) {
      throw DataError("data file not found: '" + path + "'");
    }
  }
}

TrainConfig train_config_of(const RunConfig& c) {
  TrainConfig t;
  t.epochs = c.epochs;
  t.batch_size = c.batch_size;
  t.train_fraction = c.train_fraction;
  t.val_fraction = c.val_fraction;
  t.clip_max_norm = c.clip_max_norm;
  t.learning_rate = c.learning_rate;
  t.seed = c.seed;
  t.lookback = c.lookback;
  t.lstm_hidden = c.lstm_hidden;
  t.dropout = c.dropout;
  return t;
}

SyntheticBasinSpec load_synth_spec(const std::string& path) {
  KvReader kv(path);
  SyntheticBasinSpec s;
  s.height = kv.get_size("height", s.height);
  s.width = kv.get_size("width", s.width);
  s.days = kv.get_size("days", s.days);
  s.seed = kv.get_u64("seed", s.seed);
  s.start_date = kv.get_string("start_date", s.start_date);
  s.k_min = kv.get_double("k_min", s.k_min);
  s.k_max = kv.get_double("k_max", s.k_max);
  s.phi_min = kv.get_double("phi_min", s.phi_min);
  s.phi_max = kv.get_double("phi_max", s.phi_max);
  s.temperature_effect = kv.get_bool("temperature_effect", s.temperature_effect);
  s.mass_closure_mode = kv.get_bool("mass_closure_mode", s.mass_closure_mode);
  s.rain_prob = kv.get_double("rain_prob", s.rain_prob);
  s.rain_mean = kv.get_double("rain_mean", s.rain_mean);
  s.rain_seasonality = kv.get_double("rain_seasonality", s.rain_seasonality);
  s.rain_spatial_sigma = kv.get_double("rain_spatial_sigma", s.rain_spatial_sigma);
  s.rain_smooth_passes = kv.get_int("rain_smooth_passes", s.rain_smooth_passes);
  s.temp_mean_k = kv.get_double("temp_mean_k", s.temp_mean_k);
  s.temp_amplitude_k = kv.get_double("temp_amplitude_k", s.temp_amplitude_k);
  s.temp_noise_k = kv.get_double("temp_noise_k", s.temp_noise_k);
  s.temp_effect_scale_k = kv.get_double("temp_effect_scale_k", s.temp_effect_scale_k);
  kv.finish();
  validate_spec(s);
  return s;
}

}  // namespace flowcast
