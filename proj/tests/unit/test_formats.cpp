#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "flowcast/checkpoint.hpp"
#include "flowcast/config.hpp"
#include "flowcast/errors.hpp"
#include "flowcast/rng.hpp"

using namespace flowcast;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("flowcast_fmt_" + name);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

Checkpoint sample_checkpoint() {
  Checkpoint ckpt;
  ckpt.config.model = "lstm";
  ckpt.config.precip = "p.grid";
  ckpt.config.temp = "t.grid";
  ckpt.config.gauge = "g.csv";
  ckpt.config.basin = "demo";
  ckpt.config.lookback = 12;
  ckpt.config.epochs = 4;
  ckpt.config.seed = 99;
  ckpt.precip_scaler = {1.25, 0.5};
  ckpt.temp_scaler = {280.125, 9.75};
  ckpt.flow_scaler = {2.0, 1.0 / 3.0};
  ckpt.history = {{1, 0.9, 1.1}, {2, 0.7, 0.95}};
  ckpt.test_kge = {0.91, 1.02, 0.98, 0.88};

  Rng rng = derive_rng(400, 0);
  LstmBaselineConfig mc;
  mc.lookback = 12;
  mc.lstm_hidden = 5;
  ckpt.params = build_lstm_baseline(mc, rng);
  return ckpt;
}

}  // namespace

TEST_CASE("checkpoint round-trips bitwise") {
  const Checkpoint ckpt = sample_checkpoint();
  const auto path = temp_file("roundtrip.ckpt");
  save_checkpoint(ckpt, path.string());
  const Checkpoint loaded = load_checkpoint(path.string());

  CHECK(loaded.config.model == ckpt.config.model);
  CHECK(loaded.config.basin == ckpt.config.basin);
  CHECK(loaded.config.lookback == ckpt.config.lookback);
  CHECK(loaded.config.seed == ckpt.config.seed);
  CHECK(std::memcmp(&loaded.flow_scaler, &ckpt.flow_scaler, sizeof(Scaler)) == 0);
  CHECK(std::memcmp(&loaded.precip_scaler, &ckpt.precip_scaler, sizeof(Scaler)) == 0);
  REQUIRE(loaded.history.size() == ckpt.history.size());
  CHECK(std::memcmp(&loaded.history[1].val_loss, &ckpt.history[1].val_loss, 8) == 0);
  CHECK(std::memcmp(&loaded.test_kge, &ckpt.test_kge, sizeof(KgeComponents)) == 0);

  REQUIRE(loaded.params.size() == ckpt.params.size());
  for (std::size_t e = 0; e < ckpt.params.size(); ++e) {
    auto [name, t] = ckpt.params.entry(e);
    const Tensor& other = loaded.params.at(name);
    REQUIRE(other.shape() == t.shape());
    CHECK(std::memcmp(other.data(), t.data(), t.size() * sizeof(double)) == 0);
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader rejects tampered files") {
  const Checkpoint ckpt = sample_checkpoint();
  const auto path = temp_file("tampered.ckpt");

  SUBCASE("truncated payload") {
    save_checkpoint(ckpt, path.string());
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 16);
    CHECK_THROWS_AS(load_checkpoint(path.string()), DataError);
  }

  SUBCASE("wrong format marker") {
    write_file(path, "{\"format\":\"something-else\"}\n");
    CHECK_THROWS_AS(load_checkpoint(path.string()), DataError);
  }

  SUBCASE("not json at all") {
    write_file(path, "????\n");
    CHECK_THROWS_AS(load_checkpoint(path.string()), DataError);
  }

  std::filesystem::remove(path);
}

TEST_CASE("run config parsing applies defaults and derives the basin id") {
  const auto path = temp_file("run.cfg");
  write_file(path, R"(# demo run
model = lstm
precip = /data/precip.grid
temp = /data/temp.grid
gauge = /data/site_042.csv
seed = 11
epochs = 20
)");
  const RunConfig c = load_run_config(path.string());
  CHECK(c.model == "lstm");
  CHECK(c.basin == "site_042");
  CHECK(c.epochs == 20);
  CHECK(c.batch_size == 50);
  CHECK(c.lookback == 182);
  CHECK(c.train_fraction == 0.7);
  CHECK(c.val_fraction == 0.3);
  CHECK(c.dropout == 0.3);
  CHECK(c.lstm_hidden == 80);
  CHECK(c.seed == 11);
  std::filesystem::remove(path);
}

TEST_CASE("config errors: unknown keys, duplicates, malformed values, missing files") {
  const auto path = temp_file("bad.cfg");

  SUBCASE("unknown key") {
    write_file(path, "precip=a\ntemp=b\ngauge=c\nlerning_rate=0.1\n");
    CHECK_THROWS_WITH_AS(load_run_config(path.string()),
                         doctest::Contains("unknown key 'lerning_rate'"), ConfigError);
  }

  SUBCASE("duplicate key") {
    write_file(path, "precip=a\nprecip=b\n");
    CHECK_THROWS_AS(load_run_config(path.string()), ConfigError);
  }

  SUBCASE("missing required key") {
    write_file(path, "precip=a\ntemp=b\n");
    CHECK_THROWS_WITH_AS(load_run_config(path.string()),
                         doctest::Contains("missing required key 'gauge'"), ConfigError);
  }

  SUBCASE("malformed number") {
    write_file(path, "precip=a\ntemp=b\ngauge=c\nepochs=twenty\n");
    CHECK_THROWS_AS(load_run_config(path.string()), ConfigError);
  }

  SUBCASE("nonexistent data file") {
    write_file(path, "precip=/nope/p.grid\ntemp=/nope/t.grid\ngauge=/nope/g.csv\n");
    RunConfig c = load_run_config(path.string());
    CHECK_THROWS_WITH_AS(validate_run_config(c), doctest::Contains("/nope/p.grid"), DataError);
  }

  SUBCASE("out-of-range fraction") {
    write_file(path, "precip=a\ntemp=b\ngauge=c\ntrain_fraction=1.5\n");
    RunConfig c = load_run_config(path.string());
    CHECK_THROWS_AS(validate_run_config(c), ConfigError);
  }

  std::filesystem::remove(path);
}

TEST_CASE("synthetic spec files parse and validate") {
  const auto path = temp_file("synth.cfg");
  write_file(path, R"(height = 6
width = 5
days = 300
seed = 21
k_min = 0.05
k_max = 0.3
rain_prob = 0.45
)");
  const SyntheticBasinSpec spec = load_synth_spec(path.string());
  CHECK(spec.height == 6);
  CHECK(spec.width == 5);
  CHECK(spec.days == 300);
  CHECK(spec.seed == 21);
  CHECK(spec.k_min == 0.05);

  SUBCASE("k outside (0,1) fails validation") {
    write_file(path, "k_min = 0.2\nk_max = 1.0\n");
    CHECK_THROWS_AS(load_synth_spec(path.string()), ConfigError);
  }

  std::filesystem::remove(path);
}
