#include "flowcast/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "flowcast/errors.hpp"

namespace flowcast {

namespace {

using nlohmann::json;

json config_to_json(const RunConfig& c) {
  return json{{"model", c.model},
              {"precip", c.precip},
              {"temp", c.temp},
              {"gauge", c.gauge},
              {"out_dir", c.out_dir},
              {"basin", c.basin},
              {"lookback", c.lookback},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"train_fraction", c.train_fraction},
              {"val_fraction", c.val_fraction},
              {"clip_max_norm", c.clip_max_norm},
              {"learning_rate", c.learning_rate},
              {"lstm_hidden", c.lstm_hidden},
              {"dropout", c.dropout},
              {"seed", c.seed}};
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  c.model = j.at("model").get<std::string>();
  c.precip = j.at("precip").get<std::string>();
  c.temp = j.at("temp").get<std::string>();
  c.gauge = j.at("gauge").get<std::string>();
  c.out_dir = j.at("out_dir").get<std::string>();
  c.basin = j.at("basin").get<std::string>();
  c.lookback = j.at("lookback").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.train_fraction = j.at("train_fraction").get<double>();
  c.val_fraction = j.at("val_fraction").get<double>();
  c.clip_max_norm = j.at("clip_max_norm").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

json scaler_to_json(const Scaler& s) { return json{{"mean", s.mean}, {"std", s.std}}; }

Scaler scaler_from_json(const json& j) {
  return Scaler{j.at("mean").get<double>(), j.at("std").get<double>()};
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json manifest = json::array();
  std::size_t total = 0;
  for (const auto& [name, tensor] : ckpt.params.items()) {
    manifest.push_back({{"name", name}, {"shape", tensor.shape()}});
    total += tensor.size();
  }

  json history = json::array();
  for (const EpochRecord& r : ckpt.history) {
    history.push_back({r.epoch, r.train_loss, r.val_loss});
  }

  json header = {{"format", "flowcast-checkpoint"},
                 {"version", 1},
                 {"config", config_to_json(ckpt.config)},
                 {"scalers",
                  {{"precip", scaler_to_json(ckpt.precip_scaler)},
                   {"temp", scaler_to_json(ckpt.temp_scaler)},
                   {"flow", scaler_to_json(ckpt.flow_scaler)}}},
                 {"history", history},
                 {"test_kge",
                  {{"r", ckpt.test_kge.r},
                   {"beta", ckpt.test_kge.beta},
                   {"gamma", ckpt.test_kge.gamma},
                   {"kge", ckpt.test_kge.kge}}},
                 {"params", manifest},
                 {"value_count", total}};

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  out << header.dump() << "\n";
  for (const auto& [name, tensor] : ckpt.params.items()) {
    out.write(reinterpret_cast<const char*>(tensor.data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(double)));
  }
  if (!out) throw DataError("short write to checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  std::string header_line;
  if (!std::getline(in, header_line)) {
    throw DataError("checkpoint '" + path + "': missing header line");
  }
  json header = json::parse(header_line, nullptr, false);
  if (header.is_discarded() || !header.is_object() ||
      header.value("format", "") != "flowcast-checkpoint") {
    throw DataError("checkpoint '" + path + "': not a flowcast checkpoint");
  }

  Checkpoint ckpt;
  try {
    ckpt.config = config_from_json(header.at("config"));
    ckpt.precip_scaler = scaler_from_json(header.at("scalers").at("precip"));
    ckpt.temp_scaler = scaler_from_json(header.at("scalers").at("temp"));
    ckpt.flow_scaler = scaler_from_json(header.at("scalers").at("flow"));
    for (const json& row : header.at("history")) {
      ckpt.history.push_back(
          EpochRecord{row.at(0).get<std::size_t>(), row.at(1).get<double>(),
                      row.at(2).get<double>()});
    }
    const json& k = header.at("test_kge");
    ckpt.test_kge = KgeComponents{k.at("r").get<double>(), k.at("beta").get<double>(),
                                  k.at("gamma").get<double>(), k.at("kge").get<double>()};

    std::size_t total = 0;
    std::vector<std::pair<std::string, Shape>> manifest;
    for (const json& entry : header.at("params")) {
      Shape shape = entry.at("shape").get<Shape>();
      manifest.emplace_back(entry.at("name").get<std::string>(), shape);
      total += shape_numel(shape);
    }
    if (header.at("value_count").get<std::size_t>() != total) {
      throw DataError("checkpoint '" + path + "': manifest value count mismatch");
    }

    std::vector<char> payload((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
    if (payload.size() != total * sizeof(double)) {
      throw DataError("checkpoint '" + path + "': payload has " +
                      std::to_string(payload.size()) + " bytes but manifest declares " +
                      std::to_string(total * sizeof(double)));
    }
    const char* cursor = payload.data();
    for (auto& [name, shape] : manifest) {
      std::vector<double> values(shape_numel(shape));
      std::memcpy(values.data(), cursor, values.size() * sizeof(double));
      cursor += values.size() * sizeof(double);
      ckpt.params.add(name, Tensor(shape, std::move(values)));
    }
  } catch (const json::exception& e) {
    throw DataError("checkpoint '" + path + "': malformed header (" + std::string(e.what()) +
                    ")");
  }
  return ckpt;
}

}  // namespace flowcast
