// Python bindings for the core operations: synthetic basin generation,
// sample construction, KGE, the chronological split, training either
// architecture end to end, and the finite-difference gradient check.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "flowcast/data.hpp"
#include "flowcast/errors.hpp"
#include "flowcast/metrics.hpp"
#include "flowcast/model.hpp"
#include "flowcast/rng.hpp"
#include "flowcast/training.hpp"

namespace py = pybind11;
using namespace flowcast;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

GridSeries grid_from_array(const DoubleArray& values, const std::string& variable,
                           const std::string& start_date) {
  if (values.ndim() != 3) {
    throw DataError(variable + ": expected a (T,H,W) array");
  }
  GridSeries grid;
  grid.variable = variable;
  grid.start_date = start_date;
  grid.days = static_cast<std::size_t>(values.shape(0));
  grid.height = static_cast<std::size_t>(values.shape(1));
  grid.width = static_cast<std::size_t>(values.shape(2));
  std::vector<double> data(values.data(), values.data() + values.size());
  grid.values = Tensor({grid.days, grid.height, grid.width}, std::move(data));
  return grid;
}

GaugeSeries gauge_from_array(const DoubleArray& values, const std::string& start_date) {
  if (values.ndim() != 1) throw DataError("discharge: expected a (T,) array");
  GaugeSeries gauge;
  gauge.start_date = start_date;
  gauge.discharge.assign(values.data(), values.data() + values.size());
  return gauge;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::memcpy(out.mutable_data(), t.data(), t.size() * sizeof(double));
  return out;
}

py::array_t<double> array_from_vector(const std::vector<double>& v) {
  py::array_t<double> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
  std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(double));
  return out;
}

py::dict kge_dict(const KgeComponents& k) {
  py::dict d;
  d["r"] = k.r;
  d["beta"] = k.beta;
  d["gamma"] = k.gamma;
  d["kge"] = k.kge;
  return d;
}

SyntheticBasinSpec spec_from_kwargs(std::size_t height, std::size_t width, std::size_t days,
                                    std::uint64_t seed, const py::kwargs& kwargs) {
  SyntheticBasinSpec spec;
  spec.height = height;
  spec.width = width;
  spec.days = days;
  spec.seed = seed;
  for (auto item : kwargs) {
    const std::string key = py::cast<std::string>(item.first);
    if (key == "start_date") spec.start_date = py::cast<std::string>(item.second);
    else if (key == "k_min") spec.k_min = py::cast<double>(item.second);
    else if (key == "k_max") spec.k_max = py::cast<double>(item.second);
    else if (key == "phi_min") spec.phi_min = py::cast<double>(item.second);
    else if (key == "phi_max") spec.phi_max = py::cast<double>(item.second);
    else if (key == "temperature_effect") spec.temperature_effect = py::cast<bool>(item.second);
    else if (key == "mass_closure_mode") spec.mass_closure_mode = py::cast<bool>(item.second);
    else if (key == "rain_prob") spec.rain_prob = py::cast<double>(item.second);
    else if (key == "rain_mean") spec.rain_mean = py::cast<double>(item.second);
    else if (key == "rain_seasonality") spec.rain_seasonality = py::cast<double>(item.second);
    else if (key == "rain_spatial_sigma") spec.rain_spatial_sigma = py::cast<double>(item.second);
    else throw ConfigError("unknown basin spec field '" + key + "'");
  }
  validate_spec(spec);
  return spec;
}

TrainConfig config_from_args(std::size_t lookback, std::size_t epochs, std::size_t batch_size,
                             std::size_t hidden, double dropout, double learning_rate,
                             double clip_max_norm, double train_fraction, double val_fraction,
                             std::uint64_t seed) {
  TrainConfig config;
  config.lookback = lookback;
  config.epochs = epochs;
  config.batch_size = batch_size;
  config.lstm_hidden = hidden;
  config.dropout = dropout;
  config.learning_rate = learning_rate;
  config.clip_max_norm = clip_max_norm;
  config.train_fraction = train_fraction;
  config.val_fraction = val_fraction;
  config.seed = seed;
  return config;
}

}  // namespace

PYBIND11_MODULE(_flowcast, m) {
  m.doc() = "Streamflow forecasting with CNN-LSTM and LSTM models";
  m.attr("__version__") = "0.1.0";

  py::register_exception<ConfigError>(m, "FlowcastConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "FlowcastDataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "FlowcastNumericError", PyExc_ArithmeticError);
  py::register_exception<ShapeError>(m, "FlowcastShapeError", PyExc_ValueError);

  m.def(
      "generate_basin",
      [](std::size_t height, std::size_t width, std::size_t days, std::uint64_t seed,
         const py::kwargs& kwargs) {
        const SyntheticBasinSpec spec = spec_from_kwargs(height, width, days, seed, kwargs);
        const SyntheticBasin basin = generate_synthetic_basin(spec);
        py::dict out;
        out["precip"] = array_from_tensor(basin.precip.values);
        out["temp"] = array_from_tensor(basin.temp.values);
        out["discharge"] = array_from_vector(basin.gauge.discharge);
        out["start_date"] = basin.precip.start_date;
        return out;
      },
      py::arg("height") = 8, py::arg("width") = 8, py::arg("days") = 3000,
      py::arg("seed") = 0,
      "Generate a synthetic basin (linear-reservoir discharge over a seasonal, "
      "spatially correlated precipitation field).");

  m.def(
      "kge",
      [](const DoubleArray& sim, const DoubleArray& obs) {
        std::span<const double> s(sim.data(), static_cast<std::size_t>(sim.size()));
        std::span<const double> o(obs.data(), static_cast<std::size_t>(obs.size()));
        return kge_dict(kge(s, o));
      },
      py::arg("sim"), py::arg("obs"),
      "Kling-Gupta efficiency with r/beta/gamma decomposition.");

  m.def(
      "chronological_split",
      [](std::size_t n, double train_frac, double val_frac) {
        const SplitIndices s = chronological_split(n, train_frac, val_frac);
        return py::make_tuple(s.train_end, s.val_end, s.test_end);
      },
      py::arg("n"), py::arg("train_fraction") = 0.7, py::arg("val_fraction") = 0.3,
      "Chronological train/val/test boundaries as (train_end, val_end, n).");

  m.def(
      "fit_scaler",
      [](const DoubleArray& values) {
        std::span<const double> v(values.data(), static_cast<std::size_t>(values.size()));
        const Scaler s = fit_scaler(v);
        return py::make_tuple(s.mean, s.std);
      },
      py::arg("values"), "Population-convention standard scaler fit, (mean, std).");

  m.def(
      "basin_average",
      [](const DoubleArray& grid) {
        const GridSeries g = grid_from_array(grid, "grid", "2000-01-01");
        return array_from_vector(basin_average(g));
      },
      py::arg("grid"), "Daily mean over the basin grid, (T,H,W) -> (T,).");

  m.def(
      "make_video_samples",
      [](const DoubleArray& precip, const DoubleArray& temp, const DoubleArray& discharge,
         std::size_t lookback) {
        const GridSeries p = grid_from_array(precip, "precipitation", "2000-01-01");
        const GridSeries t = grid_from_array(temp, "temperature_2m", "2000-01-01");
        const GaugeSeries q = gauge_from_array(discharge, "2000-01-01");
        std::vector<Sample> samples = make_video_samples(p, t, q, lookback);

        py::array_t<double> videos({samples.size(), lookback, std::size_t(3), p.height,
                                    p.width});
        py::array_t<double> targets(
            std::vector<py::ssize_t>{static_cast<py::ssize_t>(samples.size())});
        double* v = videos.mutable_data();
        double* tg = targets.mutable_data();
        const std::size_t per = lookback * 3 * p.height * p.width;
        for (std::size_t i = 0; i < samples.size(); ++i) {
          std::memcpy(v + i * per, samples[i].video.data(), per * sizeof(double));
          tg[i] = samples[i].target;
        }
        py::dict out;
        out["videos"] = videos;
        out["targets"] = targets;
        return out;
      },
      py::arg("precip"), py::arg("temp"), py::arg("discharge"), py::arg("lookback") = 182,
      "Supervised (L,3,H,W) videos with broadcast lagged streamflow, plus targets.");

  m.def(
      "count_parameters",
      [](const std::string& model, std::size_t height, std::size_t width,
         std::size_t lookback, std::size_t hidden) {
        Rng rng = derive_rng(0, 0);
        if (model_kind_from_string(model) == ModelKind::kCnnLstm) {
          CnnLstmConfig config;
          config.lookback = lookback;
          config.height = height;
          config.width = width;
          config.lstm_hidden = hidden;
          return count_parameters(build_cnn_lstm(config, rng));
        }
        LstmBaselineConfig config;
        config.lookback = lookback;
        config.lstm_hidden = hidden;
        return count_parameters(build_lstm_baseline(config, rng));
      },
      py::arg("model"), py::arg("height") = 8, py::arg("width") = 8,
      py::arg("lookback") = 182, py::arg("hidden") = 80);

  m.def(
      "train_model",
      [](const DoubleArray& precip, const DoubleArray& temp, const DoubleArray& discharge,
         const std::string& model, std::size_t lookback, std::size_t epochs,
         std::size_t batch_size, std::size_t hidden, double dropout, double learning_rate,
         double clip_max_norm, double train_fraction, double val_fraction,
         std::uint64_t seed) {
        const GridSeries p = grid_from_array(precip, "precipitation", "2000-01-01");
        const GridSeries t = grid_from_array(temp, "temperature_2m", "2000-01-01");
        const GaugeSeries q = gauge_from_array(discharge, "2000-01-01");
        const ModelKind kind = model_kind_from_string(model);
        const TrainConfig config =
            config_from_args(lookback, epochs, batch_size, hidden, dropout, learning_rate,
                             clip_max_norm, train_fraction, val_fraction, seed);

        PreparedData data = prepare_dataset(kind, p, t, q, config);
        TrainResult result;
        {
          py::gil_scoped_release release;
          result = train(kind, data, config);
        }

        std::vector<double> scaled = predict_range(result.params, data, config,
                                                   data.split.val_end, data.split.test_end);
        py::array_t<double> predictions(
            std::vector<py::ssize_t>{static_cast<py::ssize_t>(scaled.size())});
        py::array_t<double> observations(
            std::vector<py::ssize_t>{static_cast<py::ssize_t>(scaled.size())});
        for (std::size_t i = 0; i < scaled.size(); ++i) {
          predictions.mutable_data()[i] = inverse_scale(scaled[i], data.flow_scaler);
          observations.mutable_data()[i] = data.targets_raw[data.split.val_end + i];
        }
        std::span<const double> pred(predictions.data(),
                                     static_cast<std::size_t>(predictions.size()));
        std::span<const double> obs(observations.data(),
                                    static_cast<std::size_t>(observations.size()));

        py::array_t<double> history({result.history.size(), std::size_t(2)});
        for (std::size_t i = 0; i < result.history.size(); ++i) {
          history.mutable_data()[2 * i] = result.history[i].train_loss;
          history.mutable_data()[2 * i + 1] = result.history[i].val_loss;
        }

        py::dict out;
        out["history"] = history;  // (epochs, 2): train loss, val loss
        out["test_kge"] = kge_dict(kge(pred, obs));
        out["predictions"] = predictions;
        out["observations"] = observations;
        out["parameter_count"] = count_parameters(result.params);
        return out;
      },
      py::arg("precip"), py::arg("temp"), py::arg("discharge"), py::arg("model") = "lstm",
      py::arg("lookback") = 182, py::arg("epochs") = 100, py::arg("batch_size") = 50,
      py::arg("hidden") = 80, py::arg("dropout") = 0.3, py::arg("learning_rate") = 1e-3,
      py::arg("clip_max_norm") = 1.0, py::arg("train_fraction") = 0.7,
      py::arg("val_fraction") = 0.3, py::arg("seed") = 0,
      "Train one model on in-memory arrays; returns history, test-partition KGE and "
      "physical-unit predictions.");

  m.def(
      "grad_check",
      [](const std::string& model, std::size_t grid, std::size_t lookback, std::size_t hidden,
         double epsilon, std::uint64_t seed) {
        Rng rng = derive_rng(seed, 30);
        if (model_kind_from_string(model) == ModelKind::kCnnLstm) {
          CnnLstmConfig config;
          config.lookback = lookback;
          config.height = grid;
          config.width = grid;
          config.lstm_hidden = hidden;
          ModelParams params = build_cnn_lstm(config, rng);
          Tensor video({lookback, 3, grid, grid});
          for (std::size_t i = 0; i < video.size(); ++i) video[i] = normal01(rng);
          return grad_check(params, make_cnn_lstm_loss(config, video, normal01(rng), true,
                                                       seed),
                            epsilon)
              .max_rel_error;
        }
        LstmBaselineConfig config;
        config.lookback = lookback;
        config.lstm_hidden = hidden;
        ModelParams params = build_lstm_baseline(config, rng);
        Tensor seq({lookback, 3});
        for (std::size_t i = 0; i < seq.size(); ++i) seq[i] = normal01(rng);
        return grad_check(params,
                          make_lstm_baseline_loss(config, seq, normal01(rng), true, seed),
                          epsilon)
            .max_rel_error;
      },
      py::arg("model") = "cnn-lstm", py::arg("grid") = 3, py::arg("lookback") = 3,
      py::arg("hidden") = 4, py::arg("epsilon") = 1e-5, py::arg("seed") = 7,
      "Max relative error between analytic and central-difference gradients.");
}
