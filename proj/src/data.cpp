#include "flowcast/data.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "flowcast/dates.hpp"
#include "flowcast/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "grid payloads are little-endian float64");

namespace flowcast {

std::vector<double> basin_average(const GridSeries& grid) {
  const std::size_t cells = grid.height * grid.width;
  std::vector<double> out(grid.days);
  for (std::size_t t = 0; t < grid.days; ++t) {
    const double* frame = grid.frame(t);
    double sum = 0.0;
    for (std::size_t c = 0; c < cells; ++c) sum += frame[c];
    out[t] = sum / static_cast<double>(cells);
  }
  return out;
}

Tensor broadcast_streamflow(double q, std::size_t height, std::size_t width) {
  return Tensor::full({height, width}, q);
}

void check_alignment(const GridSeries& precip, const GridSeries& temp,
                     const GaugeSeries& gauge) {
  if (days_from_civil(parse_date(precip.start_date)) !=
      days_from_civil(parse_date(temp.start_date))) {
    throw DataError("alignment: precip starts " + precip.start_date + " but temp starts " +
                    temp.start_date);
  }
  if (days_from_civil(parse_date(precip.start_date)) !=
      days_from_civil(parse_date(gauge.start_date))) {
    throw DataError("alignment: precip starts " + precip.start_date + " but gauge starts " +
                    gauge.start_date);
  }
  if (precip.days != temp.days || precip.days != gauge.days()) {
    throw DataError("alignment: series lengths differ (precip " + std::to_string(precip.days) +
                    ", temp " + std::to_string(temp.days) + ", gauge " +
                    std::to_string(gauge.days()) + ")");
  }
  if (precip.height != temp.height || precip.width != temp.width) {
    throw DataError("alignment: grid extents differ (precip " + std::to_string(precip.height) +
                    "x" + std::to_string(precip.width) + ", temp " +
                    std::to_string(temp.height) + "x" + std::to_string(temp.width) + ")");
  }
}

namespace {
void check_window(std::size_t days, std::size_t lookback) {
  if (lookback == 0) throw DataError("samples: lookback must be >= 1");
  if (days <= lookback) {
    throw DataError("samples: series length " + std::to_string(days) +
                    " does not exceed lookback " + std::to_string(lookback));
  }
}
}  // namespace

std::vector<Sample> make_video_samples(const GridSeries& precip, const GridSeries& temp,
                                       const GaugeSeries& gauge, std::size_t lookback) {
  check_alignment(precip, temp, gauge);
  check_window(precip.days, lookback);

  const std::size_t height = precip.height, width = precip.width;
  const std::size_t cells = height * width;
  const std::size_t frame_len = 3 * cells;

  std::vector<Sample> samples;
  samples.reserve(precip.days - lookback);
  for (std::size_t t = lookback; t < precip.days; ++t) {
    Sample s;
    s.video = Tensor({lookback, 3, height, width});
    for (std::size_t j = 0; j < lookback; ++j) {
      const std::size_t day = t - lookback + j;
      double* frame = s.video.data() + j * frame_len;
      std::memcpy(frame, precip.frame(day), cells * sizeof(double));
      std::memcpy(frame + cells, temp.frame(day), cells * sizeof(double));
      const double q = gauge.discharge[day];
      for (std::size_t c = 0; c < cells; ++c) frame[2 * cells + c] = q;
    }
    s.target = gauge.discharge[t];
    s.target_day = t;
    samples.push_back(std::move(s));
  }
  return samples;
}

std::vector<SequenceSample> make_sequence_samples(const GridSeries& precip,
                                                  const GridSeries& temp,
                                                  const GaugeSeries& gauge,
                                                  std::size_t lookback) {
  check_alignment(precip, temp, gauge);
  check_window(precip.days, lookback);

  const std::vector<double> precip_mean = basin_average(precip);
  const std::vector<double> temp_mean = basin_average(temp);

  std::vector<SequenceSample> samples;
  samples.reserve(precip.days - lookback);
  for (std::size_t t = lookback; t < precip.days; ++t) {
    SequenceSample s;
    s.sequence = Tensor({lookback, 3});
    for (std::size_t j = 0; j < lookback; ++j) {
      const std::size_t day = t - lookback + j;
      s.sequence[j * 3 + 0] = precip_mean[day];
      s.sequence[j * 3 + 1] = temp_mean[day];
      s.sequence[j * 3 + 2] = gauge.discharge[day];
    }
    s.target = gauge.discharge[t];
    s.target_day = t;
    samples.push_back(std::move(s));
  }
  return samples;
}

// ---------------------------------------------------------------------------
// Synthetic basin

void validate_spec(const SyntheticBasinSpec& spec) {
  auto fail = [](const std::string& msg) { throw ConfigError("synthetic spec: " + msg); };
  if (spec.height == 0 || spec.width == 0) fail("grid extents must be >= 1");
  if (spec.days < 2) fail("days must be >= 2");
  if (!(spec.k_min > 0.0 && spec.k_max < 1.0 && spec.k_min <= spec.k_max)) {
    fail("storage coefficient range must satisfy 0 < k_min <= k_max < 1");
  }
  if (!(spec.phi_min > 0.0 && spec.phi_max <= 1.0 && spec.phi_min <= spec.phi_max)) {
    fail("effective-rain range must satisfy 0 < phi_min <= phi_max <= 1");
  }
  if (!(spec.rain_prob >= 0.0 && spec.rain_prob <= 1.0)) fail("rain_prob must be in [0,1]");
  if (spec.rain_mean < 0.0) fail("rain_mean must be non-negative");
  if (!(spec.rain_seasonality >= 0.0 && spec.rain_seasonality < 1.0)) {
    fail("rain_seasonality must be in [0,1)");
  }
  if (spec.rain_spatial_sigma < 0.0) fail("rain_spatial_sigma must be non-negative");
  if (spec.rain_smooth_passes < 0) fail("rain_smooth_passes must be non-negative");
  if (spec.temp_effect_scale_k <= 0.0) fail("temp_effect_scale_k must be positive");
  parse_date(spec.start_date);
}

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kYearDays = 365.25;

// 3x3 box blur with edge clamping; used to spatially correlate noise fields.
void box_blur(std::vector<double>& field, std::size_t h, std::size_t w) {
  std::vector<double> out(field.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double sum = 0.0;
      int count = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + dy;
          const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + dx;
          if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h) || xx < 0 ||
              xx >= static_cast<std::ptrdiff_t>(w)) {
            continue;
          }
          sum += field[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
          ++count;
        }
      }
      out[y * w + x] = sum / count;
    }
  }
  field = std::move(out);
}

void normalize_field(std::vector<double>& field) {
  double mean = 0.0;
  for (double v : field) mean += v;
  mean /= static_cast<double>(field.size());
  double var = 0.0;
  for (double v : field) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(field.size()));
  if (sd < 1e-12) {
    for (double& v : field) v = 0.0;
    return;
  }
  for (double& v : field) v = (v - mean) / sd;
}

// Per-cell parameter fields, deterministic in (seed, grid).
void draw_cell_fields(const SyntheticBasinSpec& spec, std::vector<double>& k,
                      std::vector<double>& phi) {
  Rng rng = derive_rng(spec.seed, /*tag=*/1);
  const std::size_t cells = spec.height * spec.width;
  k.resize(cells);
  phi.resize(cells);
  for (std::size_t c = 0; c < cells; ++c) k[c] = uniform(rng, spec.k_min, spec.k_max);
  for (std::size_t c = 0; c < cells; ++c) phi[c] = uniform(rng, spec.phi_min, spec.phi_max);
}

}  // namespace

GaugeSeries route_reservoir(const GridSeries& precip, const GridSeries& temp,
                            const SyntheticBasinSpec& spec, RoutingDiagnostics* diag) {
  validate_spec(spec);
  if (precip.days != temp.days || precip.height != temp.height || precip.width != temp.width) {
    throw DataError("route_reservoir: precip and temp grids are misaligned");
  }
  const std::size_t cells = precip.height * precip.width;
  std::vector<double> k, phi_cell;
  draw_cell_fields(spec, k, phi_cell);

  // Start near the storage a mean wet flux would sustain; arbitrary but
  // positive and deterministic.
  std::vector<double> storage(cells);
  const double mean_flux = std::max(spec.rain_prob * spec.rain_mean, 1e-3);
  for (std::size_t c = 0; c < cells; ++c) storage[c] = 0.5 * mean_flux / k[c];

  if (diag) {
    diag->initial_storage = storage;
    diag->cumulative_inflow.assign(cells, 0.0);
    diag->cumulative_outflow.assign(cells, 0.0);
  }

  GaugeSeries gauge;
  gauge.start_date = precip.start_date;
  gauge.discharge.resize(precip.days);

  for (std::size_t t = 0; t < precip.days; ++t) {
    const double* p = precip.frame(t);
    const double* tk = temp.frame(t);
    double total_out = 0.0;
    for (std::size_t c = 0; c < cells; ++c) {
      double phi;
      if (spec.mass_closure_mode) {
        phi = 1.0;
      } else if (spec.temperature_effect) {
        const double z = (tk[c] - spec.temp_mean_k) / spec.temp_effect_scale_k;
        phi = phi_cell[c] / (1.0 + std::exp(-z));
      } else {
        phi = phi_cell[c];
      }
      const double inflow = phi * p[c];
      const double outflow = k[c] * storage[c];
      storage[c] += inflow - outflow;
      total_out += outflow;
      if (diag) {
        diag->cumulative_inflow[c] += inflow;
        diag->cumulative_outflow[c] += outflow;
      }
    }
    gauge.discharge[t] = total_out / static_cast<double>(cells);
  }

  if (diag) diag->final_storage = storage;
  return gauge;
}

SyntheticBasin generate_synthetic_basin(const SyntheticBasinSpec& spec) {
  validate_spec(spec);
  const std::size_t h = spec.height, w = spec.width, cells = h * w;

  SyntheticBasin basin;
  basin.precip.variable = "precipitation";
  basin.precip.start_date = spec.start_date;
  basin.precip.days = spec.days;
  basin.precip.height = h;
  basin.precip.width = w;
  basin.precip.values = Tensor({spec.days, h, w});

  basin.temp = basin.precip;
  basin.temp.variable = "temperature_2m";

  // Precipitation: seasonal wet-day process with a spatially correlated
  // lognormal field per wet day.
  {
    Rng rng = derive_rng(spec.seed, /*tag=*/2);
    std::vector<double> field(cells);
    const double sigma = spec.rain_spatial_sigma;
    for (std::size_t t = 0; t < spec.days; ++t) {
      const double season =
          1.0 + spec.rain_seasonality * std::sin(kTwoPi * (static_cast<double>(t) / kYearDays));
      const bool wet = uniform01(rng) < spec.rain_prob;
      double* frame = basin.precip.values.data() + t * cells;
      if (!wet || spec.rain_mean <= 0.0) {
        for (std::size_t c = 0; c < cells; ++c) frame[c] = 0.0;
        continue;
      }
      const double intensity = exponential(rng, spec.rain_mean * season);
      for (std::size_t c = 0; c < cells; ++c) field[c] = normal01(rng);
      for (int pass = 0; pass < spec.rain_smooth_passes; ++pass) box_blur(field, h, w);
      normalize_field(field);
      for (std::size_t c = 0; c < cells; ++c) {
        frame[c] = intensity * std::exp(sigma * field[c] - 0.5 * sigma * sigma);
      }
    }
  }

  // Temperature: seasonal cycle + smooth per-cell offsets + daily noise.
  {
    Rng rng = derive_rng(spec.seed, /*tag=*/3);
    std::vector<double> lapse(cells);
    for (std::size_t c = 0; c < cells; ++c) lapse[c] = normal01(rng);
    box_blur(lapse, h, w);
    normalize_field(lapse);

    for (std::size_t t = 0; t < spec.days; ++t) {
      const double seasonal =
          spec.temp_mean_k +
          spec.temp_amplitude_k *
              std::sin(kTwoPi * (static_cast<double>(t) / kYearDays - 0.25));
      double* frame = basin.temp.values.data() + t * cells;
      const double day_noise = spec.temp_noise_k * normal01(rng);
      for (std::size_t c = 0; c < cells; ++c) {
        frame[c] = seasonal + 1.2 * lapse[c] + day_noise +
                   0.3 * spec.temp_noise_k * normal01(rng);
      }
    }
  }

  basin.gauge = route_reservoir(basin.precip, basin.temp, spec);
  return basin;
}

// ---------------------------------------------------------------------------
// File I/O

namespace {
std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}
}  // namespace

void save_grid_series(const GridSeries& grid, const std::string& path) {
  nlohmann::json header = {{"variable", grid.variable},
                           {"start_date", grid.start_date},
                           {"T", grid.days},
                           {"H", grid.height},
                           {"W", grid.width}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write grid file '" + path + "'");
  out << header.dump() << "\n";
  out.write(reinterpret_cast<const char*>(grid.values.data()),
            static_cast<std::streamsize>(grid.values.size() * sizeof(double)));
  if (!out) throw DataError("short write to grid file '" + path + "'");
}

GridSeries load_grid_series(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open grid file '" + path + "'");
  std::string header_line;
  if (!std::getline(in, header_line)) {
    throw DataError("grid file '" + path + "': missing header line");
  }
  nlohmann::json header = nlohmann::json::parse(header_line, nullptr, false);
  if (header.is_discarded() || !header.is_object()) {
    throw DataError("grid file '" + path + "': malformed header");
  }
  GridSeries grid;
  try {
    grid.variable = header.at("variable").get<std::string>();
    grid.start_date = header.at("start_date").get<std::string>();
    grid.days = header.at("T").get<std::size_t>();
    grid.height = header.at("H").get<std::size_t>();
    grid.width = header.at("W").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("grid file '" + path + "': malformed header (" + e.what() + ")");
  }
  parse_date(grid.start_date);
  if (grid.days == 0 || grid.height == 0 || grid.width == 0) {
    throw DataError("grid file '" + path + "': header declares empty grid");
  }

  std::vector<char> payload((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
  const std::size_t expected = grid.days * grid.height * grid.width;
  if (payload.size() != expected * sizeof(double)) {
    throw DataError("grid file '" + path + "': payload has " +
                    std::to_string(payload.size() / sizeof(double)) +
                    " values but header declares " + std::to_string(expected));
  }
  std::vector<double> values(expected);
  std::memcpy(values.data(), payload.data(), payload.size());
  grid.values = Tensor({grid.days, grid.height, grid.width}, std::move(values));
  if (!grid.values.all_finite()) {
    throw DataError("grid file '" + path + "': non-finite values in payload");
  }
  return grid;
}

void save_gauge_series(const GaugeSeries& gauge, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write gauge file '" + path + "'");
  out << "date,discharge_m3s\n";
  for (std::size_t t = 0; t < gauge.discharge.size(); ++t) {
    out << date_plus_days(gauge.start_date, static_cast<std::int64_t>(t)) << ","
        << format_double(gauge.discharge[t]) << "\n";
  }
  if (!out) throw DataError("short write to gauge file '" + path + "'");
}

GaugeSeries load_gauge_series(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open gauge file '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "date,discharge_m3s") {
    throw DataError("gauge file '" + path + "': expected header 'date,discharge_m3s'");
  }
  GaugeSeries gauge;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos) {
      throw DataError("gauge file '" + path + "': malformed row '" + line + "'");
    }
    const std::string date = line.substr(0, comma);
    const std::string value_str = line.substr(comma + 1);
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(value_str.data(), value_str.data() + value_str.size(),
                                     value);
    if (ec != std::errc() || ptr != value_str.data() + value_str.size()) {
      throw DataError("gauge file '" + path + "': bad discharge '" + value_str + "'");
    }
    if (!std::isfinite(value) || value < 0.0) {
      throw DataError("gauge file '" + path + "': discharge must be finite and non-negative");
    }
    if (row == 0) {
      gauge.start_date = date;
      parse_date(date);
    } else if (date != date_plus_days(gauge.start_date, static_cast<std::int64_t>(row))) {
      throw DataError("gauge file '" + path + "': dates are not consecutive at row " +
                      std::to_string(row + 1));
    }
    gauge.discharge.push_back(value);
    ++row;
  }
  if (gauge.discharge.empty()) throw DataError("gauge file '" + path + "': no data rows");
  return gauge;
}

}  // namespace flowcast
