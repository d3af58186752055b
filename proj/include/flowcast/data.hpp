#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowcast/rng.hpp"
#include "flowcast/tensor.hpp"

namespace flowcast {

/// Daily T x H x W field for one meteorological variable over a basin grid.
struct GridSeries {
  std::string variable;
  std::string start_date;  // ISO-8601
  std::size_t days = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  Tensor values;  // (T,H,W)

  double at(std::size_t t, std::size_t y, std::size_t x) const {
    return values[(t * height + y) * width + x];
  }
  const double* frame(std::size_t t) const { return values.data() + t * height * width; }
};

/// Daily gauge discharge series aligned with the companion grids.
struct GaugeSeries {
  std::string start_date;
  std::vector<double> discharge;  // m^3/s, non-negative
  std::size_t days() const { return discharge.size(); }
};

/// One supervised example: an (L,C,H,W) video of the lookback window plus the
/// next day's discharge. Channels are ordered precipitation, temperature,
/// streamflow; the streamflow channel is spatially constant per frame.
struct Sample {
  Tensor video;      // (L,C,H,W)
  double target;     // discharge at day t
  std::size_t target_day = 0;
};

struct SequenceSample {
  Tensor sequence;   // (L,3): basin-mean precip, basin-mean temp, lagged discharge
  double target;
  std::size_t target_day = 0;
};

std::vector<double> basin_average(const GridSeries& grid);
Tensor broadcast_streamflow(double q, std::size_t height, std::size_t width);

/// Validates that both grids and the gauge share start date, length and grid
/// extents; throws DataError naming the mismatch otherwise.
void check_alignment(const GridSeries& precip, const GridSeries& temp,
                     const GaugeSeries& gauge);

/// Samples for target days L..T-1. The window for target day t stacks frames
/// for days t-L..t-1; each frame carries that day's precip and temperature
/// grids plus that day's discharge broadcast across the grid.
std::vector<Sample> make_video_samples(const GridSeries& precip, const GridSeries& temp,
                                       const GaugeSeries& gauge, std::size_t lookback = 182);

std::vector<SequenceSample> make_sequence_samples(const GridSeries& precip,
                                                  const GridSeries& temp,
                                                  const GaugeSeries& gauge,
                                                  std::size_t lookback = 182);

// ---------------------------------------------------------------------------
// Synthetic basin generator: a cellwise linear reservoir driven by a seasonal,
// spatially correlated precipitation process. Heterogeneous per-cell storage
// coefficients and effective-rain fractions give the grid a spatial signal
// that basin averaging destroys.

struct SyntheticBasinSpec {
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t days = 3000;
  std::uint64_t seed = 0;
  std::string start_date = "2000-01-01";

  double k_min = 0.03;   // per-cell storage coefficient range, (0,1)
  double k_max = 0.35;
  double phi_min = 0.25;  // per-cell effective-rain fraction range
  double phi_max = 0.95;
  bool temperature_effect = true;  // modulate phi by temperature
  bool mass_closure_mode = false;  // phi = 1, no temperature effect

  double rain_prob = 0.4;         // wet-day probability
  double rain_mean = 6.0;         // mean wet-day intensity
  double rain_seasonality = 0.5;  // seasonal amplitude in [0,1)
  double rain_spatial_sigma = 0.6;
  int rain_smooth_passes = 2;

  double temp_mean_k = 283.0;
  double temp_amplitude_k = 12.0;
  double temp_noise_k = 1.5;
  double temp_effect_scale_k = 8.0;  // width of the phi response
};

/// Throws ConfigError if the spec is out of range (k or phi outside (0,1), ...).
void validate_spec(const SyntheticBasinSpec& spec);

struct SyntheticBasin {
  GridSeries precip;
  GridSeries temp;
  GaugeSeries gauge;
};

/// Per-cell bookkeeping for the reservoir oracle tests.
struct RoutingDiagnostics {
  std::vector<double> initial_storage;    // (H*W)
  std::vector<double> final_storage;      // (H*W)
  std::vector<double> cumulative_inflow;  // effective rain per cell
  std::vector<double> cumulative_outflow;
};

/// Routes precipitation through the cellwise reservoir:
///   outflow O_t,c = k_c * S_t,c ;  S_{t+1,c} = S_t,c + phi_t,c * P_t,c - O_t,c
/// and gauges Q_t as the cell-mean outflow.
GaugeSeries route_reservoir(const GridSeries& precip, const GridSeries& temp,
                            const SyntheticBasinSpec& spec,
                            RoutingDiagnostics* diag = nullptr);

SyntheticBasin generate_synthetic_basin(const SyntheticBasinSpec& spec);

// ---------------------------------------------------------------------------
// File formats.
// GridSeries: one JSON header line {variable,start_date,T,H,W} terminated by
// '\n', followed by T*H*W little-endian float64 values in (day,row,col) order.
// GaugeSeries: CSV with header "date,discharge_m3s", one row per day.

void save_grid_series(const GridSeries& grid, const std::string& path);
GridSeries load_grid_series(const std::string& path);

void save_gauge_series(const GaugeSeries& gauge, const std::string& path);
GaugeSeries load_gauge_series(const std::string& path);

}  // namespace flowcast
