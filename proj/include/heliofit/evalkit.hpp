#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "heliofit/fitter.hpp"
#include "heliofit/image.hpp"
#include "heliofit/transport.hpp"

namespace heliofit {

/// Root mean squared difference over valid pixels and channels.
/// Throws std::invalid_argument when geometries differ.
double rmse(const HdrImage& a, const HdrImage& b);

/// min over α of rmse(α·a, b), with α = <a,b>/<a,a> shared by all channels;
/// α = 0 when a is identically zero.
double si_rmse(const HdrImage& a, const HdrImage& b);

/// The scale used by si_rmse.
double si_scale(const HdrImage& a, const HdrImage& b);

/// The same metrics on plain value vectors of equal, non-zero length.
/// Throws std::invalid_argument otherwise.
double rmse(std::span<const double> a, std::span<const double> b);
double si_rmse(std::span<const double> a, std::span<const double> b);

struct CloudConfig {
  double threshold = 0.08;  ///< cloud when blue - red <= threshold (display units)
  double sun_mask_deg = 30.0;
  double percentile = 99.0;
};

/// Solid-angle weighted cloud fraction of the valid pixels outside the sun
/// disk, thresholded on the percentile-exposed, gamma-encoded image. A black
/// image counts as fully covered. Throws std::invalid_argument when no pixel
/// is left after masking.
double cloud_coverage(const HdrImage& img, const Direction& sun, const CloudConfig& cfg = {});

enum class WeatherCategory { sunny, mostly_sunny, partly_cloudy, mostly_cloudy, overcast, sunrise_sunset };

inline constexpr WeatherCategory kAllCategories[] = {
    WeatherCategory::sunny,         WeatherCategory::mostly_sunny, WeatherCategory::partly_cloudy,
    WeatherCategory::mostly_cloudy, WeatherCategory::overcast,     WeatherCategory::sunrise_sunset};

struct WeatherBin {
  WeatherCategory category = WeatherCategory::sunny;
  double coverage = 0.0;
  double sun_zenith_deg = 0.0;
};

/// NOAA eighths: [0, 1/8) su, [1/8, 3/8) ms, [3/8, 5/8) pc, [5/8, 7/8) mc,
/// [7/8, 1] oc; a sun zenith beyond 70° gives ss regardless of coverage.
/// Throws std::out_of_range outside coverage [0, 1] or zenith [0, 180].
WeatherBin weather_bin(double coverage, double sun_zenith_deg);

std::string_view to_string(WeatherCategory c);      ///< "sunny", "mostly_sunny", ...
std::string_view short_code(WeatherCategory c);     ///< "su", "ms", ...
/// Accepts either form. Throws std::invalid_argument.
WeatherCategory weather_category_from_string(std::string_view s);

struct PairMetrics {
  double texture_rmse = 0.0;
  double texture_si_rmse = 0.0;
  double render_rmse = 0.0;
  double render_si_rmse = 0.0;
};

/// Texture metrics on the domes and render metrics on their transport renders.
PairMetrics pair_metrics(const HdrImage& reference, const HdrImage& candidate, const TransportMatrix& t);

struct BinSummary {
  std::string bin;  ///< short code or "all"
  std::size_t count = 0;
  PairMetrics mean;
};

struct EntryReport {
  std::string id;
  WeatherCategory category = WeatherCategory::sunny;
  PairMetrics metrics;
};

struct BatchReport {
  std::vector<EntryReport> entries;  ///< manifest order
  std::vector<BinSummary> bins;      ///< su, ms, pc, mc, oc, ss, all (empty bins kept with count 0)

  std::string to_csv() const;    ///< bin,metric,value,count; fid reported as n/a
  std::string to_table() const;  ///< aligned text table
};

/// Scores every manifest record: reference_dir/<id>.pfm (or .hdr) against
/// candidate_dir/<id>.pfm (or .hdr). The bin comes from the record when
/// present, otherwise from the reference image and the record's sun.
/// Throws HdrIoError for missing or unreadable files.
BatchReport evaluate_batch(const std::vector<FitResult>& manifest, const std::filesystem::path& reference_dir,
                           const std::filesystem::path& candidate_dir, const TransportMatrix& t,
                           const CloudConfig& cloud = {});

/// Reads a JSONL manifest, skipping blank lines.
std::vector<FitResult> read_manifest(const std::filesystem::path& path);

}  // namespace heliofit
