#include "heliofit/evalkit.hpp"

#include <array>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "heliofit/envmap.hpp"
#include "heliofit/hdr_io.hpp"
#include "heliofit/projection.hpp"
#include "parallel.hpp"

namespace heliofit {

namespace {

void require_same(const HdrImage& a, const HdrImage& b) {
  if (a.geometry() != b.geometry()) throw std::invalid_argument("image geometries differ");
}

template <typename F>
void for_valid_values(const HdrImage& a, const HdrImage& b, F&& f) {
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < a.pixel_count(); ++i) {
    if (!a.valid(i)) continue;
    for (int c = 0; c < 3; ++c) f(static_cast<double>(da[3 * i + c]), static_cast<double>(db[3 * i + c]));
  }
}

}  // namespace

double rmse(const HdrImage& a, const HdrImage& b) {
  require_same(a, b);
  double sum = 0.0;
  std::size_t n = 0;
  for_valid_values(a, b, [&](double x, double y) {
    sum += (x - y) * (x - y);
    ++n;
  });
  if (n == 0) throw std::invalid_argument("images have no valid pixels");
  return std::sqrt(sum / static_cast<double>(n));
}

double si_scale(const HdrImage& a, const HdrImage& b) {
  require_same(a, b);
  double ab = 0.0, aa = 0.0;
  for_valid_values(a, b, [&](double x, double y) {
    ab += x * y;
    aa += x * x;
  });
  return aa > 0.0 ? ab / aa : 0.0;
}

double si_rmse(const HdrImage& a, const HdrImage& b) {
  const double alpha = si_scale(a, b);
  double sum = 0.0;
  std::size_t n = 0;
  for_valid_values(a, b, [&](double x, double y) {
    const double d = alpha * x - y;
    sum += d * d;
    ++n;
  });
  if (n == 0) throw std::invalid_argument("images have no valid pixels");
  return std::sqrt(sum / static_cast<double>(n));
}

namespace {

void require_vectors(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("vectors must be non-empty and of equal length");
}

}  // namespace

double rmse(std::span<const double> a, std::span<const double> b) {
  require_vectors(a, b);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sum / static_cast<double>(a.size()));
}

double si_rmse(std::span<const double> a, std::span<const double> b) {
  require_vectors(a, b);
  double ab = 0.0, aa = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
  }
  const double alpha = aa > 0.0 ? ab / aa : 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (alpha * a[i] - b[i]) * (alpha * a[i] - b[i]);
  return std::sqrt(sum / static_cast<double>(a.size()));
}

double cloud_coverage(const HdrImage& img, const Direction& sun, const CloudConfig& cfg) {
  if (img.projection() == Projection::camera) throw std::invalid_argument("cloud coverage needs a sky image");
  const DomeTable dome = make_dome_table(img.geometry());
  if (dome.valid_pixels.empty()) throw std::invalid_argument("image has no valid pixels");
  const double divisor = valid_percentile(img, cfg.percentile);
  const Vec3 s = sun.to_vector();
  const double mask = deg_to_rad(cfg.sun_mask_deg);
  double cloud = 0.0, total = 0.0;
  for (std::size_t k = 0; k < dome.valid_pixels.size(); ++k) {
    if (angle_between(dome.directions[k], s) <= mask) continue;
    const ColorRGB c = img.at(dome.valid_pixels[k]);
    const double blue = display_encode(c.b, divisor);
    const double red = display_encode(c.r, divisor);
    total += dome.solid_angle[k];
    if (blue - red <= cfg.threshold) cloud += dome.solid_angle[k];
  }
  if (!(total > 0.0)) throw std::invalid_argument("sun mask covers every valid pixel");
  return cloud / total;
}

WeatherBin weather_bin(double coverage, double sun_zenith_deg) {
  if (!(coverage >= 0.0 && coverage <= 1.0)) throw std::out_of_range("coverage must lie in [0, 1]");
  if (!(sun_zenith_deg >= 0.0 && sun_zenith_deg <= 180.0)) throw std::out_of_range("sun zenith must lie in [0, 180]");
  WeatherBin bin{WeatherCategory::overcast, coverage, sun_zenith_deg};
  if (sun_zenith_deg > 70.0) {
    bin.category = WeatherCategory::sunrise_sunset;
  } else if (coverage < 1.0 / 8.0) {
    bin.category = WeatherCategory::sunny;
  } else if (coverage < 3.0 / 8.0) {
    bin.category = WeatherCategory::mostly_sunny;
  } else if (coverage < 5.0 / 8.0) {
    bin.category = WeatherCategory::partly_cloudy;
  } else if (coverage < 7.0 / 8.0) {
    bin.category = WeatherCategory::mostly_cloudy;
  }
  return bin;
}

std::string_view to_string(WeatherCategory c) {
  switch (c) {
    case WeatherCategory::sunny: return "sunny";
    case WeatherCategory::mostly_sunny: return "mostly_sunny";
    case WeatherCategory::partly_cloudy: return "partly_cloudy";
    case WeatherCategory::mostly_cloudy: return "mostly_cloudy";
    case WeatherCategory::overcast: return "overcast";
    case WeatherCategory::sunrise_sunset: return "sunrise_sunset";
  }
  return "sunny";
}

std::string_view short_code(WeatherCategory c) {
  switch (c) {
    case WeatherCategory::sunny: return "su";
    case WeatherCategory::mostly_sunny: return "ms";
    case WeatherCategory::partly_cloudy: return "pc";
    case WeatherCategory::mostly_cloudy: return "mc";
    case WeatherCategory::overcast: return "oc";
    case WeatherCategory::sunrise_sunset: return "ss";
  }
  return "su";
}

WeatherCategory weather_category_from_string(std::string_view s) {
  for (WeatherCategory c : kAllCategories) {
    if (s == to_string(c) || s == short_code(c)) return c;
  }
  throw std::invalid_argument("unknown weather bin '" + std::string(s) + "'");
}

PairMetrics pair_metrics(const HdrImage& reference, const HdrImage& candidate, const TransportMatrix& t) {
  PairMetrics m;
  m.texture_rmse = rmse(candidate, reference);
  m.texture_si_rmse = si_rmse(candidate, reference);
  const HdrImage rr = apply_transport(t, reference);
  const HdrImage rc = apply_transport(t, candidate);
  m.render_rmse = rmse(rc, rr);
  m.render_si_rmse = si_rmse(rc, rr);
  return m;
}

namespace {

HdrImage read_by_id(const std::filesystem::path& dir, const std::string& id) {
  for (const char* ext : {".pfm", ".hdr"}) {
    const auto p = dir / (id + ext);
    if (std::filesystem::exists(p)) return read_hdr(p);
  }
  throw HdrIoError(HdrIoError::Kind::open_failed, "no .pfm or .hdr for '" + id + "' in " + dir.string());
}

constexpr std::array<const char*, 5> kMetricNames = {"texture_rmse", "texture_si_rmse", "render_rmse",
                                                     "render_si_rmse", "fid"};

std::array<double, 4> as_array(const PairMetrics& m) {
  return {m.texture_rmse, m.texture_si_rmse, m.render_rmse, m.render_si_rmse};
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

}  // namespace

BatchReport evaluate_batch(const std::vector<FitResult>& manifest, const std::filesystem::path& reference_dir,
                           const std::filesystem::path& candidate_dir, const TransportMatrix& t,
                           const CloudConfig& cloud) {
  BatchReport report;
  report.entries.resize(manifest.size());
  std::vector<std::exception_ptr> errors(manifest.size());
  detail::parallel_for(manifest.size(), [&](std::size_t i) {
    try {
      const FitResult& rec = manifest[i];
      if (rec.id.empty()) throw std::invalid_argument("manifest record without id");
      const HdrImage ref = read_by_id(reference_dir, rec.id);
      const HdrImage cand = read_by_id(candidate_dir, rec.id);
      EntryReport& e = report.entries[i];
      e.id = rec.id;
      if (rec.weather_bin) {
        e.category = weather_category_from_string(*rec.weather_bin);
      } else {
        const double cov = rec.coverage ? *rec.coverage : cloud_coverage(ref, rec.params.sun, cloud);
        e.category = weather_bin(cov, std::min(180.0, rad_to_deg(rec.params.sun.zenith))).category;
      }
      e.metrics = pair_metrics(ref, cand, t);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }

  // Ordered reduction: entries are summed in manifest order.
  auto summarize = [&](const std::string& name, auto&& take) {
    BinSummary s;
    s.bin = name;
    std::array<double, 4> acc{};
    for (const auto& e : report.entries) {
      if (!take(e)) continue;
      const auto v = as_array(e.metrics);
      for (int k = 0; k < 4; ++k) acc[k] += v[k];
      ++s.count;
    }
    if (s.count > 0) {
      const double n = static_cast<double>(s.count);
      s.mean = {acc[0] / n, acc[1] / n, acc[2] / n, acc[3] / n};
    }
    report.bins.push_back(s);
  };
  for (WeatherCategory c : kAllCategories) {
    summarize(std::string(short_code(c)), [c](const EntryReport& e) { return e.category == c; });
  }
  summarize("all", [](const EntryReport&) { return true; });
  return report;
}

std::string BatchReport::to_csv() const {
  std::ostringstream os;
  os << "bin,metric,value,count\n";
  for (const auto& b : bins) {
    const auto v = as_array(b.mean);
    for (std::size_t k = 0; k < kMetricNames.size(); ++k) {
      os << b.bin << ',' << kMetricNames[k] << ',';
      if (k == 4 || b.count == 0) {
        os << "n/a";
      } else {
        os << fmt(v[k]);
      }
      os << ',' << b.count << '\n';
    }
  }
  return os.str();
}

std::string BatchReport::to_table() const {
  std::ostringstream os;
  os << std::left << std::setw(6) << "bin" << std::right << std::setw(6) << "n";
  for (const char* m : kMetricNames) os << std::setw(17) << m;
  os << '\n';
  for (const auto& b : bins) {
    os << std::left << std::setw(6) << b.bin << std::right << std::setw(6) << b.count;
    const auto v = as_array(b.mean);
    for (std::size_t k = 0; k < kMetricNames.size(); ++k) {
      os << std::setw(17) << (k == 4 || b.count == 0 ? std::string("n/a") : fmt(v[k]));
    }
    os << '\n';
  }
  return os.str();
}

std::vector<FitResult> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw HdrIoError(HdrIoError::Kind::open_failed, "cannot open manifest " + path.string());
  std::vector<FitResult> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(fit_result_from_json(line));
  }
  return out;
}

}  // namespace heliofit
