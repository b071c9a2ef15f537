#include "heliofit/service/pipeline.hpp"

#include <stdexcept>

namespace heliofit::service {

std::shared_ptr<const TransportCache::Entry> TransportCache::get(const EnvGeometry& env) {
  const Key key{env.width, env.height, static_cast<int>(env.projection)};
  std::lock_guard lock(mutex_);
  auto it = entries_.find(key);
  if (it != entries_.end()) return it->second;
  auto entry = std::make_shared<const Entry>(build_transport(scene_, env));
  entries_.emplace(key, entry);
  return entry;
}

void TransportCache::insert(TransportMatrix m) {
  if (m.scene_hash != scene_.hash()) throw std::invalid_argument("transport was built for a different scene");
  const Key key{m.env.width, m.env.height, static_cast<int>(m.env.projection)};
  auto entry = std::make_shared<const Entry>(std::move(m));
  std::lock_guard lock(mutex_);
  entries_[key] = std::move(entry);
}

FitResult run_fit(const HdrImage& img, const FitMetadata& meta, const AppConfig& cfg, TransportCache& cache,
                  const std::string& id) {
  const auto t = cache.get(img.geometry());
  FitResult r = fit(img, meta, t->op, t->matrix.env, cfg.fit);
  r.id = id;
  if (!r.flags.rejected_zenith) {
    const double cov = cloud_coverage(img, r.params.sun, cfg.cloud);
    r.coverage = cov;
    r.weather_bin = std::string(to_string(weather_bin(cov, rad_to_deg(r.params.sun.zenith)).category));
  }
  return r;
}

namespace {

LMParams make(ColorRGB sky, double t, ColorRGB sun, double beta, double kappa, double zenith_deg) {
  LMParams p;
  p.sky_color = sky;
  p.turbidity = t;
  p.sun_color = sun;
  p.beta = beta;
  p.kappa = kappa;
  p.sun = Direction::make(deg_to_rad(zenith_deg), deg_to_rad(120.0));
  return p;
}

}  // namespace

const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = {
      {"sunny", make({0.30, 0.65, 1.00}, 3.0, {20.0, 19.0, 18.0}, 10.0, 0.5, 40.0)},
      {"mostly_sunny", make({0.37, 0.685, 1.00}, 7.0, {20.0, 19.0, 18.0}, 10.0, 0.5, 40.0)},
      {"partly_cloudy", make({0.47, 0.735, 1.00}, 3.0, {20.0, 19.0, 18.0}, 10.0, 0.5, 40.0)},
      {"mostly_cloudy", make({0.50, 0.75, 1.00}, 3.0, {20.0, 19.0, 18.0}, 10.0, 0.5, 40.0)},
      {"overcast", make({0.90, 0.90, 0.92}, 8.0, {2.0, 2.0, 2.0}, 30.0, 0.1, 40.0)},
      {"sunrise_sunset", make({1.00, 0.60, 0.45}, 4.0, {30.0, 15.0, 6.0}, 10.0, 0.5, 75.0)},
  };
  return all;
}

}  // namespace heliofit::service
