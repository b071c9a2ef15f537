#pragma once

#include <map>
#include <memory>
#include <string>

#include "heliofit/service/config.hpp"
#include "heliofit/service/jobs.hpp"
#include "heliofit/service/pipeline.hpp"

namespace heliofit::service {

/// Query values keyed by name (last occurrence wins).
using Query = std::map<std::string, std::string>;

/// Reads the 11 parameters from a query. Keys are those of to_key_values;
/// sun_zenith_deg and sun_azimuth_deg may replace the radian forms. Missing
/// keys keep the value from `base`. Throws std::invalid_argument for
/// unparsable numbers and std::out_of_range for values outside the fit
/// ranges, negative or oversized colors, or a sun beyond the zenith cutoff.
LMParams params_from_query(const Query& q, const AppConfig& cfg, const LMParams& base);

/// HTTP front end. Routes:
///   GET  /api/render      PNG of the dome, X-Percentile-Divisor header
///   GET  /api/relight     PNG of the diffuse render and mirror ball
///   GET  /api/presets     parameter ranges and one preset per weather bin
///   GET|POST /api/classify cloud coverage and weather bin
///   POST /api/fit         HDR upload, returns a job id
///   GET  /api/jobs/{id}   job record
///   GET  /api/metrics     fit quality of a finished job (?job=)
/// Static files from service.static_dir are served at "/".
class Server {
 public:
  explicit Server(AppConfig cfg);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds host:port (port 0 picks a free one); returns the bound port or -1.
  int bind();
  /// Serves until stop(); returns false if the socket failed.
  bool listen();
  void stop();

  JobStore& jobs();
  JobQueue& queue();
  TransportCache& transports();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace heliofit::service
