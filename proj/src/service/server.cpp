#include "heliofit/service/server.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "heliofit/envmap.hpp"
#include "heliofit/hdr_io.hpp"
#include "heliofit/service/png.hpp"
#include "heliofit/solar.hpp"

namespace heliofit::service {

using nlohmann::json;

namespace {

constexpr int kMinSize = 16;
constexpr int kMaxSize = 1024;
constexpr double kMaxExposure = 20.0;

// Client-side mistakes; mapped to 400.
struct BadRequest : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty() || !std::isfinite(v)) {
    throw std::invalid_argument("parameter '" + key + "' is not a number: '" + text + "'");
  }
  return v;
}

std::optional<double> get_double(const Query& q, const std::string& key) {
  auto it = q.find(key);
  if (it == q.end()) return std::nullopt;
  return parse_double(key, it->second);
}

double bounded(const Query& q, const std::string& key, double fallback, double lo, double hi) {
  const double v = get_double(q, key).value_or(fallback);
  if (v < lo || v > hi) {
    throw std::out_of_range("parameter '" + key + "' must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) +
                            "]");
  }
  return v;
}

int bounded_int(const Query& q, const std::string& key, int fallback, int lo, int hi) {
  const double v = bounded(q, key, fallback, lo, hi);
  if (v != std::floor(v)) throw std::invalid_argument("parameter '" + key + "' must be an integer");
  return static_cast<int>(v);
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Query to_query(const httplib::Request& req) {
  Query q;
  for (const auto& [k, v] : req.params) q[k] = v;
  return q;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, json{{"error", message}});
}

json params_json(const LMParams& p) {
  json j = json::object();
  for (const auto& [k, v] : to_key_values(p)) j[k] = v;
  return j;
}

FitMetadata meta_from_query(const Query& q) {
  FitMetadata m;
  const auto zen = get_double(q, "sun_zenith_deg");
  const auto az = get_double(q, "sun_azimuth_deg");
  if (zen.has_value() != az.has_value()) throw BadRequest("sun_zenith_deg and sun_azimuth_deg go together");
  if (zen) {
    if (*zen < 0.0 || *zen > 180.0) throw std::out_of_range("sun_zenith_deg must lie in [0, 180]");
    m.sun = Direction::make(deg_to_rad(*zen), deg_to_rad(*az));
  }
  m.latitude_deg = get_double(q, "lat");
  m.longitude_deg = get_double(q, "lon");
  if (auto it = q.find("time"); it != q.end()) {
    parse_utc_timestamp(it->second);
    m.timestamp_utc = it->second;
  }
  if (m.latitude_deg && (*m.latitude_deg < -90.0 || *m.latitude_deg > 90.0)) {
    throw std::out_of_range("lat must lie in [-90, 90]");
  }
  const int geo = m.latitude_deg.has_value() + m.longitude_deg.has_value() + m.timestamp_utc.has_value();
  if (geo != 0 && geo != 3) throw BadRequest("lat, lon and time go together");
  return m;
}

int dome_size_of(const EnvGeometry& g) { return g.projection == Projection::equirect_hemisphere ? g.width / 2 : g.width; }

}  // namespace

LMParams params_from_query(const Query& q, const AppConfig& cfg, const LMParams& base) {
  std::map<std::string, double> kv = to_key_values(base);
  for (const char* name : param_field_names()) {
    if (auto v = get_double(q, name)) kv[name] = *v;
  }
  if (auto v = get_double(q, "sun_zenith_deg")) kv["sun_zenith_rad"] = deg_to_rad(*v);
  if (auto v = get_double(q, "sun_azimuth_deg")) kv["sun_azimuth_rad"] = deg_to_rad(*v);
  LMParams p = from_key_values(kv);
  validate_params(p, cfg.fit.ranges);
  const double ceiling = cfg.fit.regularization.ceiling;
  for (const ColorRGB& c : {p.sun_color, p.sky_color}) {
    if (c.r > ceiling || c.g > ceiling || c.b > ceiling) throw std::out_of_range("color channel above ceiling");
  }
  if (p.sun.zenith < 0.0 || p.sun.zenith > deg_to_rad(cfg.fit.zenith_cutoff_deg) + 1e-12) {
    throw std::out_of_range("sun zenith must lie in [0, " + std::to_string(cfg.fit.zenith_cutoff_deg) + "] degrees");
  }
  return p;
}

struct Server::Impl {
  explicit Impl(AppConfig c)
      : cfg(std::move(c)),
        cache(cfg.scene),
        store(cfg.service.data_dir),
        queue(store, [this](const JobRecord& job, const std::string& input) { return run_job(job, input); },
              cfg.service.queue_depth) {
    const int threads = cfg.service.threads;
    http.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
    http.set_payload_max_length(cfg.service.max_upload_bytes);
    routes();
    if (!cfg.service.static_dir.empty() && !http.set_mount_point("/", cfg.service.static_dir)) {
      throw ConfigError("static_dir '" + cfg.service.static_dir + "' is not a directory");
    }
  }

  FitResult run_job(const JobRecord& job, const std::string& input) {
    spdlog::info("job {} started", job.id);
    const HdrImage img = decode_hdr(input);
    FitResult r = run_fit(img, job.meta, cfg, cache, job.id);
    spdlog::info("job {} finished, loss {:.6g}{}", job.id, r.final_loss.total,
                 r.flags.rejected_zenith ? " (rejected: sun beyond zenith cutoff)" : "");
    return r;
  }

  // Runs a handler, mapping exceptions to status codes.
  template <typename F>
  void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const BadRequest& e) {
      send_error(res, 400, e.what());
    } catch (const std::invalid_argument& e) {
      send_error(res, 400, e.what());
    } catch (const std::out_of_range& e) {
      send_error(res, 400, e.what());
    } catch (const HdrIoError& e) {
      send_error(res, 400, e.what());
    } catch (const QueueFull& e) {
      send_error(res, 503, e.what());
    } catch (const std::exception& e) {
      spdlog::error("internal error: {}", e.what());
      send_error(res, 500, e.what());
    }
  }

  LMParams query_params(const Query& q) const { return params_from_query(q, cfg, presets().front().params); }

  static std::string upload_bytes(const httplib::Request& req) {
    if (req.is_multipart_form_data()) {
      if (!req.has_file("file")) throw BadRequest("multipart upload needs a 'file' field");
      return req.get_file_value("file").content;
    }
    if (req.body.empty()) throw BadRequest("empty upload");
    return req.body;
  }

  void routes() {
    http.Get("/api/render", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const Query q = to_query(req);
        const LMParams p = query_params(q);
        const int size = bounded_int(q, "size", 128, kMinSize, kMaxSize);
        const double ev = bounded(q, "exposure", 0.0, -kMaxExposure, kMaxExposure);
        const Projection proj =
            q.count("projection") ? projection_from_string(q.at("projection")) : Projection::skyangular;
        if (proj == Projection::camera) throw BadRequest("projection must be a sky projection");
        const Preview pv = make_preview(render_lm_dome(p, size, proj), ev);
        res.set_header("X-Percentile-Divisor", g17(pv.divisor));
        res.set_content(encode_png(pv), "image/png");
      });
    });

    http.Get("/api/relight", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const Query q = to_query(req);
        const LMParams p = query_params(q);
        const double ev = bounded(q, "exposure", 0.0, -kMaxExposure, kMaxExposure);
        const HdrImage dome = render_lm_dome(p, cfg.service.preview_size);
        const auto t = cache.get(dome.geometry());
        const Preview diffuse = make_preview(apply_transport(t->matrix, dome), ev);
        const Preview mirror = make_preview(render_mirror_sphere(dome, cfg.scene.height), ev);
        res.set_header("X-Percentile-Divisor", g17(diffuse.divisor));
        res.set_header("X-Mirror-Percentile-Divisor", g17(mirror.divisor));
        res.set_content(encode_png(hstack({diffuse, mirror})), "image/png");
      });
    });

    http.Get("/api/presets", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] {
        const auto& r = cfg.fit.ranges;
        json body;
        body["ranges"] = {
            {"kappa", {r.kappa_min, r.kappa_max}},
            {"beta", {r.beta_min, r.beta_max}},
            {"turbidity", {r.turbidity_min, r.turbidity_max}},
            {"color", {0.0, cfg.fit.regularization.ceiling}},
            {"sun_zenith_deg", {0.0, cfg.fit.zenith_cutoff_deg}},
            {"sun_azimuth_deg", {0.0, 360.0}},
            {"exposure", {-kMaxExposure, kMaxExposure}},
            {"size", {kMinSize, kMaxSize}},
        };
        body["presets"] = json::array();
        for (const auto& preset : presets()) {
          body["presets"].push_back({{"name", preset.name},
                                     {"bin", short_code(weather_category_from_string(preset.name))},
                                     {"params", params_json(preset.params)}});
        }
        send_json(res, 200, body);
      });
    });

    auto classify = [this](const HdrImage& img, const Direction& sun, httplib::Response& res) {
      const double cov = cloud_coverage(img, sun, cfg.cloud);
      const WeatherBin bin = weather_bin(cov, std::min(180.0, rad_to_deg(sun.zenith)));
      send_json(res, 200,
                json{{"coverage", cov},
                     {"category", to_string(bin.category)},
                     {"bin", short_code(bin.category)},
                     {"sun_zenith_deg", bin.sun_zenith_deg}});
    };

    http.Get("/api/classify", [this, classify](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const Query q = to_query(req);
        const LMParams p = query_params(q);
        const int size = bounded_int(q, "size", 128, kMinSize, kMaxSize);
        classify(render_lm_dome(p, size), p.sun, res);
      });
    });

    http.Post("/api/classify", [this, classify](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const HdrImage img = decode_hdr(upload_bytes(req));
        if (img.projection() == Projection::camera) throw BadRequest("upload is not a sky image");
        const FitMetadata meta = meta_from_query(to_query(req));
        const Direction sun = meta.sun ? *meta.sun : locate_sun(img, std::nullopt, cfg.fit);
        classify(img, sun, res);
      });
    });

    http.Post("/api/fit", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::string bytes = upload_bytes(req);
        const HdrImage img = decode_hdr(bytes);
        if (img.projection() == Projection::camera) throw BadRequest("upload is not a sky image");
        if (!img.all_finite()) throw BadRequest("upload contains non-finite values");
        const FitMetadata meta = meta_from_query(to_query(req));
        const std::string id = queue.submit(std::move(bytes), meta);
        spdlog::info("job {} queued ({}x{})", id, img.width(), img.height());
        send_json(res, 202, json{{"job_id", id}, {"state", "queued"}});
      });
    });

    http.Get(R"(/api/jobs/([A-Za-z0-9_\-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto job = store.get(req.matches[1]);
        if (!job) return send_error(res, 404, "unknown job");
        json body;
        body["id"] = job->id;
        body["kind"] = job->kind;
        body["state"] = to_string(job->state);
        body["submitted_at"] = job->submitted_at;
        body["result"] = job->result ? json::parse(to_jsonl(*job->result)) : json(nullptr);
        body["error"] = job->error.empty() ? json(nullptr) : json(job->error);
        send_json(res, 200, body);
      });
    });

    http.Get("/api/metrics", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        if (!req.has_param("job")) throw BadRequest("missing 'job' parameter");
        const auto job = store.get(req.get_param_value("job"));
        if (!job) return send_error(res, 404, "unknown job");
        if (job->state != JobState::done) return send_error(res, 409, "job is not done");
        if (job->result->flags.rejected_zenith) return send_error(res, 409, "fit was rejected");
        const HdrImage target = decode_hdr(store.input(job->id));
        const HdrImage fitted =
            render_lm_dome(job->result->params, dome_size_of(target.geometry()), target.projection());
        const auto t = cache.get(target.geometry());
        const PairMetrics m = pair_metrics(target, fitted, t->matrix);
        send_json(res, 200,
                  json{{"job", job->id},
                       {"texture_rmse", m.texture_rmse},
                       {"texture_si_rmse", m.texture_si_rmse},
                       {"render_rmse", m.render_rmse},
                       {"render_si_rmse", m.render_si_rmse}});
      });
    });

    http.set_logger([](const httplib::Request& req, const httplib::Response& res) {
      spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
    });
  }

  AppConfig cfg;
  TransportCache cache;
  JobStore store;
  JobQueue queue;
  httplib::Server http;
  int port = -1;
};

Server::Server(AppConfig cfg) : impl_(std::make_unique<Impl>(std::move(cfg))) {}
Server::~Server() { stop(); }

int Server::bind() {
  const auto& s = impl_->cfg.service;
  if (s.port == 0) {
    impl_->port = impl_->http.bind_to_any_port(s.host);
  } else {
    impl_->port = impl_->http.bind_to_port(s.host, s.port) ? s.port : -1;
  }
  return impl_->port;
}

bool Server::listen() { return impl_->http.listen_after_bind(); }

void Server::stop() {
  if (impl_->http.is_running()) impl_->http.stop();
}

JobStore& Server::jobs() { return impl_->store; }
JobQueue& Server::queue() { return impl_->queue; }
TransportCache& Server::transports() { return impl_->cache; }

}  // namespace heliofit::service
