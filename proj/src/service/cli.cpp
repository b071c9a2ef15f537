#include "heliofit/service/cli.hpp"

#include <pthread.h>

#include <csignal>
#include <fstream>
#include <ostream>
#include <sstream>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "heliofit/envmap.hpp"
#include "heliofit/evalkit.hpp"
#include "heliofit/hdr_io.hpp"
#include "heliofit/service/config.hpp"
#include "heliofit/service/pipeline.hpp"
#include "heliofit/service/png.hpp"
#include "heliofit/service/server.hpp"
#include "heliofit/solar.hpp"

namespace heliofit::service {

using nlohmann::json;

namespace {

struct Rejected : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_numbers(const std::string& text, std::size_t count, const char* shape) {
  std::stringstream in(text);
  std::string part;
  std::vector<double> v;
  while (std::getline(in, part, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      v.clear();
      break;
    }
  }
  if (v.size() != count) throw std::invalid_argument(std::string("expected ") + shape + " but got '" + text + "'");
  return v;
}

ColorRGB parse_color(const std::string& text) {
  const auto v = parse_numbers(text, 3, "r,g,b");
  return {v[0], v[1], v[2]};
}

/// "zenith,azimuth" in degrees.
Direction parse_sun(const std::string& text) {
  const auto v = parse_numbers(text, 2, "zenith,azimuth");
  if (v[0] < 0.0 || v[0] > 180.0) throw std::out_of_range("sun zenith must lie in [0, 180] degrees");
  return Direction::make(deg_to_rad(v[0]), deg_to_rad(v[1]));
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw HdrIoError(HdrIoError::Kind::open_failed, "cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void append_line(const std::filesystem::path& p, const std::string& line) {
  std::ofstream out(p, std::ios::app | std::ios::binary);
  if (!out) throw HdrIoError(HdrIoError::Kind::write_failed, "cannot open " + p.string() + " for appending");
  out << line << '\n';
  if (!out) throw HdrIoError(HdrIoError::Kind::write_failed, "failed writing " + p.string());
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw HdrIoError(HdrIoError::Kind::write_failed, "cannot create " + p.string());
  out << bytes;
  if (!out) throw HdrIoError(HdrIoError::Kind::write_failed, "failed writing " + p.string());
}

LMParams params_from_json(const std::string& text, const LMParams& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("params file is not JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("params file must hold a JSON object");
  auto kv = to_key_values(base);
  for (const auto& [k, v] : j.items()) {
    if (!kv.count(k)) throw std::invalid_argument("unknown parameter '" + k + "'");
    if (!v.is_number()) throw std::invalid_argument("parameter '" + k + "' must be a number");
    kv[k] = v.get<double>();
  }
  return from_key_values(kv);
}

const LMParams& preset_params(const std::string& name) {
  const WeatherCategory c = weather_category_from_string(name);
  for (const auto& p : presets()) {
    if (p.name == to_string(c)) return p.params;
  }
  throw std::invalid_argument("no preset '" + name + "'");
}

std::string json_line(const json& j) { return j.dump(); }

// ---------------------------------------------------------------------------

struct RenderArgs {
  std::string params_file, preset = "sunny", sky, sun_color, out, projection = "skyangular", format;
  std::optional<double> turbidity, beta, kappa, zenith, azimuth;
  int size = 128;
};

int cmd_render(const RenderArgs& a, std::ostream& out) {
  LMParams p = preset_params(a.preset);
  if (!a.params_file.empty()) p = params_from_json(read_text(a.params_file), p);
  if (!a.sky.empty()) p.sky_color = parse_color(a.sky);
  if (!a.sun_color.empty()) p.sun_color = parse_color(a.sun_color);
  if (a.turbidity) p.turbidity = *a.turbidity;
  if (a.beta) p.beta = *a.beta;
  if (a.kappa) p.kappa = *a.kappa;
  if (a.zenith) p.sun.zenith = deg_to_rad(*a.zenith);
  if (a.azimuth) p.sun = Direction::make(p.sun.zenith, deg_to_rad(*a.azimuth));
  validate_params(p);
  if (p.sun.zenith < 0.0 || p.sun.zenith > kPi / 2.0) throw std::out_of_range("sun zenith must lie in [0, 90] degrees");
  const Projection proj = projection_from_string(a.projection);
  if (proj == Projection::camera) throw std::invalid_argument("projection must be a sky projection");
  if (a.size < 8 || a.size > 8192) throw std::out_of_range("size must lie in [8, 8192]");

  std::optional<HdrFormat> fmt;
  if (a.format == "pfm") {
    fmt = HdrFormat::pfm;
  } else if (a.format == "hdr" || a.format == "rgbe") {
    fmt = HdrFormat::rgbe;
  } else if (!a.format.empty()) {
    throw std::invalid_argument("format must be pfm or hdr");
  } else if (!format_from_extension(a.out)) {
    throw std::invalid_argument("cannot tell the format of '" + a.out + "'; use --format");
  }
  const HdrImage dome = render_lm_dome(p, a.size, proj);
  write_hdr(a.out, dome, fmt);
  out << "wrote " << a.out << " (" << dome.width() << "x" << dome.height() << ")\n";
  return kExitOk;
}

struct FitArgs {
  std::string input, sun, time, id, out, transport;
  std::optional<double> lat, lon;
};

int cmd_fit(const FitArgs& a, const AppConfig& cfg, std::ostream& out) {
  FitMetadata meta;
  if (!a.sun.empty()) meta.sun = parse_sun(a.sun);
  const int geo = a.lat.has_value() + a.lon.has_value() + !a.time.empty();
  if (geo != 0 && geo != 3) throw std::invalid_argument("--lat, --lon and --time go together");
  if (geo == 3) {
    parse_utc_timestamp(a.time);
    meta.latitude_deg = a.lat;
    meta.longitude_deg = a.lon;
    meta.timestamp_utc = a.time;
  }
  const HdrImage img = read_hdr(a.input);
  TransportCache cache(cfg.scene);
  if (!a.transport.empty()) {
    TransportMatrix t = load_transport(a.transport);
    if (t.env != img.geometry()) throw std::invalid_argument("transport environment does not match the image");
    cache.insert(std::move(t));
  }
  const std::string id = a.id.empty() ? std::filesystem::path(a.input).stem().string() : a.id;
  const FitResult r = run_fit(img, meta, cfg, cache, id);
  const std::string line = to_jsonl(r);
  if (!a.out.empty()) {
    append_line(a.out, line);
  } else {
    out << line << '\n';
  }
  if (r.flags.rejected_zenith) {
    throw Rejected("fit rejected: sun zenith " + std::to_string(rad_to_deg(r.params.sun.zenith)) +
                   " deg is beyond the " + std::to_string(cfg.fit.zenith_cutoff_deg) + " deg cutoff");
  }
  if (!a.out.empty()) {
    out << id << ": loss " << r.final_loss.total << ", kappa " << r.params.kappa << ", beta " << r.params.beta
        << ", turbidity " << r.params.turbidity << '\n';
  }
  return kExitOk;
}

int cmd_transport(int env_size, const std::string& projection, const std::string& path, const AppConfig& cfg,
                  std::ostream& out) {
  const Projection proj = projection_from_string(projection);
  if (proj == Projection::camera) throw std::invalid_argument("projection must be a sky projection");
  if (env_size < 8 || env_size > 4096) throw std::out_of_range("env size must lie in [8, 4096]");
  const TransportMatrix t = build_transport(cfg.scene, sky_geometry(env_size, proj));
  save_transport(path, t);
  out << "wrote " << path << " (" << t.rows() << " rows, " << t.nnz() << " weights)\n";
  return kExitOk;
}

struct RelightArgs {
  std::string transport, env, out, mirror, png;
  int mirror_size = 0;
  double exposure = 0.0;
};

int cmd_relight(const RelightArgs& a, std::ostream& out) {
  const TransportMatrix t = load_transport(a.transport);
  const HdrImage env = read_hdr(a.env);
  const HdrImage render = apply_transport(t, env);
  write_hdr(a.out, render);
  out << "wrote " << a.out << '\n';
  std::optional<HdrImage> ball;
  if (!a.mirror.empty() || !a.png.empty()) {
    ball = render_mirror_sphere(env, a.mirror_size > 0 ? a.mirror_size : t.render_height);
  }
  if (!a.mirror.empty()) {
    write_hdr(a.mirror, *ball);
    out << "wrote " << a.mirror << '\n';
  }
  if (!a.png.empty()) {
    write_bytes(a.png, encode_png(hstack({make_preview(render, a.exposure), make_preview(*ball, a.exposure)})));
    out << "wrote " << a.png << '\n';
  }
  return kExitOk;
}

int cmd_metrics(const std::string& ref, const std::string& test, const std::string& transport, std::ostream& out) {
  const HdrImage a = read_hdr(ref);
  const HdrImage b = read_hdr(test);
  json j;
  j["rmse"] = rmse(b, a);
  j["si_rmse"] = si_rmse(b, a);
  if (!transport.empty()) {
    const TransportMatrix t = load_transport(transport);
    const PairMetrics m = pair_metrics(a, b, t);
    j["render_rmse"] = m.render_rmse;
    j["render_si_rmse"] = m.render_si_rmse;
  }
  out << json_line(j) << '\n';
  return kExitOk;
}

int cmd_classify(const std::string& path, const std::string& sun_text, const AppConfig& cfg, std::ostream& out) {
  const HdrImage img = read_hdr(path);
  if (img.projection() == Projection::camera) throw std::invalid_argument("classify needs a sky image");
  const Direction sun = sun_text.empty() ? locate_sun(img, std::nullopt, cfg.fit) : parse_sun(sun_text);
  const double cov = cloud_coverage(img, sun, cfg.cloud);
  const WeatherBin bin = weather_bin(cov, std::min(180.0, rad_to_deg(sun.zenith)));
  out << json_line(json{{"coverage", cov},
                        {"category", to_string(bin.category)},
                        {"bin", short_code(bin.category)},
                        {"sun_zenith_deg", bin.sun_zenith_deg}})
      << '\n';
  return kExitOk;
}

struct EvaluateArgs {
  std::string manifest, reference_dir, candidate_dir, transport, csv;
};

int cmd_evaluate(const EvaluateArgs& a, const AppConfig& cfg, std::ostream& out) {
  const auto manifest = read_manifest(a.manifest);
  const TransportMatrix t = load_transport(a.transport);
  const BatchReport report = evaluate_batch(manifest, a.reference_dir, a.candidate_dir, t, cfg.cloud);
  out << report.to_table();
  if (!a.csv.empty()) write_bytes(a.csv, report.to_csv());
  return kExitOk;
}

int cmd_serve(const AppConfig& cfg, std::ostream& out) {
  // Route SIGINT/SIGTERM to a watcher thread so the server stops cleanly.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Server server(cfg);
  const int port = server.bind();
  if (port < 0) {
    throw std::filesystem::filesystem_error("cannot bind " + cfg.service.host + ":" +
                                                std::to_string(cfg.service.port),
                                            std::make_error_code(std::errc::address_in_use));
  }
  out << "listening on http://" << cfg.service.host << ":" << port << std::endl;
  std::thread watcher([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  const bool ok = server.listen();
  pthread_kill(watcher.native_handle(), SIGTERM);
  watcher.join();
  return ok ? kExitOk : kExitIo;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fit, render and evaluate parametric sky models", "heliofit"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "TOML config file ([service], [fit], [scene], [cloud])");
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  RenderArgs render;
  auto* r = app.add_subcommand("render", "Render an LM sky dome to PFM or Radiance HDR");
  r->add_option("--params", render.params_file, "JSON object of parameters (sky_color_r, ..., sun_azimuth_rad)");
  r->add_option("--preset", render.preset, "Base preset: sunny, mostly_sunny, ... (default sunny)");
  r->add_option("--sky-color", render.sky, "Sky color r,g,b");
  r->add_option("--sun-color", render.sun_color, "Sun color r,g,b");
  r->add_option("--turbidity", render.turbidity, "Turbidity t");
  r->add_option("--beta", render.beta, "Sun falloff beta");
  r->add_option("--kappa", render.kappa, "Sun falloff kappa");
  r->add_option("--sun-zenith", render.zenith, "Sun zenith in degrees");
  r->add_option("--sun-azimuth", render.azimuth, "Sun azimuth in degrees");
  r->add_option("--size", render.size, "Dome size in pixels")->capture_default_str();
  r->add_option("--projection", render.projection, "skyangular or equirect_hemisphere")->capture_default_str();
  r->add_option("--format", render.format, "pfm or hdr (default: from the extension)");
  r->add_option("-o,--out", render.out, "Output file")->required();

  FitArgs fit_args;
  auto* f = app.add_subcommand("fit", "Fit the LM model to an HDR sky and append a JSONL record");
  f->add_option("input", fit_args.input, "Sky image (.pfm or .hdr)")->required();
  f->add_option("--sun", fit_args.sun, "Sun direction 'zenith,azimuth' in degrees");
  f->add_option("--lat", fit_args.lat, "Latitude in degrees north");
  f->add_option("--lon", fit_args.lon, "Longitude in degrees east");
  f->add_option("--time", fit_args.time, "Capture time, YYYY-MM-DDTHH:MM[:SS][Z|+HH:MM]");
  f->add_option("--id", fit_args.id, "Record id (default: input file stem)");
  f->add_option("-o,--out", fit_args.out, "Manifest to append to (default: stdout)");
  f->add_option("--transport", fit_args.transport, "Precomputed transport file for the image geometry");

  int env_size = 128;
  std::string t_projection = "skyangular", t_out;
  auto* t = app.add_subcommand("transport", "Precompute the light-transport matrix of the configured scene");
  t->add_option("--env-size", env_size, "Environment size")->capture_default_str();
  t->add_option("--projection", t_projection, "Environment projection")->capture_default_str();
  t->add_option("-o,--out", t_out, "Output .hftm file")->required();

  RelightArgs relight;
  auto* rl = app.add_subcommand("relight", "Render the scene under an environment map");
  rl->add_option("--transport", relight.transport, "Transport file")->required();
  rl->add_option("--env", relight.env, "Environment map")->required();
  rl->add_option("-o,--out", relight.out, "Diffuse render output (.pfm or .hdr)")->required();
  rl->add_option("--mirror", relight.mirror, "Mirror ball output (.pfm or .hdr)");
  rl->add_option("--mirror-size", relight.mirror_size, "Mirror ball size (default: render height)");
  rl->add_option("--png", relight.png, "Tonemapped preview strip (render and mirror ball)");
  rl->add_option("--exposure", relight.exposure, "Preview exposure in EV");

  std::string m_ref, m_test, m_transport;
  auto* m = app.add_subcommand("metrics", "RMSE and si-RMSE between two images");
  m->add_option("reference", m_ref, "Reference image")->required();
  m->add_option("test", m_test, "Test image")->required();
  m->add_option("--transport", m_transport, "Also compare transport renders");

  std::string c_env, c_sun;
  std::optional<double> c_threshold;
  auto* c = app.add_subcommand("classify", "Cloud coverage and weather bin of a sky image");
  c->add_option("env", c_env, "Sky image")->required();
  c->add_option("--sun", c_sun, "Sun direction 'zenith,azimuth' in degrees (default: brightest patch)");
  c->add_option("--threshold", c_threshold, "Cloud threshold on blue - red");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score a fit manifest per weather bin");
  e->add_option("--manifest", ev.manifest, "JSONL manifest")->required();
  e->add_option("--reference-dir", ev.reference_dir, "Directory with <id>.pfm reference skies")->required();
  e->add_option("--candidate-dir", ev.candidate_dir, "Directory with <id>.pfm candidate skies")->required();
  e->add_option("--transport", ev.transport, "Transport file")->required();
  e->add_option("--csv", ev.csv, "Write the per-bin report as CSV");
  e->add_option("--threshold", c_threshold, "Cloud threshold on blue - red");

  std::optional<int> s_port;
  std::optional<std::string> s_host, s_static, s_data;
  auto* s = app.add_subcommand("serve", "Run the HTTP API");
  s->add_option("--port", s_port, "Port (overrides service.port)");
  s->add_option("--host", s_host, "Bind address (overrides service.host)");
  s->add_option("--static-dir", s_static, "Directory served at /");
  s->add_option("--data-dir", s_data, "Job store directory");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& ex) {
      const int code = app.exit(ex, out, err);
      return code == 0 ? kExitOk : kExitValidation;
    }
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
    AppConfig cfg = load_config(config_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_path));
    if (c_threshold) cfg.cloud.threshold = *c_threshold;

    if (*r) return cmd_render(render, out);
    if (*f) return cmd_fit(fit_args, cfg, out);
    if (*t) return cmd_transport(env_size, t_projection, t_out, cfg, out);
    if (*rl) return cmd_relight(relight, out);
    if (*m) return cmd_metrics(m_ref, m_test, m_transport, out);
    if (*c) return cmd_classify(c_env, c_sun, cfg, out);
    if (*e) return cmd_evaluate(ev, cfg, out);
    if (*s) {
      if (s_port) cfg.service.port = *s_port;
      if (s_host) cfg.service.host = *s_host;
      if (s_static) cfg.service.static_dir = *s_static;
      if (s_data) cfg.service.data_dir = *s_data;
      cfg.validate();
      return cmd_serve(cfg, out);
    }
    return kExitInternal;
  } catch (const Rejected& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitValidation;
  } catch (const HdrIoError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitIo;
  } catch (const ConfigError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitValidation;
  } catch (const std::invalid_argument& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitValidation;
  } catch (const std::out_of_range& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitValidation;
  } catch (const std::domain_error& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& ex) {
    err << "internal error: " << ex.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace heliofit::service
