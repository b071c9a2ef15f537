#include "heliofit/service/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <system_error>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

namespace heliofit::service {

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& text, const std::string& where) {
  const std::string s = trim(text);
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw ConfigError(where + ": cannot parse '" + text + "'");
  }
  return v;
}

// Reads each bound key from the environment first, then from the TOML
// table, and remembers which TOML keys were used.
class Binder {
 public:
  Binder(const toml::table& root, const EnvLookup& env) : root_(root), env_(env) {}

  template <typename T>
  void bind(std::string_view section, std::string_view key, T& field) {
    const std::string where = std::string(section) + "." + std::string(key);
    used_.insert(where);
    if (env_) {
      const std::string var = "HELIOFIT_" + upper(section) + "_" + upper(key);
      if (auto v = env_(var)) {
        from_text(*v, field, var);
        return;
      }
    }
    const toml::node* node = root_.at_path(where).node();
    if (node) from_node(*node, field, where);
  }

  /// Throws on sections or keys that were never bound.
  void reject_unknown() const {
    for (const auto& [section, node] : root_) {
      const auto* table = node.as_table();
      if (!table) throw ConfigError("top-level key '" + std::string(section.str()) + "' must be a section");
      for (const auto& [key, value] : *table) {
        const std::string where = std::string(section.str()) + "." + std::string(key.str());
        if (!used_.count(where)) throw ConfigError("unknown config key '" + where + "'");
      }
    }
  }

 private:
  static void from_text(const std::string& s, double& f, const std::string& w) { f = parse_number<double>(s, w); }
  static void from_text(const std::string& s, int& f, const std::string& w) { f = parse_number<int>(s, w); }
  static void from_text(const std::string& s, std::size_t& f, const std::string& w) {
    f = parse_number<std::size_t>(s, w);
  }
  static void from_text(const std::string& s, std::string& f, const std::string&) { f = s; }
  static void from_text(const std::string& s, bool& f, const std::string& w) {
    const std::string t = trim(s);
    if (t == "true" || t == "1") {
      f = true;
    } else if (t == "false" || t == "0") {
      f = false;
    } else {
      throw ConfigError(w + ": expected true or false, got '" + s + "'");
    }
  }
  static void from_text(const std::string& s, Vec3& f, const std::string& w) {
    double xyz[3];
    std::stringstream in(s);
    std::string part;
    int n = 0;
    while (std::getline(in, part, ',')) {
      if (n == 3) throw ConfigError(w + ": expected three comma separated numbers");
      xyz[n++] = parse_number<double>(part, w);
    }
    if (n != 3) throw ConfigError(w + ": expected three comma separated numbers");
    f = {xyz[0], xyz[1], xyz[2]};
  }

  static void from_node(const toml::node& n, double& f, const std::string& w) {
    if (auto v = n.value<double>(); v && (n.is_floating_point() || n.is_integer())) {
      f = *v;
      return;
    }
    throw ConfigError(w + ": expected a number");
  }
  static void from_node(const toml::node& n, int& f, const std::string& w) {
    const auto v = n.value_exact<std::int64_t>();
    if (!v || *v < std::numeric_limits<int>::min() || *v > std::numeric_limits<int>::max()) {
      throw ConfigError(w + ": expected an integer");
    }
    f = static_cast<int>(*v);
  }
  static void from_node(const toml::node& n, std::size_t& f, const std::string& w) {
    const auto v = n.value_exact<std::int64_t>();
    if (!v || *v < 0) throw ConfigError(w + ": expected a non-negative integer");
    f = static_cast<std::size_t>(*v);
  }
  static void from_node(const toml::node& n, bool& f, const std::string& w) {
    const auto v = n.value_exact<bool>();
    if (!v) throw ConfigError(w + ": expected true or false");
    f = *v;
  }
  static void from_node(const toml::node& n, std::string& f, const std::string& w) {
    const auto v = n.value_exact<std::string>();
    if (!v) throw ConfigError(w + ": expected a string");
    f = *v;
  }
  static void from_node(const toml::node& n, Vec3& f, const std::string& w) {
    const auto* arr = n.as_array();
    if (!arr || arr->size() != 3) throw ConfigError(w + ": expected an array of three numbers");
    double xyz[3];
    for (std::size_t i = 0; i < 3; ++i) from_node((*arr)[i], xyz[i], w);
    f = {xyz[0], xyz[1], xyz[2]};
  }

  const toml::table& root_;
  const EnvLookup& env_;
  std::set<std::string> used_;
};

void bind_all(Binder& b, AppConfig& c) {
  auto& s = c.service;
  b.bind("service", "host", s.host);
  b.bind("service", "port", s.port);
  b.bind("service", "static_dir", s.static_dir);
  b.bind("service", "data_dir", s.data_dir);
  b.bind("service", "max_upload_bytes", s.max_upload_bytes);
  b.bind("service", "queue_depth", s.queue_depth);
  b.bind("service", "preview_size", s.preview_size);
  b.bind("service", "threads", s.threads);

  auto& f = c.fit;
  b.bind("fit", "kappa_min", f.ranges.kappa_min);
  b.bind("fit", "kappa_max", f.ranges.kappa_max);
  b.bind("fit", "beta_min", f.ranges.beta_min);
  b.bind("fit", "beta_max", f.ranges.beta_max);
  b.bind("fit", "turbidity_min", f.ranges.turbidity_min);
  b.bind("fit", "turbidity_max", f.ranges.turbidity_max);
  b.bind("fit", "kappa_step", f.kappa_step);
  b.bind("fit", "fine_scale", f.fine_scale);
  b.bind("fit", "coarse_step", f.coarse_step);
  b.bind("fit", "iterations", f.iterations);
  b.bind("fit", "patience", f.patience);
  b.bind("fit", "min_improvement", f.min_improvement);
  b.bind("fit", "learning_rate", f.learning_rate);
  b.bind("fit", "adam_beta1", f.adam_beta1);
  b.bind("fit", "adam_beta2", f.adam_beta2);
  b.bind("fit", "adam_epsilon", f.adam_epsilon);
  b.bind("fit", "smoothing_weight", f.smoothing_weight);
  b.bind("fit", "rendering_weight", f.rendering_weight);
  b.bind("fit", "color_floor", f.regularization.floor);
  b.bind("fit", "color_ceiling", f.regularization.ceiling);
  b.bind("fit", "chroma_tolerance_deg", f.regularization.chroma_tolerance_deg);
  b.bind("fit", "penalty_factor", f.regularization.penalty_factor);
  b.bind("fit", "sun_mask_deg", f.sun_mask_deg);
  b.bind("fit", "zenith_cutoff_deg", f.zenith_cutoff_deg);
  b.bind("fit", "blur_kernel", f.blur_kernel);
  b.bind("fit", "sun_patch_deg", f.sun_patch_deg);
  b.bind("fit", "sun_search_deg", f.sun_search_deg);
  b.bind("fit", "refine_sun", f.refine_sun);
  b.bind("fit", "grid_solve_colors", f.grid_solve_colors);
  b.bind("fit", "grid_sun_intervals", f.grid_sun_intervals);

  auto& sc = c.scene;
  b.bind("scene", "sphere_center", sc.sphere_center);
  b.bind("scene", "sphere_radius", sc.sphere_radius);
  b.bind("scene", "plane_height", sc.plane_height);
  b.bind("scene", "albedo", sc.albedo);
  b.bind("scene", "camera_position", sc.camera_position);
  b.bind("scene", "camera_target", sc.camera_target);
  b.bind("scene", "fov_deg", sc.fov_deg);
  b.bind("scene", "width", sc.width);
  b.bind("scene", "height", sc.height);

  b.bind("cloud", "threshold", c.cloud.threshold);
  b.bind("cloud", "sun_mask_deg", c.cloud.sun_mask_deg);
  b.bind("cloud", "percentile", c.cloud.percentile);
}

}  // namespace

void AppConfig::validate() const {
  const auto& s = service;
  if (s.port < 0 || s.port > 65535) throw ConfigError("service.port must lie in [0, 65535]");
  if (s.max_upload_bytes == 0) throw ConfigError("service.max_upload_bytes must be positive");
  if (s.queue_depth == 0) throw ConfigError("service.queue_depth must be positive");
  if (s.preview_size < 8 || s.preview_size > 1024) throw ConfigError("service.preview_size must lie in [8, 1024]");
  if (s.threads < 1) throw ConfigError("service.threads must be positive");
  if (!(cloud.percentile > 0.0 && cloud.percentile <= 100.0)) throw ConfigError("cloud.percentile must lie in (0, 100]");
  if (!(cloud.sun_mask_deg >= 0.0 && cloud.sun_mask_deg < 90.0)) throw ConfigError("cloud.sun_mask_deg must lie in [0, 90)");
  if (!std::isfinite(cloud.threshold)) throw ConfigError("cloud.threshold must be finite");
  try {
    fit.validate();
    scene.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
  };
}

AppConfig parse_config(std::string_view toml_text, const EnvLookup& env) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "config parse error at line " << e.source().begin.line << ": " << e.description();
    throw ConfigError(os.str());
  }
  AppConfig cfg;
  Binder b(root, env);
  bind_all(b, cfg);
  b.reject_unknown();
  cfg.validate();
  return cfg;
}

AppConfig load_config(const std::optional<std::filesystem::path>& file, const EnvLookup& env) {
  if (!file) return parse_config("", env);
  std::ifstream in(*file, std::ios::binary);
  if (!in) {
    throw std::filesystem::filesystem_error("cannot open config", *file,
                                            std::make_error_code(std::errc::no_such_file_or_directory));
  }
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), env);
}

}  // namespace heliofit::service
