#include <json.hpp>
#include <stdexcept>

#include "heliofit/fitter.hpp"

namespace heliofit {

namespace {

using nlohmann::json;

SunSource sun_source_from(const std::string& s) {
  if (s == "explicit") return SunSource::explicit_direction;
  if (s == "geolocation") return SunSource::geolocation;
  if (s == "image") return SunSource::image_search;
  throw std::invalid_argument("unknown sun_source '" + s + "'");
}

}  // namespace

std::string to_jsonl(const FitResult& r) {
  json j;
  j["id"] = r.id;
  for (const auto& [k, v] : to_key_values(r.params)) j[k] = v;
  j["loss_smoothing"] = r.final_loss.smoothing;
  j["loss_rendering"] = r.final_loss.rendering;
  j["loss_regularization"] = r.final_loss.regularization;
  j["loss_total"] = r.final_loss.total;
  j["loss_coarse"] = r.coarse_loss;
  j["loss_fine"] = r.fine_loss;
  j["loss_colors"] = r.colors_loss.total;
  j["iterations_colors"] = r.trace_colors.size();
  j["iterations_all"] = r.trace_all.size();
  j["trace_colors"] = r.trace_colors;
  j["trace_all"] = r.trace_all;
  j["sun_prior_zenith_rad"] = r.sun_prior.zenith;
  j["sun_prior_azimuth_rad"] = r.sun_prior.azimuth;
  j["coverage"] = r.coverage ? json(*r.coverage) : json(nullptr);
  j["weather_bin"] = r.weather_bin ? json(*r.weather_bin) : json(nullptr);
  j["flags"] = {{"rejected_zenith", r.flags.rejected_zenith},
                {"color_init_fallback", r.flags.color_init_fallback},
                {"converged_colors", r.flags.converged_colors},
                {"converged_all", r.flags.converged_all},
                {"sun_source", std::string(to_string(r.flags.sun_source))}};
  return j.dump();
}

FitResult fit_result_from_json(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed fit record: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("fit record must be a JSON object");
  try {
    FitResult r;
    r.id = j.at("id").get<std::string>();
    std::map<std::string, double> kv;
    for (const char* name : param_field_names()) kv[name] = j.at(name).get<double>();
    r.params = from_key_values(kv);
    r.final_loss.smoothing = j.value("loss_smoothing", 0.0);
    r.final_loss.rendering = j.value("loss_rendering", 0.0);
    r.final_loss.regularization = j.value("loss_regularization", 0.0);
    r.final_loss.total = j.value("loss_total", 0.0);
    r.final_loss.data = r.final_loss.total - r.final_loss.regularization;
    r.coarse_loss = j.value("loss_coarse", 0.0);
    r.fine_loss = j.value("loss_fine", 0.0);
    r.colors_loss.total = j.value("loss_colors", 0.0);
    r.trace_colors = j.value("trace_colors", std::vector<double>{});
    r.trace_all = j.value("trace_all", std::vector<double>{});
    r.sun_prior = {j.value("sun_prior_zenith_rad", r.params.sun.zenith),
                   j.value("sun_prior_azimuth_rad", r.params.sun.azimuth)};
    if (j.contains("coverage") && !j["coverage"].is_null()) r.coverage = j["coverage"].get<double>();
    if (j.contains("weather_bin") && !j["weather_bin"].is_null()) r.weather_bin = j["weather_bin"].get<std::string>();
    if (j.contains("flags")) {
      const json& f = j["flags"];
      r.flags.rejected_zenith = f.value("rejected_zenith", false);
      r.flags.color_init_fallback = f.value("color_init_fallback", false);
      r.flags.converged_colors = f.value("converged_colors", false);
      r.flags.converged_all = f.value("converged_all", false);
      r.flags.sun_source = sun_source_from(f.value("sun_source", std::string("image")));
    }
    return r;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed fit record: ") + e.what());
  }
}

}  // namespace heliofit
