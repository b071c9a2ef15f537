#pragma once

#include <array>
#include <map>
#include <string>

#include "heliofit/color.hpp"
#include "heliofit/geometry.hpp"

namespace heliofit {

/// The 11 Lalonde-Matthews sky parameters.
struct LMParams {
  ColorRGB sky_color;
  double turbidity = 2.0;
  ColorRGB sun_color;
  double beta = 0.0;
  double kappa = 0.0;
  Direction sun;

  bool operator==(const LMParams&) const = default;
};

/// Search box for the scattering parameters.
struct ParamRanges {
  double kappa_min = 0.0, kappa_max = 1.0;
  double beta_min = 0.0, beta_max = 50.0;
  double turbidity_min = 2.0, turbidity_max = 20.0;
};

/// Perez distribution coefficients for the luminance channel.
struct PerezCoefficients {
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0, e = 0.0;
};

/// Preetham luminance-channel coefficients, each linear in turbidity.
/// Throws std::out_of_range unless 2 <= t <= 20.
PerezCoefficients preetham_coefficients(double turbidity);

/// Slopes of the coefficients with respect to turbidity.
PerezCoefficients preetham_coefficient_slopes();

/// Perez distribution F(θ, γ) with cos θ clamped to >= 0.01.
double perez_distribution(double view_zenith, double gamma, const PerezCoefficients& k);

/// F(view_zenith, gamma) / F(0, sun_zenith). Equals 1 at the zenith.
double perez_ratio(double view_zenith, double gamma, double sun_zenith, const PerezCoefficients& k);

/// exp(-β exp(-κ/γ)); the γ -> 0 limit is 1 for κ > 0 and exp(-β) for κ = 0.
double sun_falloff(double gamma, double beta, double kappa);

ColorRGB eval_sky(const Direction& l, const LMParams& p);
ColorRGB eval_sun(const Direction& l, const LMParams& p);
ColorRGB eval_lm(const Direction& l, const LMParams& p);

/// Flat key/value form: sky_color_r/g/b, turbidity, sun_color_r/g/b, beta,
/// kappa, sun_zenith_rad, sun_azimuth_rad.
std::map<std::string, double> to_key_values(const LMParams& p);

/// Inverse of to_key_values. Throws std::invalid_argument on a missing key.
LMParams from_key_values(const std::map<std::string, double>& kv);

/// Names of the 11 serialized fields, in canonical order.
const std::array<const char*, 11>& param_field_names();

/// Throws std::out_of_range if κ, β or t leave their ranges or a color is
/// negative or non-finite.
void validate_params(const LMParams& p, const ParamRanges& ranges = {});

}  // namespace heliofit
