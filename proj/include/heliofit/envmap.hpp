#pragma once

#include "heliofit/image.hpp"
#include "heliofit/sky_model.hpp"

namespace heliofit {

/// Evaluates the LM model at every valid pixel center; invalid pixels stay 0.
HdrImage render_lm_dome(const LMParams& p, int size, Projection projection = Projection::skyangular);

/// pct-th percentile of the pooled channel values of valid pixels, with
/// linear interpolation between order statistics.
double valid_percentile(const HdrImage& img, double pct);

/// Divides by the pct-th percentile and folds the divisor into
/// exposure_scale. Throws std::domain_error when the percentile is not
/// positive.
HdrImage percentile_expose(const HdrImage& img, double pct = 99.0);

/// I' = 2·log2(I + 1) - 1. Throws std::domain_error on negative input.
HdrImage tonemap_forward(const HdrImage& img);
/// I = 2^((I' + 1) / 2) - 1.
HdrImage tonemap_inverse(const HdrImage& img);

double tonemap_forward(double linear);
double tonemap_inverse(double encoded);

/// Mirror about the vertical image axis (azimuth φ -> π - φ).
HdrImage flip_x(const HdrImage& img);
/// Mirror about the horizontal image axis (azimuth φ -> -φ).
HdrImage flip_y(const HdrImage& img);
/// Rotates the dome by delta radians of azimuth (bilinear resampling).
HdrImage rotate_azimuth(const HdrImage& img, double delta);

/// k×k box filter over valid pixels only (k odd).
HdrImage box_blur(const HdrImage& img, int kernel);

/// Halves the resolution by averaging the valid pixels of each 2×2 block.
HdrImage downsample2x(const HdrImage& img);

/// Solid-angle weighted sum of radiance over valid pixels.
ColorRGB radiant_energy(const HdrImage& img);

/// Display encoding used for previews and cloud thresholding: divide by the
/// exposure divisor, apply 1/2.2 gamma, clamp to [0, 1].
double display_encode(double linear, double divisor);

}  // namespace heliofit
