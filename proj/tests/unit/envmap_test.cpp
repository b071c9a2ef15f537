#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "heliofit/envmap.hpp"
#include "heliofit/hdr_io.hpp"
#include "heliofit/projection.hpp"
#include "support.hpp"

using namespace heliofit;

namespace {

LMParams sunny(double zenith, double azimuth, double beta = 8.0) {
  LMParams p;
  p.sky_color = {0.3, 0.5, 0.9};
  p.turbidity = 4.0;
  p.sun_color = {30.0, 28.0, 25.0};
  p.beta = beta;
  p.kappa = 0.3;
  p.sun = Direction::make(zenith, azimuth);
  return p;
}

std::pair<int, int> argmax_luminance(const HdrImage& img) {
  std::pair<int, int> best{0, 0};
  double best_v = -1.0;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (!img.valid(x, y)) continue;
      const double v = img.at(x, y).luminance();
      if (v > best_v) {
        best_v = v;
        best = {x, y};
      }
    }
  }
  return best;
}

double pixel_distance(const EnvGeometry& g, std::pair<int, int> px, const Direction& d) {
  const auto [u, v] = direction_to_pixel(g, d);
  return std::hypot(px.first + 0.5 - u, px.second + 0.5 - v);
}

}  // namespace

TEST_CASE("skyangular mapping examples") {
  const auto c = skyangular_to_direction(0.5, 0.5);
  REQUIRE(c);
  CHECK(c->zenith == 0.0);
  const auto rim = skyangular_to_direction(1.0, 0.5);
  REQUIRE(rim);
  CHECK(rim->zenith == doctest::Approx(kHalfPi));
  CHECK(rim->azimuth == doctest::Approx(0.0));
  const auto mid = skyangular_to_direction(0.75, 0.5);
  REQUIRE(mid);
  CHECK(mid->zenith == doctest::Approx(kPi / 4));
  CHECK_FALSE(skyangular_to_direction(0.99, 0.99).has_value());

  const auto [u0, v0] = direction_to_skyangular(kZenith);
  CHECK(u0 == doctest::Approx(0.5));
  CHECK(v0 == doctest::Approx(0.5));
  const auto [u1, v1] = direction_to_skyangular(Direction::make(kPi / 4, kPi));
  CHECK(u1 == doctest::Approx(0.25));
  CHECK(v1 == doctest::Approx(0.5));
  CHECK_THROWS_AS(direction_to_skyangular(Direction::make(2.0, 0.0)), std::domain_error);
}

TEST_CASE("projection round trip stays within half a pixel") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Projection proj : {Projection::skyangular, Projection::equirect_hemisphere}) {
    CAPTURE(to_string(proj));
    const EnvGeometry g = sky_geometry(128, proj);
    const double half_pixel = 0.5 * kHalfPi / (proj == Projection::skyangular ? 64.0 : 64.0);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
      const Direction d = Direction::make(std::acos(u(rng)), kTwoPi * u(rng));
      const auto [px, py] = direction_to_pixel(g, d);
      const int x = std::min(g.width - 1, static_cast<int>(px));
      const int y = std::min(g.height - 1, static_cast<int>(py));
      const auto back = pixel_direction(g, x, y);
      if (!back) continue;  // rim directions whose nearest center falls outside the disk
      worst = std::max(worst, angle_between(*back, d));
    }
    CHECK(worst <= half_pixel * std::sqrt(2.0) * 1.0001);
  }
}

TEST_CASE("solid angles") {
  for (Projection proj : {Projection::skyangular, Projection::equirect_hemisphere}) {
    const auto sa = solid_angles(sky_geometry(128, proj));
    CHECK(sa.total() >= kTwoPi * 0.99);
    CHECK(sa.total() <= kTwoPi * 1.01);
  }
  const EnvGeometry g = sky_geometry(128, Projection::skyangular);
  const auto sa = solid_angles(g);
  CHECK(sa.weights[g.width * 64 + 64] > 0.0);
  CHECK(sa.weights[0] == 0.0);
  const auto fine = solid_angles(sky_geometry(256, Projection::skyangular));
  const double ratio = *std::max_element(sa.weights.begin(), sa.weights.end()) /
                       *std::max_element(fine.weights.begin(), fine.weights.end());
  CHECK(ratio == doctest::Approx(4.0).epsilon(0.05));
  CHECK(solid_angles(EnvGeometry{8, 8, Projection::camera}).total() == 0.0);
}

TEST_CASE("sky geometry and validity") {
  CHECK(sky_geometry(64, Projection::skyangular) == EnvGeometry{64, 64, Projection::skyangular});
  CHECK(sky_geometry(64, Projection::equirect_hemisphere) == EnvGeometry{128, 32, Projection::equirect_hemisphere});
  const HdrImage img(8, 8, Projection::skyangular);
  CHECK_FALSE(img.valid(0, 0));
  CHECK(img.valid(4, 4));
  CHECK(HdrImage(8, 8, Projection::camera).valid_count() == 64);
  CHECK(projection_from_string(to_string(Projection::equirect_hemisphere)) == Projection::equirect_hemisphere);
  CHECK_THROWS_AS(projection_from_string("cubemap"), std::invalid_argument);
}

TEST_CASE("nearest pixel and bilinear lookup") {
  const EnvGeometry g = sky_geometry(32, Projection::skyangular);
  const auto d = pixel_direction(g, 20, 9);
  REQUIRE(d);
  CHECK(nearest_pixel(g, *d) == static_cast<std::size_t>(9 * 32 + 20));
  std::mt19937_64 rng(5);
  const HdrImage img = testing::random_image(g, rng);
  const ColorRGB at = sample_bilinear(img, *d);
  CHECK(at.r == doctest::Approx(img.at(20, 9).r).epsilon(1e-6));
  const HdrImage flat = testing::constant_image(g, {2.0, 3.0, 4.0});
  const ColorRGB rim = sample_bilinear(flat, Direction::make(kHalfPi - 1e-3, 0.7));
  CHECK(rim.g == doctest::Approx(3.0));
}

TEST_CASE("render_lm_dome") {
  SUBCASE("zero colors give a black dome") {
    LMParams p = sunny(0.5, 1.0);
    p.sky_color = {};
    p.sun_color = {};
    const HdrImage img = render_lm_dome(p, 32);
    CHECK(std::all_of(img.data().begin(), img.data().end(), [](float v) { return v == 0.0f; }));
  }
  SUBCASE("matches a direct per-pixel evaluation") {
    const LMParams p = sunny(0.7, 2.2);
    const HdrImage img = render_lm_dome(p, 8);
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        const auto d = pixel_direction(img.geometry(), x, y);
        if (!d) {
          CHECK(img.at(x, y) == ColorRGB{});
          continue;
        }
        const ColorRGB want = eval_lm(*d, p);
        CHECK(img.at(x, y).r == doctest::Approx(static_cast<float>(want.r)));
        CHECK(img.at(x, y).b == doctest::Approx(static_cast<float>(want.b)));
      }
    }
  }
  SUBCASE("brightest pixel sits on the sun") {
    for (double beta : {1.0, 5.0, 40.0}) {
      for (Projection proj : {Projection::skyangular, Projection::equirect_hemisphere}) {
        const LMParams p = sunny(1.1, 4.0, beta);
        const HdrImage img = render_lm_dome(p, 128, proj);
        CHECK(pixel_distance(img.geometry(), argmax_luminance(img), p.sun) <= 1.0);
      }
    }
  }
  CHECK_THROWS_AS(render_lm_dome(sunny(0.5, 1.0), 16, Projection::camera), std::invalid_argument);
}

TEST_CASE("percentile exposure") {
  const HdrImage five = testing::constant_image(sky_geometry(16, Projection::skyangular), {5.0, 5.0, 5.0});
  const HdrImage exposed = percentile_expose(five);
  CHECK(exposed.exposure_scale() == 5.0);
  CHECK(exposed.at(8, 8).g == 1.0);

  HdrImage ramp(10, 10, Projection::camera);
  for (int i = 0; i < 100; ++i) ramp.set(static_cast<std::size_t>(i), {i + 1.0, i + 1.0, i + 1.0});
  CHECK(valid_percentile(ramp, 99.0) == doctest::Approx(99.01).epsilon(1e-12));
  CHECK(valid_percentile(ramp, 50.0) == doctest::Approx(50.5));
  CHECK(valid_percentile(ramp, 0.0) == 1.0);
  CHECK(valid_percentile(ramp, 100.0) == 100.0);

  const HdrImage black(16, 16, Projection::skyangular);
  CHECK_THROWS_AS(percentile_expose(black), std::domain_error);
  CHECK_THROWS_AS(valid_percentile(ramp, 101.0), std::invalid_argument);
}

TEST_CASE("tonemap chain") {
  CHECK(tonemap_forward(0.0) == -1.0);
  CHECK(tonemap_forward(1.0) == 1.0);
  CHECK(tonemap_inverse(-1.0) == 0.0);
  CHECK(tonemap_inverse(1.0) == 1.0);
  CHECK_THROWS_AS(tonemap_forward(-0.5), std::domain_error);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1e4);
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double x = u(rng);
    worst = std::max(worst, std::abs(tonemap_inverse(tonemap_forward(x)) - x));
  }
  CHECK(worst <= 1e-5);
  const HdrImage img = testing::constant_image(sky_geometry(8, Projection::skyangular), {1.0, 3.0, 0.0});
  const HdrImage enc = tonemap_forward(img);
  CHECK(enc.encoding() == Encoding::log_tonemapped);
  CHECK(enc.at(4, 4).r == 1.0f);
  CHECK(enc.at(4, 4).g == 3.0f);
  CHECK(enc.at(4, 4).b == -1.0f);
  CHECK(testing::max_abs_diff(tonemap_inverse(enc), img) <= 1e-6);
}

TEST_CASE("augmentation transforms") {
  const LMParams p = sunny(0.8, 1.0, 20.0);
  const HdrImage dome = render_lm_dome(p, 64);
  SUBCASE("rotation by zero and by a full turn") {
    CHECK(testing::max_abs_diff(rotate_azimuth(dome, 0.0), dome) <= 1e-4);
    const HdrImage full = rotate_azimuth(dome, kTwoPi);
    double worst = 0.0;
    for (std::size_t i = 0; i < dome.pixel_count(); ++i) {
      if (!dome.valid(i)) continue;
      for (int c = 0; c < 3; ++c) {
        worst = std::max(worst, std::abs(full.at(i)[c] - dome.at(i)[c]) / std::max(1.0, dome.at(i)[c]));
      }
    }
    CHECK(worst <= 1e-4);
  }
  SUBCASE("rotation moves the sun") {
    const HdrImage big = render_lm_dome(p, 128);
    for (double delta : {0.5, 2.0, -1.3}) {
      const HdrImage rot = rotate_azimuth(big, delta);
      const Direction moved = Direction::make(p.sun.zenith, p.sun.azimuth + delta);
      CHECK(pixel_distance(rot.geometry(), argmax_luminance(rot), moved) <= 1.0);
    }
  }
  SUBCASE("flips mirror the sun azimuth") {
    for (Projection proj : {Projection::skyangular, Projection::equirect_hemisphere}) {
      const HdrImage d = render_lm_dome(p, 128, proj);
      CHECK(pixel_distance(d.geometry(), argmax_luminance(flip_x(d)),
                           Direction::make(p.sun.zenith, kPi - p.sun.azimuth)) <= 1.0);
      CHECK(pixel_distance(d.geometry(), argmax_luminance(flip_y(d)),
                           Direction::make(p.sun.zenith, -p.sun.azimuth)) <= 1.0);
      CHECK(testing::max_abs_diff(flip_x(flip_x(d)), d) == 0.0);
    }
  }
  SUBCASE("box blur keeps constants") {
    const HdrImage flat = testing::constant_image(sky_geometry(32, Projection::skyangular), {3.0, 3.0, 3.0});
    CHECK(testing::max_abs_diff(box_blur(flat, 5), flat) <= 1e-6);
    CHECK(testing::max_abs_diff(box_blur(dome, 1), dome) == 0.0);
    CHECK_THROWS_AS(box_blur(flat, 4), std::invalid_argument);
  }
  SUBCASE("downsampling matches a coarser render") {
    const HdrImage fine = render_lm_dome(sunny(0.8, 1.0, 2.0), 128);
    const HdrImage coarse = render_lm_dome(sunny(0.8, 1.0, 2.0), 64);
    const HdrImage down = downsample2x(fine);
    double worst = 0.0;
    const DomeTable t = make_dome_table(coarse.geometry());
    for (std::size_t k = 0; k < t.valid_pixels.size(); ++k) {
      const std::size_t i = t.valid_pixels[k];
      if (angle_between(t.directions[k], sunny(0.8, 1.0).sun.to_vector()) < 0.2) continue;
      if (t.zenith[k] > 1.45) continue;  // rim pixels average fewer samples
      worst = std::max(worst, std::abs(down.at(i).b - coarse.at(i).b) / coarse.at(i).b);
    }
    CHECK(worst <= 0.02);
  }
}

TEST_CASE("radiant energy and display encoding") {
  const HdrImage one = testing::constant_image(sky_geometry(128, Projection::skyangular), {1.0, 1.0, 1.0});
  CHECK(radiant_energy(one).r == doctest::Approx(kTwoPi).epsilon(0.01));
  CHECK(display_encode(1.0, 1.0) == 1.0);
  CHECK(display_encode(4.0, 1.0) == 1.0);
  CHECK(display_encode(-1.0, 1.0) == 0.0);
  CHECK(display_encode(0.5, 1.0) == doctest::Approx(std::pow(0.5, 1.0 / 2.2)));
  CHECK(display_encode(0.5, 0.0) == 0.0);
}

TEST_CASE("PFM round trip is bit exact") {
  testing::TempDir dir("pfm");
  std::mt19937_64 rng(21);
  for (Projection proj : {Projection::skyangular, Projection::equirect_hemisphere}) {
    const HdrImage img = testing::random_image(sky_geometry(32, proj), rng, 0.0, 1e4);
    write_hdr(dir / "a.pfm", img);
    const HdrImage back = read_hdr(dir / "a.pfm");
    CHECK(back.geometry() == img.geometry());
    CHECK(std::equal(back.data().begin(), back.data().end(), img.data().begin()));
  }
  HdrImage cam(7, 3, Projection::camera);
  cam.set(6, 2, {1.5f, 2.5f, 0.25f});
  write_hdr(dir / "cam.pfm", cam);
  CHECK(read_hdr(dir / "cam.pfm", Projection::camera).at(6, 2) == ColorRGB{1.5, 2.5, 0.25});
}

TEST_CASE("RGBE codec") {
  CHECK(rgbe_to_float({128, 128, 128, 129}) == ColorRGB{1.00390625, 1.00390625, 1.00390625});
  CHECK(rgbe_to_float({64, 32, 16, 130}) == ColorRGB{1.0078125, 0.5078125, 0.2578125});
  CHECK(rgbe_to_float({0, 0, 0, 0}) == ColorRGB{});
  CHECK(rgbe_to_float({255, 0, 128, 120}) == ColorRGB{0.00389862060546875, 7.62939453125e-06, 0.00196075439453125});
  const Rgbe zero = float_to_rgbe(0.0, 0.0, 0.0);
  CHECK(zero.e == 0);
  const Rgbe one = float_to_rgbe(1.0, 0.5, 0.25);
  CHECK(one.e == 129);
  CHECK(one.r == 128);
  CHECK(one.g == 64);
  CHECK(one.b == 32);
}

TEST_CASE("hand built RGBE file") {
  std::string bytes = "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y 2 +X 2\n";
  const unsigned char px[] = {128, 128, 128, 129, 64, 32, 16, 130, 0, 0, 0, 0, 255, 0, 128, 120};
  bytes.append(reinterpret_cast<const char*>(px), sizeof(px));
  const HdrImage img = decode_hdr(bytes, Projection::camera);
  REQUIRE(img.width() == 2);
  CHECK(img.at(0, 0).r == doctest::Approx(1.00390625));
  CHECK(img.at(1, 0).g == doctest::Approx(0.5078125));
  CHECK(img.at(0, 1) == ColorRGB{});
  CHECK(img.at(1, 1).r == doctest::Approx(255.5 / 65536.0));
}

TEST_CASE("RGBE round trip stays within quantization") {
  testing::TempDir dir("rgbe");
  std::mt19937_64 rng(4);
  const HdrImage img = testing::random_image(sky_geometry(64, Projection::equirect_hemisphere), rng, 0.01, 1e3);
  write_hdr(dir / "a.hdr", img);
  const HdrImage back = read_hdr(dir / "a.hdr");
  CHECK(back.projection() == Projection::equirect_hemisphere);
  double worst = 0.0;
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const ColorRGB a = img.at(i);
    const ColorRGB b = back.at(i);
    const double peak = std::max({a.r, a.g, a.b});
    for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(a[c] - b[c]) / peak);
  }
  CHECK(worst <= 0.01);
}

TEST_CASE("HDR decode errors are typed") {
  auto kind_of = [](const std::string& bytes) {
    try {
      decode_hdr(bytes);
    } catch (const HdrIoError& e) {
      return e.kind();
    }
    FAIL("decode succeeded");
    return HdrIoError::Kind::open_failed;
  };
  const std::string png("\x89PNG\r\n\x1a\n\0\0\0\rIHDR", 16);
  CHECK(kind_of(png) == HdrIoError::Kind::unsupported_format);
  CHECK(kind_of("PF\n-4 4\n-1.0\n") == HdrIoError::Kind::malformed_header);
  CHECK(kind_of("PF\n4 4\n0\n") == HdrIoError::Kind::malformed_header);
  CHECK(kind_of("PF\n4 4\n-1.0\n" + std::string(40, '\0')) == HdrIoError::Kind::truncated);
  CHECK(kind_of("#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y 2 +X 2\n" + std::string(8, '\1')) ==
        HdrIoError::Kind::truncated);
  CHECK(kind_of("#?RADIANCE\nFORMAT=32-bit_rle_xyze\n\n-Y 2 +X 2\n") == HdrIoError::Kind::unsupported_format);
  CHECK(kind_of("#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y two +X 2\n") == HdrIoError::Kind::malformed_header);

  testing::TempDir dir("errors");
  CHECK_THROWS_AS(read_hdr(dir / "missing.pfm"), HdrIoError);
  {
    std::ofstream(dir / "image.png", std::ios::binary) << png;
  }
  try {
    read_hdr(dir / "image.png");
    FAIL("png accepted");
  } catch (const HdrIoError& e) {
    CHECK(e.kind() == HdrIoError::Kind::unsupported_format);
  }
  CHECK_FALSE(format_from_extension("a.exr").has_value());
  CHECK(format_from_extension("A.HDR") == HdrFormat::rgbe);
  CHECK_THROWS_AS(write_hdr(dir / "out.exr", HdrImage(2, 2)), HdrIoError);
}
