#include <doctest.h>

#include <cmath>
#include <random>

#include "heliofit/envmap.hpp"
#include "heliofit/fitter.hpp"
#include "heliofit/projection.hpp"
#include "support.hpp"

using namespace heliofit;

namespace {

constexpr int kDome = 32;

struct Rig {
  TransportMatrix matrix;
  TransportOperator op;
  explicit Rig(int dome = kDome)
      : matrix([dome] {
          SceneSpec s;
          s.width = 24;
          s.height = 24;
          return build_transport(s, dome);
        }()),
        op(matrix) {}
};

const Rig& rig() {
  static const Rig r;
  return r;
}

LMParams truth(double kappa = 0.3, double beta = 4.0, double turbidity = 6.0) {
  LMParams p;
  p.sky_color = {0.35, 0.55, 0.9};
  p.turbidity = turbidity;
  p.sun_color = {12.0, 11.0, 9.5};
  p.beta = beta;
  p.kappa = kappa;
  p.sun = Direction::make(0.7, 2.1);
  return p;
}

FitConfig exact_config() {
  FitConfig c;
  c.blur_kernel = 1;
  c.grid_sun_intervals = 0;
  c.grid_solve_colors = false;
  return c;
}

FitConfig quick_config() {
  FitConfig c;
  c.iterations = 60;
  c.grid_sun_intervals = 128;
  return c;
}

}  // namespace

TEST_CASE("fit config validation") {
  FitConfig c;
  CHECK_NOTHROW(c.validate());
  c.kappa_step = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = FitConfig{};
  c.ranges.beta_min = 60.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = FitConfig{};
  c.blur_kernel = 4;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = FitConfig{};
  c.patience = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("grid values") {
  CHECK(grid_values(0.0, 1.0, 0.1).size() == 11);
  CHECK(grid_values(0.0, 1.0, 0.1).back() == 1.0);
  CHECK(grid_values(2.0, 20.0, 2.0) == std::vector<double>{2, 4, 6, 8, 10, 12, 14, 16, 18, 20});
  CHECK(grid_values(0.0, 50.0, 2.0).size() == 26);
  CHECK(grid_values(3.0, 3.0, 1.0) == std::vector<double>{3.0});
  CHECK_THROWS_AS(grid_values(0.0, 1.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(grid_values(1.0, 0.0, 0.1), std::invalid_argument);
}

TEST_CASE("adam") {
  const AdamHyper h{0.1, 0.9, 0.999, 1e-8};
  SUBCASE("zero gradient") {
    AdamState s(2);
    const auto d = adam_step(s, {0.0, 0.0}, h);
    CHECK(d[0] == 0.0);
    CHECK(d[1] == 0.0);
  }
  SUBCASE("first step moves by the learning rate") {
    AdamState s(3);
    const auto d = adam_step(s, {2.5, -0.003, 40.0}, h);
    CHECK(d[0] == doctest::Approx(-0.1).epsilon(1e-8));
    CHECK(d[1] == doctest::Approx(0.1).epsilon(1e-5));
    CHECK(d[2] == doctest::Approx(-0.1).epsilon(1e-8));
  }
  SUBCASE("three constant steps") {
    AdamState s(1);
    const double m[] = {0.1, 0.19, 0.271};
    const double v[] = {0.001, 0.001999, 0.002997001};
    for (int i = 0; i < 3; ++i) {
      const auto d = adam_step(s, {1.0}, h);
      CHECK(s.step == i + 1);
      CHECK(s.m[0] == doctest::Approx(m[i]).epsilon(1e-14));
      CHECK(s.v[0] == doctest::Approx(v[i]).epsilon(1e-14));
      CHECK(d[0] == doctest::Approx(-0.09999999900000002).epsilon(1e-12));
    }
  }
  SUBCASE("gradient size is fixed once running") {
    AdamState s(0);
    adam_step(s, {1.0, 2.0}, h);
    CHECK_THROWS_AS(adam_step(s, {1.0}, h), std::invalid_argument);
  }
}

TEST_CASE("color regularization") {
  const RegularizationConfig cfg;
  const ColorRGB gray{1.0, 1.0, 1.0};
  CHECK(color_violations(gray, gray, cfg) == 0);
  CHECK(color_violations(gray * 50.0, ColorRGB{0.1, 0.2, 0.9}, cfg) == 0);
  CHECK(color_violations(gray, ColorRGB{0.0, 1.0, 0.0}, cfg) == 1);
  CHECK(color_violations(ColorRGB{0.1, 0.2, 0.9}, gray, cfg) == 1);  // a blue sun is not allowed
  CHECK(color_violations(ColorRGB{}, gray, cfg) == 2);                // below the floor, no chroma
  CHECK(color_violations(gray * 2e6, gray, cfg) == 1);
  CHECK(color_regularization(gray, ColorRGB{0.0, 1.0, 0.0}, cfg, 3.5) == 3.5);
  CHECK(chroma_angle_deg(gray, gray) == doctest::Approx(0.0));
  CHECK(chroma_angle_deg(ColorRGB{}, gray) == 90.0);

  // A color exactly at the tolerance from the gray axis is still allowed.
  RegularizationConfig at;
  const ColorRGB tilted{1.0, 1.0, 1.3};
  at.chroma_tolerance_deg = chroma_angle_deg(tilted, gray);
  CHECK(color_violations(gray, tilted, at) == 0);
  CHECK(color_violations(tilted, gray, at) == 0);
  at.chroma_tolerance_deg = std::nextafter(at.chroma_tolerance_deg, 0.0);
  CHECK(color_violations(tilted, gray, at) == 1);
}

TEST_CASE("locate_sun") {
  SUBCASE("finds the rendered sun") {
    for (double z : {0.2, 0.7, 1.1}) {
      LMParams p = truth(0.5, 1.0);
      p.sun = Direction::make(z, 4.0);
      const HdrImage img = render_lm_dome(p, 128);
      CHECK(rad_to_deg(angle_between(locate_sun(img, std::nullopt), p.sun)) <= 2.0);
    }
  }
  SUBCASE("constant image picks the zenith-most patch") {
    const HdrImage flat = testing::constant_image(sky_geometry(64, Projection::skyangular), {1.0, 1.0, 1.0});
    FitConfig c;
    c.sun_patch_deg = 5.0;
    CHECK(rad_to_deg(locate_sun(flat, std::nullopt, c).zenith) <= 2.0);
  }
  SUBCASE("a prior keeps the search local") {
    LMParams p = truth(0.5, 20.0);
    p.sun = Direction::make(0.9, 1.0);
    const HdrImage img = render_lm_dome(p, 64);
    const Direction prior = Direction::make(0.9, 1.0 + deg_to_rad(30.0) / std::sin(0.9));
    const Direction got = locate_sun(img, prior);
    CHECK(rad_to_deg(angle_between(got, prior)) <= 10.0 + 1e-9);
  }
  CHECK_THROWS_AS(locate_sun(HdrImage(8, 8, Projection::camera), std::nullopt), std::invalid_argument);
}

TEST_CASE("init_colors") {
  const EnvGeometry g = sky_geometry(64, Projection::skyangular);
  const Direction sun = Direction::make(0.6, 1.0);
  SUBCASE("constant image") {
    const InitialColors c = init_colors(testing::constant_image(g, {2.0, 3.0, 4.0}), sun);
    CHECK(c.sky.g == doctest::Approx(3.0));
    CHECK(c.sun.b == doctest::Approx(4.0));
    CHECK_FALSE(c.fallback);
  }
  SUBCASE("the sun disk is excluded") {
    HdrImage img = testing::constant_image(g, {1.0, 1.0, 1.0});
    const DomeTable t = make_dome_table(g);
    for (std::size_t k = 0; k < t.valid_pixels.size(); ++k) {
      if (angle_between(t.directions[k], sun.to_vector()) <= deg_to_rad(30.0)) img.set(t.valid_pixels[k], {100, 100, 100});
    }
    const InitialColors c = init_colors(img, sun);
    CHECK(c.sky.r == doctest::Approx(1.0));
    CHECK(c.sun.r == doctest::Approx(1.0));
  }
  SUBCASE("weighted mean oracle") {
    std::mt19937_64 rng(31);
    const HdrImage img = testing::random_image(g, rng);
    const DomeTable t = make_dome_table(g);
    double acc = 0.0, w = 0.0;
    for (std::size_t k = 0; k < t.valid_pixels.size(); ++k) {
      if (angle_between(t.directions[k], sun.to_vector()) <= deg_to_rad(30.0)) continue;
      acc += img.at(t.valid_pixels[k]).g * t.solid_angle[k];
      w += t.solid_angle[k];
    }
    CHECK(init_colors(img, sun).sky.g == doctest::Approx(acc / w).epsilon(1e-9));
  }
  SUBCASE("mask covering everything falls back") {
    const InitialColors c = init_colors(testing::constant_image(g, {2.0, 2.0, 2.0}), kZenith, 120.0);
    CHECK(c.fallback);
    CHECK(c.sky.r == doctest::Approx(2.0));
  }
}

TEST_CASE("smoothing loss") {
  const EnvGeometry g = sky_geometry(32, Projection::skyangular);
  std::mt19937_64 rng(37);
  const HdrImage target = testing::random_image(g, rng);
  CHECK(smoothing_loss_l1(box_blur(target, 5), target) == doctest::Approx(0.0));
  CHECK(smoothing_loss_l1(testing::constant_image(g, {3, 3, 3}), testing::constant_image(g, {5, 5, 5})) ==
        doctest::Approx(2.0));
  const HdrImage cand = testing::random_image(g, rng);
  const HdrImage blurred = box_blur(target, 3);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < g.pixel_count(); ++i) {
    if (!cand.valid(i)) continue;
    for (int c = 0; c < 3; ++c, ++n) sum += std::abs(cand.at(i)[c] - blurred.at(i)[c]);
  }
  CHECK(smoothing_loss_l1(cand, target, 3) == doctest::Approx(sum / n).epsilon(1e-9));
}

TEST_CASE("objective matches its definition") {
  const LMParams p = truth();
  const HdrImage target = render_lm_dome(p, kDome);
  FitConfig c;
  const FitProblem problem(target, rig().op, rig().matrix.env, p.sun, c);
  LMParams q = p;
  q.kappa = 0.5;
  q.sky_color = p.sky_color * 1.2;
  const HdrImage cand = render_lm_dome(q, kDome);
  const LossTerms l = problem.evaluate(q);
  CHECK(l.smoothing == doctest::Approx(smoothing_loss_l1(cand, target, 5)).epsilon(1e-5));
  CHECK(l.rendering == doctest::Approx(render_loss_l1(cand, target, rig().matrix)).epsilon(1e-5));
  CHECK(l.data == doctest::Approx(l.smoothing + l.rendering));
  CHECK(l.total == l.data);
  CHECK_THROWS_AS(FitProblem(render_lm_dome(p, 16), rig().op, rig().matrix.env, p.sun, c), std::invalid_argument);
}

TEST_CASE("analytic gradient matches central differences") {
  const LMParams p = truth(0.45, 12.0, 5.0);
  const HdrImage target = render_lm_dome(p, kDome);
  const FitProblem problem(target, rig().op, rig().matrix.env, p.sun, FitConfig{});
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    LMParams q = p;
    q.sun_color = {20 * u(rng) + 1, 20 * u(rng) + 1, 20 * u(rng) + 1};
    q.sky_color = {u(rng) + 0.1, u(rng) + 0.1, u(rng) + 0.1};
    q.kappa = 0.1 + 0.8 * u(rng);
    q.beta = 2.0 + 40.0 * u(rng);
    q.turbidity = 3.0 + 15.0 * u(rng);
    ParamGradient g{};
    problem.evaluate(q, &g);
    for (int i = 0; i < 9; ++i) {
      auto at = [&](double delta) {
        LMParams r = q;
        double* field[9] = {&r.sun_color.r, &r.sun_color.g, &r.sun_color.b, &r.sky_color.r, &r.sky_color.g,
                            &r.sky_color.b, &r.kappa,       &r.beta,        &r.turbidity};
        *field[i] += delta;
        return problem.evaluate(r).data;
      };
      const double base[9] = {q.sun_color.r, q.sun_color.g, q.sun_color.b, q.sky_color.r, q.sky_color.g,
                              q.sky_color.b, q.kappa,       q.beta,        q.turbidity};
      const double h = 1e-5 * std::max(1.0, std::abs(base[i]));
      const double fd = (at(h) - at(-h)) / (2.0 * h);
      CAPTURE(trial);
      CAPTURE(i);
      CHECK(std::abs(g[i] - fd) <= 1e-3 * std::max(std::abs(fd), 1e-3));
    }
  }
}

TEST_CASE("grid scan returns the first strict minimum") {
  const LMParams p = truth();
  const HdrImage target = render_lm_dome(p, kDome);
  const FitProblem problem(target, rig().op, rig().matrix.env, p.sun, exact_config());
  const InitialColors colors{p.sun_color, p.sky_color, false};
  SUBCASE("self consistency at a grid point") {
    const GridResult r = grid_search_coarse(problem, colors);
    CHECK(r.best.kappa == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(r.best.beta == 4.0);
    CHECK(r.best.turbidity == 6.0);
    CHECK(r.samples.size() == 11u * 26u * 10u);
  }
  SUBCASE("ties go to the earliest point") {
    const HdrImage flat = testing::constant_image(target.geometry(), {1.0, 1.0, 1.0});
    const FitProblem degenerate(flat, rig().op, rig().matrix.env, p.sun, exact_config());
    const InitialColors no_sun{{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, false};
    const GridResult r = degenerate.scan({0.2, 0.1, 0.5}, {3.0, 1.0}, {2.0}, no_sun);
    REQUIRE(r.samples.size() == 6);
    for (const auto& s : r.samples) CHECK(s.loss == r.samples.front().loss);
    CHECK(r.best.kappa == 0.2);
    CHECK(r.best.beta == 3.0);
  }
}

TEST_CASE("fine search") {
  const LMParams p = truth(0.37);
  const HdrImage target = render_lm_dome(p, kDome);
  const FitProblem problem(target, rig().op, rig().matrix.env, p.sun, exact_config());
  const InitialColors colors{p.sun_color, p.sky_color, false};
  const GridResult coarse = grid_search_coarse(problem, colors);
  const GridResult fine = grid_search_fine(problem, colors, coarse.best);
  CHECK(std::abs(fine.best.kappa - 0.37) <= 0.01 + 1e-12);
  CHECK(fine.best.loss <= coarse.best.loss);

  GridSample edge = coarse.best;
  edge.kappa = 0.0;
  const GridResult clamped = grid_search_fine(problem, colors, edge);
  for (const auto& s : clamped.samples) {
    CHECK(s.kappa >= 0.0);
    CHECK(s.kappa <= 0.1 + 1e-12);
  }
  edge.kappa = 1.0;
  for (const auto& s : grid_search_fine(problem, colors, edge).samples) CHECK(s.kappa <= 1.0);
}

TEST_CASE("color stage") {
  const LMParams p = truth();
  const HdrImage target = render_lm_dome(p, kDome);
  FitConfig c;
  c.blur_kernel = 1;
  const FitProblem problem(target, rig().op, rig().matrix.env, p.sun, c);
  LMParams start = p;
  start.sun_color = p.sun_color * 1.5;
  start.sky_color = p.sky_color * 1.5;
  const StageResult r = optimize_colors(problem, start);
  for (int ch = 0; ch < 3; ++ch) {
    CHECK(r.params.sun_color[ch] == doctest::Approx(p.sun_color[ch]).epsilon(0.02));
    CHECK(r.params.sky_color[ch] == doctest::Approx(p.sky_color[ch]).epsilon(0.02));
  }
  CHECK(r.loss.total <= r.initial_loss.total);
  CHECK(r.params.kappa == p.kappa);
  CHECK(std::is_sorted(r.trace.begin(), r.trace.end(), std::greater<>()) == false);  // Adam is not monotone

  FitConfig none = c;
  none.iterations = 0;
  const FitProblem frozen(target, rig().op, rig().matrix.env, p.sun, none);
  CHECK(optimize_colors(frozen, start).params == start);
  CHECK(optimize_all(frozen, start).params == start);
}

TEST_CASE("full stage near the optimum") {
  const LMParams p = truth(0.45, 12.0, 5.0);
  const HdrImage target = render_lm_dome(p, kDome);
  FitConfig c;
  c.blur_kernel = 1;
  c.iterations = 200;
  const FitProblem problem(target, rig().op, rig().matrix.env, p.sun, c);
  const StageResult r = optimize_all(problem, p);
  CHECK(r.loss.total <= r.initial_loss.total);
  CHECK(r.params.kappa == doctest::Approx(p.kappa).epsilon(0.01));
  CHECK(r.params.beta == doctest::Approx(p.beta).epsilon(0.01));
  CHECK(r.params.turbidity == doctest::Approx(p.turbidity).epsilon(0.01));
  CHECK(r.params.sun_color.r == doctest::Approx(p.sun_color.r).epsilon(0.01));
  CHECK(r.params.sky_color.b == doctest::Approx(p.sky_color.b).epsilon(0.01));
}

TEST_CASE("scattering stays inside the ranges") {
  const LMParams p = truth(0.95, 48.0, 19.0);
  const HdrImage target = render_lm_dome(p, kDome);
  FitConfig c = quick_config();
  c.learning_rate = 0.5;
  const FitProblem problem(target, rig().op, rig().matrix.env, p.sun, c);
  LMParams start = p;
  start.kappa = 1.0;
  start.beta = 50.0;
  start.turbidity = 20.0;
  const StageResult r = optimize_all(problem, start);
  CHECK_NOTHROW(validate_params(r.params));
}

TEST_CASE("penalty latches at the first violation") {
  const LMParams p = truth();
  const HdrImage target = render_lm_dome(p, kDome);
  FitConfig c = quick_config();
  c.regularization.chroma_tolerance_deg = 0.5;  // the truth itself violates now
  const FitProblem problem(target, rig().op, rig().matrix.env, p.sun, c);
  const StageResult r = optimize_colors(problem, p);
  CHECK(r.penalty > 0.0);
  CHECK(r.penalty == doctest::Approx(c.regularization.penalty_factor * problem.evaluate(p).data));
  CHECK(r.initial_loss.regularization == r.penalty * color_violations(p.sun_color, p.sky_color, c.regularization));
  const StageResult next = optimize_all(problem, r.params, r.penalty);
  CHECK(next.penalty == r.penalty);
}

TEST_CASE("end to end fit") {
  const LMParams p = truth(0.45, 12.0, 5.0);
  const HdrImage target = render_lm_dome(p, kDome);
  FitMetadata meta;
  meta.sun = p.sun;
  const FitResult r = fit(target, meta, rig().op, rig().matrix.env, quick_config());
  CHECK_FALSE(r.flags.rejected_zenith);
  CHECK(r.flags.sun_source == SunSource::explicit_direction);
  CHECK(rad_to_deg(angle_between(r.params.sun, p.sun)) <= 2.0);
  CHECK(r.final_loss.total <= r.colors_loss.total + 1e-12);
  CHECK(r.fine_loss <= r.coarse_loss);
  CHECK_NOTHROW(validate_params(r.params));
  const HdrImage rr = apply_transport(rig().matrix, render_lm_dome(r.params, kDome));
  const HdrImage rt = apply_transport(rig().matrix, target);
  double mean = 0.0;
  for (float v : rt.data()) mean += v;
  mean /= static_cast<double>(rt.data().size());
  double err = 0.0;
  for (std::size_t i = 0; i < rr.data().size(); ++i) err += std::abs(rr.data()[i] - rt.data()[i]);
  CHECK(err / static_cast<double>(rr.data().size()) <= 0.05 * mean);
}

TEST_CASE("fit rejects low suns and honours the exposure scale") {
  const LMParams p = truth();
  HdrImage target = render_lm_dome(p, kDome);
  FitMetadata low;
  low.sun = Direction::make(deg_to_rad(85.0), 1.0);
  const FitResult r = fit(target, low, rig().op, rig().matrix.env, quick_config());
  CHECK(r.flags.rejected_zenith);
  CHECK(r.params.sun == *low.sun);
  CHECK(r.trace_all.empty());

  FitMetadata geo;
  geo.latitude_deg = 46.8;
  geo.longitude_deg = -71.2;
  geo.timestamp_utc = "2016-06-21T04:00:00Z";  // before sunrise
  CHECK(fit(target, geo, rig().op, rig().matrix.env, quick_config()).flags.sun_source == SunSource::geolocation);
  CHECK(fit(target, geo, rig().op, rig().matrix.env, quick_config()).flags.rejected_zenith);

  FitMetadata meta;
  meta.sun = p.sun;
  const FitResult base = fit(target, meta, rig().op, rig().matrix.env, quick_config());
  HdrImage exposed = percentile_expose(target);
  const FitResult scaled = fit(exposed, meta, rig().op, rig().matrix.env, quick_config());
  CHECK(scaled.params.sky_color.b == doctest::Approx(base.params.sky_color.b).epsilon(1e-3));

  CHECK_THROWS_AS(fit(HdrImage(8, 8), meta, rig().op, rig().matrix.env), std::invalid_argument);
}

TEST_CASE("fit is deterministic") {
  const LMParams p = truth(0.6, 20.0, 9.0);
  const HdrImage target = render_lm_dome(p, kDome);
  FitMetadata meta;
  const FitResult a = fit(target, meta, rig().op, rig().matrix.env, quick_config());
  const FitResult b = fit(target, meta, rig().op, rig().matrix.env, quick_config());
  CHECK(a.flags.sun_source == SunSource::image_search);
  CHECK(to_jsonl(a) == to_jsonl(b));
}

TEST_CASE("fit record JSON") {
  const LMParams p = truth();
  FitMetadata meta;
  meta.sun = p.sun;
  FitResult r = fit(render_lm_dome(p, kDome), meta, rig().op, rig().matrix.env, quick_config());
  r.id = "sky-007";
  r.coverage = 0.25;
  r.weather_bin = "ms";
  const std::string line = to_jsonl(r);
  CHECK(line.find('\n') == std::string::npos);
  const FitResult back = fit_result_from_json(line);
  CHECK(back.id == "sky-007");
  CHECK(back.params == r.params);
  CHECK(back.coverage == r.coverage);
  CHECK(back.weather_bin == r.weather_bin);
  CHECK(back.trace_all == r.trace_all);
  CHECK(back.flags.sun_source == r.flags.sun_source);
  CHECK(to_jsonl(back) == line);
  CHECK_THROWS_AS(fit_result_from_json("{not json"), std::invalid_argument);
  CHECK_THROWS_AS(fit_result_from_json("{}"), std::invalid_argument);
}
