#include "acs/error.hpp"
#include "acs/rng.hpp"
#include "acs/splat.hpp"

#include <Eigen/Dense>
#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace acs;
using namespace acs::splat;

namespace {

double pixel_center(int i, int n) { return (i + 0.5) / n * 2.0 - 1.0; }

GaussianPrimitive random_primitive(Rng& rng) {
  GaussianPrimitive p;
  p.mu = {rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6)};
  p.log_scale = {std::log(rng.uniform(0.15, 0.5)), std::log(rng.uniform(0.15, 0.5))};
  p.rotation = rng.uniform(-3, 3);
  p.opacity_pre = rng.uniform(-2, 2);
  p.color = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
  return p;
}

SplatScene random_scene(std::uint64_t seed, int m) {
  Rng rng(seed);
  SplatScene s;
  for (int i = 0; i < m; ++i) s.add(random_primitive(rng));
  return s;
}

// Per-pixel alpha from the covariance matrix in view coordinates.
double oracle_alpha(const GaussianPrimitive& p, const View& v, double u, double w) {
  const double k = kReferenceZoom / v.zoom;
  const Eigen::Rotation2Dd view_rot(v.rotation);
  const Eigen::Vector2d c = k * (view_rot * Eigen::Vector2d(p.mu[0], p.mu[1])) + Eigen::Vector2d(v.translation[0], v.translation[1]);
  const Eigen::Matrix2d r = Eigen::Rotation2Dd(p.rotation + v.rotation).toRotationMatrix();
  const Eigen::Vector2d s(k * std::exp(p.log_scale[0]), k * std::exp(p.log_scale[1]));
  const Eigen::Matrix2d cov = r * s.array().square().matrix().asDiagonal() * r.transpose();
  const Eigen::Vector2d d = Eigen::Vector2d(u, w) - c;
  return p.opacity() * std::exp(-0.5 * d.dot(cov.inverse() * d));
}

Image oracle_render(const SplatScene& scene, const View& v) {
  Image img(v.height, v.width);
  for (int y = 0; y < v.height; ++y)
    for (int x = 0; x < v.width; ++x) {
      double t = 1.0;
      for (const auto& p : scene.primitives) {
        const double a = oracle_alpha(p, v, pixel_center(x, v.width), pixel_center(y, v.height));
        for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) += p.color[ch] * a * t;
        t *= 1 - a;
      }
      img.at(y, x, 3) = 1 - t;
    }
  return img;
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.rgba.size(); ++i) m = std::max(m, std::abs(a.rgba[i] - b.rgba[i]));
  return m;
}

}  // namespace

TEST_CASE("empty scene renders to zero") {
  const auto img = render(SplatScene{}, front_view(8, 8));
  for (double v : img.rgba) CHECK(v == 0.0);
}

TEST_CASE("saturated primitive peaks at its color") {
  SplatScene s;
  GaussianPrimitive p;
  p.mu = {pixel_center(8, 16), pixel_center(5, 16)};
  p.opacity_pre = 40.0;
  p.color = {0.2, 0.7, 0.4};
  s.add(p);
  const auto img = render(s, front_view(16, 16));
  CHECK(p.opacity() == 1.0);
  for (int c = 0; c < 3; ++c) CHECK(img.at(5, 8, c) == doctest::Approx(p.color[c]).epsilon(1e-15));
  CHECK(img.at(5, 8, 3) == 1.0);
}

TEST_CASE("render matches the compositing formula") {
  Rng rng(4);
  SplatScene two;
  two.add(random_primitive(rng));
  two.add(random_primitive(rng));
  two.primitives[1].mu = two.primitives[0].mu;
  CHECK(max_abs_diff(render(two, front_view(16, 16)), oracle_render(two, front_view(16, 16))) <= 1e-12);

  const auto scene = random_scene(8, 6);
  ViewConfig vc;
  vc.height = 12;
  vc.width = 20;
  for (std::uint64_t s = 0; s < 4; ++s) {
    const auto v = sample_view(s, vc);
    const auto img = render(scene, v);
    CHECK(max_abs_diff(img, oracle_render(scene, v)) <= 1e-12);
    for (int y = 0; y < v.height; ++y)
      for (int x = 0; x < v.width; ++x) CHECK(img.at(y, x, 3) <= 1 + 1e-9);
  }
  CHECK(render(scene, sample_view(1, vc)).rgba == render(scene, sample_view(1, vc)).rgba);
}

TEST_CASE("render_backward basics") {
  const auto scene = random_scene(2, 3);
  const auto v = front_view(16, 16);
  const auto zero = render_backward(scene, v, Image(16, 16));
  for (const auto& g : zero)
    for (double d : g.d) CHECK(d == 0.0);
  CHECK_THROWS_AS(render_backward(scene, v, Image(8, 16)), ShapeError);

  SplatScene one;
  one.add(scene.primitives[0]);
  Image d(16, 16);
  d.at(6, 9, 1) = 1.0;
  const auto g = render_backward(one, v, d);
  CHECK(g[0].d[7] == doctest::Approx(oracle_alpha(one.primitives[0], v, pixel_center(9, 16), pixel_center(6, 16))).epsilon(1e-12));
  CHECK(g[0].d[6] == 0.0);
  CHECK(g[0].d[8] == 0.0);

  std::vector<bool> mask{false, true, false};
  Image ones(16, 16);
  for (auto& x : ones.rgba) x = 1.0;
  const auto masked = render_backward(scene, v, ones, &mask);
  for (double x : masked[0].d) CHECK(x == 0.0);
  CHECK(masked[1] == render_backward(scene, v, ones)[1]);
}

TEST_CASE("render gradients match five-point differences") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const int m = 1 + static_cast<int>(seed) * 2;
    const auto scene = random_scene(50 + seed, m);
    ViewConfig vc;
    vc.height = 16;
    vc.width = 16;
    const auto v = sample_view(seed, vc);
    Rng rng(seed);
    Image dir(16, 16);
    for (auto& x : dir.rgba) x = rng.uniform(-1, 1);
    auto objective = [&](const SplatScene& s) {
      const auto img = render(s, v);
      double o = 0;
      for (std::size_t i = 0; i < img.rgba.size(); ++i) o += dir.rgba[i] * img.rgba[i];
      return o;
    };
    const auto grads = render_backward(scene, v, dir);
    const double h = 1e-4;
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < kParamsPerPrimitive; ++k) {
        auto at = [&](double delta) {
          SplatScene s = scene;
          auto p = to_params(s.primitives[i]);
          p[k] += delta;
          s.primitives[i] = from_params(p);
          return objective(s);
        };
        const double fd = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
        const double an = grads[i].d[k];
        CHECK(std::abs(an - fd) <= 1e-4 * std::max({std::abs(an), std::abs(fd), 1e-6}));
      }
  }
}

TEST_CASE("view sampling") {
  ViewConfig vc;
  const auto a = sample_view(5, vc);
  const auto b = sample_view(5, vc);
  CHECK(a.zoom == b.zoom);
  CHECK(a.rotation == b.rotation);
  CHECK(a.translation == b.translation);
  double sum = 0;
  const auto views = sample_views(9, vc, 10000);
  for (const auto& v : views) {
    REQUIRE(v.zoom >= 1.5);
    REQUIRE(v.zoom <= 2.0);
    REQUIRE(std::abs(v.rotation) <= vc.rotation_range);
    sum += v.zoom;
  }
  CHECK(std::abs(sum / 10000 - 1.75) <= 0.01 * 1.75);
}

TEST_CASE("prune") {
  SplatScene s;
  for (double o : {0.9, 0.01, 0.5}) {
    GaussianPrimitive p;
    p.opacity_pre = logit(o);
    s.add(p, o > 0.4);
  }
  auto none = s;
  CHECK(prune(none, 0.0).size() == 3);
  auto some = s;
  const auto origin = prune(some, 0.05);
  CHECK(origin == std::vector<std::size_t>{0, 2});
  CHECK(some.size() == 2);
  CHECK(some.primitives[0].opacity() == doctest::Approx(0.9));
  CHECK(some.primitives[1].opacity() == doctest::Approx(0.5));
  CHECK(some.selection.size() == 2);
  auto all = s;
  prune(all, 0.95);
  CHECK(all.size() == 0);
  CHECK(all.selection.empty());
  for (double x : render(all, front_view(4, 4)).rgba) CHECK(x == 0.0);
}

TEST_CASE("densify") {
  auto s = random_scene(3, 4);
  s.selection = {true, false, true, false};
  DensifyConfig cfg;
  auto same = s;
  CHECK(densify(same, cfg).size() == 4);

  s.grad_accum[1] = 1.0;
  s.grad_count[1] = 2;
  auto grown = s;
  const auto origin = densify(grown, cfg);
  CHECK(grown.size() == 5);
  CHECK(origin == std::vector<std::size_t>{0, 1, 1, 2, 3});
  CHECK(grown.selection == std::vector<bool>{true, false, false, true, false});
  for (std::size_t i = 0; i < grown.size(); ++i) CHECK(grown.grad_count[i] == 0);
  CHECK(grown.primitives[2].color == grown.primitives[1].color);
  CHECK_FALSE(grown.primitives[2].mu == grown.primitives[1].mu);
}

TEST_CASE("clone with halved opacity and no jitter stays within the compositing bound") {
  Rng rng(12);
  for (double max_opacity : {0.9, 0.3, 2e-3}) {
    const int count = max_opacity > 0.01 ? 5 : 1;
    SplatScene s;
    for (int i = 0; i < count; ++i) {
      auto p = random_primitive(rng);
      p.opacity_pre = logit(rng.uniform(0.0, max_opacity));
      s.add(p);
      s.grad_accum.back() = 1.0;
      s.grad_count.back() = 1;
    }
    const auto before = render(s, front_view(16, 16));
    DensifyConfig cfg;
    cfg.jitter = 0.0;
    cfg.halve_opacity = true;
    auto cloned = s;
    densify(cloned, cfg);
    REQUIRE(cloned.size() == 2 * s.size());
    double bound = 0;
    for (const auto& p : s.primitives) bound += p.opacity() * p.opacity() / 4;
    const double diff = max_abs_diff(before, render(cloned, front_view(16, 16)));
    CHECK(diff <= bound + 1e-12);
    if (max_opacity <= 2e-3) CHECK(diff <= 1e-6);
  }
}

TEST_CASE("selection mask length follows every prune and densify") {
  auto s = random_scene(21, 30);
  Rng rng(1);
  for (int round = 0; round < 6; ++round) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      s.grad_accum[i] = rng.uniform(0, 0.05);
      s.grad_count[i] = 1;
    }
    const std::size_t selected = s.selected_count();
    DensifyConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(round);
    const auto origin = densify(s, cfg);
    CHECK(s.selection.size() == origin.size());
    CHECK(s.selected_count() >= selected);
    prune(s, 0.3);
    CHECK(s.selection.size() == s.size());
    CHECK(s.grad_accum.size() == s.size());
    s.check();
  }
}

TEST_CASE("scene file round trip") {
  auto s = random_scene(77, 5);
  s.selection = {true, false, true, true, false};
  const auto path = std::filesystem::temp_directory_path() / "acs_tests" / "scene.json";
  std::filesystem::create_directories(path.parent_path());
  write_scene(s, path);
  const auto back = read_scene(path);
  REQUIRE(back.size() == s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(back.primitives[i].mu == s.primitives[i].mu);
    CHECK(back.primitives[i].color == s.primitives[i].color);
    CHECK(back.primitives[i].opacity_pre == s.primitives[i].opacity_pre);
    CHECK(back.primitives[i].log_scale[0] == doctest::Approx(s.primitives[i].log_scale[0]).epsilon(1e-14));
    CHECK(back.primitives[i].log_scale[1] == doctest::Approx(s.primitives[i].log_scale[1]).epsilon(1e-14));
  }
  CHECK(back.selection == s.selection);
  const auto doc = to_json(s);
  for (const char* k : {"version", "primitives", "selection"}) CHECK(doc.contains(k));
  for (const char* k : {"mu", "scale", "rot", "opacity_pre", "color"}) CHECK(doc["primitives"][0].contains(k));
}
