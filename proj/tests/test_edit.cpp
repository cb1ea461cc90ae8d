#include "acs/config.hpp"
#include "acs/edit.hpp"
#include "acs/error.hpp"
#include "acs/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace acs;
using namespace acs::edit;
using splat::GaussianPrimitive;
using splat::SplatScene;

namespace {

splat::Image random_image(Rng& rng, int h, int w) {
  splat::Image img(h, w);
  for (auto& v : img.rgba) v = rng.uniform();
  return img;
}

// Latent dim 2; the first component reads the red channel only.
LatentEncoder red_encoder(int patch) {
  LatentEncoder enc;
  enc.patch_h = patch;
  enc.patch_w = patch;
  enc.dim = 2;
  enc.projection = Eigen::MatrixXd::Zero(2, enc.input_size());
  for (int i = 0; i < enc.input_size(); i += 4) enc.projection(0, i) = 1.0 / (patch * patch);
  return enc;
}

GaussianPrimitive blob(double x, double y, splat::Vec3 color, double opacity = 0.8, double scale = 0.12) {
  GaussianPrimitive p;
  p.mu = {x, y};
  p.log_scale = {std::log(scale), std::log(scale)};
  p.opacity_pre = splat::logit(opacity);
  p.color = color;
  return p;
}

EditConfig small_config() {
  EditConfig cfg;
  cfg.views.height = 16;
  cfg.views.width = 16;
  cfg.sensitivity_views = 2;
  cfg.views_per_step = 1;
  return cfg;
}

struct Small {
  LatentEncoder enc = make_encoder(4, 8, 8, 3);
  Eigen::VectorXd axis = Eigen::Vector4d(1, 1, 0, 0).normalized();
  std::vector<Eigen::VectorXd> targets = std::vector<Eigen::VectorXd>(10, Eigen::Vector4d(0.3, 0.3, 0, 0));
  SplatScene scene = make_default_scene(4, 12, 2);
};

}  // namespace

TEST_CASE("latent encoding is the per-patch linear map") {
  const auto enc = make_encoder(5, 4, 4, 1);
  CHECK(enc.projection.rows() == 5);
  std::vector<splat::Image> black{splat::Image(8, 12)};
  const auto z0 = encode_latents(black, enc);
  CHECK(z0.cells() == 6);
  for (double v : z0.data) CHECK(v == 0.0);

  Rng rng(2);
  const std::vector<splat::Image> imgs{random_image(rng, 8, 12), random_image(rng, 8, 12)};
  const auto z = encode_latents(imgs, enc);
  auto doubled = imgs;
  for (auto& img : doubled)
    for (auto& v : img.rgba) v *= 2;
  const auto z2 = encode_latents(doubled, enc);
  for (std::size_t i = 0; i < z.data.size(); ++i) CHECK(z2.data[i] == doctest::Approx(2 * z.data[i]).epsilon(1e-14));

  double worst = 0;
  for (int v = 0; v < 2; ++v)
    for (int gy = 0; gy < 2; ++gy)
      for (int gx = 0; gx < 3; ++gx)
        for (int k = 0; k < 5; ++k) {
          double acc = 0;
          for (int py = 0; py < 4; ++py)
            for (int px = 0; px < 4; ++px)
              for (int c = 0; c < 4; ++c)
                acc += enc.projection(k, (py * 4 + px) * 4 + c) * imgs[v].at(gy * 4 + py, gx * 4 + px, c);
          worst = std::max(worst, std::abs(acc - z.data[((v * 2 + gy) * 3 + gx) * 5 + k]));
        }
  CHECK(worst <= 1e-12);
  CHECK_THROWS_AS(encode_latents({splat::Image(9, 12)}, enc), ShapeError);
}

TEST_CASE("encode_backward is the transpose of encode_latents") {
  const auto enc = make_encoder(3, 4, 4, 8);
  Rng rng(3);
  const std::vector<splat::Image> imgs{random_image(rng, 8, 8)};
  auto grid = encode_latents(imgs, enc);
  for (auto& v : grid.data) v = rng.normal();
  const auto back = encode_backward(grid, enc, 8, 8);
  const auto z = encode_latents(imgs, enc);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < z.data.size(); ++i) lhs += z.data[i] * grid.data[i];
  for (std::size_t i = 0; i < imgs[0].rgba.size(); ++i) rhs += imgs[0].rgba[i] * back[0].rgba[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("concept alignment") {
  LatentGrid g;
  g.views = 1;
  g.grid_h = 1;
  g.grid_w = 2;
  g.dim = 2;
  g.data = {0, 1, 0, -2};
  CHECK(concept_alignment(g, Eigen::Vector2d(1, 0)) == 0.0);
  g.grid_w = 1;
  g.data = {0, 3};
  CHECK(concept_alignment(g, Eigen::Vector2d(0, 1)) == 3.0);

  Rng rng(5);
  const auto enc = make_encoder(6, 4, 4, 2);
  const auto z = encode_latents({random_image(rng, 8, 8), random_image(rng, 8, 8)}, enc);
  Eigen::VectorXd b(6);
  for (int i = 0; i < 6; ++i) b[i] = rng.normal();
  double oracle = 0;
  for (int v = 0; v < 2; ++v)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x)
        for (int k = 0; k < 6; ++k) oracle += b[k] * z.data[((v * 2 + y) * 2 + x) * 6 + k];
  CHECK(std::abs(concept_alignment(z, b) - oracle) <= 1e-12 * (1 + std::abs(oracle)));
}

TEST_CASE("sensitivity ordering and concentration on a red-only encoder") {
  const auto enc = red_encoder(8);
  const Eigen::Vector2d b(1, 0);
  SplatScene s;
  s.add(blob(0.0, 0.0, {0.9, 0.1, 0.1}));
  s.add(blob(0.1, -0.1, {0.8, 0.2, 0.0}));
  s.add(blob(-0.85, 0.85, {0.0, 0.9, 0.0}, 0.8, 0.03));
  s.add(blob(0.85, 0.85, {0.0, 0.0, 0.9}, 0.8, 0.03));
  const auto views = std::vector<splat::View>{splat::front_view(16, 16)};
  const auto rep = sensitivity_scores(s, views, b, enc);
  CHECK(rep.scores[0] > 0);
  CHECK(rep.scores[2] < 0.01 * rep.scores[0]);
  CHECK(rep.scores[3] < 0.01 * rep.scores[0]);
  CHECK(rep.scores[1] > rep.scores[2]);
  const double total = std::accumulate(rep.scores.begin(), rep.scores.end(), 0.0);
  CHECK((rep.scores[0] + rep.scores[1]) / total >= 0.95);

  SplatScene sat = s;
  sat.primitives[0].opacity_pre = -40.0;
  CHECK(sensitivity_scores(sat, views, b, enc).scores[0] < 1e-12);
  CHECK_THROWS_AS(sensitivity_scores(SplatScene{}, views, b, enc), ConfigError);
}

TEST_CASE("selection rule") {
  std::vector<double> scores(100);
  for (int i = 0; i < 100; ++i) scores[i] = (i * 37) % 100;
  const auto mask = select_primitives(scores, 0.05);
  CHECK(std::count(mask.begin(), mask.end(), true) == 5);
  for (int i = 0; i < 100; ++i) CHECK(mask[i] == (scores[i] >= 95));
  const auto all = select_primitives(scores, 1.0);
  CHECK(std::count(all.begin(), all.end(), true) == 100);
  CHECK(select_primitives(std::vector<double>{5, 5, 1}, 1.0 / 3) == std::vector<bool>{true, false, false});
  CHECK(selection_size(105, 0.05) == 6);
  CHECK(selection_size(20, 0.05) == 1);
  CHECK_THROWS_AS(selection_size(10, 0.0), ConfigError);
  CHECK_THROWS_AS(selection_size(10, 1.5), ConfigError);
}

TEST_CASE("toy denoiser identities") {
  const auto sched = make_schedule(10);
  for (std::size_t i = 1; i < sched.alpha_bar.size(); ++i) CHECK(sched.alpha_bar[i] < sched.alpha_bar[i - 1]);
  for (double a : sched.alpha_bar) {
    CHECK(a > 0);
    CHECK(a < 1);
  }
  for (int t = 1; t <= 10; ++t) CHECK(sched.weight_at(t) > 0);
  Rng rng(9);
  auto gauss = [&](int d) {
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v[i] = rng.normal();
    return v;
  };
  for (int t = 1; t <= 10; ++t) {
    const Eigen::VectorXd m = gauss(4), eps = gauss(4), z0 = gauss(4);
    const double ab = sched.alpha_bar_at(t);
    const Eigen::VectorXd fixed = std::sqrt(ab) * m + std::sqrt(1 - ab) * eps;
    CHECK((toy_denoiser(fixed, t, m, sched) - eps).norm() <= 1e-12);
    const Eigen::VectorXd zt = std::sqrt(ab) * z0 + std::sqrt(1 - ab) * eps;
    const Eigen::VectorXd expect = std::sqrt(ab) / std::sqrt(1 - ab) * (z0 - m);
    CHECK((toy_denoiser(zt, t, m, sched) - eps - expect).norm() <= 1e-12 * (1 + expect.norm()));
  }
  DiffusionSchedule quarter;
  quarter.T = 1;
  quarter.alpha_bar = {0.25};
  quarter.weight = {1.0};
  const Eigen::Vector2d u(1.0, -2.0), eps(0.3, 0.1);
  const Eigen::Vector2d zt = 0.5 * u + std::sqrt(0.75) * eps;
  CHECK((toy_denoiser(zt, 1, Eigen::Vector2d::Zero(), quarter) - eps - 0.5 / std::sqrt(0.75) * u).norm() <= 1e-12);
  CHECK_THROWS_AS(sched.alpha_bar_at(11), ConfigError);
}

TEST_CASE("slider targets in axis mode") {
  axis::ConceptAxisModel model;
  model.spec.dim = 3;
  axis::StageAxes st;
  st.stage = 1;
  st.axis.b_c = Eigen::Vector3d(0, 0, 1);
  st.mu_p = st.axis.b_c;
  st.mu_n = -st.axis.b_c;
  model.stages.push_back(st);
  CHECK((slider_target(model, nullptr, nullptr, 1.0, TargetMode::axis)[0] - st.axis.b_c).norm() <= 1e-15);
  model.stages[0].mu_p = Eigen::Vector3d(1, 2, 1);
  model.stages[0].mu_n = Eigen::Vector3d(3, 0, -1);
  CHECK((slider_target(model, nullptr, nullptr, 0.0, TargetMode::axis)[0] - Eigen::Vector3d(2, 1, 0)).norm() <= 1e-15);
  CHECK_THROWS_AS(slider_target(model, nullptr, nullptr, 0.0, TargetMode::adapter), ConfigError);
}

TEST_CASE("adapter-mode targets track the axis-mode oracle") {
  const auto cfg = config::from_json(nlohmann::json::object());
  const auto model = config::fit_axis(cfg, config::generate_features(cfg));
  const auto gen = config::make_generator(cfg);
  const auto trained = config::train(cfg, gen, model);
  for (double alpha : {-1.0, 0.0, 1.0}) {
    const auto ad = slider_target(model, &gen, &trained.adapter, alpha, TargetMode::adapter, 256, 0);
    const auto ax = slider_target(model, &gen, &trained.adapter, alpha, TargetMode::axis);
    for (int t = 0; t < model.stage_count(); ++t) {
      const auto& st = model.stages[t];
      const double gap = st.axis.b_c.dot(st.mu_p - st.mu_n);
      CHECK(std::abs(st.axis.b_c.dot(ad[t] - ax[t])) <= 0.1 * gap);
    }
  }
}

TEST_CASE("SDS gradient vanishes at the denoiser fixed point for every timestep") {
  Rng rng(4);
  SplatScene s;
  for (int i = 0; i < 4; ++i) s.add(blob(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), {rng.uniform(), rng.uniform(), rng.uniform()}, 0.5, 0.3));
  const auto enc = make_encoder(6, 16, 16, 2);
  const std::vector<splat::View> views{splat::front_view(16, 16)};
  const Eigen::VectorXd m = encode_latents({splat::render(s, views[0])}, enc).cell(0);
  const auto sched = make_schedule(10);
  const std::vector<bool> mask(4, true);
  for (int t = 1; t <= 10; ++t) {
    const auto out = sds_gradients(s, views, enc, sched, m, t, 11, mask);
    for (const auto& g : out.grads)
      for (double d : g.d) CHECK(std::abs(d) <= 1e-12);
    const Eigen::VectorXd off = m + 0.05 * Eigen::VectorXd::Unit(6, 0);
    double mx = 0;
    for (const auto& g : sds_gradients(s, views, enc, sched, off, t, 11, mask).grads)
      for (double d : g.d) mx = std::max(mx, std::abs(d));
    CHECK(mx > 1e-9);
  }
}

TEST_CASE("SDS step honours the mask and pushes toward the target") {
  const auto enc = red_encoder(8);
  const auto sched = make_schedule(10);
  const std::vector<splat::View> views{splat::front_view(16, 16)};

  SplatScene two;
  two.add(blob(0, 0, {0.3, 0.3, 0.3}));
  two.add(blob(0.3, 0.2, {0.5, 0.2, 0.3}));
  const SplatScene before = two;
  SceneOptimizer opt({}, 2);
  sds_step(two, views, enc, sched, Eigen::Vector2d(1, 0), 5, 1, {false, false}, opt);
  CHECK(two == before);
  for (int i = 0; i < 10; ++i) sds_step(two, views, enc, sched, Eigen::Vector2d(1, 0), 5, i, {false, true}, opt);
  CHECK(two.primitives[0] == before.primitives[0]);
  CHECK_FALSE(two.primitives[1] == before.primitives[1]);

  SplatScene one;
  one.add(blob(0, 0, {0.3, 0.3, 0.3}, 0.8, 0.4));
  const double red0 = one.primitives[0].color[0];
  SceneOptimizer opt1({}, 1);
  for (int step = 0; step < 50; ++step)
    sds_step(one, views, enc, sched, Eigen::Vector2d(1, 0), 1 + step % 10, static_cast<std::uint64_t>(step), {true}, opt1);
  CHECK(one.primitives[0].color[0] > red0);
}

TEST_CASE("edit loop with zero steps returns the scene unchanged") {
  Small sm;
  auto cfg = small_config();
  cfg.total_steps = 0;
  const auto res = edit_loop(sm.scene, sm.enc, sm.axis, sm.targets, cfg);
  CHECK(res.scene == sm.scene);
  CHECK(res.trace.empty());
}

TEST_CASE("unselected primitives are bitwise untouched between events") {
  Small sm;
  auto cfg = small_config();
  cfg.gamma = 0.25;
  EditRunner runner(sm.scene, sm.enc, sm.axis, sm.targets, cfg);
  const SplatScene start = runner.scene();
  for (int i = 0; i < 40; ++i) runner.step();
  REQUIRE(runner.scene().size() == start.size());
  CHECK(runner.scene().selection == start.selection);
  CHECK(start.selected_count() == 3);
  int changed = 0;
  for (std::size_t i = 0; i < start.size(); ++i) {
    if (!start.selection[i]) CHECK(runner.scene().primitives[i] == start.primitives[i]);
    else changed += runner.scene().primitives[i] != start.primitives[i];
  }
  CHECK(changed == 3);
}

TEST_CASE("schedule events at every 200 steps with densify after the prune-only window") {
  Small sm;
  auto cfg = small_config();
  cfg.total_steps = 1200;
  int frames = 0;
  int last = 0;
  bool ordered = true;
  const auto res = edit_loop(sm.scene, sm.enc, sm.axis, sm.targets, cfg, [&](const StepProgress& p) {
    ++frames;
    ordered = ordered && p.entry.step == last + 1 && p.frame.height == 16;
    last = p.entry.step;
  });
  CHECK(frames == 1200);
  CHECK(ordered);
  std::vector<int> prunes, densifies;
  for (std::size_t i = 0; i < res.events.size(); ++i) {
    const auto& e = res.events[i];
    if (e.kind == "prune") prunes.push_back(e.step);
    if (e.kind == "densify") {
      densifies.push_back(e.step);
      REQUIRE(i + 1 < res.events.size());
      CHECK(res.events[i + 1].kind == "prune");
    }
  }
  CHECK(prunes == std::vector<int>{200, 400, 600, 800, 1000, 1200});
  CHECK(densifies == std::vector<int>{800, 1000, 1200});
  REQUIRE(res.trace.size() == 1200);
  for (const auto& e : res.trace) {
    CHECK(std::isfinite(e.coord));
    CHECK(e.selected == selection_size(e.primitives, cfg.gamma));
  }
}

TEST_CASE("trace is deterministic and serialises one object per step") {
  Small sm;
  auto cfg = small_config();
  cfg.total_steps = 30;
  const auto a = edit_loop(sm.scene, sm.enc, sm.axis, sm.targets, cfg);
  const auto b = edit_loop(sm.scene, sm.enc, sm.axis, sm.targets, cfg);
  const std::string ja = trace_jsonl(a.trace);
  CHECK(ja == trace_jsonl(b.trace));
  CHECK(a.scene == b.scene);
  std::istringstream lines(ja);
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"step", "cbar", "coord", "loss_sds", "selected"}) CHECK(j.contains(k));
    CHECK(j["step"] == ++n);
  }
  CHECK(n == 30);
}

TEST_CASE("axis-mode edit at alpha zero lands near the sweep midpoint") {
  auto cfg = config::from_json({{"target", {{"mode", "axis"}}}, {"edit", {{"total_steps", 400}}}});
  const config::Artifacts art{config::fit_axis(cfg, config::generate_features(cfg)), config::make_generator(cfg), {}};
  double coord[3];
  for (int i = 0; i < 3; ++i) coord[i] = config::run_edit(cfg, art, i - 1.0).final_coord;
  CHECK(coord[0] < coord[1]);
  CHECK(coord[1] < coord[2]);
  CHECK(std::abs(coord[1] - 0.5 * (coord[0] + coord[2])) <= 0.25 * (coord[2] - coord[0]));
}
