#include "acs/report.hpp"

#include "acs/error.hpp"
#include "acs/image_io.hpp"
#include "acs/json_util.hpp"
#include "acs/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>

namespace acs::report {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Eigen::VectorXd gaussian(Rng& rng, int n) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

Eigen::VectorXd unit(Rng& rng, int n) {
  Eigen::VectorXd v = gaussian(rng, n);
  return v / v.norm();
}

// Five-point central difference.
double derivative(const std::function<double(double)>& f, double x, double h) {
  return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h);
}

double rel_gap(double a, double b, double floor) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor}); }

features::ConceptSpec small_spec(int dim, std::uint64_t seed, double gap, double noise, int hw) {
  features::ConceptSpec spec = features::make_synthetic_spec(dim, seed, gap, noise);
  spec.height = hw;
  spec.width = hw;
  return spec;
}

std::pair<features::FeatureSet, features::FeatureSet> draw_pair(const features::ConceptSpec& spec, int stage,
                                                                int samples, std::uint64_t seed) {
  return {features::synth_concept_sampler(spec, stage, features::Side::positive, samples, derive_seed(seed, {1})),
          features::synth_concept_sampler(spec, stage, features::Side::negative, samples, derive_seed(seed, {2}))};
}

splat::SplatScene random_scene(Rng& rng, int m) {
  splat::SplatScene scene;
  for (int i = 0; i < m; ++i) {
    splat::GaussianPrimitive p;
    p.mu = {rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6)};
    p.log_scale = {std::log(rng.uniform(0.08, 0.4)), std::log(rng.uniform(0.08, 0.4))};
    p.rotation = rng.uniform(-3.0, 3.0);
    p.opacity_pre = rng.uniform(-1.5, 2.0);
    p.color = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
    scene.add(p, true);
  }
  return scene;
}

splat::View random_view(Rng& rng, int hw) {
  splat::View v;
  v.height = hw;
  v.width = hw;
  v.zoom = rng.uniform(1.4, 2.1);
  v.rotation = rng.uniform(-3.0, 3.0);
  v.translation = {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
  return v;
}

double scene_param(const splat::SplatScene& s, std::size_t i, int k) { return splat::to_params(s.primitives[i])[k]; }

void set_param(splat::SplatScene& s, std::size_t i, int k, double v) {
  auto a = splat::to_params(s.primitives[i]);
  a[k] = v;
  s.primitives[i] = splat::from_params(a);
}

double alignment_of(const splat::SplatScene& scene, const std::vector<splat::View>& views, const edit::LatentEncoder& enc,
                    const Eigen::VectorXd& b) {
  std::vector<splat::Image> imgs;
  for (const auto& v : views) imgs.push_back(splat::render(scene, v));
  return edit::concept_alignment(edit::encode_latents(imgs, enc), b);
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

nlohmann::json to_json(const Check& c) {
  nlohmann::ordered_json j;
  j["id"] = c.id;
  j["name"] = c.name;
  j["status"] = c.passed ? "pass" : "fail";
  j["seconds"] = c.seconds;
  j["measured"] = c.measured;
  return nlohmann::json(j);
}

Check lda_oracle(int datasets, std::uint64_t seed) {
  const auto t0 = Clock::now();
  Check c{1, "lda_oracle_equivalence"};
  double worst_cos = 1.0;
  double worst_excess = -1e300;
  int probes = 0;
  for (int i = 0; i < datasets; ++i) {
    const std::uint64_t s = derive_seed(seed, {101, static_cast<std::uint64_t>(i)});
    const int dim = 2 + i % 15;
    Rng rng(derive_seed(s, {7}));
    const auto spec = small_spec(dim, s, rng.uniform(0.2, 2.0), rng.uniform(0.05, 0.5), 2);
    const auto [pos, neg] = draw_pair(spec, 1 + i % 3, 10, s);
    const axis::ScatterPair sp = axis::scatter_matrices(pos, neg);
    const double ridge = axis::default_ridge(sp.s_w);
    const axis::ConceptAxis ax = axis::solve_concept_axis(sp, ridge);

    const Eigen::MatrixXd reg = sp.s_w + ridge * Eigen::MatrixXd::Identity(dim, dim);
    Eigen::VectorXd oracle = reg.fullPivLu().solve(sp.mu_p - sp.mu_n);
    oracle.normalize();
    worst_cos = std::min(worst_cos, std::abs(ax.b_c.dot(oracle)));

    const double j_star = axis::rayleigh_quotient(sp, ridge, ax.b_c);
    for (int p = 0; p < 100; ++p) {
      Eigen::VectorXd w = p < 50 ? gaussian(rng, dim) : Eigen::VectorXd(ax.b_c + 0.05 * gaussian(rng, dim));
      const double j = axis::rayleigh_quotient(sp, ridge, w);
      worst_excess = std::max(worst_excess, (j - j_star) / j_star);
      ++probes;
    }
  }
  c.seconds = since(t0);
  c.measured = {{"datasets", datasets},      {"min_abs_cos", worst_cos},        {"probes", probes},
                {"max_probe_excess", worst_excess}, {"runtime_s", c.seconds}};
  c.passed = worst_cos >= 1.0 - 1e-9 && worst_excess <= 1e-12 && c.seconds < 5.0;
  return c;
}

Check axis_recovery(int seeds, std::uint64_t seed) {
  const auto t0 = Clock::now();
  Check c{2, "ground_truth_axis_recovery"};
  const double noise = 0.1;
  const double gap = 4.0 * noise;
  int good = 0;
  double worst = 1.0;
  for (int i = 0; i < seeds; ++i) {
    const std::uint64_t s = derive_seed(seed, {102, static_cast<std::uint64_t>(i)});
    const auto spec = small_spec(16, s, gap, noise, 4);
    const auto [pos, neg] = draw_pair(spec, 1, 20, s);
    const axis::ConceptAxis ax = axis::solve_concept_axis(axis::scatter_matrices(pos, neg));
    const double a = std::abs(ax.b_c.dot(*spec.ground_truth_axis));
    worst = std::min(worst, a);
    if (a >= 0.99) ++good;
  }
  const double frac = static_cast<double>(good) / seeds;
  c.seconds = since(t0);
  c.measured = {{"gap_over_noise", gap / noise}, {"seeds", seeds}, {"fraction_ge_0.99", frac}, {"min_abs_cos", worst}};
  c.passed = frac >= 0.95;
  return c;
}

Check pca_deflation(int seeds, std::uint64_t seed) {
  const auto t0 = Clock::now();
  Check c{3, "pca_deflation"};
  const int K = 8;
  double worst_orth_axis = 0.0, worst_orthonormal = 0.0, worst_angle = 0.0;
  int used = 0, skipped = 0;
  for (int i = 0; i < seeds; ++i) {
    const std::uint64_t s = derive_seed(seed, {103, static_cast<std::uint64_t>(i)});
    const auto spec = small_spec(16, s, 1.0, 0.1, 4);
    const auto [pos, neg] = draw_pair(spec, 1 + i % 10, 20, s);
    const axis::StageAxes st = axis::fit_stage(pos, neg, K);
    const Eigen::VectorXd& b = st.axis.b_c;
    const auto& bases = st.attributes.bases;
    const int dim = spec.dim;

    Eigen::MatrixXd B(dim, static_cast<Eigen::Index>(bases.size()));
    for (std::size_t k = 0; k < bases.size(); ++k) {
      B.col(static_cast<Eigen::Index>(k)) = bases[k];
      worst_orth_axis = std::max(worst_orth_axis, std::abs(bases[k].dot(b)));
    }
    const Eigen::MatrixXd gram = B.transpose() * B;
    worst_orthonormal =
        std::max(worst_orthonormal, (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff());

    const Eigen::MatrixXd P = Eigen::MatrixXd::Identity(dim, dim) - b * b.transpose();
    const Eigen::MatrixXd deflated = P * axis::merged_scatter(pos, neg) * P;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(deflated);
    const Eigen::VectorXd ev = es.eigenvalues().reverse();
    const Eigen::MatrixXd U = es.eigenvectors().rowwise().reverse().leftCols(K);
    bool distinct = static_cast<int>(bases.size()) == K;
    for (int k = 0; k < K && distinct; ++k) distinct = (ev[k] - ev[k + 1]) > 1e-6 * ev[0];
    if (!distinct) {
      ++skipped;
      continue;
    }
    ++used;
    const Eigen::MatrixXd resid = B - U * (U.transpose() * B);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(resid);
    const double sin_max = std::min(1.0, svd.singularValues()(0));
    worst_angle = std::max(worst_angle, std::asin(sin_max));
  }
  c.seconds = since(t0);
  c.measured = {{"K", K},
                {"datasets", used},
                {"degenerate_skipped", skipped},
                {"max_abs_dot_axis", worst_orth_axis},
                {"max_gram_error", worst_orthonormal},
                {"max_principal_angle", worst_angle}};
  c.passed = used > 0 && worst_orth_axis <= 1e-8 && worst_orthonormal <= 1e-8 && worst_angle <= 1e-6;
  return c;
}

Check loss_gradients(int probes, std::uint64_t seed) {
  const auto t0 = Clock::now();
  Check c{4, "loss_gradients"};
  const int dim = 16;
  const double h = 1e-5;
  double worst_slide = 0.0, worst_pres = 0.0;
  Rng rng(derive_seed(seed, {104}));
  for (int p = 0; p < probes; ++p) {
    const Eigen::VectorXd b = unit(rng, dim);
    const Eigen::VectorXd mp = gaussian(rng, dim), mn = gaussian(rng, dim);
    const double alpha = rng.uniform(-1.5, 1.5);
    Eigen::VectorXd f = gaussian(rng, dim);
    const auto lv = adapter::sliding_loss(f, b, mp, mn, alpha);
    Eigen::VectorXd fd(dim);
    for (int k = 0; k < dim; ++k)
      fd[k] = derivative(
          [&](double x) {
            Eigen::VectorXd g = f;
            g[k] = x;
            return adapter::sliding_loss(g, b, mp, mn, alpha).value;
          },
          f[k], h);
    worst_slide = std::max(worst_slide, (lv.grad - fd).norm() / std::max(fd.norm(), 1e-12));
  }
  for (int p = 0; p < probes; ++p) {
    axis::AttributeBasisSet bases;
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(Eigen::MatrixXd(gaussian(rng, dim * dim).reshaped(dim, dim)))
                                  .householderQ();
    for (int k = 0; k < 8; ++k) bases.bases.push_back(q.col(k));
    const Eigen::VectorXd base = gaussian(rng, dim);
    Eigen::VectorXd f;
    // Keep the probe away from the kinks of the absolute values.
    do {
      f = base + gaussian(rng, dim);
      double smallest = 1e300;
      for (const auto& bk : bases.bases) smallest = std::min(smallest, std::abs((f - base).dot(bk)));
      if (smallest > 1e-3) break;
    } while (true);
    const auto lv = adapter::preserving_loss(f, base, bases);
    Eigen::VectorXd fd(dim);
    for (int k = 0; k < dim; ++k)
      fd[k] = derivative(
          [&](double x) {
            Eigen::VectorXd g = f;
            g[k] = x;
            return adapter::preserving_loss(g, base, bases).value;
          },
          f[k], h);
    worst_pres = std::max(worst_pres, (lv.grad - fd).norm() / std::max(fd.norm(), 1e-12));
  }
  c.seconds = since(t0);
  c.measured = {{"probes_each", probes}, {"max_rel_error_sliding", worst_slide}, {"max_rel_error_preserving", worst_pres}};
  c.passed = worst_slide <= 1e-4 && worst_pres <= 1e-4;
  return c;
}

Check renderer_gradients(int scenes, std::uint64_t seed) {
  const auto t0 = Clock::now();
  Check c{7, "renderer_gradients"};
  const int hw = 16;
  double worst = 0.0;
  int checked = 0;
  for (int s = 0; s < scenes; ++s) {
    Rng rng(derive_seed(seed, {107, static_cast<std::uint64_t>(s)}));
    const int m = 1 + s % 8;
    splat::SplatScene scene = random_scene(rng, m);
    const splat::View view = random_view(rng, hw);
    splat::Image d(hw, hw);
    for (double& v : d.rgba) v = rng.uniform(-1.0, 1.0);
    auto objective = [&](const splat::SplatScene& sc) {
      const splat::Image img = splat::render(sc, view);
      double acc = 0.0;
      for (std::size_t k = 0; k < img.rgba.size(); ++k) acc += d.rgba[k] * img.rgba[k];
      return acc;
    };
    const auto grads = splat::render_backward(scene, view, d);
    for (std::size_t i = 0; i < scene.size(); ++i)
      for (int k = 0; k < splat::kParamsPerPrimitive; ++k) {
        const double x0 = scene_param(scene, i, k);
        const double fd = derivative(
            [&](double x) {
              splat::SplatScene probe = scene;
              set_param(probe, i, k, x);
              return objective(probe);
            },
            x0, 1e-4);
        worst = std::max(worst, rel_gap(grads[i].d[k], fd, 1e-6));
        ++checked;
      }
  }
  c.seconds = since(t0);
  c.measured = {{"scenes", scenes}, {"max_primitives", 8}, {"pixels", "16x16"}, {"parameters_checked", checked},
                {"max_rel_error", worst}};
  c.passed = worst <= 1e-4;
  return c;
}

double sensitivity_fd_error(int scenes, std::uint64_t seed) {
  const int hw = 16;
  double worst = 0.0;
  for (int s = 0; s < scenes; ++s) {
    Rng rng(derive_seed(seed, {108, static_cast<std::uint64_t>(s)}));
    const splat::SplatScene scene = random_scene(rng, 1 + s % 6);
    const std::vector<splat::View> views{random_view(rng, hw), random_view(rng, hw)};
    const edit::LatentEncoder enc = edit::make_encoder(16, 8, 8, derive_seed(seed, {108, 1000u + s}));
    const Eigen::VectorXd b = unit(rng, 16);
    const edit::SensitivityReport rep = edit::sensitivity_scores(scene, views, b, enc);
    for (std::size_t i = 0; i < scene.size(); ++i) {
      double sum = 0.0;
      for (int k = 0; k < splat::kParamsPerPrimitive; ++k)
        sum += std::abs(derivative(
            [&](double x) {
              splat::SplatScene probe = scene;
              set_param(probe, i, k, x);
              return alignment_of(probe, views, enc, b);
            },
            scene_param(scene, i, k), 1e-4));
      worst = std::max(worst, rel_gap(rep.scores[i], sum, 1e-6));
    }
  }
  return worst;
}

Check sds_fixed_point(int T, std::uint64_t seed) {
  const auto t0 = Clock::now();
  Check c{9, "sds_fixed_point"};
  const int hw = 16;
  const edit::DiffusionSchedule schedule = edit::make_schedule(T);
  double worst = 0.0, smallest_control = 1e300;
  for (int s = 0; s < 4; ++s) {
    Rng rng(derive_seed(seed, {109, static_cast<std::uint64_t>(s)}));
    const splat::SplatScene scene = random_scene(rng, 3 + s);
    const std::vector<splat::View> views{random_view(rng, hw)};
    // One patch per image, so a single target can match every cell exactly.
    const edit::LatentEncoder enc = edit::make_encoder(16, hw, hw, derive_seed(seed, {109, 100u + s}));
    const Eigen::VectorXd m = edit::encode_latents({splat::render(scene, views[0])}, enc).cell(0);
    const Eigen::VectorXd shifted = m + 0.05 * unit(rng, 16);
    const std::vector<bool> mask(scene.size(), true);
    for (int t = 1; t <= T; ++t) {
      const auto out = edit::sds_gradients(scene, views, enc, schedule, m, t, derive_seed(seed, {109, 200u + t}), mask);
      const auto ctl = edit::sds_gradients(scene, views, enc, schedule, shifted, t, derive_seed(seed, {109, 200u + t}), mask);
      double g = 0.0, gc = 0.0;
      for (std::size_t i = 0; i < scene.size(); ++i)
        for (int k = 0; k < splat::kParamsPerPrimitive; ++k) {
          g = std::max(g, std::abs(out.grads[i].d[k]));
          gc = std::max(gc, std::abs(ctl.grads[i].d[k]));
        }
      worst = std::max(worst, g);
      smallest_control = std::min(smallest_control, gc);
    }
  }
  c.seconds = since(t0);
  c.measured = {{"timesteps", T}, {"max_abs_gradient_at_target", worst}, {"min_abs_gradient_off_target", smallest_control}};
  c.passed = worst <= 1e-12 && smallest_control > 1e-9;
  return c;
}

double slider_coordinate(const axis::ConceptAxisModel& model, const adapter::ToyGenerator& gen,
                         const adapter::LowRankAdapter& ad, double alpha, int draws, std::uint64_t seed) {
  const auto m = edit::slider_target(model, &gen, &ad, alpha, edit::TargetMode::adapter, draws, seed);
  double acc = 0.0;
  for (int t = 0; t < model.stage_count(); ++t) acc += m[t].dot(model.stages[t].axis.b_c);
  return acc / model.stage_count();
}

double attribute_drift(const axis::ConceptAxisModel& model, const adapter::ToyGenerator& gen,
                       const adapter::LowRankAdapter& ad, int draws, std::uint64_t seed) {
  double acc = 0.0;
  int n = 0;
  for (const auto& st : model.stages)
    for (double alpha : {-1.0, -0.5, 0.5, 1.0})
      for (int j = 0; j < draws; ++j) {
        const std::uint64_t s = derive_seed(seed, {106, static_cast<std::uint64_t>(j)});
        const Eigen::VectorXd base = adapter::generator_forward(gen, nullptr, 0.0, features::Side::neutral, st.stage, s);
        const Eigen::VectorXd f = adapter::generator_forward(gen, &ad, alpha, features::Side::neutral, st.stage, s);
        for (const auto& bk : st.attributes.bases) acc += std::abs((f - base).dot(bk));
        ++n;
      }
  return acc / n;
}

Suite::Suite(config::RunConfig cfg, config::Artifacts art, std::filesystem::path work_dir)
    : cfg_(std::move(cfg)), art_(std::move(art)), work_(std::move(work_dir)) {}

const config::EditOutput& Suite::edit_run(double gamma, double alpha) {
  const auto key = std::make_pair(gamma, alpha);
  auto it = runs_.find(key);
  if (it != runs_.end()) return it->second;
  config::RunConfig c = cfg_;
  c.edit.gamma = gamma;
  return runs_.emplace(key, config::run_edit(c, art_, alpha)).first->second;
}

Check Suite::adapter_slider() {
  const auto t0 = Clock::now();
  Check c{5, "adapter_slider"};
  const auto res = config::train(cfg_, art_.gen, art_.model);
  train_trace_ = res.trace;
  std::vector<double> coords;
  const std::vector<double> alphas{-1.0, -0.5, 0.0, 0.5, 1.0};
  for (double a : alphas) coords.push_back(slider_coordinate(art_.model, art_.gen, res.adapter, a, cfg_.target_draws, cfg_.seed));
  double proj_p = 0.0, proj_n = 0.0;
  for (const auto& st : art_.model.stages) {
    proj_p += st.mu_p.dot(st.axis.b_c);
    proj_n += st.mu_n.dot(st.axis.b_c);
  }
  proj_p /= art_.model.stage_count();
  proj_n /= art_.model.stage_count();
  bool increasing = true;
  for (std::size_t i = 1; i < coords.size(); ++i) increasing = increasing && coords[i] > coords[i - 1];
  const double err_hi = std::abs(coords.back() - proj_p) / std::abs(proj_p);
  const double err_lo = std::abs(coords.front() - proj_n) / std::abs(proj_n);
  c.seconds = since(t0);
  c.measured = {{"alphas", alphas},
                {"mean_coordinate", coords},
                {"projected_mu_p", proj_p},
                {"projected_mu_n", proj_n},
                {"endpoint_rel_error_pos", err_hi},
                {"endpoint_rel_error_neg", err_lo},
                {"train_steps", cfg_.train.steps},
                {"runtime_s", c.seconds}};
  c.passed = increasing && err_hi <= 0.1 && err_lo <= 0.1 && c.seconds < 120.0;
  return c;
}

Check Suite::attribute_preservation() {
  const auto t0 = Clock::now();
  Check c{6, "attribute_preservation"};
  adapter::TrainConfig with = cfg_.train;
  with.w_preserve = 0.5;
  adapter::TrainConfig without = with;
  without.w_preserve = 0.0;
  const auto a = adapter::train_adapter(art_.gen, art_.model, with).adapter;
  const auto b = adapter::train_adapter(art_.gen, art_.model, without).adapter;
  const double d_with = attribute_drift(art_.model, art_.gen, a, 64, cfg_.seed);
  const double d_without = attribute_drift(art_.model, art_.gen, b, 64, cfg_.seed);
  c.seconds = since(t0);
  c.measured = {{"drift_w_preserve_0.5", d_with}, {"drift_w_preserve_0", d_without}, {"steps", with.steps}};
  c.passed = d_with < d_without;
  return c;
}

Check Suite::sensitivity_selection() {
  const auto t0 = Clock::now();
  Check c{8, "sensitivity_and_selection"};
  const double fd_err = sensitivity_fd_error(6, cfg_.seed);
  const double gamma = 0.05;
  const auto& sparse = edit_run(gamma, 1.0);
  const auto& full = edit_run(1.0, 1.0);
  const double disp_sparse = sparse.final_coord - sparse.initial_coord;
  const double disp_full = full.final_coord - full.initial_coord;
  const double ratio = disp_sparse / disp_full;
  const std::size_t m0 = config::source_scene(cfg_).size();
  const double initial_fraction = static_cast<double>(edit::selection_size(m0, gamma)) / static_cast<double>(m0);
  double sel = 0.0, tot = 0.0;
  for (const auto& e : sparse.result.trace) {
    sel += static_cast<double>(e.selected);
    tot += static_cast<double>(e.primitives);
  }
  const double ms_sparse = 1000.0 * sparse.seconds / std::max<std::size_t>(1, sparse.result.trace.size());
  const double ms_full = 1000.0 * full.seconds / std::max<std::size_t>(1, full.result.trace.size());
  c.seconds = since(t0);
  c.measured = {{"sensitivity_fd_max_rel_error", fd_err},
                {"displacement_gamma_0.05", disp_sparse},
                {"displacement_gamma_1", disp_full},
                {"displacement_ratio", ratio},
                {"selected_fraction_initial", initial_fraction},
                {"selected_fraction_run_mean", tot > 0 ? sel / tot : 0.0},
                {"ms_per_step_gamma_0.05", ms_sparse},
                {"ms_per_step_gamma_1", ms_full}};
  c.passed = fd_err <= 1e-3 && disp_full > 0.0 && ratio >= 0.7 && initial_fraction <= 0.05 && ms_sparse < ms_full;
  return c;
}

Check Suite::schedule_conformance() {
  const auto t0 = Clock::now();
  Check c{10, "schedule_conformance"};
  const auto& run = edit_run(cfg_.edit.gamma, 1.0);
  std::vector<int> prunes, densifies;
  bool ordered = true;
  int last_densify = -1;
  for (const auto& e : run.result.events) {
    if (e.kind == "densify") {
      densifies.push_back(e.step);
      last_densify = e.step;
    } else if (e.kind == "prune") {
      prunes.push_back(e.step);
    }
    if (e.kind == "prune" && e.step > cfg_.edit.prune_only_until && last_densify != e.step) ordered = false;
  }
  std::vector<int> want_prune, want_densify;
  for (int s = cfg_.edit.event_every; s <= cfg_.edit.total_steps; s += cfg_.edit.event_every) {
    want_prune.push_back(s);
    if (s > cfg_.edit.prune_only_until) want_densify.push_back(s);
  }
  c.seconds = since(t0);
  c.measured = {{"total_steps", cfg_.edit.total_steps}, {"prune_steps", prunes}, {"densify_steps", densifies},
                {"densify_precedes_prune", ordered}};
  c.passed = prunes == want_prune && densifies == want_densify && ordered;
  return c;
}

Check Suite::determinism() {
  const auto t0 = Clock::now();
  Check c{11, "determinism"};
  const auto a = config::layout(cfg_, work_ / "determinism" / "run_a");
  const auto b = config::layout(cfg_, work_ / "determinism" / "run_b");
  config::run_edit(cfg_, art_, 1.0, a);
  config::run_edit(cfg_, art_, 1.0, b);
  const std::string ta = read_bytes(a.trace), tb = read_bytes(b.trace);
  const std::string sa = read_bytes(a.edited_scene), sb = read_bytes(b.edited_scene);
  c.seconds = since(t0);
  c.measured = {{"trace_bytes", ta.size()}, {"traces_identical", ta == tb}, {"scenes_identical", sa == sb}};
  c.passed = !ta.empty() && ta == tb && sa == sb;
  return c;
}

Check Suite::criterion(int id) {
  switch (id) {
    case 1: return lda_oracle(cfg_.lda_datasets, cfg_.seed);
    case 2: return axis_recovery(cfg_.recovery_seeds, cfg_.seed);
    case 3: return pca_deflation(20, cfg_.seed);
    case 4: return loss_gradients(100, cfg_.seed);
    case 5: return adapter_slider();
    case 6: return attribute_preservation();
    case 7: return renderer_gradients(16, cfg_.seed);
    case 8: return sensitivity_selection();
    case 9: return sds_fixed_point(cfg_.edit.schedule_T, cfg_.seed);
    case 10: return schedule_conformance();
    case 11: return determinism();
    default: throw ConfigError("no criterion " + std::to_string(id));
  }
}

std::vector<Check> Suite::criteria() {
  std::vector<Check> out;
  for (int id = 1; id <= 11; ++id) out.push_back(criterion(id));
  return out;
}

Check Suite::alpha_sweep() {
  const auto t0 = Clock::now();
  Check c{0, "alpha_sweep_monotone"};
  std::vector<double> coords;
  for (double a : cfg_.sweep_alphas) coords.push_back(edit_run(cfg_.edit.gamma, a).final_coord);
  bool increasing = true;
  for (std::size_t i = 1; i < coords.size(); ++i) increasing = increasing && coords[i] > coords[i - 1];
  c.measured = {{"alphas", cfg_.sweep_alphas}, {"final_coord", coords}};
  const auto at = [&](double a) -> const double* {
    for (std::size_t i = 0; i < cfg_.sweep_alphas.size(); ++i)
      if (cfg_.sweep_alphas[i] == a) return &coords[i];
    return nullptr;
  };
  bool midpoint_ok = true;
  if (at(-1.0) && at(0.0) && at(1.0)) {
    const double mid = 0.5 * (*at(-1.0) + *at(1.0));
    const double band = 0.25 * (*at(1.0) - *at(-1.0));
    midpoint_ok = std::abs(*at(0.0) - mid) <= band;
    c.measured["midpoint_offset"] = *at(0.0) - mid;
    c.measured["midpoint_band"] = band;
  }
  c.seconds = since(t0);
  c.passed = increasing && midpoint_ok;
  return c;
}

Check Suite::gamma_sweep() {
  const auto t0 = Clock::now();
  Check c{0, "gamma_sweep_monotone"};
  const double ref = edit_run(1.0, 1.0).final_coord - edit_run(1.0, 1.0).initial_coord;
  nlohmann::json rows = nlohmann::json::array();
  std::vector<double> ratios;
  for (double g : cfg_.gamma_sweep) {
    const auto& r = edit_run(g, 1.0);
    const double disp = r.final_coord - r.initial_coord;
    ratios.push_back(disp / ref);
    rows.push_back({{"gamma", g},
                    {"displacement", disp},
                    {"ratio_to_gamma_1", disp / ref},
                    {"ms_per_step", 1000.0 * r.seconds / std::max<std::size_t>(1, r.result.trace.size())},
                    {"final_primitives", r.result.scene.size()}});
  }
  bool monotone = true;
  for (std::size_t i = 1; i < ratios.size(); ++i) monotone = monotone && ratios[i] >= ratios[i - 1];
  c.seconds = since(t0);
  c.measured = {{"table", rows}};
  c.passed = monotone;
  return c;
}

std::vector<std::filesystem::path> Suite::write_plots() {
  std::filesystem::create_directories(work_);
  std::vector<std::filesystem::path> out;
  const auto& run = edit_run(cfg_.edit.gamma, 1.0);
  image::Series coord, loss;
  for (const auto& e : run.result.trace) {
    coord.x.push_back(e.step);
    coord.y.push_back(e.coord);
    loss.x.push_back(e.step);
    loss.y.push_back(e.loss_sds);
  }
  loss.color = {0.8, 0.2, 0.1};
  out.push_back(work_ / "report_coord.png");
  image::write_png(image::line_plot({coord}), out.back());
  out.push_back(work_ / "report_loss.png");
  image::write_png(image::line_plot({loss}), out.back());

  if (!train_trace_.empty()) {
    image::Series total;
    for (const auto& s : train_trace_) {
      total.x.push_back(s.step);
      total.y.push_back(s.total);
    }
    out.push_back(work_ / "report_adapter_loss.png");
    image::write_png(image::line_plot({total}), out.back());
  }

  std::vector<splat::Image> strip;
  const splat::View front = splat::front_view(cfg_.edit.views.height, cfg_.edit.views.width);
  for (double a : cfg_.sweep_alphas)
    strip.push_back(image::flatten_on_white(splat::render(edit_run(cfg_.edit.gamma, a).result.scene, front)));
  out.push_back(work_ / "report_alpha_strip.png");
  image::write_png(image::hstack(strip), out.back());
  return out;
}

nlohmann::json run_report(Suite& suite, bool* passed) {
  nlohmann::ordered_json doc;
  bool all = true;
  nlohmann::json crit = nlohmann::json::array();
  for (const auto& c : suite.criteria()) {
    crit.push_back(to_json(c));
    all = all && c.passed;
  }
  doc["criteria"] = crit;
  nlohmann::json props = nlohmann::json::array();
  const Check sweep = suite.alpha_sweep();
  props.push_back(to_json(sweep));
  all = all && sweep.passed;
  doc["properties"] = props;
  const Check gammas = suite.gamma_sweep();
  doc["gamma_sweep"] = {{"table", gammas.measured.at("table")}, {"monotone", gammas.passed}};
  nlohmann::json plots = nlohmann::json::array();
  for (const auto& p : suite.write_plots()) plots.push_back(p.filename().string());
  doc["plots"] = plots;
  doc["status"] = all ? "pass" : "fail";
  if (passed) *passed = all;
  return nlohmann::json(doc);
}

}  // namespace acs::report
