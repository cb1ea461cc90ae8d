#include "acs/edit.hpp"

#include "acs/error.hpp"
#include "acs/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace acs::edit {

namespace {

enum SeedTag : std::uint64_t {
  kTagEncoder = 41,
  kTagSdsNoise = 42,
  kTagStep = 43,
  kTagStepViews = 44,
  kTagSelectViews = 45,
  kTagTarget = 46,
  kTagScene = 47,
  kTagEvalViews = 48,
};

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void check_patches(int height, int width, const LatentEncoder& enc) {
  if (height % enc.patch_h != 0 || width % enc.patch_w != 0)
    throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by the " + std::to_string(enc.patch_h) + "x" + std::to_string(enc.patch_w) +
                     " patch");
}

std::vector<splat::Image> render_views(const splat::SplatScene& scene, const std::vector<splat::View>& views) {
  std::vector<splat::Image> out;
  out.reserve(views.size());
  for (const auto& v : views) out.push_back(splat::render(scene, v));
  return out;
}

void add_grads(std::vector<splat::PrimitiveGrad>& acc, const std::vector<splat::PrimitiveGrad>& g) {
  for (std::size_t i = 0; i < acc.size(); ++i)
    for (int k = 0; k < splat::kParamsPerPrimitive; ++k) acc[i].d[k] += g[i].d[k];
}

}  // namespace

LatentEncoder make_encoder(int dim, int patch_h, int patch_w, std::uint64_t seed, double gain) {
  if (dim < 1 || patch_h < 1 || patch_w < 1) throw ConfigError("encoder dimensions must be positive");
  LatentEncoder enc;
  enc.dim = dim;
  enc.patch_h = patch_h;
  enc.patch_w = patch_w;
  enc.seed = seed;
  enc.projection.resize(dim, enc.input_size());
  Rng rng(derive_seed(seed, {kTagEncoder}));
  const double sd = gain / std::sqrt(static_cast<double>(enc.input_size()));
  for (Eigen::Index c = 0; c < enc.projection.cols(); ++c)
    for (Eigen::Index r = 0; r < enc.projection.rows(); ++r) enc.projection(r, c) = sd * rng.normal();
  // Null out the response to an opaque mid-gray patch: a neutral scene encodes near zero.
  Eigen::VectorXd gray(enc.input_size());
  for (int i = 0; i < enc.input_size(); ++i) gray[i] = i % 4 == 3 ? 1.0 : 0.5;
  gray.normalize();
  enc.projection -= (enc.projection * gray) * gray.transpose();
  return enc;
}

LatentGrid encode_latents(const std::vector<splat::Image>& images, const LatentEncoder& enc) {
  if (enc.projection.rows() != enc.dim || enc.projection.cols() != enc.input_size())
    throw ShapeError("encoder projection has the wrong shape");
  LatentGrid grid;
  grid.views = static_cast<int>(images.size());
  grid.dim = enc.dim;
  if (images.empty()) return grid;
  const int height = images.front().height, width = images.front().width;
  check_patches(height, width, enc);
  grid.grid_h = height / enc.patch_h;
  grid.grid_w = width / enc.patch_w;
  grid.data.assign(grid.cells() * enc.dim, 0.0);

  Eigen::VectorXd patch(enc.input_size());
  std::size_t cell = 0;
  for (const auto& img : images) {
    if (img.height != height || img.width != width) throw ShapeError("all views must share one image size");
    for (int gy = 0; gy < grid.grid_h; ++gy)
      for (int gx = 0; gx < grid.grid_w; ++gx, ++cell) {
        int at = 0;
        for (int py = 0; py < enc.patch_h; ++py)
          for (int px = 0; px < enc.patch_w; ++px)
            for (int c = 0; c < 4; ++c) patch[at++] = img.at(gy * enc.patch_h + py, gx * enc.patch_w + px, c);
        grid.cell(cell) = enc.projection * patch;
      }
  }
  return grid;
}

std::vector<splat::Image> encode_backward(const LatentGrid& d_latents, const LatentEncoder& enc, int height,
                                          int width) {
  check_patches(height, width, enc);
  if (d_latents.grid_h != height / enc.patch_h || d_latents.grid_w != width / enc.patch_w ||
      d_latents.dim != enc.dim)
    throw ShapeError("latent gradient grid does not match the image size");
  std::vector<splat::Image> out(d_latents.views, splat::Image(height, width));
  std::size_t cell = 0;
  for (int v = 0; v < d_latents.views; ++v)
    for (int gy = 0; gy < d_latents.grid_h; ++gy)
      for (int gx = 0; gx < d_latents.grid_w; ++gx, ++cell) {
        const Eigen::VectorXd d_patch = enc.projection.transpose() * d_latents.cell(cell);
        int at = 0;
        for (int py = 0; py < enc.patch_h; ++py)
          for (int px = 0; px < enc.patch_w; ++px)
            for (int c = 0; c < 4; ++c) out[v].at(gy * enc.patch_h + py, gx * enc.patch_w + px, c) = d_patch[at++];
      }
  return out;
}

double concept_alignment(const LatentGrid& latents, const Eigen::VectorXd& b_c) {
  if (b_c.size() != latents.dim) throw ShapeError("concept axis length differs from latent dim");
  double total = 0.0;
  for (std::size_t i = 0; i < latents.cells(); ++i) total += b_c.dot(latents.cell(i));
  return total;
}

double DiffusionSchedule::alpha_bar_at(int t) const {
  if (t < 1 || t > T) throw ConfigError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
  return alpha_bar[t - 1];
}

double DiffusionSchedule::weight_at(int t) const {
  if (t < 1 || t > T) throw ConfigError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
  return weight[t - 1];
}

DiffusionSchedule make_schedule(int T, Weighting weighting) {
  if (T < 1) throw ConfigError("schedule needs T >= 1");
  DiffusionSchedule s;
  s.T = T;
  for (int t = 1; t <= T; ++t) {
    const double c = std::cos(0.5 * 3.14159265358979323846 * t / (T + 1.0));
    const double ab = c * c;
    s.alpha_bar.push_back(ab);
    s.weight.push_back(weighting == Weighting::unit ? 1.0 : 1.0 - ab);
  }
  return s;
}

Eigen::VectorXd toy_denoiser(const Eigen::VectorXd& z_t, int t, const Eigen::VectorXd& m_target,
                             const DiffusionSchedule& schedule) {
  if (z_t.size() != m_target.size()) throw ShapeError("toy_denoiser: length mismatch");
  const double ab = schedule.alpha_bar_at(t);
  return (z_t - std::sqrt(ab) * m_target) / std::sqrt(1.0 - ab);
}

std::size_t selection_size(std::size_t m, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in (0, 1]");
  const auto n = static_cast<std::size_t>(std::ceil(gamma * static_cast<double>(m) - 1e-9));
  return std::min(n, m);
}

SensitivityReport sensitivity_scores(const splat::SplatScene& scene, const std::vector<splat::View>& views,
                                     const Eigen::VectorXd& b_c, const LatentEncoder& enc, double gamma) {
  if (scene.size() == 0) throw ConfigError("sensitivity_scores: empty scene");
  if (views.empty()) throw ConfigError("sensitivity_scores: no views");
  SensitivityReport report;
  report.views = static_cast<int>(views.size());
  report.gamma = gamma;
  report.scores.assign(scene.size(), 0.0);

  const auto images = render_views(scene, views);
  const LatentGrid latents = encode_latents(images, enc);
  report.alignment = concept_alignment(latents, b_c);

  // dC/dz = b_c at every cell.
  LatentGrid d_latents = latents;
  for (std::size_t i = 0; i < d_latents.cells(); ++i) d_latents.cell(i) = b_c;
  const auto d_images = encode_backward(d_latents, enc, images.front().height, images.front().width);
  std::vector<splat::PrimitiveGrad> total(scene.size());
  for (std::size_t v = 0; v < views.size(); ++v) add_grads(total, splat::render_backward(scene, views[v], d_images[v]));
  for (std::size_t i = 0; i < scene.size(); ++i) {
    double s = 0.0;
    for (double g : total[i].d) s += std::abs(g);
    report.scores[i] = s;
  }
  report.selected_count = selection_size(scene.size(), gamma);
  return report;
}

std::vector<bool> select_primitives(const std::vector<double>& scores, double gamma) {
  const std::size_t n = selection_size(scores.size(), gamma);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<bool> mask(scores.size(), false);
  for (std::size_t i = 0; i < n; ++i) mask[order[i]] = true;
  return mask;
}

std::vector<bool> select_primitives(const SensitivityReport& report, double gamma) {
  return select_primitives(report.scores, gamma);
}

std::vector<Eigen::VectorXd> slider_target(const axis::ConceptAxisModel& model, const adapter::ToyGenerator* gen,
                                           const adapter::LowRankAdapter* adapter, double alpha, TargetMode mode,
                                           int draws, std::uint64_t seed) {
  if (!std::isfinite(alpha)) throw ConfigError("alpha must be finite");
  std::vector<Eigen::VectorXd> out;
  for (const auto& s : model.stages) {
    if (mode == TargetMode::axis) {
      const Eigen::VectorXd& b = s.axis.b_c;
      out.push_back(0.5 * (s.mu_p + s.mu_n) + 0.5 * alpha * b.dot(s.mu_p - s.mu_n) * b);
      continue;
    }
    if (gen == nullptr) throw ConfigError("adapter-mode slider target needs a generator");
    if (draws < 1) throw ConfigError("slider_target needs at least one draw");
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(model.dim());
    for (int j = 0; j < draws; ++j)
      acc += adapter::generator_forward(*gen, adapter, alpha, features::Side::neutral, s.stage,
                                        derive_seed(seed, {kTagTarget, static_cast<std::uint64_t>(j)}));
    out.push_back(acc / draws);
  }
  return out;
}

SceneOptimizer::SceneOptimizer(LearningRates lrs, std::size_t m) : lrs_(lrs) { reset(m); }

void SceneOptimizer::reset(std::size_t m) {
  first_.assign(m, splat::ParamArray{});
  second_.assign(m, splat::ParamArray{});
  steps_.assign(m, 0);
}

void SceneOptimizer::apply(splat::SplatScene& scene, const std::vector<splat::PrimitiveGrad>& grads,
                           const std::vector<bool>& mask) {
  if (grads.size() != scene.size() || mask.size() != scene.size()) throw ShapeError("optimizer: size mismatch");
  if (first_.size() != scene.size()) throw ContractViolation("optimizer state is out of sync with the scene");
  const double lr[splat::kParamsPerPrimitive] = {lrs_.mean,     lrs_.mean,    lrs_.scale, lrs_.scale, lrs_.rotation,
                                                 lrs_.opacity, lrs_.color, lrs_.color, lrs_.color};
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (!mask[i]) continue;
    auto params = splat::to_params(scene.primitives[i]);
    const int t = ++steps_[i];
    const double c1 = 1.0 - std::pow(kBeta1, t);
    const double c2 = 1.0 - std::pow(kBeta2, t);
    for (int k = 0; k < splat::kParamsPerPrimitive; ++k) {
      const double g = grads[i].d[k];
      first_[i][k] = kBeta1 * first_[i][k] + (1.0 - kBeta1) * g;
      second_[i][k] = kBeta2 * second_[i][k] + (1.0 - kBeta2) * g * g;
      params[k] -= lr[k] * (first_[i][k] / c1) / (std::sqrt(second_[i][k] / c2) + kAdamEps);
    }
    for (int k = 6; k < 9; ++k) params[k] = std::clamp(params[k], 0.0, 1.0);
    scene.primitives[i] = splat::from_params(params);
  }
}

void SceneOptimizer::reindex(const std::vector<std::size_t>& origin) {
  std::vector<splat::ParamArray> f, s;
  std::vector<int> n;
  for (std::size_t i = 0; i < origin.size(); ++i) {
    const bool copy = i > 0 && origin[i] == origin[i - 1];
    f.push_back(copy ? splat::ParamArray{} : first_.at(origin[i]));
    s.push_back(copy ? splat::ParamArray{} : second_.at(origin[i]));
    n.push_back(copy ? 0 : steps_.at(origin[i]));
  }
  first_ = std::move(f);
  second_ = std::move(s);
  steps_ = std::move(n);
}

SdsOutput sds_gradients(const splat::SplatScene& scene, const std::vector<splat::View>& views,
                        const LatentEncoder& enc, const DiffusionSchedule& schedule, const Eigen::VectorXd& m_target,
                        int t, std::uint64_t seed, const std::vector<bool>& mask,
                        const Eigen::VectorXd* readout_axis) {
  if (mask.size() != scene.size()) throw ShapeError("sds: mask length != M");
  if (m_target.size() != enc.dim) throw ShapeError("sds: target length differs from latent dim");
  if (views.empty()) throw ConfigError("sds: no views");
  SdsOutput out;
  out.grads.assign(scene.size(), splat::PrimitiveGrad{});

  const auto images = render_views(scene, views);
  const LatentGrid latents = encode_latents(images, enc);
  out.cells = latents.cells();
  if (readout_axis != nullptr) out.cbar = concept_alignment(latents, *readout_axis);

  const double ab = schedule.alpha_bar_at(t);
  const double w = schedule.weight_at(t);
  const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
  Rng rng(derive_seed(seed, {kTagSdsNoise, static_cast<std::uint64_t>(t)}));
  LatentGrid d_latents = latents;
  Eigen::VectorXd eps(enc.dim);
  const double inv_views = 1.0 / static_cast<double>(views.size());
  for (std::size_t i = 0; i < latents.cells(); ++i) {
    for (int k = 0; k < enc.dim; ++k) eps[k] = rng.normal();
    const Eigen::VectorXd z_t = sa * latents.cell(i) + sn * eps;
    const Eigen::VectorXd residual = toy_denoiser(z_t, t, m_target, schedule) - eps;
    out.loss += w * residual.squaredNorm();
    d_latents.cell(i) = w * inv_views * residual;
  }
  out.loss /= static_cast<double>(std::max<std::size_t>(latents.cells(), 1));

  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) return out;
  const auto d_images = encode_backward(d_latents, enc, images.front().height, images.front().width);
  for (std::size_t v = 0; v < views.size(); ++v)
    add_grads(out.grads, splat::render_backward(scene, views[v], d_images[v], &mask));
  return out;
}

SdsOutput sds_step(splat::SplatScene& scene, const std::vector<splat::View>& views, const LatentEncoder& enc,
                   const DiffusionSchedule& schedule, const Eigen::VectorXd& m_target, int t, std::uint64_t seed,
                   const std::vector<bool>& mask, SceneOptimizer& optimizer) {
  SdsOutput out = sds_gradients(scene, views, enc, schedule, m_target, t, seed, mask);
  optimizer.apply(scene, out.grads, mask);
  return out;
}

void EditConfig::validate() const {
  if (total_steps < 0) throw ConfigError("total_steps must be >= 0");
  if (event_every < 1) throw ConfigError("event_every must be >= 1");
  if (prune_only_until < 0 || prune_only_until > std::max(total_steps, prune_only_until))
    throw ConfigError("prune-only window must lie within the total steps");
  if (views_per_step < 1 || sensitivity_views < 1) throw ConfigError("view counts must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in (0, 1]");
  if (schedule_T < 1) throw ConfigError("schedule_T must be >= 1");
  if (!std::isfinite(alpha)) throw ConfigError("alpha must be finite");
  if (!(views.zoom_lo > 0.0 && views.zoom_lo <= views.zoom_hi)) throw ConfigError("invalid zoom range");
}

nlohmann::json to_json(const EditConfig& cfg) {
  return {{"total_steps", cfg.total_steps},
          {"event_every", cfg.event_every},
          {"prune_only_until", cfg.prune_only_until},
          {"views_per_step", cfg.views_per_step},
          {"sensitivity_views", cfg.sensitivity_views},
          {"gamma", cfg.gamma},
          {"schedule_T", cfg.schedule_T},
          {"weighting", cfg.weighting == Weighting::unit ? "unit" : "one_minus_alpha_bar"},
          {"lr", {{"mean", cfg.lrs.mean}, {"scale", cfg.lrs.scale}, {"rotation", cfg.lrs.rotation},
                  {"color", cfg.lrs.color}, {"opacity", cfg.lrs.opacity}}},
          {"seed", cfg.seed},
          {"alpha", cfg.alpha},
          {"prune_threshold", cfg.prune_threshold},
          {"densify", {{"grad_threshold", cfg.densify.grad_threshold}, {"jitter", cfg.densify.jitter},
                       {"max_primitives", cfg.densify.max_primitives}}},
          {"views", {{"zoom", {cfg.views.zoom_lo, cfg.views.zoom_hi}}, {"rotation_range", cfg.views.rotation_range},
                     {"translation_range", cfg.views.translation_range}, {"height", cfg.views.height},
                     {"width", cfg.views.width}}}};
}

EditConfig edit_config_from_json(const nlohmann::json& j) {
  EditConfig cfg;
  cfg.total_steps = j.value("total_steps", cfg.total_steps);
  cfg.event_every = j.value("event_every", cfg.event_every);
  cfg.prune_only_until = j.value("prune_only_until", cfg.prune_only_until);
  cfg.views_per_step = j.value("views_per_step", cfg.views_per_step);
  cfg.sensitivity_views = j.value("sensitivity_views", cfg.sensitivity_views);
  cfg.gamma = j.value("gamma", cfg.gamma);
  cfg.schedule_T = j.value("schedule_T", cfg.schedule_T);
  const std::string weighting = j.value("weighting", std::string("one_minus_alpha_bar"));
  if (weighting == "unit") cfg.weighting = Weighting::unit;
  else if (weighting == "one_minus_alpha_bar") cfg.weighting = Weighting::one_minus_alpha_bar;
  else throw ConfigError("unknown weighting '" + weighting + "'");
  if (j.contains("lr")) {
    const auto& lr = j.at("lr");
    cfg.lrs.mean = lr.value("mean", cfg.lrs.mean);
    cfg.lrs.scale = lr.value("scale", cfg.lrs.scale);
    cfg.lrs.rotation = lr.value("rotation", cfg.lrs.rotation);
    cfg.lrs.color = lr.value("color", cfg.lrs.color);
    cfg.lrs.opacity = lr.value("opacity", cfg.lrs.opacity);
  }
  cfg.seed = j.value("seed", cfg.seed);
  cfg.alpha = j.value("alpha", cfg.alpha);
  cfg.prune_threshold = j.value("prune_threshold", cfg.prune_threshold);
  if (j.contains("densify")) {
    const auto& d = j.at("densify");
    cfg.densify.grad_threshold = d.value("grad_threshold", cfg.densify.grad_threshold);
    cfg.densify.jitter = d.value("jitter", cfg.densify.jitter);
    cfg.densify.max_primitives = d.value("max_primitives", cfg.densify.max_primitives);
  }
  if (j.contains("views")) {
    const auto& v = j.at("views");
    if (v.contains("zoom")) {
      cfg.views.zoom_lo = v.at("zoom").at(0).get<double>();
      cfg.views.zoom_hi = v.at("zoom").at(1).get<double>();
    }
    cfg.views.rotation_range = v.value("rotation_range", cfg.views.rotation_range);
    cfg.views.translation_range = v.value("translation_range", cfg.views.translation_range);
    cfg.views.height = v.value("height", cfg.views.height);
    cfg.views.width = v.value("width", cfg.views.width);
  }
  cfg.validate();
  return cfg;
}

nlohmann::json to_json(const TraceEntry& e) {
  nlohmann::ordered_json j;
  j["step"] = e.step;
  j["cbar"] = e.cbar;
  j["coord"] = e.coord;
  j["loss_sds"] = e.loss_sds;
  j["selected"] = e.selected;
  return nlohmann::json(j);
}

nlohmann::json to_json(const EditEvent& e) {
  nlohmann::json j = e.detail.is_object() ? e.detail : nlohmann::json::object();
  j["type"] = "event";
  j["kind"] = e.kind;
  j["step"] = e.step;
  return j;
}

std::string trace_jsonl(const std::vector<TraceEntry>& trace) {
  std::string out;
  for (const auto& e : trace) {
    nlohmann::ordered_json j;
    j["step"] = e.step;
    j["cbar"] = e.cbar;
    j["coord"] = e.coord;
    j["loss_sds"] = e.loss_sds;
    j["selected"] = e.selected;
    out += j.dump();
    out += '\n';
  }
  return out;
}

EditRunner::EditRunner(splat::SplatScene scene, LatentEncoder encoder, Eigen::VectorXd readout_axis,
                       std::vector<Eigen::VectorXd> targets, EditConfig cfg)
    : scene_(std::move(scene)),
      enc_(std::move(encoder)),
      axis_(std::move(readout_axis)),
      cfg_(cfg),
      schedule_(make_schedule(cfg.schedule_T, cfg.weighting)),
      optimizer_(cfg.lrs, scene_.size()) {
  cfg_.validate();
  scene_.check();
  if (axis_.size() != enc_.dim) throw ShapeError("readout axis length differs from latent dim");
  set_targets(std::move(targets));
  if (scene_.size() > 0) recompute_selection();
}

void EditRunner::set_targets(std::vector<Eigen::VectorXd> targets) {
  if (static_cast<int>(targets.size()) < cfg_.schedule_T)
    throw ConfigError("need one SDS target per schedule timestep (" + std::to_string(cfg_.schedule_T) + ")");
  for (const auto& t : targets)
    if (t.size() != enc_.dim) throw ShapeError("SDS target length differs from latent dim");
  targets_ = std::move(targets);
}

void EditRunner::recompute_selection() {
  if (scene_.size() == 0) {
    events_.push_back({step_, "select", {{"selected", 0}, {"primitives", 0}}});
    return;
  }
  const auto views = splat::sample_views(derive_seed(cfg_.seed, {kTagSelectViews, static_cast<std::uint64_t>(step_)}),
                                         cfg_.views, cfg_.sensitivity_views);
  const SensitivityReport report = sensitivity_scores(scene_, views, axis_, enc_, cfg_.gamma);
  scene_.selection = select_primitives(report, cfg_.gamma);
  events_.push_back({step_, "select", {{"selected", report.selected_count}, {"primitives", scene_.size()}}});
}

void EditRunner::reset(const splat::SplatScene& scene) {
  scene_ = scene;
  scene_.check();
  optimizer_.reset(scene_.size());
  schedule_step_ = 0;
}

void EditRunner::run_events() {
  const int s = schedule_step_;
  if (s % cfg_.event_every != 0) return;
  if (!unbounded_ && s > cfg_.total_steps) return;
  if (s > cfg_.prune_only_until) {
    splat::DensifyConfig dc = cfg_.densify;
    dc.seed = derive_seed(cfg_.seed, {static_cast<std::uint64_t>(s)});
    const std::size_t before = scene_.size();
    optimizer_.reindex(splat::densify(scene_, dc));
    events_.push_back({step_, "densify", {{"before", before}, {"after", scene_.size()}}});
  }
  const std::size_t before = scene_.size();
  optimizer_.reindex(splat::prune(scene_, cfg_.prune_threshold));
  events_.push_back({step_, "prune", {{"before", before}, {"after", scene_.size()}}});
  recompute_selection();
}

const TraceEntry& EditRunner::step() {
  ++step_;
  ++schedule_step_;
  scene_.step = schedule_step_;
  Rng rng(derive_seed(cfg_.seed, {kTagStep, static_cast<std::uint64_t>(step_)}));
  const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg_.schedule_T)));
  const auto views = splat::sample_views(derive_seed(cfg_.seed, {kTagStepViews, static_cast<std::uint64_t>(step_)}),
                                         cfg_.views, cfg_.views_per_step);

  TraceEntry entry;
  entry.step = step_;
  if (scene_.size() > 0) {
    const SdsOutput sds = sds_gradients(scene_, views, enc_, schedule_, targets_[t - 1], t, rng.next_u64(),
                                        scene_.selection, &axis_);
    optimizer_.apply(scene_, sds.grads, scene_.selection);
    splat::accumulate_position_stats(scene_, sds.grads, &scene_.selection);
    entry.cbar = sds.cbar;
    entry.coord = sds.cbar / static_cast<double>(sds.cells);
    entry.loss_sds = sds.loss;
  }
  entry.selected = scene_.selected_count();
  entry.primitives = scene_.size();
  if (!std::isfinite(entry.cbar) || !std::isfinite(entry.coord) || !std::isfinite(entry.loss_sds))
    throw NumericalError("non-finite edit trace entry at step " + std::to_string(step_));
  run_events();
  trace_.push_back(entry);
  return trace_.back();
}

EditResult edit_loop(splat::SplatScene scene, const LatentEncoder& enc, const Eigen::VectorXd& readout_axis,
                     std::vector<Eigen::VectorXd> targets, const EditConfig& cfg,
                     const std::function<void(const StepProgress&)>& progress) {
  cfg.validate();
  if (cfg.total_steps == 0) return {std::move(scene), {}, {}};
  EditRunner runner(std::move(scene), enc, readout_axis, std::move(targets), cfg);
  const splat::View front = splat::front_view(cfg.views.height, cfg.views.width);
  for (int s = 0; s < cfg.total_steps; ++s) {
    const TraceEntry& e = runner.step();
    if (progress) {
      const splat::Image frame = splat::render(runner.scene(), front);
      progress(StepProgress{e, frame});
    }
  }
  return {runner.scene(), runner.trace(), runner.events()};
}

double concept_coordinate(const splat::SplatScene& scene, const LatentEncoder& enc, const Eigen::VectorXd& b_c,
                          const std::vector<splat::View>& views) {
  const LatentGrid latents = encode_latents(render_views(scene, views), enc);
  return concept_alignment(latents, b_c) / static_cast<double>(latents.cells());
}

std::vector<splat::View> evaluation_views(const splat::ViewConfig& cfg, int count) {
  std::vector<splat::View> views{splat::front_view(cfg.height, cfg.width)};
  const auto rest = splat::sample_views(derive_seed(0, {kTagEvalViews}), cfg, count - 1);
  views.insert(views.end(), rest.begin(), rest.end());
  return views;
}

splat::SplatScene make_default_scene(std::uint64_t seed, int primitives, int body_primitives) {
  if (primitives < 1 || body_primitives < 0 || body_primitives > primitives)
    throw ConfigError("invalid default scene primitive counts");
  Rng rng(derive_seed(seed, {kTagScene}));
  splat::SplatScene scene;
  // Detail primitives first: they sit in front in compositing order.
  for (int i = 0; i < primitives - body_primitives; ++i) {
    splat::GaussianPrimitive p;
    const double r = 0.8 * std::sqrt(rng.uniform());
    const double a = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    p.mu = {r * std::cos(a), r * std::sin(a)};
    p.log_scale = {std::log(rng.uniform(0.03, 0.07)), std::log(rng.uniform(0.03, 0.07))};
    p.rotation = rng.uniform(-1.5, 1.5);
    p.opacity_pre = splat::logit(rng.uniform(0.3, 0.6));
    p.color = {rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7)};
    scene.add(p, true);
  }
  for (int i = 0; i < body_primitives; ++i) {
    splat::GaussianPrimitive p;
    const double a = 2.0 * 3.14159265358979323846 * i / std::max(body_primitives, 1);
    const double r = i == 0 ? 0.0 : 0.35;
    p.mu = {r * std::cos(a) + 0.05 * rng.normal(), r * std::sin(a) + 0.05 * rng.normal()};
    p.log_scale = {std::log(rng.uniform(0.25, 0.4)), std::log(rng.uniform(0.25, 0.4))};
    p.rotation = rng.uniform(-1.5, 1.5);
    p.opacity_pre = splat::logit(0.9);
    p.color = {rng.uniform(0.4, 0.6), rng.uniform(0.4, 0.6), rng.uniform(0.4, 0.6)};
    scene.add(p, true);
  }
  return scene;
}

}  // namespace acs::edit
