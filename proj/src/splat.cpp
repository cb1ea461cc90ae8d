#include "acs/splat.hpp"

#include "acs/error.hpp"
#include "acs/json_util.hpp"
#include "acs/rng.hpp"

#include <algorithm>
#include <cmath>

namespace acs::splat {

namespace {

// Per-view projection of one primitive into image NDC coordinates.
struct Projected {
  double cx, cy;      // center
  double ca, sa;      // cos/sin of the on-screen orientation
  double ix, iy;      // 1 / (screen scale)^2 along the two principal axes
  double opacity;
};

struct ViewFrame {
  double k;           // scene units to NDC
  double cr, sr;      // view rotation
};

ViewFrame frame_of(const View& view) {
  if (!(view.zoom > 0.0)) throw ContractViolation("view zoom must be > 0");
  return {kReferenceZoom / view.zoom, std::cos(view.rotation), std::sin(view.rotation)};
}

Projected project(const GaussianPrimitive& p, const View& view, const ViewFrame& f) {
  Projected out;
  out.cx = f.k * (f.cr * p.mu[0] - f.sr * p.mu[1]) + view.translation[0];
  out.cy = f.k * (f.sr * p.mu[0] + f.cr * p.mu[1]) + view.translation[1];
  const double phi = p.rotation + view.rotation;
  out.ca = std::cos(phi);
  out.sa = std::sin(phi);
  const double sx = f.k * std::exp(p.log_scale[0]);
  const double sy = f.k * std::exp(p.log_scale[1]);
  out.ix = 1.0 / (sx * sx);
  out.iy = 1.0 / (sy * sy);
  out.opacity = sigmoid(p.opacity_pre);
  return out;
}

double pixel_u(int x, int width) { return (x + 0.5) / width * 2.0 - 1.0; }

std::vector<Projected> project_all(const SplatScene& scene, const View& view) {
  const ViewFrame f = frame_of(view);
  std::vector<Projected> out;
  out.reserve(scene.size());
  for (const auto& p : scene.primitives) out.push_back(project(p, view, f));
  return out;
}

enum SeedTag : std::uint64_t { kTagView = 31, kTagJitter = 32 };

}  // namespace

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

Vec2 GaussianPrimitive::scale() const { return {std::exp(log_scale[0]), std::exp(log_scale[1])}; }

double GaussianPrimitive::opacity() const { return sigmoid(opacity_pre); }

ParamArray to_params(const GaussianPrimitive& p) {
  return {p.mu[0], p.mu[1], p.log_scale[0], p.log_scale[1], p.rotation, p.opacity_pre,
          p.color[0], p.color[1], p.color[2]};
}

GaussianPrimitive from_params(const ParamArray& a) {
  GaussianPrimitive p;
  p.mu = {a[0], a[1]};
  p.log_scale = {a[2], a[3]};
  p.rotation = a[4];
  p.opacity_pre = a[5];
  p.color = {a[6], a[7], a[8]};
  return p;
}

void SplatScene::add(const GaussianPrimitive& p, bool selected) {
  primitives.push_back(p);
  selection.push_back(selected);
  grad_accum.push_back(0.0);
  grad_count.push_back(0);
}

std::size_t SplatScene::selected_count() const {
  return static_cast<std::size_t>(std::count(selection.begin(), selection.end(), true));
}

void SplatScene::check() const {
  if (selection.size() != primitives.size() || grad_accum.size() != primitives.size() ||
      grad_count.size() != primitives.size())
    throw ContractViolation("scene per-primitive arrays have inconsistent lengths");
}

View front_view(int height, int width) {
  View v;
  v.height = height;
  v.width = width;
  return v;
}

View sample_view(std::uint64_t seed, const ViewConfig& cfg) {
  Rng rng(derive_seed(seed, {kTagView}));
  View v;
  v.zoom = rng.uniform(cfg.zoom_lo, cfg.zoom_hi);
  v.rotation = rng.uniform(-cfg.rotation_range, cfg.rotation_range);
  v.translation = {rng.uniform(-cfg.translation_range, cfg.translation_range),
                   rng.uniform(-cfg.translation_range, cfg.translation_range)};
  v.height = cfg.height;
  v.width = cfg.width;
  return v;
}

std::vector<View> sample_views(std::uint64_t seed, const ViewConfig& cfg, int count) {
  std::vector<View> out;
  for (int i = 0; i < count; ++i) out.push_back(sample_view(derive_seed(seed, {static_cast<std::uint64_t>(i)}), cfg));
  return out;
}

Image render(const SplatScene& scene, const View& view) {
  Image img(view.height, view.width);
  const auto proj = project_all(scene, view);
  for (int y = 0; y < view.height; ++y) {
    const double v = pixel_u(y, view.height);
    for (int x = 0; x < view.width; ++x) {
      const double u = pixel_u(x, view.width);
      double transmit = 1.0;
      double r = 0.0, g = 0.0, b = 0.0;
      for (std::size_t i = 0; i < proj.size(); ++i) {
        const Projected& p = proj[i];
        const double dx = u - p.cx, dy = v - p.cy;
        const double a = dx * p.ca + dy * p.sa;
        const double c = -dx * p.sa + dy * p.ca;
        const double alpha = p.opacity * std::exp(-0.5 * (a * a * p.ix + c * c * p.iy));
        const double w = alpha * transmit;
        const auto& h = scene.primitives[i].color;
        r += h[0] * w;
        g += h[1] * w;
        b += h[2] * w;
        transmit *= 1.0 - alpha;
      }
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
      img.at(y, x, 3) = 1.0 - transmit;
    }
  }
  return img;
}

std::vector<PrimitiveGrad> render_backward(const SplatScene& scene, const View& view, const Image& d_image,
                                           const std::vector<bool>* mask) {
  if (d_image.height != view.height || d_image.width != view.width ||
      d_image.rgba.size() != static_cast<std::size_t>(view.height) * view.width * 4)
    throw ShapeError("render_backward: d_image shape does not match the view");
  if (mask != nullptr && mask->size() != scene.size()) throw ShapeError("render_backward: mask length != M");

  const std::size_t m = scene.size();
  std::vector<PrimitiveGrad> grads(m);
  if (m == 0) return grads;
  const ViewFrame frame = frame_of(view);
  const auto proj = project_all(scene, view);

  std::vector<double> alpha(m), gauss(m), ta(m), tb(m), transmit(m);
  for (int y = 0; y < view.height; ++y) {
    const double v = pixel_u(y, view.height);
    for (int x = 0; x < view.width; ++x) {
      const double d_out[4] = {d_image.at(y, x, 0), d_image.at(y, x, 1), d_image.at(y, x, 2), d_image.at(y, x, 3)};
      if (d_out[0] == 0.0 && d_out[1] == 0.0 && d_out[2] == 0.0 && d_out[3] == 0.0) continue;
      const double u = pixel_u(x, view.width);

      double t = 1.0;
      for (std::size_t i = 0; i < m; ++i) {
        const Projected& p = proj[i];
        const double dx = u - p.cx, dy = v - p.cy;
        ta[i] = dx * p.ca + dy * p.sa;
        tb[i] = -dx * p.sa + dy * p.ca;
        gauss[i] = std::exp(-0.5 * (ta[i] * ta[i] * p.ix + tb[i] * tb[i] * p.iy));
        alpha[i] = p.opacity * gauss[i];
        transmit[i] = t;
        t *= 1.0 - alpha[i];
      }

      // Back to front; `behind` is the normalized contribution of everything after i.
      double behind[4] = {0.0, 0.0, 0.0, 0.0};
      for (std::size_t i = m; i-- > 0;) {
        const auto& h = scene.primitives[i].color;
        const double hc[4] = {h[0], h[1], h[2], 1.0};
        if (mask == nullptr || (*mask)[i]) {
          const Projected& p = proj[i];
          double d_alpha = 0.0;
          for (int c = 0; c < 4; ++c) d_alpha += d_out[c] * transmit[i] * (hc[c] - behind[c]);
          auto& d = grads[i].d;
          for (int c = 0; c < 3; ++c) d[6 + c] += d_out[c] * alpha[i] * transmit[i];
          d[5] += d_alpha * p.opacity * (1.0 - p.opacity) * gauss[i];

          const double d_q = -0.5 * alpha[i] * d_alpha;
          const double a = ta[i], b = tb[i];
          // q = a^2 ix + b^2 iy with a = d.e1, b = d.e2, d = pixel - center.
          const double d_dx = d_q * 2.0 * (a * p.ix * p.ca - b * p.iy * p.sa);
          const double d_dy = d_q * 2.0 * (a * p.ix * p.sa + b * p.iy * p.ca);
          // center = k R mu + t, so d(mu) = -k R^T d(d).
          d[0] += -frame.k * (frame.cr * d_dx + frame.sr * d_dy);
          d[1] += -frame.k * (-frame.sr * d_dx + frame.cr * d_dy);
          d[2] += d_q * (-2.0 * a * a * p.ix);
          d[3] += d_q * (-2.0 * b * b * p.iy);
          d[4] += d_q * 2.0 * a * b * (p.ix - p.iy);
        }
        for (int c = 0; c < 4; ++c) behind[c] = hc[c] * alpha[i] + (1.0 - alpha[i]) * behind[c];
      }
    }
  }
  return grads;
}

std::vector<std::size_t> prune(SplatScene& scene, double opacity_threshold) {
  scene.check();
  SplatScene kept;
  kept.step = scene.step;
  std::vector<std::size_t> origin;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (scene.primitives[i].opacity() < opacity_threshold) continue;
    kept.primitives.push_back(scene.primitives[i]);
    kept.selection.push_back(scene.selection[i]);
    kept.grad_accum.push_back(scene.grad_accum[i]);
    kept.grad_count.push_back(scene.grad_count[i]);
    origin.push_back(i);
  }
  scene = std::move(kept);
  return origin;
}

std::vector<std::size_t> densify(SplatScene& scene, const DensifyConfig& cfg) {
  scene.check();
  Rng rng(derive_seed(cfg.seed, {kTagJitter, static_cast<std::uint64_t>(scene.step)}));
  SplatScene out;
  out.step = scene.step;
  std::vector<std::size_t> origin;
  std::size_t budget = cfg.max_primitives > scene.size() ? cfg.max_primitives - scene.size() : 0;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    GaussianPrimitive parent = scene.primitives[i];
    const bool clone = budget > 0 && scene.grad_count[i] > 0 &&
                       scene.grad_accum[i] / scene.grad_count[i] > cfg.grad_threshold;
    GaussianPrimitive child = parent;
    if (clone) {
      --budget;
      if (cfg.halve_opacity) {
        parent.opacity_pre = logit(0.5 * parent.opacity());
        child.opacity_pre = parent.opacity_pre;
      }
      const Vec2 s = parent.scale();
      child.mu[0] += cfg.jitter * s[0] * rng.normal();
      child.mu[1] += cfg.jitter * s[1] * rng.normal();
    }
    out.add(parent, scene.selection[i]);
    origin.push_back(i);
    if (clone) {
      out.add(child, scene.selection[i]);
      origin.push_back(i);
    }
  }
  scene = std::move(out);
  return origin;
}

void accumulate_position_stats(SplatScene& scene, const std::vector<PrimitiveGrad>& grads,
                               const std::vector<bool>* mask) {
  scene.check();
  if (grads.size() != scene.size()) throw ShapeError("gradient count differs from scene size");
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (mask != nullptr && !(*mask)[i]) continue;
    scene.grad_accum[i] += std::hypot(grads[i].d[0], grads[i].d[1]);
    scene.grad_count[i] += 1;
  }
}

nlohmann::json to_json(const SplatScene& scene) {
  scene.check();
  nlohmann::json prims = nlohmann::json::array();
  for (const auto& p : scene.primitives) {
    const Vec2 s = p.scale();
    prims.push_back({{"mu", {p.mu[0], p.mu[1]}},
                     {"scale", {s[0], s[1]}},
                     {"rot", p.rotation},
                     {"opacity_pre", p.opacity_pre},
                     {"color", {p.color[0], p.color[1], p.color[2]}}});
  }
  nlohmann::json sel = nlohmann::json::array();
  for (bool b : scene.selection) sel.push_back(b);
  return {{"version", 1}, {"primitives", prims}, {"selection", sel}};
}

SplatScene scene_from_json(const nlohmann::json& doc) {
  SplatScene scene;
  try {
    if (doc.at("version").get<int>() != 1) throw FormatError("unsupported scene version", 0);
    const auto& prims = doc.at("primitives");
    const auto& sel = doc.at("selection");
    if (sel.size() != prims.size()) throw FormatError("selection length differs from primitive count", 0);
    for (std::size_t i = 0; i < prims.size(); ++i) {
      const auto& jp = prims[i];
      GaussianPrimitive p;
      p.mu = {jp.at("mu").at(0).get<double>(), jp.at("mu").at(1).get<double>()};
      const double sx = jp.at("scale").at(0).get<double>(), sy = jp.at("scale").at(1).get<double>();
      if (!(sx > 0.0) || !(sy > 0.0)) throw FormatError("primitive scale must be > 0", 0);
      p.log_scale = {std::log(sx), std::log(sy)};
      p.rotation = jp.at("rot").get<double>();
      p.opacity_pre = jp.at("opacity_pre").get<double>();
      p.color = {jp.at("color").at(0).get<double>(), jp.at("color").at(1).get<double>(),
                 jp.at("color").at(2).get<double>()};
      scene.add(p, sel[i].get<bool>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("scene file: ") + e.what(), 0);
  }
  return scene;
}

void write_scene(const SplatScene& scene, const std::filesystem::path& path) {
  write_text_file(path, to_json(scene).dump(1) + "\n");
}

SplatScene read_scene(const std::filesystem::path& path) { return scene_from_json(read_json_file(path)); }

}  // namespace acs::splat
