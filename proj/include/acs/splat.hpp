#pragma once

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace acs::splat {

using Vec2 = std::array<double, 2>;
using Vec3 = std::array<double, 3>;

/// One 2D Gaussian. Scale is stored as its log and opacity before the
/// sigmoid, so every stored value is an unconstrained optimization parameter.
struct GaussianPrimitive {
  Vec2 mu{0.0, 0.0};
  Vec2 log_scale{-2.0, -2.0};
  double rotation = 0.0;
  double opacity_pre = 0.0;
  Vec3 color{0.5, 0.5, 0.5};

  Vec2 scale() const;
  double opacity() const;
  bool operator==(const GaussianPrimitive&) const = default;
};

double sigmoid(double x);
double logit(double p);

/// Number of scalar parameters per primitive: mu(2), log_scale(2), rotation, opacity_pre, color(3).
inline constexpr int kParamsPerPrimitive = 9;
using ParamArray = std::array<double, kParamsPerPrimitive>;

ParamArray to_params(const GaussianPrimitive& p);
GaussianPrimitive from_params(const ParamArray& a);

struct SplatScene {
  std::vector<GaussianPrimitive> primitives;
  std::vector<bool> selection;
  int step = 0;
  /// Sum of per-update positional-gradient norms since the last densify.
  std::vector<double> grad_accum;
  std::vector<int> grad_count;

  std::size_t size() const { return primitives.size(); }
  void add(const GaussianPrimitive& p, bool selected = true);
  std::size_t selected_count() const;
  /// Throws ContractViolation when the per-primitive arrays disagree in length.
  void check() const;
  bool operator==(const SplatScene&) const = default;
};

struct View {
  double rotation = 0.0;
  double zoom = 1.75;
  Vec2 translation{0.0, 0.0};
  int height = 32;
  int width = 32;
};

/// Zoom at which one scene unit spans the half-width of the image.
inline constexpr double kReferenceZoom = 1.75;

View front_view(int height, int width);

struct ViewConfig {
  double zoom_lo = 1.5;
  double zoom_hi = 2.0;
  double rotation_range = 3.14159265358979323846;
  double translation_range = 0.1;
  int height = 32;
  int width = 32;
};

View sample_view(std::uint64_t seed, const ViewConfig& cfg);
std::vector<View> sample_views(std::uint64_t seed, const ViewConfig& cfg, int count);

struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> rgba;

  Image() = default;
  Image(int h, int w) : height(h), width(w), rgba(static_cast<std::size_t>(h) * w * 4, 0.0) {}
  double& at(int y, int x, int c) { return rgba[(static_cast<std::size_t>(y) * width + x) * 4 + c]; }
  double at(int y, int x, int c) const { return rgba[(static_cast<std::size_t>(y) * width + x) * 4 + c]; }
};

/// Front-to-back compositing in insertion order:
/// out = sum_i h_i a_i prod_{j<i} (1 - a_j), alpha channel = 1 - prod_i (1 - a_i).
Image render(const SplatScene& scene, const View& view);

struct PrimitiveGrad {
  ParamArray d{};
  bool operator==(const PrimitiveGrad&) const = default;
};

/// Reverse-mode gradient of <d_image, render(scene, view)> with respect to every
/// primitive parameter. When `mask` is given, primitives outside it get zero
/// gradients and their parameter chain is skipped.
std::vector<PrimitiveGrad> render_backward(const SplatScene& scene, const View& view, const Image& d_image,
                                           const std::vector<bool>* mask = nullptr);

/// Removes primitives whose activated opacity is below the threshold.
/// Returns, for each survivor, its index before pruning.
std::vector<std::size_t> prune(SplatScene& scene, double opacity_threshold);

struct DensifyConfig {
  double grad_threshold = 0.025;
  /// Clone offset standard deviation, as a fraction of the parent's scale.
  double jitter = 0.1;
  /// Give parent and clone half the parent's activated opacity.
  bool halve_opacity = false;
  std::size_t max_primitives = 1000;
  std::uint64_t seed = 0;
};

/// Clones every primitive whose mean accumulated positional gradient exceeds
/// the threshold; clones sit right behind their parent in compositing order.
/// Resets statistics. Returns, for each new index, the index it was copied from.
std::vector<std::size_t> densify(SplatScene& scene, const DensifyConfig& cfg);

void accumulate_position_stats(SplatScene& scene, const std::vector<PrimitiveGrad>& grads,
                               const std::vector<bool>* mask = nullptr);

nlohmann::json to_json(const SplatScene& scene);
SplatScene scene_from_json(const nlohmann::json& doc);
void write_scene(const SplatScene& scene, const std::filesystem::path& path);
SplatScene read_scene(const std::filesystem::path& path);

}  // namespace acs::splat
