#pragma once

#include "acs/adapter.hpp"
#include "acs/axis.hpp"
#include "acs/splat.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace acs::edit {

/// Linear patch encoder: every non-overlapping ph x pw RGBA patch maps to
/// projection * flatten(patch), flattened in (y, x, channel) order.
struct LatentEncoder {
  int patch_h = 8;
  int patch_w = 8;
  int dim = 16;
  Eigen::MatrixXd projection;  // dim x (patch_h * patch_w * 4)
  std::uint64_t seed = 0;

  int input_size() const { return patch_h * patch_w * 4; }
};

/// Gaussian projection with entries N(0, gain^2 / input_size).
LatentEncoder make_encoder(int dim, int patch_h, int patch_w, std::uint64_t seed, double gain = 1.0);

struct LatentGrid {
  int views = 0;
  int grid_h = 0;
  int grid_w = 0;
  int dim = 0;
  std::vector<double> data;  // view-major, then y, then x, then channel

  std::size_t cells() const { return static_cast<std::size_t>(views) * grid_h * grid_w; }
  Eigen::Map<Eigen::VectorXd> cell(std::size_t i) { return {data.data() + i * dim, dim}; }
  Eigen::Map<const Eigen::VectorXd> cell(std::size_t i) const { return {data.data() + i * dim, dim}; }
};

LatentGrid encode_latents(const std::vector<splat::Image>& images, const LatentEncoder& enc);

/// Transpose of encode_latents: pulls latent gradients back to image gradients.
std::vector<splat::Image> encode_backward(const LatentGrid& d_latents, const LatentEncoder& enc, int height, int width);

/// C-bar = sum over views and cells of b_c . z.
double concept_alignment(const LatentGrid& latents, const Eigen::VectorXd& b_c);

enum class Weighting { one_minus_alpha_bar, unit };

struct DiffusionSchedule {
  int T = 10;
  std::vector<double> alpha_bar;  // index t-1, strictly decreasing in (0, 1)
  std::vector<double> weight;

  double alpha_bar_at(int t) const;
  double weight_at(int t) const;
};

/// alpha_bar_t = cos^2(pi/2 * t / (T + 1)) for t = 1..T.
DiffusionSchedule make_schedule(int T, Weighting weighting = Weighting::one_minus_alpha_bar);

/// eps_hat = (z_t - sqrt(alpha_bar_t) m) / sqrt(1 - alpha_bar_t): the exact noise
/// prediction of a prior whose clean sample is always m.
Eigen::VectorXd toy_denoiser(const Eigen::VectorXd& z_t, int t, const Eigen::VectorXd& m_target,
                             const DiffusionSchedule& schedule);

/// ceil(gamma * M), with a 1e-9 guard against representation error in gamma * M.
std::size_t selection_size(std::size_t m, double gamma);

struct SensitivityReport {
  std::vector<double> scores;
  double alignment = 0.0;
  int views = 0;
  double gamma = 1.0;
  std::size_t selected_count = 0;
};

SensitivityReport sensitivity_scores(const splat::SplatScene& scene, const std::vector<splat::View>& views,
                                     const Eigen::VectorXd& b_c, const LatentEncoder& enc, double gamma = 1.0);

/// True exactly for the ceil(gamma M) highest scores; ties go to the lower index.
std::vector<bool> select_primitives(const std::vector<double>& scores, double gamma);
std::vector<bool> select_primitives(const SensitivityReport& report, double gamma);

enum class TargetMode { adapter, axis };

/// Per-stage SDS target m(alpha), indexed by stage - 1.
std::vector<Eigen::VectorXd> slider_target(const axis::ConceptAxisModel& model, const adapter::ToyGenerator* gen,
                                           const adapter::LowRankAdapter* adapter, double alpha, TargetMode mode,
                                           int draws = 256, std::uint64_t seed = 0);

struct LearningRates {
  double mean = 5e-5;
  double scale = 1e-3;
  double rotation = 1e-2;
  double color = 1e-2;
  double opacity = 1e-2;
};

/// Adam over the scene parameters with one learning rate per parameter group.
/// Colors are projected back into [0, 1] after each update.
class SceneOptimizer {
 public:
  explicit SceneOptimizer(LearningRates lrs = {}, std::size_t m = 0);

  void apply(splat::SplatScene& scene, const std::vector<splat::PrimitiveGrad>& grads, const std::vector<bool>& mask);
  /// Follows a prune/densify index map; copies of a parent start with fresh moments.
  void reindex(const std::vector<std::size_t>& origin);
  void reset(std::size_t m);
  std::size_t size() const { return first_.size(); }

 private:
  LearningRates lrs_;
  std::vector<splat::ParamArray> first_, second_;
  std::vector<int> steps_;
};

struct SdsOutput {
  std::vector<splat::PrimitiveGrad> grads;
  double loss = 0.0;      // mean over cells of w(t) ||eps_hat - eps||^2
  double cbar = 0.0;      // alignment of the clean encodings, when an axis is given
  std::size_t cells = 0;
};

/// Gradient of the SDS objective through encoder and renderer. Gradients of
/// primitives outside `mask` are zero.
SdsOutput sds_gradients(const splat::SplatScene& scene, const std::vector<splat::View>& views,
                        const LatentEncoder& enc, const DiffusionSchedule& schedule, const Eigen::VectorXd& m_target,
                        int t, std::uint64_t seed, const std::vector<bool>& mask,
                        const Eigen::VectorXd* readout_axis = nullptr);

SdsOutput sds_step(splat::SplatScene& scene, const std::vector<splat::View>& views, const LatentEncoder& enc,
                   const DiffusionSchedule& schedule, const Eigen::VectorXd& m_target, int t, std::uint64_t seed,
                   const std::vector<bool>& mask, SceneOptimizer& optimizer);

struct EditConfig {
  int total_steps = 1200;
  int event_every = 200;
  /// Steps up to and including this one prune only; later events densify then prune.
  int prune_only_until = 600;
  int views_per_step = 4;
  int sensitivity_views = 8;
  double gamma = 0.05;
  int schedule_T = 10;
  Weighting weighting = Weighting::one_minus_alpha_bar;
  LearningRates lrs;
  std::uint64_t seed = 0;
  double alpha = 0.0;
  double prune_threshold = 0.01;
  splat::DensifyConfig densify;
  splat::ViewConfig views;

  void validate() const;
};

nlohmann::json to_json(const EditConfig& cfg);
EditConfig edit_config_from_json(const nlohmann::json& j);

struct TraceEntry {
  int step = 0;
  double cbar = 0.0;
  double coord = 0.0;
  double loss_sds = 0.0;
  std::size_t selected = 0;
  std::size_t primitives = 0;
};

struct EditEvent {
  int step = 0;
  std::string kind;  // prune | densify | select | alpha
  nlohmann::json detail;
};

nlohmann::json to_json(const TraceEntry& e);
nlohmann::json to_json(const EditEvent& e);

/// One optimization step at a time; edit_loop and the live service both drive it.
class EditRunner {
 public:
  EditRunner(splat::SplatScene scene, LatentEncoder encoder, Eigen::VectorXd readout_axis,
             std::vector<Eigen::VectorXd> targets, EditConfig cfg);

  const TraceEntry& step();
  void set_targets(std::vector<Eigen::VectorXd> targets);
  void recompute_selection();
  /// Restores the scene (with its selection mask) and fresh optimizer state;
  /// the step counter keeps counting.
  void reset(const splat::SplatScene& scene);

  int steps_done() const { return step_; }
  const splat::SplatScene& scene() const { return scene_; }
  const std::vector<TraceEntry>& trace() const { return trace_; }
  const std::vector<EditEvent>& events() const { return events_; }
  const EditConfig& config() const { return cfg_; }
  const LatentEncoder& encoder() const { return enc_; }
  const Eigen::VectorXd& readout_axis() const { return axis_; }
  /// When false, densify/prune stop after total_steps instead of repeating.
  void set_unbounded(bool unbounded) { unbounded_ = unbounded; }

 private:
  void run_events();

  splat::SplatScene scene_;
  LatentEncoder enc_;
  Eigen::VectorXd axis_;
  std::vector<Eigen::VectorXd> targets_;
  EditConfig cfg_;
  DiffusionSchedule schedule_;
  SceneOptimizer optimizer_;
  int step_ = 0;
  int schedule_step_ = 0;
  bool unbounded_ = false;
  std::vector<TraceEntry> trace_;
  std::vector<EditEvent> events_;
};

struct StepProgress {
  const TraceEntry& entry;
  const splat::Image& frame;
};

struct EditResult {
  splat::SplatScene scene;
  std::vector<TraceEntry> trace;
  std::vector<EditEvent> events;
};

EditResult edit_loop(splat::SplatScene scene, const LatentEncoder& enc, const Eigen::VectorXd& readout_axis,
                     std::vector<Eigen::VectorXd> targets, const EditConfig& cfg,
                     const std::function<void(const StepProgress&)>& progress = {});

/// Mean b_c . z over the cells of the given views; the UI-facing concept coordinate.
double concept_coordinate(const splat::SplatScene& scene, const LatentEncoder& enc, const Eigen::VectorXd& b_c,
                          const std::vector<splat::View>& views);

/// Fixed evaluation views (front view plus seeded samples) used to compare edited scenes.
std::vector<splat::View> evaluation_views(const splat::ViewConfig& cfg, int count = 8);

/// Seeded stand-in for a fully densified source avatar: a few large body
/// primitives behind many small detail primitives.
splat::SplatScene make_default_scene(std::uint64_t seed, int primitives = 100, int body_primitives = 5);

std::string trace_jsonl(const std::vector<TraceEntry>& trace);

}  // namespace acs::edit
