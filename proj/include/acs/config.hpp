#pragma once

#include "acs/adapter.hpp"
#include "acs/axis.hpp"
#include "acs/edit.hpp"
#include "acs/features.hpp"
#include "acs/splat.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace acs::config {

/// Every section of the run configuration, resolved and validated.
struct RunConfig {
  nlohmann::json doc;
  std::uint64_t seed = 0;

  features::ConceptSpec spec;
  int samples = 20;
  int stages = 10;

  int K = 8;
  double ridge = -1.0;

  adapter::TrainConfig train;
  int embed_dim = 8;
  double embed_scale = 2.0;

  int scene_primitives = 100;
  int scene_body = 5;
  int patch = 8;
  double encoder_gain = 1.0;
  edit::EditConfig edit;
  edit::TargetMode target_mode = edit::TargetMode::adapter;
  int target_draws = 256;

  std::vector<double> gamma_sweep;
  std::vector<double> sweep_alphas;
  int lda_datasets = 50;
  int recovery_seeds = 100;

  double max_alpha = 3.0;
  int frame_every = 1;
  bool multi_session = false;
  std::string ui_dir;

  /// Artifact overrides; empty means the fixed name under the output directory.
  std::string features_dir;
  std::string axis_path;
  std::string adapter_path;
  std::string scene_path;
};

nlohmann::json default_document();

/// Merges `user` over the defaults. Keys absent from the defaults are rejected.
RunConfig from_json(const nlohmann::json& user);

/// Applies one `a.b.c=value` override. The value is parsed as JSON when
/// possible, else taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// File (optional), then overrides, then ACS_SEED when given.
RunConfig load(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides,
               const char* env_seed);

/// Fixed artifact names under an output directory.
struct Layout {
  std::filesystem::path out;
  std::filesystem::path features_dir;
  std::filesystem::path axis;
  std::filesystem::path adapter;
  std::filesystem::path adapter_loss;
  std::filesystem::path scene;
  std::filesystem::path edited_scene;
  std::filesystem::path trace;
  std::filesystem::path front_png;
  std::filesystem::path sweep_png;
  std::filesystem::path report;

  std::filesystem::path feature_file(int stage, features::Side side) const;
};

Layout layout(const RunConfig& cfg, const std::filesystem::path& out);

using StageSets = std::map<int, std::pair<features::FeatureSet, features::FeatureSet>>;

StageSets generate_features(const RunConfig& cfg);
axis::ConceptAxisModel fit_axis(const RunConfig& cfg, const StageSets& sets);
adapter::ToyGenerator make_generator(const RunConfig& cfg);
adapter::TrainResult train(const RunConfig& cfg, const adapter::ToyGenerator& gen,
                           const axis::ConceptAxisModel& model);
edit::LatentEncoder make_encoder(const RunConfig& cfg);
splat::SplatScene source_scene(const RunConfig& cfg);
std::vector<Eigen::VectorXd> targets(const RunConfig& cfg, const axis::ConceptAxisModel& model,
                                     const adapter::ToyGenerator& gen, const adapter::LowRankAdapter& ad,
                                     double alpha);

struct Artifacts {
  axis::ConceptAxisModel model;
  adapter::ToyGenerator gen;
  adapter::LowRankAdapter adapter;
};

/// Reads the axis and adapter files named by the layout. Missing files raise
/// IoError naming the path.
Artifacts load_artifacts(const RunConfig& cfg, const Layout& paths);

/// Reads whichever artifact files exist and builds the rest in memory.
Artifacts load_or_build(const RunConfig& cfg, const Layout& paths);

struct EditOutput {
  edit::EditResult result;
  double initial_coord = 0.0;
  double final_coord = 0.0;
  double seconds = 0.0;
};

/// One batch edit at `alpha`. When `out` is non-empty the edited scene, trace
/// and front-view PNG are written there under their fixed names.
EditOutput run_edit(const RunConfig& cfg, const Artifacts& art, double alpha, const std::optional<Layout>& out = {});

}  // namespace acs::config
