#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace acs::features {

enum class Side { positive, negative, neutral };

const char* to_string(Side side);
Side side_from_string(const std::string& name);

/// Describes one concept pair plus the parameters of its synthetic feature
/// distribution. The synthetic distribution stands in for middle-layer
/// diffusion features: we assume one D-dimensional vector per latent cell.
struct ConceptSpec {
  std::string name = "concept";
  std::string positive_label = "positive";
  std::string negative_label = "negative";
  std::string neutral_label = "neutral";
  std::uint64_t embedding_seed = 0;
  int dim = 16;
  std::optional<Eigen::VectorXd> ground_truth_axis;
  double ground_truth_gap = 1.0;
  /// Standard deviation of the feature noise along the ground-truth axis.
  /// Other principal directions get between 1.5x and 3x of it.
  double noise_scale = 0.1;
  /// Magnitude of the stage-dependent neutral mean. Zero puts it at the origin.
  double mean_scale = 0.1;
  int height = 4;
  int width = 4;

  void validate() const;
};

nlohmann::json to_json(const ConceptSpec& spec);
ConceptSpec spec_from_json(const nlohmann::json& doc);

/// Seeds a ConceptSpec with a random unit ground-truth axis.
ConceptSpec make_synthetic_spec(int dim, std::uint64_t embedding_seed, double gap, double noise_scale);

/// Neutral mean and Cholesky factor of the noise covariance for one stage.
struct StageDistribution {
  Eigen::VectorXd base_mean;
  Eigen::MatrixXd chol;
};

StageDistribution stage_distribution(const ConceptSpec& spec, int stage);

/// Analytic mean of the synthetic features: base +/- (gap/2) * axis.
Eigen::VectorXd side_mean(const ConceptSpec& spec, int stage, Side side);

struct FeatureSet {
  Side side = Side::neutral;
  int stage = 1;
  int samples = 0;
  int height = 0;
  int width = 0;
  int dim = 0;
  std::uint64_t seed = 0;
  /// samples*height*width vectors of `dim` floats, sample-major, then y, then x.
  std::vector<float> data;

  std::size_t count() const { return static_cast<std::size_t>(samples) * height * width; }
  std::span<const float> vec(std::size_t i) const {
    return {data.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
  Eigen::VectorXd vector(std::size_t i) const;

  void validate() const;
  bool operator==(const FeatureSet&) const = default;
};

/// f = mu(side, stage) + L * xi with xi ~ N(0, I) drawn from `seed`.
FeatureSet synth_concept_sampler(const ConceptSpec& spec, int stage, Side side, int n_samples,
                                 std::uint64_t seed);

Eigen::VectorXd mean(const FeatureSet& fs);

std::pair<Eigen::VectorXd, Eigen::VectorXd> class_means(const FeatureSet& pos, const FeatureSet& neg);

void write_feature_file(const FeatureSet& fs, const std::filesystem::path& path);
FeatureSet read_feature_file(const std::filesystem::path& path);

/// Encoded file bytes; exposed for format tests.
std::vector<std::uint8_t> encode_feature_file(const FeatureSet& fs);
FeatureSet decode_feature_file(std::span<const std::uint8_t> bytes);

}  // namespace acs::features
