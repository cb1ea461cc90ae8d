#pragma once

#include "acs/features.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <filesystem>
#include <map>
#include <vector>

namespace acs::axis {

/// Column-vector convention throughout: a row-vector quadratic form w S w^T
/// in the literature is w^T S w here.
struct ScatterPair {
  Eigen::MatrixXd s_w;
  Eigen::MatrixXd s_b;
  Eigen::VectorXd mu_p;
  Eigen::VectorXd mu_n;
  std::size_t n_total = 0;
};

struct ConceptAxis {
  Eigen::VectorXd b_c;
  double rayleigh_value = 0.0;
  int stage = 0;
  double ridge_used = 0.0;
  /// Set when the between-class scatter vanishes and no direction separates the classes.
  bool degenerate = false;
};

struct AttributeBasisSet {
  std::vector<Eigen::VectorXd> bases;
  std::vector<double> explained_variance;
  int stage = 0;
  /// Set when fewer than the requested number of bases carry variance.
  bool rank_deficient = false;
};

struct StageAxes {
  int stage = 0;
  ConceptAxis axis;
  AttributeBasisSet attributes;
  Eigen::VectorXd mu_p;
  Eigen::VectorXd mu_n;
};

struct ConceptAxisModel {
  features::ConceptSpec spec;
  int K = 8;
  /// Negative means "default ridge per stage" was used.
  double ridge = -1.0;
  std::vector<StageAxes> stages;

  int stage_count() const { return static_cast<int>(stages.size()); }
  int dim() const { return spec.dim; }
  const StageAxes& stage(int t) const;
  /// Normalized sum of the per-stage axes; the single readout direction
  /// used when scoring rendered scenes.
  Eigen::VectorXd reference_axis() const;
};

ScatterPair scatter_matrices(const features::FeatureSet& pos, const features::FeatureSet& neg);

/// 1e-6 * trace(S_w) / D.
double default_ridge(const Eigen::MatrixXd& s_w);

double rayleigh_quotient(const ScatterPair& sp, double ridge, const Eigen::VectorXd& w);

/// Closed form for rank-1 S_b: normalize((S_w + ridge I)^-1 (mu_p - mu_n)),
/// oriented so that b_c . (mu_p - mu_n) >= 0.
ConceptAxis solve_concept_axis(const ScatterPair& sp, double ridge);
ConceptAxis solve_concept_axis(const ScatterPair& sp);

/// Generic route: leading generalized eigenvector of (S_b, S_w + ridge I).
/// Kept for validation against the closed form.
ConceptAxis solve_concept_axis_eigen(const ScatterPair& sp, double ridge);

/// Sequential deflation PCA on the merged, mean-centered features, seeded
/// with b_c as the zeroth component.
AttributeBasisSet attribute_bases(const features::FeatureSet& pos, const features::FeatureSet& neg,
                                  const Eigen::VectorXd& b_c, int K);

/// Same, from a precomputed D x D scatter of the centered merged features.
AttributeBasisSet attribute_bases_from_scatter(const Eigen::MatrixXd& scatter, const Eigen::VectorXd& b_c, int K);

/// Scatter F F^T of the merged features centered on their joint mean.
Eigen::MatrixXd merged_scatter(const features::FeatureSet& pos, const features::FeatureSet& neg);

/// v . axis; `axis` must be unit length to 1e-9.
double project_scalar(const Eigen::VectorXd& v, const Eigen::VectorXd& axis);

/// Leading eigenpair of a symmetric matrix by cyclic Jacobi rotations.
std::pair<double, Eigen::VectorXd> leading_eigenpair(const Eigen::MatrixXd& symmetric);

/// Fits one stage from its positive/negative feature sets. `ridge < 0` selects the default.
StageAxes fit_stage(const features::FeatureSet& pos, const features::FeatureSet& neg, int K, double ridge = -1.0);

ConceptAxisModel fit_model(const features::ConceptSpec& spec,
                           const std::map<int, std::pair<features::FeatureSet, features::FeatureSet>>& stage_sets,
                           int K, double ridge = -1.0);

nlohmann::json to_json(const ConceptAxisModel& model);
ConceptAxisModel model_from_json(const nlohmann::json& doc);
void write_axis_model(const ConceptAxisModel& model, const std::filesystem::path& path);
ConceptAxisModel read_axis_model(const std::filesystem::path& path);

}  // namespace acs::axis
