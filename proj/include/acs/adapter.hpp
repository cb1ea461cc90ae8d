#pragma once

#include "acs/axis.hpp"
#include "acs/features.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <filesystem>
#include <optional>
#include <vector>

namespace acs::adapter {

/// Frozen linear feature generator. Stage t maps concat(embed(c), xi) through
/// W_t plus bias_t. It is built so that its output distribution for each
/// concept side matches the synthetic sampler of the same ConceptSpec.
class ToyGenerator {
 public:
  /// Embedding entries are N(0, embed_scale^2).
  ToyGenerator(const features::ConceptSpec& spec, int stages, int embed_dim = 8, double embed_scale = 2.0);

  int dim() const { return dim_; }
  int embed_dim() const { return embed_dim_; }
  double embed_scale() const { return embed_scale_; }
  int input_dim() const { return embed_dim_ + dim_; }
  int stages() const { return static_cast<int>(weights_.size()); }
  const features::ConceptSpec& spec() const { return spec_; }

  const Eigen::MatrixXd& weight(int stage) const;
  const Eigen::VectorXd& bias(int stage) const;
  const Eigen::VectorXd& embedding(features::Side side) const;

  /// concat(embed(side), xi) with xi ~ N(0, I_D) drawn from `seed`.
  Eigen::VectorXd input(features::Side side, std::uint64_t seed) const;

 private:
  void check_stage(int stage) const;

  features::ConceptSpec spec_;
  int dim_;
  int embed_dim_;
  double embed_scale_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
  Eigen::VectorXd embed_pos_, embed_neg_, embed_neu_;
};

struct TrainConfig {
  int steps = 1000;
  int rank = 4;
  double alpha_lo = -1.0;
  double alpha_hi = 1.0;
  double w_slide = 0.5;
  double w_preserve = 0.5;
  double learning_rate = 2e-4;
  int batch_size = 1;
  int stages = 10;
  std::uint64_t seed = 0;
  /// Standard deviation of the Gaussian initialization of A (B starts at zero).
  double init_scale = 0.05;
  /// Decoupled weight decay of the AdamW update.
  double weight_decay = 0.0;
  /// Literal target compares the projected vector with the full interpolated
  /// mean; projected target compares only the axis coordinates.
  bool projected_target = false;
  /// One factor pair per stage instead of a single pair shared by all stages.
  bool per_stage_factors = false;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Low-rank factors; the weight shift at stage t is A_t B_t. A shared adapter
/// holds a single pair used for every stage.
struct LowRankAdapter {
  int rank = 0;
  int dim = 0;
  int input_dim = 0;
  int t_stages = 0;
  bool shared = true;
  std::vector<Eigen::MatrixXd> a;  // D x r, one per stage or a single shared one
  std::vector<Eigen::MatrixXd> b;  // r x (E + D)
  int trained_steps = 0;
  std::uint64_t seed = 0;
  nlohmann::json config;

  int stages() const { return t_stages; }
  /// Index into a/b for a stage in [1, stages()].
  std::size_t slot(int stage) const;
  Eigen::MatrixXd delta(int stage) const;
};

/// A ~ N(0, init_scale^2 / rank) per entry, B = 0.
LowRankAdapter init_adapter(const ToyGenerator& gen, int rank, std::uint64_t seed, double init_scale = 0.05,
                            bool shared = true);

/// W_t + alpha * A_t B_t. Any finite alpha is allowed, including outside [-1, 1].
Eigen::MatrixXd adapter_apply(const ToyGenerator& gen, const LowRankAdapter* adapter, double alpha, int stage);

Eigen::VectorXd generator_forward(const ToyGenerator& gen, const LowRankAdapter* adapter, double alpha,
                                  features::Side side, int stage, std::uint64_t seed);

struct LossValue {
  double value = 0.0;
  Eigen::VectorXd grad;
};

/// || (f . b_c) b_c - ((1+alpha)/2 mu_p + (1-alpha)/2 mu_n) ||_2 and its gradient in f.
LossValue sliding_loss(const Eigen::VectorXd& f, const Eigen::VectorXd& b_c, const Eigen::VectorXd& mu_p,
                       const Eigen::VectorXd& mu_n, double alpha, bool projected_target = false);

/// sum_k |(f_adapted - f_base) . b_k| and its gradient in f_adapted (0 at exact ties).
LossValue preserving_loss(const Eigen::VectorXd& f_adapted, const Eigen::VectorXd& f_base,
                          const axis::AttributeBasisSet& bases);

struct TrainStep {
  int step = 0;
  int stage = 0;
  double alpha = 0.0;
  double sliding = 0.0;
  double preserving = 0.0;
  double total = 0.0;
};

struct TrainResult {
  LowRankAdapter adapter;
  std::vector<TrainStep> trace;
};

TrainResult train_adapter(const ToyGenerator& gen, const axis::ConceptAxisModel& model, const TrainConfig& cfg);

nlohmann::json to_json(const LowRankAdapter& adapter);
LowRankAdapter adapter_from_json(const nlohmann::json& doc);
void write_adapter(const LowRankAdapter& adapter, const std::filesystem::path& path);
LowRankAdapter read_adapter(const std::filesystem::path& path);

}  // namespace acs::adapter
