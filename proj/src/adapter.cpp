#include "acs/adapter.hpp"

#include "acs/base64.hpp"
#include "acs/error.hpp"
#include "acs/json_util.hpp"
#include "acs/rng.hpp"

#include <bit>
#include <cmath>

namespace acs::adapter {

namespace {

enum SeedTag : std::uint64_t {
  kTagEmbedNeutral = 21,
  kTagEmbedDirection = 22,
  kTagWeights = 23,
  kTagNoise = 24,
  kTagInitA = 25,
  kTagStep = 26,
};

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

Eigen::VectorXd gaussian_vector(Rng& rng, int n) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

struct AdamState {
  Eigen::MatrixXd m, v;
  int t = 0;
};

void adamw_update(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad, AdamState& st, double lr, double decay) {
  if (st.m.size() == 0) {
    st.m = Eigen::MatrixXd::Zero(param.rows(), param.cols());
    st.v = Eigen::MatrixXd::Zero(param.rows(), param.cols());
  }
  ++st.t;
  st.m = kBeta1 * st.m + (1.0 - kBeta1) * grad;
  st.v = kBeta2 * st.v + (1.0 - kBeta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(kBeta1, st.t);
  const double c2 = 1.0 - std::pow(kBeta2, st.t);
  if (decay != 0.0) param *= (1.0 - lr * decay);
  param.array() -= lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + kAdamEps);
}

std::string encode_matrix(const Eigen::MatrixXd& m) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(static_cast<std::size_t>(m.size()) * 4);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c)));
      for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
  return base64_encode(bytes);
}

Eigen::MatrixXd decode_matrix(const std::string& text, Eigen::Index rows, Eigen::Index cols) {
  const auto bytes = base64_decode(text);
  if (bytes.size() != static_cast<std::size_t>(rows * cols * 4))
    throw FormatError("adapter factor payload has " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(rows * cols * 4),
                      0);
  Eigen::MatrixXd m(rows, cols);
  std::size_t at = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c, at += 4) {
      std::uint32_t u = 0;
      for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
      m(r, c) = std::bit_cast<float>(u);
    }
  return m;
}

}  // namespace

ToyGenerator::ToyGenerator(const features::ConceptSpec& spec, int stages, int embed_dim, double embed_scale)
    : spec_(spec), dim_(spec.dim), embed_dim_(embed_dim), embed_scale_(embed_scale) {
  spec.validate();
  if (stages < 1) throw ConfigError("generator needs at least one stage");
  if (embed_dim < 1) throw ConfigError("embedding dim must be >= 1");
  if (!(embed_scale > 0.0) || !std::isfinite(embed_scale)) throw ConfigError("embedding scale must be > 0");

  Rng neutral_rng(derive_seed(spec.embedding_seed, {kTagEmbedNeutral}));
  Rng dir_rng(derive_seed(spec.embedding_seed, {kTagEmbedDirection}));
  embed_neu_ = embed_scale * gaussian_vector(neutral_rng, embed_dim);
  const Eigen::VectorXd direction = embed_scale * gaussian_vector(dir_rng, embed_dim);
  embed_pos_ = embed_neu_ + direction;
  embed_neg_ = embed_neu_ - direction;

  const Eigen::VectorXd half_gap = spec.ground_truth_axis
                                       ? Eigen::VectorXd(0.5 * spec.ground_truth_gap * *spec.ground_truth_axis)
                                       : Eigen::VectorXd(Eigen::VectorXd::Zero(dim_));
  for (int t = 1; t <= stages; ++t) {
    Rng w_rng(derive_seed(spec.embedding_seed, {kTagWeights, static_cast<std::uint64_t>(t)}));
    Eigen::MatrixXd embed_map(dim_, embed_dim);
    for (int j = 0; j < embed_dim; ++j) embed_map.col(j) = gaussian_vector(w_rng, dim_) / std::sqrt(embed_dim);
    // Rank-1 correction so that embed_map * direction == half_gap exactly.
    embed_map += (half_gap - embed_map * direction) * direction.transpose() / direction.squaredNorm();

    const features::StageDistribution dist = features::stage_distribution(spec, t);
    Eigen::MatrixXd w(dim_, embed_dim + dim_);
    w << embed_map, dist.chol;
    weights_.push_back(std::move(w));
    biases_.push_back(dist.base_mean - embed_map * embed_neu_);
  }
}

void ToyGenerator::check_stage(int stage) const {
  if (stage < 1 || stage > stages())
    throw ConfigError("stage " + std::to_string(stage) + " out of range [1, " + std::to_string(stages()) + "]");
}

const Eigen::MatrixXd& ToyGenerator::weight(int stage) const {
  check_stage(stage);
  return weights_[stage - 1];
}

const Eigen::VectorXd& ToyGenerator::bias(int stage) const {
  check_stage(stage);
  return biases_[stage - 1];
}

const Eigen::VectorXd& ToyGenerator::embedding(features::Side side) const {
  switch (side) {
    case features::Side::positive: return embed_pos_;
    case features::Side::negative: return embed_neg_;
    case features::Side::neutral: break;
  }
  return embed_neu_;
}

Eigen::VectorXd ToyGenerator::input(features::Side side, std::uint64_t seed) const {
  Rng rng(derive_seed(seed, {kTagNoise}));
  Eigen::VectorXd x(input_dim());
  x.head(embed_dim_) = embedding(side);
  for (int k = 0; k < dim_; ++k) x[embed_dim_ + k] = rng.normal();
  return x;
}

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("adapter steps must be >= 1");
  if (rank < 1) throw ConfigError("adapter rank must be >= 1");
  if (!(w_slide >= 0.0) || !(w_preserve >= 0.0)) throw ConfigError("loss weights must be >= 0");
  if (!(-1.0 <= alpha_lo && alpha_lo < alpha_hi && alpha_hi <= 1.0))
    throw ConfigError("alpha range must satisfy -1 <= lo < hi <= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (stages < 1) throw ConfigError("stages must be >= 1");
  if (!(init_scale >= 0.0) || !(weight_decay >= 0.0)) throw ConfigError("init_scale and weight_decay must be >= 0");
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"steps", cfg.steps},
          {"rank", cfg.rank},
          {"alpha_range", {cfg.alpha_lo, cfg.alpha_hi}},
          {"w_slide", cfg.w_slide},
          {"w_preserve", cfg.w_preserve},
          {"learning_rate", cfg.learning_rate},
          {"batch_size", cfg.batch_size},
          {"stages", cfg.stages},
          {"seed", cfg.seed},
          {"init_scale", cfg.init_scale},
          {"weight_decay", cfg.weight_decay},
          {"projected_target", cfg.projected_target},
          {"per_stage_factors", cfg.per_stage_factors}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.steps = j.value("steps", cfg.steps);
  cfg.rank = j.value("rank", cfg.rank);
  if (j.contains("alpha_range")) {
    cfg.alpha_lo = j.at("alpha_range").at(0).get<double>();
    cfg.alpha_hi = j.at("alpha_range").at(1).get<double>();
  }
  cfg.w_slide = j.value("w_slide", cfg.w_slide);
  cfg.w_preserve = j.value("w_preserve", cfg.w_preserve);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.stages = j.value("stages", cfg.stages);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.init_scale = j.value("init_scale", cfg.init_scale);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.projected_target = j.value("projected_target", cfg.projected_target);
  cfg.per_stage_factors = j.value("per_stage_factors", cfg.per_stage_factors);
  cfg.validate();
  return cfg;
}

std::size_t LowRankAdapter::slot(int stage) const {
  if (stage < 1 || stage > stages()) throw ConfigError("adapter has no stage " + std::to_string(stage));
  return shared ? 0 : static_cast<std::size_t>(stage - 1);
}

Eigen::MatrixXd LowRankAdapter::delta(int stage) const {
  const std::size_t i = slot(stage);
  return a[i] * b[i];
}

LowRankAdapter init_adapter(const ToyGenerator& gen, int rank, std::uint64_t seed, double init_scale, bool shared) {
  if (rank < 1) throw ConfigError("adapter rank must be >= 1");
  LowRankAdapter ad;
  ad.rank = rank;
  ad.dim = gen.dim();
  ad.input_dim = gen.input_dim();
  ad.seed = seed;
  ad.t_stages = gen.stages();
  ad.shared = shared;
  const double sd = init_scale / std::sqrt(static_cast<double>(rank));
  const int slots = shared ? 1 : gen.stages();
  for (int t = 1; t <= slots; ++t) {
    Rng rng(derive_seed(seed, {kTagInitA, static_cast<std::uint64_t>(t)}));
    Eigen::MatrixXd a(gen.dim(), rank);
    for (Eigen::Index c = 0; c < a.cols(); ++c)
      for (Eigen::Index r = 0; r < a.rows(); ++r) a(r, c) = sd * rng.normal();
    ad.a.push_back(std::move(a));
    ad.b.push_back(Eigen::MatrixXd::Zero(rank, gen.input_dim()));
  }
  return ad;
}

Eigen::MatrixXd adapter_apply(const ToyGenerator& gen, const LowRankAdapter* adapter, double alpha, int stage) {
  Eigen::MatrixXd w = gen.weight(stage);
  if (adapter == nullptr) return w;
  if (adapter->dim != gen.dim() || adapter->input_dim != gen.input_dim())
    throw ShapeError("adapter shape does not match generator");
  if (!std::isfinite(alpha)) throw ConfigError("alpha must be finite");
  w += alpha * adapter->delta(stage);
  return w;
}

Eigen::VectorXd generator_forward(const ToyGenerator& gen, const LowRankAdapter* adapter, double alpha,
                                  features::Side side, int stage, std::uint64_t seed) {
  const Eigen::VectorXd x = gen.input(side, seed);
  Eigen::VectorXd f = gen.weight(stage) * x + gen.bias(stage);
  if (adapter != nullptr) {
    if (adapter->dim != gen.dim() || adapter->input_dim != gen.input_dim())
      throw ShapeError("adapter shape does not match generator");
    const std::size_t i = adapter->slot(stage);
    f += alpha * (adapter->a[i] * (adapter->b[i] * x));
  }
  return f;
}

LossValue sliding_loss(const Eigen::VectorXd& f, const Eigen::VectorXd& b_c, const Eigen::VectorXd& mu_p,
                       const Eigen::VectorXd& mu_n, double alpha, bool projected_target) {
  if (f.size() != b_c.size() || mu_p.size() != b_c.size() || mu_n.size() != b_c.size())
    throw ShapeError("sliding_loss: length mismatch");
  if (std::abs(b_c.norm() - 1.0) > 1e-9) throw ContractViolation("sliding_loss: b_c is not unit length");
  const Eigen::VectorXd target = 0.5 * (1.0 + alpha) * mu_p + 0.5 * (1.0 - alpha) * mu_n;
  const double coord = f.dot(b_c);
  LossValue out;
  if (projected_target) {
    const double r = coord - target.dot(b_c);
    out.value = std::abs(r);
    out.grad = (r > 0 ? 1.0 : r < 0 ? -1.0 : 0.0) * b_c;
    return out;
  }
  const Eigen::VectorXd residual = coord * b_c - target;
  out.value = residual.norm();
  // d||r|| / df = (b b^T r) / ||r||; only the on-axis part of f moves the residual.
  out.grad = out.value > 0.0 ? Eigen::VectorXd(b_c.dot(residual) / out.value * b_c)
                             : Eigen::VectorXd(Eigen::VectorXd::Zero(f.size()));
  return out;
}

LossValue preserving_loss(const Eigen::VectorXd& f_adapted, const Eigen::VectorXd& f_base,
                          const axis::AttributeBasisSet& bases) {
  if (bases.bases.empty()) throw ConfigError("preserving_loss: empty attribute basis set");
  if (f_adapted.size() != f_base.size()) throw ShapeError("preserving_loss: length mismatch");
  const Eigen::VectorXd diff = f_adapted - f_base;
  LossValue out;
  out.grad = Eigen::VectorXd::Zero(diff.size());
  for (const auto& b : bases.bases) {
    if (b.size() != diff.size()) throw ShapeError("preserving_loss: basis length mismatch");
    const double c = diff.dot(b);
    out.value += std::abs(c);
    if (c != 0.0) out.grad += (c > 0 ? 1.0 : -1.0) * b;
  }
  return out;
}

TrainResult train_adapter(const ToyGenerator& gen, const axis::ConceptAxisModel& model, const TrainConfig& cfg) {
  cfg.validate();
  if (model.dim() != gen.dim()) throw ShapeError("axis model dim differs from generator dim");
  if (gen.stages() < cfg.stages) throw ConfigError("generator has fewer stages than the training config");
  for (int t = 1; t <= cfg.stages; ++t) (void)model.stage(t);

  TrainResult result;
  result.adapter =
      init_adapter(gen, cfg.rank, derive_seed(cfg.seed, {kTagInitA}), cfg.init_scale, !cfg.per_stage_factors);
  result.adapter.config = to_json(cfg);
  LowRankAdapter& ad = result.adapter;
  std::vector<AdamState> state_a(ad.a.size()), state_b(ad.b.size());

  for (int step = 0; step < cfg.steps; ++step) {
    Rng rng(derive_seed(cfg.seed, {kTagStep, static_cast<std::uint64_t>(step)}));
    const int stage = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.stages)));
    const double alpha = rng.uniform(cfg.alpha_lo, cfg.alpha_hi);
    const axis::StageAxes& axes = model.stage(stage);
    const std::size_t slot = ad.slot(stage);
    Eigen::MatrixXd& a = ad.a[slot];
    Eigen::MatrixXd& b = ad.b[slot];

    Eigen::MatrixXd grad_a = Eigen::MatrixXd::Zero(a.rows(), a.cols());
    Eigen::MatrixXd grad_b = Eigen::MatrixXd::Zero(b.rows(), b.cols());
    TrainStep rec{step, stage, alpha, 0.0, 0.0, 0.0};
    for (int item = 0; item < cfg.batch_size; ++item) {
      // Paired draw: the adapted and frozen features share the same noise.
      const Eigen::VectorXd x = gen.input(features::Side::neutral, rng.next_u64());
      const Eigen::VectorXd f_base = gen.weight(stage) * x + gen.bias(stage);
      const Eigen::VectorXd s = b * x;
      const Eigen::VectorXd f_adapted = f_base + alpha * (a * s);

      const LossValue slide = sliding_loss(f_adapted, axes.axis.b_c, axes.mu_p, axes.mu_n, alpha, cfg.projected_target);
      Eigen::VectorXd g = cfg.w_slide * slide.grad;
      rec.sliding += slide.value;
      if (!axes.attributes.bases.empty()) {
        const LossValue keep = preserving_loss(f_adapted, f_base, axes.attributes);
        g += cfg.w_preserve * keep.grad;
        rec.preserving += keep.value;
      }
      grad_a += alpha * g * s.transpose();
      grad_b += alpha * (a.transpose() * g) * x.transpose();
    }
    const double inv = 1.0 / cfg.batch_size;
    rec.sliding *= inv;
    rec.preserving *= inv;
    rec.total = cfg.w_slide * rec.sliding + cfg.w_preserve * rec.preserving;
    if (!std::isfinite(rec.total) || !grad_a.allFinite() || !grad_b.allFinite())
      throw NumericalError("non-finite adapter loss at step " + std::to_string(step));

    grad_a *= inv;
    grad_b *= inv;
    adamw_update(a, grad_a, state_a[slot], cfg.learning_rate, cfg.weight_decay);
    adamw_update(b, grad_b, state_b[slot], cfg.learning_rate, cfg.weight_decay);
    result.trace.push_back(rec);
  }
  ad.trained_steps = cfg.steps;
  return result;
}

nlohmann::json to_json(const LowRankAdapter& ad) {
  nlohmann::json doc;
  doc["rank"] = ad.rank;
  doc["T_stages"] = ad.stages();
  doc["shared"] = ad.shared;
  doc["dims"] = {{"D", ad.dim}, {"input", ad.input_dim}};
  doc["config"] = ad.config;
  doc["seed"] = ad.seed;
  doc["trained_steps"] = ad.trained_steps;
  doc["encoding"] = "base64 little-endian float32, row-major";
  nlohmann::json stages = nlohmann::json::array();
  for (std::size_t i = 0; i < ad.a.size(); ++i)
    stages.push_back({{"stage", ad.shared ? 0 : static_cast<int>(i) + 1},
                      {"A", encode_matrix(ad.a[i])},
                      {"B", encode_matrix(ad.b[i])}});
  doc["stages"] = stages;
  return doc;
}

LowRankAdapter adapter_from_json(const nlohmann::json& doc) {
  LowRankAdapter ad;
  try {
    ad.rank = doc.at("rank").get<int>();
    ad.dim = doc.at("dims").at("D").get<int>();
    ad.input_dim = doc.at("dims").at("input").get<int>();
    ad.config = doc.value("config", nlohmann::json::object());
    ad.seed = doc.value("seed", std::uint64_t{0});
    ad.trained_steps = doc.value("trained_steps", 0);
    ad.t_stages = doc.at("T_stages").get<int>();
    ad.shared = doc.value("shared", false);
    if (ad.rank < 1 || ad.dim < 1 || ad.input_dim < 1 || ad.t_stages < 1)
      throw FormatError("adapter header has a non-positive dimension", 0);
    const auto& js = doc.at("stages");
    if (static_cast<int>(js.size()) != (ad.shared ? 1 : ad.t_stages))
      throw FormatError("adapter factor count does not match T_stages", 0);
    for (const auto& s : js) {
      ad.a.push_back(decode_matrix(s.at("A").get<std::string>(), ad.dim, ad.rank));
      ad.b.push_back(decode_matrix(s.at("B").get<std::string>(), ad.rank, ad.input_dim));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("adapter file: ") + e.what(), 0);
  }
  return ad;
}

void write_adapter(const LowRankAdapter& adapter, const std::filesystem::path& path) {
  write_text_file(path, to_json(adapter).dump(1) + "\n");
}

LowRankAdapter read_adapter(const std::filesystem::path& path) { return adapter_from_json(read_json_file(path)); }

}  // namespace acs::adapter
