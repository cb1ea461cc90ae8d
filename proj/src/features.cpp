#include "acs/features.hpp"

#include "acs/error.hpp"
#include "acs/json_util.hpp"
#include "acs/rng.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace acs::features {

namespace {

constexpr std::array<char, 4> kMagic{'A', 'C', 'S', 'F'};
constexpr std::uint32_t kVersion = 1;

enum SeedTag : std::uint64_t { kTagBase = 11, kTagStageMean = 12, kTagBasis = 13, kTagSpread = 14, kTagAxis = 15 };

Eigen::VectorXd gaussian_vector(Rng& rng, int n) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

std::size_t checked_mul(std::size_t a, std::size_t b) {
  if (a != 0 && b > std::numeric_limits<std::size_t>::max() / a) throw SizeError("feature set size overflows");
  return a * b;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
  return v;
}

}  // namespace

const char* to_string(Side side) {
  switch (side) {
    case Side::positive: return "positive";
    case Side::negative: return "negative";
    case Side::neutral: return "neutral";
  }
  return "neutral";
}

Side side_from_string(const std::string& name) {
  if (name == "positive") return Side::positive;
  if (name == "negative") return Side::negative;
  if (name == "neutral") return Side::neutral;
  throw ConfigError("unknown concept side '" + name + "'");
}

void ConceptSpec::validate() const {
  if (dim < 2) throw ConfigError("concept dim must be >= 2, got " + std::to_string(dim));
  if (height < 1 || width < 1) throw ConfigError("feature grid must be at least 1x1");
  if (!(ground_truth_gap >= 0.0)) throw ConfigError("ground_truth_gap must be >= 0");
  if (!(noise_scale >= 0.0) || !(mean_scale >= 0.0)) throw ConfigError("noise_scale and mean_scale must be >= 0");
  if (ground_truth_axis) {
    if (ground_truth_axis->size() != dim) throw ConfigError("ground_truth_axis length differs from dim");
    if (std::abs(ground_truth_axis->norm() - 1.0) > 1e-9) throw ConfigError("ground_truth_axis must be unit length");
  }
}

ConceptSpec make_synthetic_spec(int dim, std::uint64_t embedding_seed, double gap, double noise_scale) {
  ConceptSpec spec;
  spec.dim = dim;
  spec.embedding_seed = embedding_seed;
  spec.ground_truth_gap = gap;
  spec.noise_scale = noise_scale;
  Rng rng(derive_seed(embedding_seed, {kTagAxis}));
  Eigen::VectorXd axis = gaussian_vector(rng, dim);
  spec.ground_truth_axis = axis / axis.norm();
  spec.validate();
  return spec;
}

StageDistribution stage_distribution(const ConceptSpec& spec, int stage) {
  spec.validate();
  const int d = spec.dim;
  StageDistribution out;

  // Shared neutral mean plus a smaller per-stage offset, both kept off the
  // concept axis so the two class means sit mirrored around it.
  Rng base_rng(derive_seed(spec.embedding_seed, {kTagBase}));
  Rng stage_rng(derive_seed(spec.embedding_seed, {kTagStageMean, static_cast<std::uint64_t>(stage)}));
  Eigen::VectorXd mean = gaussian_vector(base_rng, d) + 0.25 * gaussian_vector(stage_rng, d);
  if (spec.ground_truth_axis) mean -= spec.ground_truth_axis->dot(mean) * *spec.ground_truth_axis;
  out.base_mean = spec.mean_scale / std::sqrt(static_cast<double>(d)) * mean;

  if (spec.noise_scale == 0.0) {
    out.chol = Eigen::MatrixXd::Zero(d, d);
    return out;
  }

  // Covariance noise^2 * U diag(s^2) U^T with the ground-truth axis as U's
  // first column and the smallest spread, so noise_scale is the standard
  // deviation along the axis and the optimal discriminant is the axis itself.
  Rng basis_rng(derive_seed(spec.embedding_seed, {kTagBasis, static_cast<std::uint64_t>(stage)}));
  Eigen::MatrixXd seedmat(d, d);
  for (int j = 0; j < d; ++j) seedmat.col(j) = gaussian_vector(basis_rng, d);
  if (spec.ground_truth_axis) seedmat.col(0) = *spec.ground_truth_axis;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(seedmat);
  Eigen::MatrixXd basis = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
  if (spec.ground_truth_axis && basis.col(0).dot(*spec.ground_truth_axis) < 0) basis.col(0) *= -1.0;

  Rng spread_rng(derive_seed(spec.embedding_seed, {kTagSpread, static_cast<std::uint64_t>(stage)}));
  Eigen::VectorXd spread(d);
  spread[0] = 1.0;
  for (int j = 1; j < d; ++j) spread[j] = spread_rng.uniform(1.5, 3.0);

  Eigen::MatrixXd cov = spec.noise_scale * spec.noise_scale * basis * spread.array().square().matrix().asDiagonal() *
                        basis.transpose();
  cov = 0.5 * (cov + cov.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericalError("synthetic covariance is not positive definite");
  out.chol = llt.matrixL();
  return out;
}

Eigen::VectorXd side_mean(const ConceptSpec& spec, int stage, Side side) {
  Eigen::VectorXd mu = stage_distribution(spec, stage).base_mean;
  if (side == Side::neutral) return mu;
  if (!spec.ground_truth_axis) throw ConfigError("synthetic sampling needs ground_truth_axis");
  const double half = 0.5 * spec.ground_truth_gap;
  return side == Side::positive ? Eigen::VectorXd(mu + half * *spec.ground_truth_axis)
                                : Eigen::VectorXd(mu - half * *spec.ground_truth_axis);
}

Eigen::VectorXd FeatureSet::vector(std::size_t i) const {
  const auto v = vec(i);
  Eigen::VectorXd out(dim);
  for (int k = 0; k < dim; ++k) out[k] = v[k];
  return out;
}

void FeatureSet::validate() const {
  if (samples < 1 || height < 1 || width < 1 || dim < 1) throw ShapeError("feature set has an empty dimension");
  if (data.size() != checked_mul(count(), static_cast<std::size_t>(dim)))
    throw ShapeError("feature data length does not match samples*height*width*dim");
  for (float x : data)
    if (!std::isfinite(x)) throw NumericalError("feature set contains a non-finite entry");
}

FeatureSet synth_concept_sampler(const ConceptSpec& spec, int stage, Side side, int n_samples, std::uint64_t seed) {
  if (!spec.ground_truth_axis) throw ConfigError("synth_concept_sampler requires ground_truth_axis");
  if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
  const std::size_t n_vec = checked_mul(checked_mul(static_cast<std::size_t>(n_samples), spec.height), spec.width);
  const std::size_t total = checked_mul(n_vec, static_cast<std::size_t>(spec.dim));

  const StageDistribution dist = stage_distribution(spec, stage);
  const Eigen::VectorXd mu = side_mean(spec, stage, side);

  FeatureSet fs;
  fs.side = side;
  fs.stage = stage;
  fs.samples = n_samples;
  fs.height = spec.height;
  fs.width = spec.width;
  fs.dim = spec.dim;
  fs.seed = seed;
  fs.data.resize(total);

  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(stage), static_cast<std::uint64_t>(side)}));
  Eigen::VectorXd xi(spec.dim);
  for (std::size_t i = 0; i < n_vec; ++i) {
    for (int k = 0; k < spec.dim; ++k) xi[k] = rng.normal();
    const Eigen::VectorXd f = mu + dist.chol.triangularView<Eigen::Lower>() * xi;
    for (int k = 0; k < spec.dim; ++k) fs.data[i * spec.dim + k] = static_cast<float>(f[k]);
  }
  return fs;
}

Eigen::VectorXd mean(const FeatureSet& fs) {
  if (fs.count() == 0) throw ShapeError("mean of an empty feature set");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(fs.dim);
  for (std::size_t i = 0; i < fs.count(); ++i) {
    const auto v = fs.vec(i);
    for (int k = 0; k < fs.dim; ++k) acc[k] += v[k];
  }
  return acc / static_cast<double>(fs.count());
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> class_means(const FeatureSet& pos, const FeatureSet& neg) {
  if (pos.dim != neg.dim) throw ShapeError("class_means: dim mismatch");
  if (pos.side != Side::positive || neg.side != Side::negative)
    throw ShapeError("class_means expects a positive and a negative set");
  return {mean(pos), mean(neg)};
}

std::vector<std::uint8_t> encode_feature_file(const FeatureSet& fs) {
  fs.validate();
  nlohmann::ordered_json header;
  header["side"] = to_string(fs.side);
  header["stage"] = fs.stage;
  header["samples"] = fs.samples;
  header["height"] = fs.height;
  header["width"] = fs.width;
  header["dim"] = fs.dim;
  header["seed"] = fs.seed;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(12 + text.size() + fs.data.size() * 4);
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (float x : fs.data) put_u32(out, std::bit_cast<std::uint32_t>(x));
  return out;
}

FeatureSet decode_feature_file(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) throw FormatError("truncated feature file header", bytes.size());
  if (std::memcmp(bytes.data(), kMagic.data(), 4) != 0) throw FormatError("bad magic, expected ACSF", 0);
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kVersion) throw FormatError("unsupported feature file version " + std::to_string(version), 4);
  const std::uint32_t header_len = get_u32(bytes, 8);
  if (bytes.size() - 12 < header_len) throw FormatError("truncated JSON header", bytes.size());

  FeatureSet fs;
  try {
    const auto header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
    fs.side = side_from_string(header.at("side").get<std::string>());
    fs.stage = header.at("stage").get<int>();
    fs.samples = header.at("samples").get<int>();
    fs.height = header.at("height").get<int>();
    fs.width = header.at("width").get<int>();
    fs.dim = header.at("dim").get<int>();
    fs.seed = header.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid JSON header: ") + e.what(), 12);
  } catch (const ConfigError& e) {
    throw FormatError(e.what(), 12);
  }
  if (fs.samples < 1 || fs.height < 1 || fs.width < 1 || fs.dim < 1)
    throw FormatError("header has a non-positive dimension", 12);

  const std::size_t payload_at = 12 + static_cast<std::size_t>(header_len);
  const std::size_t n = checked_mul(fs.count(), static_cast<std::size_t>(fs.dim));
  const std::size_t need = checked_mul(n, 4);
  if (bytes.size() - payload_at < need) throw FormatError("truncated payload", bytes.size());
  if (bytes.size() - payload_at > need) throw FormatError("trailing bytes after payload", payload_at + need);
  fs.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) fs.data[i] = std::bit_cast<float>(get_u32(bytes, payload_at + 4 * i));
  return fs;
}

void write_feature_file(const FeatureSet& fs, const std::filesystem::path& path) {
  const auto bytes = encode_feature_file(fs);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

FeatureSet read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_feature_file(bytes);
}

}  // namespace acs::features

namespace acs::features {

nlohmann::json to_json(const ConceptSpec& spec) {
  nlohmann::json j;
  j["name"] = spec.name;
  j["positive_label"] = spec.positive_label;
  j["negative_label"] = spec.negative_label;
  j["neutral_label"] = spec.neutral_label;
  j["embedding_seed"] = spec.embedding_seed;
  j["dim"] = spec.dim;
  j["ground_truth_axis"] = spec.ground_truth_axis ? to_json_array(*spec.ground_truth_axis) : nlohmann::json(nullptr);
  j["ground_truth_gap"] = spec.ground_truth_gap;
  j["noise_scale"] = spec.noise_scale;
  j["mean_scale"] = spec.mean_scale;
  j["height"] = spec.height;
  j["width"] = spec.width;
  return j;
}

ConceptSpec spec_from_json(const nlohmann::json& j) {
  ConceptSpec spec;
  spec.name = j.value("name", spec.name);
  spec.positive_label = j.value("positive_label", spec.positive_label);
  spec.negative_label = j.value("negative_label", spec.negative_label);
  spec.neutral_label = j.value("neutral_label", spec.neutral_label);
  spec.embedding_seed = j.at("embedding_seed").get<std::uint64_t>();
  spec.dim = j.at("dim").get<int>();
  if (j.contains("ground_truth_axis") && !j.at("ground_truth_axis").is_null())
    spec.ground_truth_axis = vector_from_json(j.at("ground_truth_axis"), spec.dim);
  spec.ground_truth_gap = j.value("ground_truth_gap", spec.ground_truth_gap);
  spec.noise_scale = j.value("noise_scale", spec.noise_scale);
  spec.mean_scale = j.value("mean_scale", spec.mean_scale);
  spec.height = j.value("height", spec.height);
  spec.width = j.value("width", spec.width);
  spec.validate();
  return spec;
}

}  // namespace acs::features
