#include "acs/axis.hpp"

#include "acs/error.hpp"
#include "acs/json_util.hpp"

#include <cmath>
#include <sstream>

namespace acs::axis {

namespace {

// Column-major D x N matrix of the set's vectors minus `center`.
Eigen::MatrixXd centered(const features::FeatureSet& fs, const Eigen::VectorXd& center) {
  Eigen::MatrixXd x(fs.dim, static_cast<Eigen::Index>(fs.count()));
  for (std::size_t i = 0; i < fs.count(); ++i) {
    const auto v = fs.vec(i);
    for (int k = 0; k < fs.dim; ++k) x(k, static_cast<Eigen::Index>(i)) = v[k] - center[k];
  }
  return x;
}

void check_pair(const features::FeatureSet& pos, const features::FeatureSet& neg) {
  if (pos.dim != neg.dim) throw ShapeError("feature dims differ: " + std::to_string(pos.dim) + " vs " +
                                           std::to_string(neg.dim));
  if (pos.count() == 0 || neg.count() == 0) throw ShapeError("empty feature set");
}

// Deterministic sign: the largest-magnitude component is positive.
void canonical_sign(Eigen::VectorXd& v) {
  Eigen::Index at = 0;
  v.cwiseAbs().maxCoeff(&at);
  if (v[at] < 0) v = -v;
}

}  // namespace

const StageAxes& ConceptAxisModel::stage(int t) const {
  for (const auto& s : stages)
    if (s.stage == t) return s;
  throw ConfigError("axis model has no stage " + std::to_string(t));
}

Eigen::VectorXd ConceptAxisModel::reference_axis() const {
  if (stages.empty()) throw ConfigError("axis model has no stages");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(stages.front().axis.b_c.size());
  for (const auto& s : stages) {
    const double sign = s.axis.b_c.dot(stages.front().axis.b_c) < 0 ? -1.0 : 1.0;
    acc += sign * s.axis.b_c;
  }
  return acc / acc.norm();
}

ScatterPair scatter_matrices(const features::FeatureSet& pos, const features::FeatureSet& neg) {
  check_pair(pos, neg);
  ScatterPair sp;
  sp.mu_p = features::mean(pos);
  sp.mu_n = features::mean(neg);
  const Eigen::MatrixXd xp = centered(pos, sp.mu_p);
  const Eigen::MatrixXd xn = centered(neg, sp.mu_n);
  sp.s_w = xp * xp.transpose() + xn * xn.transpose();
  sp.s_w = 0.5 * (sp.s_w + sp.s_w.transpose());
  const Eigen::VectorXd diff = sp.mu_p - sp.mu_n;
  sp.s_b = diff * diff.transpose();
  sp.n_total = pos.count() + neg.count();
  return sp;
}

double default_ridge(const Eigen::MatrixXd& s_w) { return 1e-6 * s_w.trace() / static_cast<double>(s_w.rows()); }

double rayleigh_quotient(const ScatterPair& sp, double ridge, const Eigen::VectorXd& w) {
  const double num = w.dot(sp.s_b * w);
  const double den = w.dot(sp.s_w * w) + ridge * w.squaredNorm();
  return num / den;
}

ConceptAxis solve_concept_axis(const ScatterPair& sp, double ridge) {
  if (!(ridge >= 0.0)) throw ConfigError("ridge must be >= 0");
  const Eigen::Index d = sp.s_w.rows();
  ConceptAxis out;
  out.ridge_used = ridge;
  const Eigen::VectorXd diff = sp.mu_p - sp.mu_n;
  if (diff.squaredNorm() == 0.0) {
    out.b_c = Eigen::VectorXd::Unit(d, 0);
    out.rayleigh_value = 0.0;
    out.degenerate = true;
    return out;
  }
  const Eigen::MatrixXd reg = sp.s_w + ridge * Eigen::MatrixXd::Identity(d, d);
  Eigen::LLT<Eigen::MatrixXd> llt(reg);
  if (llt.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << "regularized within-class scatter is singular (ridge = " << ridge << ")";
    throw NumericalError(msg.str());
  }
  Eigen::VectorXd v = llt.solve(diff);
  if (!v.allFinite() || v.norm() == 0.0) {
    std::ostringstream msg;
    msg << "concept axis solve failed (ridge = " << ridge << ")";
    throw NumericalError(msg.str());
  }
  v.normalize();
  if (v.dot(diff) < 0) v = -v;
  out.b_c = v;
  out.rayleigh_value = rayleigh_quotient(sp, ridge, v);
  return out;
}

ConceptAxis solve_concept_axis(const ScatterPair& sp) { return solve_concept_axis(sp, default_ridge(sp.s_w)); }

ConceptAxis solve_concept_axis_eigen(const ScatterPair& sp, double ridge) {
  const Eigen::Index d = sp.s_w.rows();
  const Eigen::MatrixXd reg = sp.s_w + ridge * Eigen::MatrixXd::Identity(d, d);
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(sp.s_b, reg);
  if (solver.info() != Eigen::Success) throw NumericalError("generalized eigensolver failed");
  Eigen::VectorXd v = solver.eigenvectors().col(d - 1);
  v.normalize();
  ConceptAxis out;
  if (v.dot(sp.mu_p - sp.mu_n) < 0) v = -v;
  out.b_c = v;
  out.ridge_used = ridge;
  out.rayleigh_value = rayleigh_quotient(sp, ridge, v);
  out.degenerate = (sp.mu_p - sp.mu_n).squaredNorm() == 0.0;
  return out;
}

std::pair<double, Eigen::VectorXd> leading_eigenpair(const Eigen::MatrixXd& symmetric) {
  const Eigen::Index n = symmetric.rows();
  Eigen::MatrixXd a = 0.5 * (symmetric + symmetric.transpose());
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double scale = std::max(a.norm(), 1e-300);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= 1e-15 * scale) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        // Rotation zeroing a(p,q), Golub & Van Loan 8.5.2.
        const double tau = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < n; ++i)
    if (a(i, i) > a(best, best)) best = i;
  return {a(best, best), v.col(best)};
}

Eigen::MatrixXd merged_scatter(const features::FeatureSet& pos, const features::FeatureSet& neg) {
  check_pair(pos, neg);
  const double np = static_cast<double>(pos.count()), nn = static_cast<double>(neg.count());
  const Eigen::VectorXd center = (np * features::mean(pos) + nn * features::mean(neg)) / (np + nn);
  const Eigen::MatrixXd xp = centered(pos, center);
  const Eigen::MatrixXd xn = centered(neg, center);
  Eigen::MatrixXd c = xp * xp.transpose() + xn * xn.transpose();
  return 0.5 * (c + c.transpose());
}

AttributeBasisSet attribute_bases_from_scatter(const Eigen::MatrixXd& scatter, const Eigen::VectorXd& b_c, int K) {
  const Eigen::Index d = scatter.rows();
  if (K < 1 || K > d - 1) throw ConfigError("K must be in [1, D-1], got " + std::to_string(K));
  if (std::abs(b_c.norm() - 1.0) > 1e-9) throw ContractViolation("b_c must be unit length");

  AttributeBasisSet out;
  std::vector<Eigen::VectorXd> accepted{b_c};
  const double floor = 1e-12 * std::max(scatter.trace(), 1e-300);
  for (int k = 1; k <= K; ++k) {
    // Deflated scatter: F_k F_k^T with F_k = P F, P projecting out every accepted basis.
    Eigen::MatrixXd proj = Eigen::MatrixXd::Identity(d, d);
    for (const auto& b : accepted) proj -= b * b.transpose();
    const Eigen::MatrixXd deflated = proj * scatter * proj;
    auto [value, w] = leading_eigenpair(deflated);
    if (!(value > floor)) {
      out.rank_deficient = true;
      break;
    }
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : accepted) w -= b.dot(w) * b;
    w.normalize();
    canonical_sign(w);
    out.bases.push_back(w);
    out.explained_variance.push_back(w.dot(deflated * w));
    accepted.push_back(w);
  }
  return out;
}

AttributeBasisSet attribute_bases(const features::FeatureSet& pos, const features::FeatureSet& neg,
                                  const Eigen::VectorXd& b_c, int K) {
  return attribute_bases_from_scatter(merged_scatter(pos, neg), b_c, K);
}

double project_scalar(const Eigen::VectorXd& v, const Eigen::VectorXd& axis) {
  if (v.size() != axis.size()) throw ShapeError("project_scalar: length mismatch");
  if (std::abs(axis.norm() - 1.0) > 1e-9) throw ContractViolation("project_scalar: axis is not unit length");
  return v.dot(axis);
}

StageAxes fit_stage(const features::FeatureSet& pos, const features::FeatureSet& neg, int K, double ridge) {
  StageAxes out;
  out.stage = pos.stage;
  const ScatterPair sp = scatter_matrices(pos, neg);
  out.axis = solve_concept_axis(sp, ridge < 0 ? default_ridge(sp.s_w) : ridge);
  out.axis.stage = pos.stage;
  out.attributes = attribute_bases(pos, neg, out.axis.b_c, K);
  out.attributes.stage = pos.stage;
  out.mu_p = sp.mu_p;
  out.mu_n = sp.mu_n;
  return out;
}

ConceptAxisModel fit_model(const features::ConceptSpec& spec,
                           const std::map<int, std::pair<features::FeatureSet, features::FeatureSet>>& stage_sets,
                           int K, double ridge) {
  ConceptAxisModel model;
  model.spec = spec;
  model.K = K;
  model.ridge = ridge;
  for (const auto& [stage, sets] : stage_sets) {
    if (sets.first.dim != spec.dim) throw ShapeError("feature dim differs from concept spec dim");
    model.stages.push_back(fit_stage(sets.first, sets.second, K, ridge));
    model.stages.back().stage = stage;
  }
  return model;
}

nlohmann::json to_json(const ConceptAxisModel& model) {
  nlohmann::json doc;
  doc["spec"] = features::to_json(model.spec);
  doc["K"] = model.K;
  doc["ridge"] = model.ridge < 0 ? nlohmann::json(nullptr) : nlohmann::json(model.ridge);
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : model.stages) {
    nlohmann::json js;
    js["stage"] = s.stage;
    js["b_c"] = to_json_array(s.axis.b_c);
    js["rayleigh"] = s.axis.rayleigh_value;
    js["ridge_used"] = s.axis.ridge_used;
    js["mu_p"] = to_json_array(s.mu_p);
    js["mu_n"] = to_json_array(s.mu_n);
    nlohmann::json bases = nlohmann::json::array();
    for (const auto& b : s.attributes.bases) bases.push_back(to_json_array(b));
    js["bases"] = bases;
    js["explained_variance"] = s.attributes.explained_variance;
    stages.push_back(js);
  }
  doc["stages"] = stages;
  return doc;
}

ConceptAxisModel model_from_json(const nlohmann::json& doc) {
  ConceptAxisModel model;
  try {
    model.spec = features::spec_from_json(doc.at("spec"));
    model.K = doc.at("K").get<int>();
    model.ridge = doc.at("ridge").is_null() ? -1.0 : doc.at("ridge").get<double>();
    const auto d = static_cast<Eigen::Index>(model.spec.dim);
    for (const auto& js : doc.at("stages")) {
      StageAxes s;
      s.stage = js.at("stage").get<int>();
      s.axis.stage = s.stage;
      s.axis.b_c = vector_from_json(js.at("b_c"), d);
      s.axis.rayleigh_value = js.at("rayleigh").get<double>();
      s.axis.ridge_used = js.value("ridge_used", 0.0);
      s.axis.degenerate = s.axis.rayleigh_value == 0.0;
      s.mu_p = vector_from_json(js.at("mu_p"), d);
      s.mu_n = vector_from_json(js.at("mu_n"), d);
      s.attributes.stage = s.stage;
      for (const auto& b : js.at("bases")) s.attributes.bases.push_back(vector_from_json(b, d));
      s.attributes.explained_variance = js.at("explained_variance").get<std::vector<double>>();
      if (s.attributes.explained_variance.size() != s.attributes.bases.size())
        throw FormatError("explained_variance length differs from bases", 0);
      s.attributes.rank_deficient = static_cast<int>(s.attributes.bases.size()) < model.K;
      if (std::abs(s.axis.b_c.norm() - 1.0) > 1e-6) throw FormatError("stored b_c is not unit length", 0);
      model.stages.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("axis model: ") + e.what(), 0);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("axis model: ") + e.what(), 0);
  }
  if (model.stages.empty()) throw FormatError("axis model has no stages", 0);
  return model;
}

void write_axis_model(const ConceptAxisModel& model, const std::filesystem::path& path) {
  write_text_file(path, to_json(model).dump(1) + "\n");
}

ConceptAxisModel read_axis_model(const std::filesystem::path& path) { return model_from_json(read_json_file(path)); }

}  // namespace acs::axis
