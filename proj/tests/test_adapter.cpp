#include "acs/adapter.hpp"
#include "acs/config.hpp"
#include "acs/error.hpp"
#include "acs/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace acs;
using namespace acs::adapter;
using features::Side;

namespace {

Eigen::VectorXd gauss(Rng& rng, int d) {
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v[i] = rng.normal();
  return v;
}

template <class F>
Eigen::VectorXd central_diff(F f, const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd p = x, m = x;
    p[i] += h;
    m[i] -= h;
    g[i] = (f(p) - f(m)) / (2 * h);
  }
  return g;
}

double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-8});
}

struct Pipeline {
  config::RunConfig cfg = config::from_json(nlohmann::json::object());
  axis::ConceptAxisModel model = config::fit_axis(cfg, config::generate_features(cfg));
  ToyGenerator gen = config::make_generator(cfg);
};

const Pipeline& pipeline() {
  static const Pipeline p;
  return p;
}

}  // namespace

TEST_CASE("zero or absent shift leaves the generator unchanged") {
  const auto& p = pipeline();
  auto ad = init_adapter(p.gen, 4, 3);
  for (double alpha : {-2.0, -1.0, 0.0, 0.7, 3.0}) {
    const auto base = generator_forward(p.gen, nullptr, alpha, Side::neutral, 2, 5);
    CHECK(generator_forward(p.gen, &ad, alpha, Side::neutral, 2, 5) == base);
    CHECK(adapter_apply(p.gen, &ad, alpha, 2) == p.gen.weight(2));
  }
  Rng rng(1);
  for (auto& b : ad.b) b = Eigen::MatrixXd::Random(b.rows(), b.cols());
  CHECK(generator_forward(p.gen, &ad, 0.0, Side::positive, 4, 8) == generator_forward(p.gen, nullptr, 0.0, Side::positive, 4, 8));
  CHECK_THROWS_AS(generator_forward(p.gen, nullptr, 0.0, Side::neutral, 0, 1), ConfigError);
  CHECK_THROWS_AS(generator_forward(p.gen, nullptr, 0.0, Side::neutral, p.gen.stages() + 1, 1), ConfigError);
}

TEST_CASE("rank-1 shift matches the hand-computed update") {
  const auto& p = pipeline();
  auto ad = init_adapter(p.gen, 1, 0);
  Rng rng(2);
  const Eigen::VectorXd u = gauss(rng, p.gen.dim());
  const Eigen::VectorXd v = gauss(rng, p.gen.input_dim());
  ad.a[0] = u;
  ad.b[0] = v.transpose();
  const Eigen::VectorXd x = p.gen.input(Side::neutral, 12);
  const Eigen::VectorXd diff =
      generator_forward(p.gen, &ad, 1.0, Side::neutral, 3, 12) - generator_forward(p.gen, nullptr, 0.0, Side::neutral, 3, 12);
  CHECK((diff - u * v.dot(x)).norm() <= 1e-12 * (1 + diff.norm()));

  const Eigen::MatrixXd uv = u * v.transpose();
  CHECK((adapter_apply(p.gen, &ad, 1.0, 3) - p.gen.weight(3) - uv).norm() <= 1e-12 * uv.norm());
  CHECK((adapter_apply(p.gen, &ad, 2.0, 3) - p.gen.weight(3) - 2.0 * uv).norm() <= 1e-12 * uv.norm());
}

TEST_CASE("generator output is affine in alpha") {
  const auto& p = pipeline();
  auto ad = init_adapter(p.gen, 4, 9);
  for (auto& b : ad.b) b = Eigen::MatrixXd::Random(b.rows(), b.cols());
  const auto f0 = generator_forward(p.gen, &ad, -1.0, Side::neutral, 5, 21);
  const auto f1 = generator_forward(p.gen, &ad, 0.5, Side::neutral, 5, 21);
  const auto f2 = generator_forward(p.gen, &ad, 2.0, Side::neutral, 5, 21);
  CHECK(((f1 - f0) - 0.5 * (f2 - f0)).norm() <= 1e-12 * (1 + (f2 - f0).norm()));
}

TEST_CASE("generator matches the synthetic class statistics") {
  const auto& p = pipeline();
  const int n = 4000;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(p.gen.dim());
  for (int i = 0; i < n; ++i) mean += generator_forward(p.gen, nullptr, 0.0, Side::positive, 1, derive_seed(7, {static_cast<std::uint64_t>(i)}));
  mean /= n;
  const Eigen::VectorXd mu = features::side_mean(p.cfg.spec, 1, Side::positive);
  CHECK((mean - mu).norm() < 0.05);
}

TEST_CASE("sliding loss examples") {
  const Eigen::Vector3d b(0, 1, 0);
  CHECK(sliding_loss(b, b, b, -b, 1.0).value == 0.0);
  CHECK(sliding_loss(Eigen::Vector3d(1, 0, 0), b, b, -b, 0.0).value == 0.0);
  const auto l = sliding_loss(Eigen::Vector3d(0, 2, 0), b, b, -b, 0.0);
  CHECK(l.value == doctest::Approx(2.0));
  CHECK_THROWS_AS(sliding_loss(b, Eigen::Vector3d(1, 1, 0), b, -b, 0.0), ContractViolation);
}

TEST_CASE("loss gradients match central differences") {
  Rng rng(31);
  for (int probe = 0; probe < 100; ++probe) {
    const int d = 2 + probe % 15;
    const Eigen::VectorXd f = gauss(rng, d);
    const Eigen::VectorXd b = gauss(rng, d).normalized();
    const Eigen::VectorXd mp = gauss(rng, d), mn = gauss(rng, d);
    const double alpha = rng.uniform(-1, 1);
    for (bool projected : {false, true}) {
      const auto l = sliding_loss(f, b, mp, mn, alpha, projected);
      const auto fd = central_diff([&](const Eigen::VectorXd& x) { return sliding_loss(x, b, mp, mn, alpha, projected).value; }, f);
      CHECK(rel_err(l.grad, fd) <= 1e-4);
    }

    axis::AttributeBasisSet set;
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(Eigen::MatrixXd::Random(d, d)).householderQ();
    for (int k = 0; k < std::min(d - 1, 4); ++k) set.bases.push_back(q.col(k + 1));
    const Eigen::VectorXd fb = gauss(rng, d);
    const auto pl = preserving_loss(f, fb, set);
    const auto fd = central_diff([&](const Eigen::VectorXd& x) { return preserving_loss(x, fb, set).value; }, f);
    CHECK(rel_err(pl.grad, fd) <= 1e-4);
  }
}

TEST_CASE("preserving loss examples") {
  axis::AttributeBasisSet set;
  set.bases = {Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 1, 0)};
  const Eigen::Vector3d base(0.3, -0.2, 0.9);
  CHECK(preserving_loss(base, base, set).value == 0.0);
  CHECK(preserving_loss(base + Eigen::Vector3d(0, 0, 1), base, set).value == 0.0);
  CHECK(preserving_loss(base + set.bases[0], base, set).value == doctest::Approx(1.0));
  CHECK_THROWS_AS(preserving_loss(base, base, axis::AttributeBasisSet{}), ConfigError);
}

TEST_CASE("zero loss weights leave the factors at initialization") {
  const auto& p = pipeline();
  auto tc = p.cfg.train;
  tc.w_slide = 0.0;
  tc.w_preserve = 0.0;
  tc.steps = 50;
  const auto res = train_adapter(p.gen, p.model, tc);
  const auto init = init_adapter(p.gen, tc.rank, derive_seed(tc.seed, {25}), tc.init_scale);
  CHECK(res.adapter.trained_steps == 50);
  for (std::size_t i = 0; i < res.adapter.b.size(); ++i) {
    CHECK(res.adapter.b[i].isZero(0));
    CHECK(res.adapter.a[i] == init.a[i]);
  }
  CHECK(res.trace.size() == 50);
}

TEST_CASE("trained slider is monotone with endpoints near the class means") {
  const auto& p = pipeline();
  const auto res = config::train(p.cfg, p.gen, p.model);
  std::vector<double> coords;
  for (double alpha : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
    double c = 0;
    for (int t = 1; t <= p.model.stage_count(); ++t) {
      const auto& st = p.model.stage(t);
      for (std::uint64_t s = 0; s < 64; ++s)
        c += axis::project_scalar(generator_forward(p.gen, &res.adapter, alpha, Side::neutral, t, derive_seed(99, {static_cast<std::uint64_t>(t), s})), st.axis.b_c);
    }
    coords.push_back(c / (64.0 * p.model.stage_count()));
  }
  for (std::size_t i = 1; i < coords.size(); ++i) CHECK(coords[i] > coords[i - 1]);
  double pos = 0, neg = 0;
  for (const auto& st : p.model.stages) {
    pos += st.mu_p.dot(st.axis.b_c) / p.model.stage_count();
    neg += st.mu_n.dot(st.axis.b_c) / p.model.stage_count();
  }
  CHECK(std::abs(coords.back() - pos) <= 0.1 * std::abs(pos));
  CHECK(std::abs(coords.front() - neg) <= 0.1 * std::abs(neg));
}

TEST_CASE("training is deterministic and the adapter file round-trips") {
  const auto& p = pipeline();
  auto tc = p.cfg.train;
  tc.steps = 200;
  const auto a = train_adapter(p.gen, p.model, tc);
  const auto b = train_adapter(p.gen, p.model, tc);
  CHECK(a.adapter.b == b.adapter.b);
  CHECK(a.adapter.a == b.adapter.a);

  const auto path = std::filesystem::temp_directory_path() / "acs_tests" / "adapter.json";
  std::filesystem::create_directories(path.parent_path());
  write_adapter(a.adapter, path);
  const auto back = read_adapter(path);
  REQUIRE(back.a.size() == a.adapter.a.size());
  CHECK(back.rank == a.adapter.rank);
  CHECK(back.trained_steps == 200);
  for (std::size_t i = 0; i < back.a.size(); ++i) {
    CHECK((back.a[i] - a.adapter.a[i]).cwiseAbs().maxCoeff() <= 1e-6 * (1 + a.adapter.a[i].cwiseAbs().maxCoeff()));
    CHECK((back.b[i] - a.adapter.b[i]).cwiseAbs().maxCoeff() <= 1e-6 * (1 + a.adapter.b[i].cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  tc.steps = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = {};
  tc.alpha_lo = 0.5;
  tc.alpha_hi = 0.5;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = {};
  tc.w_preserve = -1;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
}
