#include <doctest.h>

#include "../oracles.hpp"
#include "stiffkin/models.hpp"

using namespace stiffkin;

namespace {

NormStats stats3(double t_scale = 10.0) {
  NormStats s;
  s.y_min = Eigen::Vector3d(0.0, 1.0, -1.0);
  s.y_max = Eigen::Vector3d(2.0, 1.5, 3.0);
  s.t_scale = t_scale;
  return s;
}

double spectral_norm(const Eigen::MatrixXd& m) {
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

}  // namespace

TEST_SUITE("models") {
  TEST_CASE("normalization") {
    NormStats s;
    s.y_min = Eigen::Vector2d(0.0, 4.0);
    s.y_max = Eigen::Vector2d(2.0, 4.0);
    const auto u = normalize(Eigen::Vector2d(1.0, 4.0), s);
    CHECK(u[0] == 0.5);
    CHECK(u[1] == 0.0);
    CHECK(normalize(s.y_min, s).isZero());
    CHECK(s.range()[1] == kRangeEpsilon);
    const Eigen::Vector2d y(1.234, 4.0);
    CHECK(denormalize(normalize(y, s), s).isApprox(y, 1e-12));
  }

  TEST_CASE("normalization is invertible on non-degenerate species") {
    const auto s = stats3();
    std::mt19937_64 rng(4);
    for (int i = 0; i < 50; ++i) {
      const Eigen::VectorXd y = oracle::random_positive(rng, 3, 1e-3, 5.0);
      CHECK((denormalize(normalize(y, s), s) - y).cwiseAbs().maxCoeff() <= 1e-12 * y.cwiseAbs().maxCoeff());
    }
  }

  TEST_CASE("fitted statistics") {
    const auto rob = generate_dataset(load_scheme(oracle::data_path("robertson.mech")));
    const auto s = fit_norm_stats(rob);
    CHECK(s.t_scale == doctest::Approx(1e5).epsilon(1e-9));
    CHECK(s.y_max[0] == doctest::Approx(1.0));
    const auto pollu = generate_dataset(load_scheme(oracle::data_path("pollu.mech")));
    CHECK(fit_norm_stats(pollu).t_scale == doctest::Approx(0.1));
    Trajectory flat;
    flat.times = {0.0, 1.0, 2.0};
    flat.states = Eigen::MatrixXd::Constant(3, 2, 0.5);
    const auto f = fit_norm_stats(flat);
    CHECK(f.range()[0] == kRangeEpsilon);
    CHECK(normalize(Eigen::Vector2d(0.5, 0.5), f).isZero());
  }

  TEST_CASE("zero weights give a zero field") {
    const MlpField f(MlpParams::zeros({3, 8, 8, 3}), stats3());
    CHECK(f.eval(Eigen::Vector3d(0.3, 1.2, 2.0)).isZero());
  }

  TEST_CASE("field output scales with the species range") {
    const auto p = MlpParams::init(3, 9);
    auto s = stats3();
    const Eigen::Vector3d u(0.2, 0.4, 0.6);
    const Eigen::VectorXd a = MlpField(p, s).eval(denormalize(u, s));
    s.y_max[1] = s.y_min[1] + 2.0 * (s.y_max[1] - s.y_min[1]);
    const Eigen::VectorXd b = MlpField(p, s).eval(denormalize(u, s));
    CHECK(b[1] == doctest::Approx(2.0 * a[1]).epsilon(1e-12));
    CHECK(b[0] == doctest::Approx(a[0]).epsilon(1e-12));
    const auto s0 = stats3();
    CHECK(a.isApprox(mlp_forward(p, u).cwiseProduct(s0.range()) / s0.t_scale, 1e-12));
  }

  TEST_CASE("field is finite and bounded by the weight norms") {
    const auto p = MlpParams::init(3, 21, {16, 16});
    const auto s = stats3();
    const MlpField f(p, s);
    double lip = 1.0;
    for (std::size_t l = 0; l < p.n_layers(); ++l) lip *= spectral_norm(p.weight(l));
    lip *= s.range().maxCoeff() / s.t_scale * s.range().cwiseInverse().maxCoeff();
    std::mt19937_64 rng(2);
    for (int i = 0; i < 100; ++i) {
      const Eigen::VectorXd a = oracle::random_positive(rng, 3), b = oracle::random_positive(rng, 3);
      const Eigen::VectorXd fa = f.eval(a), fb = f.eval(b);
      CHECK(fa.allFinite());
      CHECK((fa - fb).norm() <= lip * (a - b).norm() * (1.0 + 1e-12));
    }
  }

  TEST_CASE("parameter layout") {
    const auto p = MlpParams::init(3, 1, {5});
    CHECK(p.theta.size() == (3 + 1) * 5 + (5 + 1) * 3);
    CHECK(p.bias(0).isZero());
    CHECK(p.weight(0).rows() == 5);
    CHECK(p.weight(0).cols() == 3);
    CHECK(MlpParams::init(3, 1).theta == MlpParams::init(3, 1).theta);
    CHECK(MlpParams::init(3, 1).theta != MlpParams::init(3, 2).theta);
    CHECK(MlpParams::init(3, 1, {4}, Activation::tanh, 1).layers.front() == 4);
  }

  TEST_CASE("analytic Jacobian and vector-Jacobian products") {
    for (Activation act : {Activation::tanh, Activation::softplus}) {
      for (bool clock : {false, true}) {
        CAPTURE(to_string(act));
        CAPTURE(clock);
        const auto p = MlpParams::init(3, 5, {7, 6}, act, clock ? 1 : 0);
        const MlpField f(p, stats3(), clock ? std::optional<double>(10.0) : std::nullopt);
        const Eigen::Index n = f.dimension();
        CHECK(n == (clock ? 4 : 3));
        Eigen::VectorXd y(n);
        y.head(3) = Eigen::Vector3d(0.4, 1.3, 0.1);
        if (clock) y[3] = 0.35;
        const Eigen::MatrixXd jac = f.jacobian(y);
        const auto fd = oracle::fd_jacobian([&](const Eigen::VectorXd& x) { return f.eval(x); }, y);
        CHECK(oracle::max_rel_error(jac.reshaped(), fd.reshaped(), 1e-9) <= 1e-6);
        if (clock) {
          CHECK(f.eval(y)[3] == doctest::Approx(0.1));
          CHECK(jac.row(3).isZero());
        }
        const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(n, -1.0, 2.0);
        Eigen::VectorXd ya, pa = Eigen::VectorXd::Zero(f.n_params());
        f.vjp(y, v, &ya, pa);
        CHECK(oracle::max_rel_error(ya, jac.transpose() * v, 1e-12) <= 1e-9);
        const auto dot = [&](const Eigen::VectorXd& th) {
          MlpParams q = p;
          q.theta = th;
          return MlpField(q, stats3(), f.log_span()).eval(y).dot(v);
        };
        CHECK(oracle::max_rel_error(pa, oracle::fd_gradient(dot, p.theta), 1e-9) <= 1e-5);
      }
    }
  }

  TEST_CASE("width mismatches are rejected") {
    CHECK_THROWS_AS(MlpField(MlpParams::init(2, 1), stats3()), std::invalid_argument);
    CHECK_THROWS_AS(MlpField(MlpParams::init(3, 1), stats3(), 2.0), std::invalid_argument);
  }

  TEST_CASE("CRNN field wraps the kinetic model") {
    const auto s = load_scheme(oracle::data_path("robertson.mech"));
    const CrnnParams p = CrnnParams::truth(s);
    const CrnnField f(s, p.log_k);
    const Eigen::Vector3d y(0.5, 1e-5, 0.3);
    CHECK(f.eval(y).isApprox(crnn_rhs(s, y, p), 1e-14));
    CHECK(f.newton_jacobian(y).isApprox(jacobian(s, y, s.true_coefficients()), 1e-12));
    CHECK(f.n_params() == 3);
  }

  TEST_CASE("checkpoints round trip") {
    Checkpoint c;
    c.kind = Checkpoint::Kind::mlp;
    c.seed = 77;
    c.stage = "stage1";
    c.stats = stats3();
    c.mlp = MlpParams::init(3, 3, {4}, Activation::softplus, 1);
    c.log_span = 10.0;
    const auto back = checkpoint_from_json(checkpoint_to_json(c));
    CHECK(back.kind == Checkpoint::Kind::mlp);
    CHECK(back.seed == 77);
    CHECK(back.mlp.theta == c.mlp.theta);
    CHECK(back.mlp.layers == c.mlp.layers);
    CHECK(back.mlp.activation == Activation::softplus);
    CHECK(back.stats.y_max == c.stats.y_max);
    CHECK(back.log_span == 10.0);

    const auto s = load_scheme(oracle::data_path("pollu.mech"));
    Checkpoint k;
    k.crnn = CrnnParams::truth(s);
    for (const auto& r : s.reactions) k.reaction_ids.push_back(r.id);
    const auto kb = checkpoint_from_json(checkpoint_to_json(k));
    CHECK(kb.crnn.log_k == k.crnn.log_k);
    CHECK(kb.crnn.frozen_mask == k.crnn.frozen_mask);

    CHECK_THROWS_AS(checkpoint_from_json("{}"), std::invalid_argument);
    CHECK_THROWS_AS(checkpoint_from_json("not json"), std::invalid_argument);
    CHECK_THROWS_AS(checkpoint_from_json(R"({"format":"stiffkin-checkpoint","version":99})"), std::invalid_argument);
  }
}
