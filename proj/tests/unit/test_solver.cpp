#include <doctest.h>

#include "../oracles.hpp"
#include "stiffkin/kinetics.hpp"
#include "stiffkin/solver.hpp"

using namespace stiffkin;

namespace {

class ZeroField : public VectorField {
 public:
  Eigen::Index dimension() const override { return 3; }
  Eigen::VectorXd eval(const Eigen::VectorXd&) const override { return Eigen::VectorXd::Zero(3); }
  Eigen::MatrixXd jacobian(const Eigen::VectorXd&) const override { return Eigen::MatrixXd::Zero(3, 3); }
};

class NanField : public VectorField {
 public:
  Eigen::Index dimension() const override { return 1; }
  Eigen::VectorXd eval(const Eigen::VectorXd& y) const override {
    return Eigen::VectorXd::Constant(1, y[0] > 1.5 ? std::nan("") : 1.0);
  }
  Eigen::MatrixXd jacobian(const Eigen::VectorXd&) const override { return Eigen::MatrixXd::Zero(1, 1); }
};

double decay_error(double rtol) {
  const oracle::DecayField f(1, 1.0);
  SolverConfig cfg;
  cfg.rtol = rtol;
  cfg.atol = rtol * 1e-3;
  const std::vector<double> t{0.0, 1.0};
  const auto r = integrate(f, Eigen::VectorXd::Ones(1), t, cfg);
  return std::abs(r.trajectory.states(1, 0) - std::exp(-1.0));
}

}  // namespace

TEST_SUITE("solver") {
  TEST_CASE("linear decay reaches e^-1") {
    const oracle::DecayField f(1, 1.0);
    const std::vector<double> t{0.0, 1.0};
    const auto r = integrate(f, Eigen::VectorXd::Ones(1), t, SolverConfig::training());
    CHECK(r.trajectory.states(1, 0) == doctest::Approx(0.367879).epsilon(1e-5));
  }

  TEST_CASE("error falls at least tenfold per hundredfold tolerance cut") {
    const double e1 = decay_error(1e-4), e2 = decay_error(1e-6), e3 = decay_error(1e-8);
    CHECK(e2 * 10.0 <= e1);
    CHECK(e3 * 10.0 <= e2);
  }

  TEST_CASE("zero field keeps the initial state") {
    const ZeroField f;
    const Eigen::VectorXd y0 = (Eigen::VectorXd(3) << 1, 2, 3).finished();
    const std::vector<double> t{0.0, 0.5, 1.0, 7.0};
    const auto r = integrate(f, y0, t, SolverConfig::training());
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(r.trajectory.states.row(i) == y0.transpose());
  }

  TEST_CASE("Robertson agrees with the Rosenbrock oracle") {
    const auto s = load_scheme(oracle::data_path("robertson.mech"));
    const auto k = s.true_coefficients();
    const auto times = s.time_grid.times();
    const oracle::Ros2Oracle ref{[&](const Eigen::VectorXd& y) { return oracle::rhs(s, y, k); },
                                 [&](const Eigen::VectorXd& y) {
                                   return oracle::fd_jacobian(
                                       [&](const Eigen::VectorXd& x) { return oracle::rhs(s, x, k); }, y, 1e-7);
                                 }};
    const Eigen::VectorXd y0 = (Eigen::VectorXd(3) << 1, 0, 0).finished();
    const Eigen::MatrixXd want = ref.solve(y0, times, 400);
    const auto cfg = SolverConfig::data_generation();
    const Trajectory got = generate_dataset(s, cfg);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < want.rows(); ++i)
      for (Eigen::Index j = 0; j < 3; ++j)
        if (std::abs(want(i, j)) > cfg.atol)
          worst = std::max(worst, std::abs(got.states(i, j) - want(i, j)) / std::abs(want(i, j)));
    CHECK(worst <= 1e-5);
  }

  TEST_CASE("Robertson dataset conserves mass and starts at the initial condition") {
    const auto s = load_scheme(oracle::data_path("robertson.mech"));
    const auto d = generate_dataset(s);
    CHECK(d.n_times() == 50);
    CHECK(d.n_species() == 3);
    CHECK(d.times.front() == doctest::Approx(1e-5));
    CHECK(d.states(0, 0) == doctest::Approx(1.0));
    CHECK((d.states.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-8);
    CHECK(d.provenance == Provenance::observed);
    CHECK(d.species == std::vector<std::string>{"A", "B", "C"});
  }

  TEST_CASE("POLLU and AOXID datasets") {
    const auto p = generate_dataset(load_scheme(oracle::data_path("pollu.mech")));
    CHECK(p.n_times() == 100);
    CHECK(p.times.front() == 0.0);
    CHECK(p.times.back() == doctest::Approx(0.1));
    const double dt = p.times[1] - p.times[0];
    for (std::size_t i = 1; i < p.n_times(); ++i) CHECK(p.times[i] - p.times[i - 1] == doctest::Approx(dt));
    CHECK(p.states.allFinite());
    CHECK(p.states.minCoeff() >= 0.0);
    const auto aox = load_scheme(oracle::data_path("aoxid.mech"));
    const auto a = generate_dataset(aox);
    CHECK(a.states(0, static_cast<Eigen::Index>(aox.species_index("TOY"))) == 3.10e11);
    CHECK(a.states.minCoeff() >= 0.0);
  }

  TEST_CASE("conserved combinations stay constant on fuzzed schemes") {
    // A <-> B cycles conserve A + B; the extra species only catalyses.
    const auto s = parse_scheme(
        "@species A B C\n@init A=0.7 B=0.3 C=0.2\n@tspan linear 0 10 21\n"
        "R1: A = B : 3\nR2: B + C = A + C : 50\nR3: 2 A = A + B : 0.5\n");
    const auto d = generate_dataset(s);
    const Eigen::VectorXd total = d.states.col(0) + d.states.col(1);
    CHECK((total.array() - 1.0).abs().maxCoeff() <= 1e-8);
    CHECK((d.states.col(2).array() - 0.2).abs().maxCoeff() <= 1e-12);
  }

  TEST_CASE("Robertson runs to 1e5 at training tolerance while explicit RK4 on the same budget blows up") {
    const auto s = load_scheme(oracle::data_path("robertson.mech"));
    const MassActionField f(s, s.true_coefficients());
    const Eigen::VectorXd y0 = (Eigen::VectorXd(3) << 1, 0, 0).finished();
    const std::vector<double> t{0.0, 1e5};
    const auto r = integrate(f, y0, t, SolverConfig::training());
    CHECK(r.trajectory.states.allFinite());
    const std::size_t budget = r.stats.accepted + r.stats.rejected;
    const double h = 1e5 / static_cast<double>(budget);
    Eigen::VectorXd y = y0;
    bool blew_up = false;
    for (std::size_t i = 0; i < budget && !blew_up; ++i) {
      const Eigen::VectorXd k1 = f.eval(y), k2 = f.eval(y + 0.5 * h * k1), k3 = f.eval(y + 0.5 * h * k2),
                            k4 = f.eval(y + h * k3);
      y += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
      blew_up = !y.allFinite() || y.cwiseAbs().maxCoeff() > 1e3;
    }
    CHECK(blew_up);
  }

  TEST_CASE("identical inputs give bit-identical trajectories") {
    const auto s = load_scheme(oracle::data_path("pollu.mech"));
    const auto a = generate_dataset(s, SolverConfig::training());
    const auto b = generate_dataset(s, SolverConfig::training());
    CHECK(a.states == b.states);
  }

  TEST_CASE("dense output stays between monotone step endpoints") {
    const oracle::DecayField f(1, 3.0);
    std::vector<double> t;
    for (int i = 0; i <= 200; ++i) t.push_back(i * 0.01);
    const auto r = integrate(f, Eigen::VectorXd::Ones(1), t, SolverConfig::training());
    const auto steps = r.record.step_times();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const auto it = std::upper_bound(steps.begin(), steps.end(), t[i]);
      if (it == steps.begin() || it == steps.end()) continue;
      const double lo = std::exp(-3.0 * *it), hi = std::exp(-3.0 * *(it - 1));
      const double y = r.trajectory.states(static_cast<Eigen::Index>(i), 0);
      CHECK(y >= lo - 1e-6);
      CHECK(y <= hi + 1e-6);
    }
  }

  TEST_CASE("step limit and non-finite states raise") {
    const auto s = load_scheme(oracle::data_path("robertson.mech"));
    const MassActionField f(s, s.true_coefficients());
    SolverConfig cfg;
    cfg.max_steps = 5;
    const std::vector<double> t{0.0, 1e5};
    CHECK_THROWS_AS(integrate(f, (Eigen::VectorXd(3) << 1, 0, 0).finished(), t, cfg), StepLimitExceeded);
    const NanField g;
    const std::vector<double> u{0.0, 2.0};
    CHECK_THROWS_AS(integrate(g, Eigen::VectorXd::Ones(1), u, SolverConfig::training()), NonFiniteState);
    const std::vector<double> bad{0.0, 0.0};
    CHECK_THROWS_AS(integrate(g, Eigen::VectorXd::Ones(1), bad, SolverConfig::training()), std::invalid_argument);
  }

  TEST_CASE("downsampling keeps both endpoints") {
    Trajectory t;
    for (int i = 0; i < 100; ++i) t.times.push_back(i);
    t.states = Eigen::VectorXd::LinSpaced(100, 0, 99);
    CHECK(downsample(t, 10).n_times() == 11);
    CHECK(downsample(t, 10).times.back() == 99);
    CHECK(downsample(t, 2).n_times() == 51);
    CHECK(downsample(t, 2).times[49] == 98);
    CHECK(downsample(t, 1).states == t.states);
    CHECK_THROWS_AS(downsample(t, 100), std::invalid_argument);
    CHECK_THROWS_AS(downsample(t, 0), std::invalid_argument);
  }

  TEST_CASE("trajectory CSV round trips exactly") {
    const auto d = generate_dataset(load_scheme(oracle::data_path("pollu.mech")));
    const auto back = trajectory_from_csv(trajectory_to_csv(d));
    CHECK(back.times == d.times);
    CHECK(back.states == d.states);
    CHECK(back.species == d.species);
    CHECK_THROWS_AS(trajectory_from_csv("x,A\n0,1\n"), std::invalid_argument);
    CHECK_THROWS_AS(trajectory_from_csv("t,A\n0,1,2\n1,2\n"), std::invalid_argument);
  }

  TEST_CASE("replayed integration on recorded steps matches") {
    const auto s = load_scheme(oracle::data_path("robertson.mech"));
    const MassActionField f(s, s.true_coefficients());
    const auto times = s.time_grid.times();
    const Eigen::VectorXd y0 = (Eigen::VectorXd(3) << 1, 0, 0).finished();
    const auto a = integrate(f, y0, times, SolverConfig::training());
    const auto steps = a.record.step_times();
    const auto b = integrate_on_steps(f, y0, times, steps, SolverConfig::training());
    // Step lengths are recovered as differences of step times, so agreement is to round-off only.
    CHECK((a.trajectory.states - b.trajectory.states).cwiseAbs().maxCoeff() <= 1e-10);
  }
}
