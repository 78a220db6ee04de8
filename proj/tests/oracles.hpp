#pragma once

// Independent reference implementations used only by the tests.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stiffkin/scheme.hpp"
#include "stiffkin/solver.hpp"

namespace oracle {

inline std::string data_path(const std::string& name) { return std::string(STIFFKIN_DATA_DIR) + "/" + name; }

/// Mass-action rates straight from the stoichiometry maps.
inline Eigen::VectorXd rates(const stiffkin::ReactionScheme& s, const Eigen::VectorXd& y, const Eigen::VectorXd& k) {
  Eigen::VectorXd r(static_cast<Eigen::Index>(s.n_reactions()));
  double pool = 0.0;
  for (std::size_t j : s.ro2_pool) pool += std::max(0.0, y[static_cast<Eigen::Index>(j)]);
  for (std::size_t i = 0; i < s.n_reactions(); ++i) {
    const auto& rx = s.reactions[i];
    double v = k[static_cast<Eigen::Index>(i)];
    for (const auto& [j, c] : rx.forward_stoich) v *= std::pow(y[static_cast<Eigen::Index>(j)], c);
    if (rx.ro2_scaled) v *= pool;
    r[static_cast<Eigen::Index>(i)] = v;
  }
  return r;
}

inline Eigen::VectorXd rhs(const stiffkin::ReactionScheme& s, const Eigen::VectorXd& y, const Eigen::VectorXd& k) {
  const Eigen::VectorXd r = rates(s, y, k);
  Eigen::VectorXd dy = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.n_species()));
  for (std::size_t i = 0; i < s.n_reactions(); ++i) {
    for (const auto& [j, c] : s.reactions[i].forward_stoich) dy[static_cast<Eigen::Index>(j)] -= c * r[static_cast<Eigen::Index>(i)];
    for (const auto& [j, c] : s.reactions[i].reverse_stoich) dy[static_cast<Eigen::Index>(j)] += c * r[static_cast<Eigen::Index>(i)];
  }
  return dy;
}

/// Σ |c| r per species: the size of the terms that cancel inside rhs.
inline Eigen::VectorXd rhs_magnitude(const stiffkin::ReactionScheme& s, const Eigen::VectorXd& y, const Eigen::VectorXd& k) {
  const Eigen::VectorXd r = rates(s, y, k).cwiseAbs();
  Eigen::VectorXd m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.n_species()));
  for (std::size_t i = 0; i < s.n_reactions(); ++i) {
    for (const auto& [j, c] : s.reactions[i].forward_stoich) m[static_cast<Eigen::Index>(j)] += c * r[static_cast<Eigen::Index>(i)];
    for (const auto& [j, c] : s.reactions[i].reverse_stoich) m[static_cast<Eigen::Index>(j)] += c * r[static_cast<Eigen::Index>(i)];
  }
  return m;
}

using Field = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Central differences of a vector function, step h·max(1, |x_j|).
inline Eigen::MatrixXd fd_jacobian(const Field& f, const Eigen::VectorXd& x, double h = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd jac(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double step = h * std::max(1.0, std::abs(x[j]));
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += step;
    xm[j] -= step;
    jac.col(j) = (f(xp) - f(xm)) / (2.0 * step);
  }
  return jac;
}

inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                   double h = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double step = h * std::max(1.0, std::abs(x[j]));
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += step;
    xm[j] -= step;
    g[j] = (f(xp) - f(xm)) / (2.0 * step);
  }
  return g;
}

/// Largest relative discrepancy, skipping coordinates where both are tiny.
inline double max_rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-12) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max(std::abs(a[i]), std::abs(b[i]));
    if (scale < floor) continue;
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

/// Largest |a - b| relative to a per-entry scale.
inline double max_scaled_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& scale,
                               double floor = 1e-300) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (scale[i] > floor) worst = std::max(worst, std::abs(a[i] - b[i]) / scale[i]);
  return worst;
}

/// Matrix discrepancy relative to the largest entry of each row, which sets
/// the round-off level of a difference quotient for that row.
inline double max_row_scaled_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double floor = 1e-300) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double scale = std::max(a.row(i).cwiseAbs().maxCoeff(), b.row(i).cwiseAbs().maxCoeff());
    if (scale > floor) worst = std::max(worst, (a.row(i) - b.row(i)).cwiseAbs().maxCoeff() / scale);
  }
  return worst;
}

/// Two-stage L-stable Rosenbrock method (ROS2, γ = 1 + 1/√2) on a fixed
/// step, with Richardson extrapolation of the h and h/2 solutions.
struct Ros2Oracle {
  Field f;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jac;

  Eigen::VectorXd step(const Eigen::VectorXd& y, double h) const {
    const double gamma = 1.0 + 1.0 / std::sqrt(2.0);
    const Eigen::Index n = y.size();
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(n, n) - gamma * h * jac(y));
    const Eigen::VectorXd k1 = lu.solve(f(y));
    const Eigen::VectorXd k2 = lu.solve(f(y + h * k1) - 2.0 * k1);
    return y + 1.5 * h * k1 + 0.5 * h * k2;
  }

  Eigen::VectorXd advance(Eigen::VectorXd y, double a, double b, int n) const {
    const double h = (b - a) / n;
    for (int i = 0; i < n; ++i) y = step(y, h);
    return y;
  }

  /// Samples at `times` (times[0] is the initial time) with `n` substeps
  /// per output interval.
  Eigen::MatrixXd solve(const Eigen::VectorXd& y0, const std::vector<double>& times, int n) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(times.size()), y0.size());
    out.row(0) = y0.transpose();
    Eigen::VectorXd y = y0;
    for (std::size_t i = 1; i < times.size(); ++i) {
      const Eigen::VectorXd coarse = advance(y, times[i - 1], times[i], n);
      const Eigen::VectorXd fine = advance(y, times[i - 1], times[i], 2 * n);
      y = fine + (fine - coarse) / 3.0;
      out.row(static_cast<Eigen::Index>(i)) = y.transpose();
    }
    return out;
  }
};

/// y' = -k y elementwise with k as the single parameter.
class DecayField : public stiffkin::VectorField {
 public:
  DecayField(Eigen::Index n, double k) : n_(n), k_(k) {}
  Eigen::Index dimension() const override { return n_; }
  Eigen::Index n_params() const override { return 1; }
  Eigen::VectorXd eval(const Eigen::VectorXd& y) const override { return -k_ * y; }
  Eigen::MatrixXd jacobian(const Eigen::VectorXd&) const override {
    return -k_ * Eigen::MatrixXd::Identity(n_, n_);
  }
  void vjp(const Eigen::VectorXd& y, const Eigen::VectorXd& v, Eigen::VectorXd* y_adj,
           Eigen::VectorXd& p_adj) const override {
    if (y_adj) *y_adj = -k_ * v;
    p_adj[0] += -y.dot(v);
  }

 private:
  Eigen::Index n_;
  double k_;
};

/// Random valid scheme: 2-6 species, 1-8 reactions, occasional doubled
/// reactants and RO2-scaled reactions.
inline stiffkin::ReactionScheme random_scheme(std::mt19937_64& rng, bool allow_ro2 = true) {
  std::uniform_int_distribution<int> n_sp(2, 6), n_rx(1, 8), coin(0, 3);
  std::uniform_real_distribution<double> log_k(-2.0, 2.0);
  stiffkin::ReactionScheme s;
  const int ns = n_sp(rng);
  for (int j = 0; j < ns; ++j) s.species.push_back({"S" + std::to_string(j), static_cast<std::size_t>(j)});
  std::uniform_int_distribution<int> pick(0, ns - 1);
  const bool ro2 = allow_ro2 && coin(rng) != 0;
  if (ro2) {
    s.ro2_pool.push_back(0);
    if (ns > 2) s.ro2_pool.push_back(2);
  }
  const int nr = n_rx(rng);
  for (int i = 0; i < nr; ++i) {
    stiffkin::Reaction r;
    r.id = static_cast<std::size_t>(i + 1);
    const int a = pick(rng);
    r.forward_stoich[static_cast<std::size_t>(a)] = coin(rng) == 0 ? 2 : 1;
    if (coin(rng) < 2) r.forward_stoich[static_cast<std::size_t>(pick(rng))] += 1;
    r.reverse_stoich[static_cast<std::size_t>(pick(rng))] = coin(rng) == 0 ? 2 : 1;
    r.rate_coefficient = std::pow(10.0, log_k(rng));
    r.ro2_scaled = ro2 && coin(rng) == 0;
    s.reactions.push_back(r);
  }
  s.initial_concentrations.assign(static_cast<std::size_t>(ns), 0.5);
  s.time_grid = {stiffkin::GridKind::linear, 0.0, 1.0, 11};
  s.validate();
  return s;
}

inline Eigen::VectorXd random_positive(std::mt19937_64& rng, Eigen::Index n, double lo = 1e-3, double hi = 2.0) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = std::exp(u(rng));
  return y;
}

}  // namespace oracle
