#include "stiffkin/kinetics.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

namespace stiffkin {

namespace {

double int_pow(double x, int n) {
  double out = 1.0;
  for (int i = 0; i < n; ++i) out *= x;
  return out;
}

}  // namespace

CrnnParams CrnnParams::from_coefficients(const Eigen::VectorXd& k, std::vector<bool> frozen) {
  CrnnParams p;
  p.log_k = k.array().log();
  p.frozen_mask = std::move(frozen);
  if (p.frozen_mask.empty()) p.frozen_mask.assign(static_cast<std::size_t>(k.size()), false);
  return p;
}

CrnnParams CrnnParams::truth(const ReactionScheme& scheme) {
  return from_coefficients(scheme.true_coefficients(), scheme.frozen_mask());
}

KineticModel::KineticModel(const ReactionScheme& scheme)
    : n_species_(static_cast<Eigen::Index>(scheme.n_species())),
      ro2_pool_(scheme.ro2_pool),
      net_(net_stoichiometry(scheme).cast<double>()),
      forward_(forward_stoichiometry(scheme)) {
  reactants_.reserve(scheme.n_reactions());
  for (const auto& r : scheme.reactions) {
    std::vector<std::pair<Eigen::Index, int>> terms;
    for (const auto& [j, c] : r.forward_stoich)
      if (c > 0) terms.emplace_back(static_cast<Eigen::Index>(j), c);
    reactants_.push_back(std::move(terms));
    ro2_scaled_.push_back(r.ro2_scaled);
  }
}

double KineticModel::ro2_sum(const Eigen::Ref<const Eigen::VectorXd>& y) const {
  double s = 0.0;
  for (auto p : ro2_pool_) s += std::max(y[static_cast<Eigen::Index>(p)], 0.0);
  return s;
}

Eigen::VectorXd KineticModel::rates(const Eigen::Ref<const Eigen::VectorXd>& y,
                                    const Eigen::Ref<const Eigen::VectorXd>& k) const {
  const double pool = ro2_sum(y);
  Eigen::VectorXd r(n_reactions());
  for (Eigen::Index i = 0; i < n_reactions(); ++i) {
    double v = k[i];
    for (const auto& [j, c] : reactants_[static_cast<std::size_t>(i)]) v *= int_pow(std::max(y[j], 0.0), c);
    if (ro2_scaled_[static_cast<std::size_t>(i)]) v *= pool;
    r[i] = v;
  }
  return r;
}

Eigen::VectorXd KineticModel::rhs(const Eigen::Ref<const Eigen::VectorXd>& y,
                                  const Eigen::Ref<const Eigen::VectorXd>& k) const {
  return net_ * rates(y, k);
}

Eigen::MatrixXd KineticModel::rate_jacobian(const Eigen::Ref<const Eigen::VectorXd>& y,
                                            const Eigen::Ref<const Eigen::VectorXd>& k) const {
  const double pool = ro2_sum(y);
  Eigen::MatrixXd dr = Eigen::MatrixXd::Zero(n_reactions(), n_species_);
  for (Eigen::Index i = 0; i < n_reactions(); ++i) {
    const auto& terms = reactants_[static_cast<std::size_t>(i)];
    const bool scaled = ro2_scaled_[static_cast<std::size_t>(i)];
    double product = k[i];
    for (const auto& [j, c] : terms) product *= int_pow(std::max(y[j], 0.0), c);
    for (std::size_t a = 0; a < terms.size(); ++a) {
      const auto [j, c] = terms[a];
      if (y[j] < 0.0) continue;
      double d = k[i] * c * int_pow(y[j], c - 1);
      for (std::size_t b = 0; b < terms.size(); ++b)
        if (b != a) d *= int_pow(std::max(y[terms[b].first], 0.0), terms[b].second);
      dr(i, j) += scaled ? d * pool : d;
    }
    if (scaled) {
      for (auto p : ro2_pool_) {
        const auto jp = static_cast<Eigen::Index>(p);
        if (y[jp] >= 0.0) dr(i, jp) += product;
      }
    }
  }
  return dr;
}

Eigen::MatrixXd KineticModel::jacobian(const Eigen::Ref<const Eigen::VectorXd>& y,
                                       const Eigen::Ref<const Eigen::VectorXd>& k) const {
  return net_ * rate_jacobian(y, k);
}

Eigen::VectorXd KineticModel::crnn_rates(const Eigen::Ref<const Eigen::VectorXd>& y,
                                         const Eigen::Ref<const Eigen::VectorXd>& log_k) const {
  const double log_pool = std::log(std::max(ro2_sum(y), kLogClampFloor));
  Eigen::VectorXd r(n_reactions());
  for (Eigen::Index i = 0; i < n_reactions(); ++i) {
    double z = log_k[i];
    for (const auto& [j, c] : reactants_[static_cast<std::size_t>(i)]) z += c * std::log(std::max(y[j], kLogClampFloor));
    if (ro2_scaled_[static_cast<std::size_t>(i)]) z += log_pool;
    r[i] = std::exp(z);
  }
  return r;
}

Eigen::VectorXd KineticModel::crnn_rhs(const Eigen::Ref<const Eigen::VectorXd>& y,
                                       const Eigen::Ref<const Eigen::VectorXd>& log_k) const {
  return net_ * crnn_rates(y, log_k);
}

Eigen::MatrixXd KineticModel::crnn_rate_jacobian(const Eigen::Ref<const Eigen::VectorXd>& y,
                                                 const Eigen::VectorXd& r) const {
  const double pool = ro2_sum(y);
  Eigen::MatrixXd dr = Eigen::MatrixXd::Zero(n_reactions(), n_species_);
  for (Eigen::Index i = 0; i < n_reactions(); ++i) {
    for (const auto& [j, c] : reactants_[static_cast<std::size_t>(i)])
      if (y[j] > kLogClampFloor) dr(i, j) += r[i] * c / y[j];
    if (ro2_scaled_[static_cast<std::size_t>(i)] && pool > kLogClampFloor) {
      for (auto p : ro2_pool_) {
        const auto jp = static_cast<Eigen::Index>(p);
        if (y[jp] > 0.0) dr(i, jp) += r[i] / pool;
      }
    }
  }
  return dr;
}

Eigen::MatrixXd KineticModel::crnn_jacobian(const Eigen::Ref<const Eigen::VectorXd>& y,
                                            const Eigen::Ref<const Eigen::VectorXd>& log_k) const {
  return net_ * crnn_rate_jacobian(y, crnn_rates(y, log_k));
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> KineticModel::crnn_vjp(const Eigen::Ref<const Eigen::VectorXd>& y,
                                                                   const Eigen::Ref<const Eigen::VectorXd>& log_k,
                                                                   const Eigen::Ref<const Eigen::VectorXd>& v) const {
  const Eigen::VectorXd r = crnn_rates(y, log_k);
  const Eigen::VectorXd rate_adj = net_.transpose() * v;
  Eigen::VectorXd log_k_adj = rate_adj.cwiseProduct(r);
  Eigen::VectorXd y_adj = crnn_rate_jacobian(y, r).transpose() * rate_adj;
  return {std::move(y_adj), std::move(log_k_adj)};
}

Eigen::VectorXd reaction_rates(const ReactionScheme& scheme, const Eigen::VectorXd& y, const Eigen::VectorXd& k) {
  return KineticModel(scheme).rates(y, k);
}

Eigen::VectorXd rhs(const ReactionScheme& scheme, const Eigen::VectorXd& y, const Eigen::VectorXd& k) {
  return KineticModel(scheme).rhs(y, k);
}

Eigen::MatrixXd jacobian(const ReactionScheme& scheme, const Eigen::VectorXd& y, const Eigen::VectorXd& k) {
  return KineticModel(scheme).jacobian(y, k);
}

Eigen::VectorXd crnn_rates(const ReactionScheme& scheme, const Eigen::VectorXd& y, const CrnnParams& params) {
  return KineticModel(scheme).crnn_rates(y, params.log_k);
}

Eigen::VectorXd crnn_rhs(const ReactionScheme& scheme, const Eigen::VectorXd& y, const CrnnParams& params) {
  return KineticModel(scheme).crnn_rhs(y, params.log_k);
}

std::optional<double> stiffness_ratio(const Eigen::MatrixXd& jac, double rel_eps) {
  if (jac.size() == 0) return std::nullopt;
  const Eigen::VectorXcd eig = Eigen::EigenSolver<Eigen::MatrixXd>(jac, false).eigenvalues();
  const Eigen::ArrayXd re = eig.real().cwiseAbs();
  const double hi = re.maxCoeff();
  const double lo = re.minCoeff();
  if (!(hi > 0.0) || lo < rel_eps * hi) return std::nullopt;
  return hi / lo;
}

std::optional<double> stiffness_ratio(const ReactionScheme& scheme, const Eigen::VectorXd& y, const Eigen::VectorXd& k,
                                      double rel_eps) {
  return stiffness_ratio(jacobian(scheme, y, k), rel_eps);
}

}  // namespace stiffkin
