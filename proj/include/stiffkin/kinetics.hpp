#pragma once

#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "stiffkin/scheme.hpp"

namespace stiffkin {

/// Concentrations are clamped here before taking logarithms.
inline constexpr double kLogClampFloor = 1e-30;

/// Trainable natural-log rate coefficients, one per reaction.
struct CrnnParams {
  Eigen::VectorXd log_k;
  std::vector<bool> frozen_mask;

  static CrnnParams from_coefficients(const Eigen::VectorXd& k, std::vector<bool> frozen);
  static CrnnParams truth(const ReactionScheme& scheme);
  Eigen::VectorXd coefficients() const { return log_k.array().exp(); }
  std::size_t size() const { return static_cast<std::size_t>(log_k.size()); }
};

/// Precomputed view of a scheme for repeated rate evaluation. All member
/// functions are const and reentrant.
class KineticModel {
 public:
  explicit KineticModel(const ReactionScheme& scheme);

  Eigen::Index n_species() const { return n_species_; }
  Eigen::Index n_reactions() const { return static_cast<Eigen::Index>(reactants_.size()); }
  const Eigen::MatrixXd& stoichiometry() const { return net_; }
  const Eigen::MatrixXd& forward() const { return forward_; }
  const std::vector<std::size_t>& ro2_pool() const { return ro2_pool_; }
  bool ro2_scaled(Eigen::Index reaction) const { return ro2_scaled_[static_cast<std::size_t>(reaction)]; }

  /// Sum of the RO2 pool concentrations (negative entries count as 0).
  double ro2_sum(const Eigen::Ref<const Eigen::VectorXd>& y) const;

  Eigen::VectorXd rates(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::VectorXd>& k) const;
  Eigen::VectorXd rhs(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::VectorXd>& k) const;
  Eigen::MatrixXd rate_jacobian(const Eigen::Ref<const Eigen::VectorXd>& y,
                                const Eigen::Ref<const Eigen::VectorXd>& k) const;
  Eigen::MatrixXd jacobian(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::VectorXd>& k) const;

  Eigen::VectorXd crnn_rates(const Eigen::Ref<const Eigen::VectorXd>& y,
                             const Eigen::Ref<const Eigen::VectorXd>& log_k) const;
  Eigen::VectorXd crnn_rhs(const Eigen::Ref<const Eigen::VectorXd>& y,
                           const Eigen::Ref<const Eigen::VectorXd>& log_k) const;
  /// Exact Jacobian of crnn_rhs, including the zero slope below the clamp floor.
  Eigen::MatrixXd crnn_jacobian(const Eigen::Ref<const Eigen::VectorXd>& y,
                                const Eigen::Ref<const Eigen::VectorXd>& log_k) const;

  /// Cotangent v of crnn_rhs pulled back onto (y, log_k).
  std::pair<Eigen::VectorXd, Eigen::VectorXd> crnn_vjp(const Eigen::Ref<const Eigen::VectorXd>& y,
                                                       const Eigen::Ref<const Eigen::VectorXd>& log_k,
                                                       const Eigen::Ref<const Eigen::VectorXd>& v) const;

 private:
  Eigen::MatrixXd crnn_rate_jacobian(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::VectorXd& r) const;

  Eigen::Index n_species_ = 0;
  std::vector<std::vector<std::pair<Eigen::Index, int>>> reactants_;
  std::vector<bool> ro2_scaled_;
  std::vector<std::size_t> ro2_pool_;
  Eigen::MatrixXd net_;
  Eigen::MatrixXd forward_;
};

Eigen::VectorXd reaction_rates(const ReactionScheme& scheme, const Eigen::VectorXd& y, const Eigen::VectorXd& k);
Eigen::VectorXd rhs(const ReactionScheme& scheme, const Eigen::VectorXd& y, const Eigen::VectorXd& k);
Eigen::MatrixXd jacobian(const ReactionScheme& scheme, const Eigen::VectorXd& y, const Eigen::VectorXd& k);
Eigen::VectorXd crnn_rates(const ReactionScheme& scheme, const Eigen::VectorXd& y, const CrnnParams& params);
Eigen::VectorXd crnn_rhs(const ReactionScheme& scheme, const Eigen::VectorXd& y, const CrnnParams& params);

/// max|Re λ| / min|Re λ| over the eigenvalues of `jac`; empty when the
/// smallest magnitude falls below rel_eps * max|Re λ| ("undefined").
std::optional<double> stiffness_ratio(const Eigen::MatrixXd& jac, double rel_eps = 1e-12);
std::optional<double> stiffness_ratio(const ReactionScheme& scheme, const Eigen::VectorXd& y, const Eigen::VectorXd& k,
                                      double rel_eps = 1e-12);

}  // namespace stiffkin
