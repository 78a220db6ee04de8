#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace stiffkin {

/// Raised for any malformed or inconsistent mechanism. `line()` is the
/// 1-based line of the offending text, or 0 when the problem is global.
class SchemeError : public std::runtime_error {
 public:
  SchemeError(const std::string& what, std::size_t line = 0);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct Species {
  std::string name;
  std::size_t index = 0;

  bool operator==(const Species&) const = default;
};

/// One irreversible mass-action reaction. Stoichiometry maps species
/// index to an integer count.
struct Reaction {
  std::size_t id = 0;
  std::map<std::size_t, int> forward_stoich;
  std::map<std::size_t, int> reverse_stoich;
  double rate_coefficient = 0.0;
  bool ro2_scaled = false;
  bool frozen = false;

  bool operator==(const Reaction&) const = default;
};

enum class GridKind { log, linear };

struct TimeGridSpec {
  GridKind kind = GridKind::linear;
  double t_start = 0.0;
  double t_end = 1.0;
  std::size_t n_points = 2;

  std::vector<double> times() const;
  void validate_or_throw() const;
  bool operator==(const TimeGridSpec&) const = default;
};

struct ReactionScheme {
  std::vector<Species> species;
  std::vector<Reaction> reactions;
  std::vector<std::size_t> ro2_pool;  // sorted species indices
  std::vector<double> initial_concentrations;
  TimeGridSpec time_grid;

  std::size_t n_species() const { return species.size(); }
  std::size_t n_reactions() const { return reactions.size(); }
  std::size_t species_index(std::string_view name) const;
  std::vector<std::string> species_names() const;
  Eigen::VectorXd true_coefficients() const;
  std::vector<bool> frozen_mask() const;
  std::size_t n_trainable() const;

  /// Throws SchemeError if any structural invariant is violated.
  void validate() const;

  bool operator==(const ReactionScheme&) const = default;
};

ReactionScheme parse_scheme(std::string_view text);
ReactionScheme load_scheme(const std::string& path);
std::string serialize_scheme(const ReactionScheme& scheme);

/// Net stoichiometric matrix, rows are species and columns reactions:
/// entry (j, i) = s_r(i, j) - s_f(i, j).
Eigen::MatrixXi net_stoichiometry(const ReactionScheme& scheme);

/// Forward (reactant) stoichiometry, rows are reactions.
Eigen::MatrixXd forward_stoichiometry(const ReactionScheme& scheme);

}  // namespace stiffkin
