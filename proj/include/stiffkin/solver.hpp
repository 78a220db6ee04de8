#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "stiffkin/scheme.hpp"

namespace stiffkin {

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StepLimitExceeded : public SolverError {
 public:
  using SolverError::SolverError;
};

class NewtonDivergence : public SolverError {
 public:
  using SolverError::SolverError;
};

class NonFiniteState : public SolverError {
 public:
  using SolverError::SolverError;
};

struct SolverConfig {
  double rtol = 1e-6;
  double atol = 1e-9;
  std::size_t max_steps = 100000;
  double newton_tol = 1e-10;
  int newton_max_iters = 10;
  std::optional<double> initial_step;  // nullopt selects the step automatically
  bool clamp_nonnegative = false;
  // Backward pass re-solves stages from stored step states instead of
  // keeping every stage in memory.
  bool recompute_stages = false;

  static SolverConfig training() { return {}; }
  static SolverConfig data_generation();
  void validate() const;
};

/// Autonomous vector field dy/dt = f(y; p) with the derivative information
/// the implicit integrator and its adjoint need.
class VectorField {
 public:
  virtual ~VectorField() = default;

  virtual Eigen::Index dimension() const = 0;
  virtual Eigen::Index n_params() const { return 0; }
  virtual Eigen::VectorXd eval(const Eigen::VectorXd& y) const = 0;
  /// Exact ∂f/∂y.
  virtual Eigen::MatrixXd jacobian(const Eigen::VectorXd& y) const = 0;
  /// Iteration matrix source for Newton; defaults to the exact Jacobian.
  virtual Eigen::MatrixXd newton_jacobian(const Eigen::VectorXd& y) const { return jacobian(y); }
  /// Writes (∂f/∂y)ᵀ v to *y_adj when non-null and accumulates (∂f/∂p)ᵀ v
  /// into p_adj.
  virtual void vjp(const Eigen::VectorXd& y, const Eigen::VectorXd& v, Eigen::VectorXd* y_adj,
                   Eigen::VectorXd& p_adj) const;
};

enum class Provenance { observed, fitted, resampled };

const char* to_string(Provenance p);

struct Trajectory {
  std::vector<double> times;
  Eigen::MatrixXd states;  // n_times × n_species
  Provenance provenance = Provenance::observed;
  std::vector<std::string> species;

  std::size_t n_times() const { return times.size(); }
  Eigen::Index n_species() const { return states.cols(); }
  Eigen::VectorXd state(std::size_t i) const { return states.row(static_cast<Eigen::Index>(i)).transpose(); }
  /// Contiguous sub-trajectory [first, first + count).
  Trajectory slice(std::size_t first, std::size_t count) const;
  void validate() const;
};

struct SolverStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t newton_failures = 0;
  std::size_t clamped_steps = 0;
};

/// Everything the adjoint needs about one accepted step.
struct StepRecord {
  double t = 0.0;
  double h = 0.0;
  Eigen::VectorXd y;
  std::array<Eigen::VectorXd, 4> z;  // stage states (empty when recomputed)
  std::array<Eigen::VectorXd, 4> k;  // stage derivatives
  Eigen::VectorXd y_next;
  Eigen::ArrayXd keep;  // 1 where y_next = z[3], 0 where clamped to zero
};

struct OutputLocation {
  static constexpr std::size_t kInitial = static_cast<std::size_t>(-1);
  std::size_t step = kInitial;
  double theta = 0.0;
};

struct IntegrationRecord {
  std::vector<StepRecord> steps;
  std::vector<OutputLocation> outputs;
  bool stages_stored = true;

  std::vector<double> step_times() const;
};

struct IntegrationResult {
  Trajectory trajectory;
  IntegrationRecord record;
  SolverStats stats;
};

/// Adaptive third-order ESDIRK integration (4 stages, explicit first stage,
/// stiffly accurate, embedded second-order estimate) sampled at `times` by
/// cubic Hermite interpolation over accepted steps. times[0] is the
/// initial time.
IntegrationResult integrate(const VectorField& f, const Eigen::VectorXd& y0, std::span<const double> times,
                            const SolverConfig& cfg);

/// Same method without error control, stepping exactly through
/// `step_times` (which must start at times[0] and end at times.back()).
IntegrationResult integrate_on_steps(const VectorField& f, const Eigen::VectorXd& y0, std::span<const double> times,
                                     std::span<const double> step_times, const SolverConfig& cfg);

struct Sensitivity {
  Eigen::VectorXd y0;
  Eigen::VectorXd params;
};

/// Discrete adjoint of a recorded integration. `output_adjoint` has the
/// shape of the sampled trajectory. Step sizes are treated as constants.
Sensitivity integrate_adjoint(const VectorField& f, const IntegrationRecord& record,
                              const Eigen::MatrixXd& output_adjoint, const SolverConfig& cfg);

/// Mass-action field with fixed coefficients.
class MassActionField : public VectorField {
 public:
  MassActionField(const ReactionScheme& scheme, Eigen::VectorXd k);
  ~MassActionField() override;

  Eigen::Index dimension() const override;
  Eigen::VectorXd eval(const Eigen::VectorXd& y) const override;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& y) const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

Trajectory generate_dataset(const ReactionScheme& scheme,
                            const SolverConfig& cfg = SolverConfig::data_generation());

/// Keeps every factor-th sample plus the final one.
Trajectory downsample(const Trajectory& traj, std::size_t factor);

std::string trajectory_to_csv(const Trajectory& traj);
Trajectory trajectory_from_csv(const std::string& text);
void write_trajectory_csv(const Trajectory& traj, const std::string& path);
Trajectory read_trajectory_csv(const std::string& path);

}  // namespace stiffkin
