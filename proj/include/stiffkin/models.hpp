#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "stiffkin/kinetics.hpp"
#include "stiffkin/solver.hpp"

namespace stiffkin {

inline constexpr double kRangeEpsilon = 1e-30;

/// Species-wise min/max and the time scale of the observations.
struct NormStats {
  Eigen::VectorXd y_min;
  Eigen::VectorXd y_max;
  double t_scale = 1.0;

  /// y_max - y_min with degenerate entries replaced by kRangeEpsilon.
  Eigen::VectorXd range() const;
  void validate() const;
};

NormStats fit_norm_stats(const Trajectory& traj);
Eigen::VectorXd normalize(const Eigen::VectorXd& y, const NormStats& stats);
Eigen::VectorXd denormalize(const Eigen::VectorXd& u, const NormStats& stats);

enum class Activation { tanh, softplus };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Fully connected network stored as one flat parameter vector, layer by
/// layer: W (out × in, column-major) followed by b.
struct MlpParams {
  std::vector<int> layers;  // e.g. {n, 128, 128, n}
  Activation activation = Activation::tanh;
  Eigen::VectorXd theta;

  static std::size_t parameter_count(const std::vector<int>& layers);
  /// Glorot-uniform weights, zero biases.
  static MlpParams init(int n_species, std::uint64_t seed, std::vector<int> hidden = {128, 128},
                        Activation activation = Activation::tanh, int extra_inputs = 0);
  static MlpParams zeros(std::vector<int> layers, Activation activation = Activation::tanh);

  std::size_t n_layers() const { return layers.size() - 1; }
  Eigen::Map<const Eigen::MatrixXd> weight(std::size_t l) const;
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t l) const;
  Eigen::Map<Eigen::MatrixXd> weight(std::size_t l);
  Eigen::Map<Eigen::VectorXd> bias(std::size_t l);
  std::size_t offset(std::size_t l) const;
  void validate() const;
};

/// Raw network output for a normalized input.
Eigen::VectorXd mlp_forward(const MlpParams& params, const Eigen::VectorXd& u);

/// dy/dt = NN(normalize(y)) · range / t_scale. Parameters are the flat theta.
///
/// With `log_span` the field runs in s = log10 t instead: the state gains a
/// clock τ = (s - s0) / log_span fed to the network as an extra input, and
/// dy/ds = NN(normalize(y), τ) · range / log_span, dτ/ds = 1 / log_span.
class MlpField : public VectorField {
 public:
  MlpField(MlpParams params, NormStats stats, std::optional<double> log_span = std::nullopt);

  Eigen::Index dimension() const override;
  Eigen::Index n_params() const override;
  Eigen::VectorXd eval(const Eigen::VectorXd& y) const override;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& y) const override;
  void vjp(const Eigen::VectorXd& y, const Eigen::VectorXd& v, Eigen::VectorXd* y_adj,
           Eigen::VectorXd& p_adj) const override;

  const MlpParams& params() const { return params_; }
  const NormStats& stats() const { return stats_; }
  const std::optional<double>& log_span() const { return log_span_; }
  Eigen::Index n_species() const { return stats_.y_min.size(); }

 private:
  MlpParams params_;
  NormStats stats_;
  std::optional<double> log_span_;
  Eigen::VectorXd shift_;
  Eigen::VectorXd in_scale_;
  Eigen::VectorXd out_scale_;
};

Eigen::VectorXd mlp_field(const MlpParams& params, const NormStats& stats, const Eigen::VectorXd& y);

/// CRNN dynamics with log_k as parameters. Newton iterations use the
/// mass-action Jacobian, which stays informative below the log clamp floor.
class CrnnField : public VectorField {
 public:
  CrnnField(const ReactionScheme& scheme, Eigen::VectorXd log_k);

  Eigen::Index dimension() const override;
  Eigen::Index n_params() const override;
  Eigen::VectorXd eval(const Eigen::VectorXd& y) const override;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& y) const override;
  Eigen::MatrixXd newton_jacobian(const Eigen::VectorXd& y) const override;
  void vjp(const Eigen::VectorXd& y, const Eigen::VectorXd& v, Eigen::VectorXd* y_adj,
           Eigen::VectorXd& p_adj) const override;

  const KineticModel& model() const { return model_; }

 private:
  KineticModel model_;
  Eigen::VectorXd log_k_;
  Eigen::VectorXd k_;
};

/// Versioned JSON container for trained parameters.
struct Checkpoint {
  static constexpr int kVersion = 1;
  enum class Kind { mlp, crnn };

  Kind kind = Kind::crnn;
  std::uint64_t seed = 0;
  std::string stage;
  NormStats stats;
  MlpParams mlp;
  std::optional<double> log_span;  // black-box field integrated in log10 t
  CrnnParams crnn;
  std::vector<std::size_t> reaction_ids;
};

std::string checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const std::string& text);
void write_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace stiffkin
