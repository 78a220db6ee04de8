#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "stiffkin/kinetics.hpp"
#include "stiffkin/models.hpp"
#include "stiffkin/scheme.hpp"
#include "stiffkin/solver.hpp"

namespace stiffkin {

struct LossWeights {
  double alpha = 0.1;  // velocity term
  double beta = 0.1;   // acceleration term

  void validate() const;
};

/// Sliding windows over observation indices.
struct WindowSpec {
  std::size_t size = 20;
  std::size_t stride = 10;

  void validate(std::size_t n_times) const;
};

struct Window {
  std::size_t first = 0;
  std::size_t count = 0;

  bool operator==(const Window&) const = default;
};

/// Windows start at 0, stride, ... while they fit; a final window ending at
/// the last sample is appended when the stride leaves a tail uncovered.
/// A window at least as long as the data yields one full-span window.
std::vector<Window> make_windows(std::size_t n_times, const WindowSpec& spec);

struct TrainConfig {
  double learning_rate = 1e-3;  // stage 1, and any stage without its own rate
  std::optional<double> learning_rate_stage2 = 1e-2;
  std::optional<double> learning_rate_stage3 = 1e-2;
  std::size_t epochs_stage1 = 5000;
  std::size_t epochs_stage2 = 2000;
  std::size_t epochs_stage3 = 2000;
  double anneal_patience_fraction = 0.10;
  double anneal_factor = 0.5;
  std::size_t interpolation_factor = 10;
  std::uint64_t seed = 0;
  LossWeights weights;
  WindowSpec window;
  /// Windows apply to linear grids only; log-spaced data is fitted over
  /// its full span.
  bool use_windows = true;
  std::vector<int> hidden{128, 128};
  Activation activation = Activation::tanh;
  SolverConfig solver = SolverConfig::training();

  double stage_learning_rate(int stage) const;
  void validate() const;
};

struct StageReport {
  std::string stage;
  std::vector<double> losses;          // one per epoch
  std::vector<double> learning_rates;  // one per epoch
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t anneal_events = 0;
  std::size_t skipped_windows = 0;
  std::vector<std::string> events;
  double seconds = 0.0;
};

struct CoefficientRow {
  std::size_t id = 0;
  double truth = 0.0;
  double estimate = 0.0;
  bool frozen = false;
};

struct Metrics {
  double traj_mse = 0.0;
  /// mean |log10 k̂ - log10 k| over trainable reactions
  double coeff_mae = 0.0;
  /// mean |ln k̂ - ln k| over every reaction (frozen ones contribute 0)
  double coeff_mae_ln_all = 0.0;
  std::string diagnostic;
  std::vector<CoefficientRow> coefficients;
};

struct TrainReport {
  std::uint64_t seed = 0;
  std::vector<StageReport> stages;
  std::vector<std::pair<std::string, Metrics>> stage_metrics;
  std::optional<Metrics> final_metrics;
  double wall_seconds = 0.0;
};

// ---- losses ----------------------------------------------------------------

/// MSE over all (time, species) of (pred - obs) / range.
double scaled_mse(const Trajectory& pred, const Trajectory& obs, const NormStats& stats);

/// First-derivative operator: central differences inside, one-sided at the
/// ends. Returns an n × n matrix acting on columns of samples.
Eigen::MatrixXd fd_velocity_operator(std::span<const double> t);
/// Three-point second difference on a nonuniform grid; each end row copies
/// its neighbour. Exact for quadratics.
Eigen::MatrixXd fd_acceleration_operator(std::span<const double> t);

/// Per-species divisors for the derivative losses: the peak |velocity| and
/// |acceleration| of the observations, floored at range / span and
/// range / span², where span is t_scale (or the decades covered with
/// `log_time`, where derivatives are taken in log10 t).
struct DerivativeScales {
  Eigen::VectorXd velocity;
  Eigen::VectorXd acceleration;
};

DerivativeScales derivative_scales(const Trajectory& obs, const NormStats& stats, bool log_time = false);

/// Velocity and acceleration MSEs of pred - obs, each divided by the
/// derivative scales of `obs`.
std::pair<double, double> derivative_losses(const Trajectory& pred, const Trajectory& obs, const NormStats& stats,
                                            bool log_time = false);

/// Finite-difference derivatives of every column of `y` on grid `t`.
Eigen::MatrixXd finite_difference(std::span<const double> t, const Eigen::MatrixXd& y);

struct Resampled {
  Trajectory dense;
  Eigen::MatrixXd derivs;  // same shape as dense.states
};

/// Shape-preserving cubic interpolation onto a grid `factor` times denser
/// (original knots kept), then finite-difference derivatives. With
/// `log_time` the interpolation variable is log10 t.
Resampled resample(const Trajectory& traj, std::size_t factor, bool log_time = false);

// ---- optimisation ------------------------------------------------------------

class Adam {
 public:
  Adam(Eigen::Index n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// One bias-corrected update; entries with frozen[i] set are untouched.
  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, const std::vector<bool>& frozen);
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  Eigen::VectorXd m_, v_;
};

/// Halves (by `factor`) the learning rate after `patience` consecutive
/// epochs without a new best loss.
class Annealer {
 public:
  Annealer(std::size_t patience, double factor) : patience_(patience), factor_(factor) {}
  /// Returns true when this observation triggered an anneal.
  bool observe(double loss, Adam& opt);
  static std::size_t patience_for(std::size_t epochs, double fraction);

 private:
  std::size_t patience_;
  double factor_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t stale_ = 0;
};

struct Evaluation {
  double loss = 0.0;
  Eigen::VectorXd grad;
  std::size_t evaluated = 0;  // windows (or batches) that contributed
  std::size_t failed = 0;     // windows skipped after a solver failure
};

using Objective = std::function<Evaluation(const Eigen::VectorXd& theta)>;

/// Adam with annealing, update backoff on solver failure and best-loss
/// tracking. Returns the best parameters seen.
Eigen::VectorXd optimize(const Eigen::VectorXd& theta0, const std::vector<bool>& frozen, std::size_t epochs,
                         double learning_rate, const TrainConfig& cfg, const Objective& objective,
                         StageReport& report);

// ---- initialisation ----------------------------------------------------------

/// log10 k ~ N(0, 1) for trainable reactions, truth for frozen ones.
CrnnParams random_crnn_init(const ReactionScheme& scheme, std::uint64_t seed);
/// Trainable k multiplied by exp(u), u ~ U(-ln(1 + frac), ln(1 + frac)).
CrnnParams perturbed_crnn_init(const ReactionScheme& scheme, double frac, std::uint64_t seed);

// ---- stages ------------------------------------------------------------------

struct Stage1Result {
  MlpParams params;
  NormStats stats;
  /// Set on logarithmic grids, where the field runs in log10 t.
  std::optional<double> log_span;
  Trajectory fitted;  // model trajectory on the observation grid
  StageReport report;
};

struct CrnnResult {
  CrnnParams params;
  StageReport report;
};

/// Windows used for solver-coupled training on `obs`.
std::vector<Window> training_windows(const ReactionScheme& scheme, const Trajectory& obs, const TrainConfig& cfg);

/// Total loss L_y + alpha L_v + beta L_a of an MLP field over the training
/// windows, with its gradient.
Evaluation stage1_objective(const MlpParams& params, const NormStats& stats, const Trajectory& obs,
                            const std::vector<Window>& windows, const TrainConfig& cfg, bool log_time = false);

/// Stitches a model trajectory from per-window integrations; each sample
/// comes from the latest window that starts at or before it.
Trajectory integrate_windows(const VectorField& f, const Trajectory& obs, const std::vector<Window>& windows,
                             const SolverConfig& cfg);

/// The stage-1 model integrated over `windows` of the observation grid.
Trajectory stage1_trajectory(const Stage1Result& s1, const Trajectory& obs, const std::vector<Window>& windows,
                             const SolverConfig& cfg);
/// dy/dt of the stage-1 model at each observed state.
Eigen::MatrixXd stage1_rates(const Stage1Result& s1, const Trajectory& obs);

Stage1Result stage1_fit(const ReactionScheme& scheme, const Trajectory& obs, const TrainConfig& cfg,
                        std::optional<MlpParams> init = std::nullopt);

/// Collocation data for CRNN pre-training: states and target derivatives,
/// one row per point.
struct Collocation {
  Eigen::MatrixXd states;
  Eigen::MatrixXd derivs;
};

Collocation collocation_from_trajectory(const Trajectory& traj, std::size_t factor, bool log_time);

/// Scaled MSE between crnn_rhs at the collocation states and the targets,
/// with derivative scale range / t_scale per species.
Evaluation stage2_objective(const KineticModel& model, const Eigen::VectorXd& log_k, const Collocation& data,
                            const NormStats& stats);

CrnnResult train_collocation(const ReactionScheme& scheme, const Collocation& data, const NormStats& stats,
                             const CrnnParams& init, std::size_t epochs, const TrainConfig& cfg,
                             const std::string& stage_name = "stage2");

CrnnResult stage2_pretrain(const ReactionScheme& scheme, const Trajectory& fitted, const TrainConfig& cfg,
                           std::optional<CrnnParams> init = std::nullopt);

/// Scaled MSE of the CRNN trajectory over the training windows, with its
/// gradient in log_k.
Evaluation stage3_objective(const ReactionScheme& scheme, const Eigen::VectorXd& log_k, const Trajectory& obs,
                            const NormStats& stats, const std::vector<Window>& windows, const SolverConfig& solver);

CrnnResult stage3_finetune(const ReactionScheme& scheme, const Trajectory& obs, const CrnnParams& init,
                           const TrainConfig& cfg);

// ---- metrics -----------------------------------------------------------------

double coeff_mae(const ReactionScheme& scheme, const Eigen::VectorXd& k_estimate);
double coeff_mae_ln_all(const ReactionScheme& scheme, const Eigen::VectorXd& k_estimate);

/// Integrates the CRNN over the full observation span from the first
/// observed state. A solver failure yields traj_mse = inf with a diagnostic.
Metrics evaluate(const ReactionScheme& scheme, const CrnnParams& params, const Trajectory& obs,
                 const SolverConfig& solver = SolverConfig::training());

// ---- ablations ---------------------------------------------------------------

enum class AblationVariant { direct_fd, mlp_proxy, no_interpolation };

const char* to_string(AblationVariant v);
AblationVariant ablation_from_string(const std::string& name);

/// Runs the variant's stage-2 training and evaluates the result. The
/// stage-1 fit is computed when the variant needs it and none is given.
TrainReport ablation_run(AblationVariant variant, const ReactionScheme& scheme, const Trajectory& obs,
                         const TrainConfig& cfg, const Stage1Result* stage1 = nullptr,
                         CrnnParams* trained = nullptr);

}  // namespace stiffkin
