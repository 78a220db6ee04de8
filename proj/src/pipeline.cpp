#include "stiffkin/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <random>
#include <stdexcept>

#include "stiffkin/autodiff.hpp"

namespace stiffkin {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void require_same_grid(const Trajectory& a, const Trajectory& b, const char* what) {
  if (a.times.size() != b.times.size() || a.states.rows() != b.states.rows() || a.states.cols() != b.states.cols())
    throw std::invalid_argument(std::string(what) + ": trajectories have different shapes");
  for (std::size_t i = 0; i < a.times.size(); ++i)
    if (std::abs(a.times[i] - b.times[i]) > 1e-12 * std::max(1.0, std::abs(b.times[i])))
      throw std::invalid_argument(std::string(what) + ": trajectories are on different time grids");
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes
/// with the three-point end formula).
class Pchip {
 public:
  Pchip(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)), d_(x_.size()) {
    const std::size_t n = x_.size();
    std::vector<double> h(n - 1), delta(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      h[i] = x_[i + 1] - x_[i];
      delta[i] = (y_[i + 1] - y_[i]) / h[i];
    }
    if (n == 2) {
      d_[0] = d_[1] = delta[0];
      return;
    }
    for (std::size_t i = 1; i + 1 < n; ++i) {
      if (delta[i - 1] * delta[i] <= 0.0) {
        d_[i] = 0.0;
      } else {
        const double w1 = 2.0 * h[i] + h[i - 1];
        const double w2 = h[i] + 2.0 * h[i - 1];
        d_[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
      }
    }
    d_[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d_[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
  }

  double operator()(double x) const {
    const auto it = std::upper_bound(x_.begin(), x_.end(), x);
    std::size_t i = it == x_.begin() ? 0 : static_cast<std::size_t>(it - x_.begin()) - 1;
    i = std::min(i, x_.size() - 2);
    const double h = x_[i + 1] - x_[i];
    const double t = (x - x_[i]) / h;
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * y_[i] + (t3 - 2 * t2 + t) * h * d_[i] + (-2 * t3 + 3 * t2) * y_[i + 1] +
           (t3 - t2) * h * d_[i + 1];
  }

 private:
  static double end_slope(double h0, double h1, double del0, double del1) {
    double d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if (d * del0 <= 0.0) d = 0.0;
    else if (del0 * del1 <= 0.0 && std::abs(d) > std::abs(3.0 * del0)) d = 3.0 * del0;
    return d;
  }

  std::vector<double> x_, y_, d_;
};

/// Matrix with `row` repeated n times.
Eigen::MatrixXd tile_rows(const Eigen::VectorXd& row, Eigen::Index n) {
  return row.transpose().replicate(n, 1);
}

using FieldFactory = std::function<std::unique_ptr<VectorField>(const Eigen::VectorXd& theta)>;

/// Integration as a tape node: input is the field parameter column, output
/// the sampled states. The backward pass is the discrete adjoint.
ad::Var ode_solve(ad::Tape& tape, ad::Var theta, FieldFactory make_field, Eigen::VectorXd y0,
                  std::vector<double> times, SolverConfig cfg) {
  struct State {
    std::unique_ptr<VectorField> field;
    IntegrationRecord record;
  };
  auto state = std::make_shared<State>();
  auto forward = [=](const std::vector<const Eigen::MatrixXd*>& in) -> Eigen::MatrixXd {
    state->field = make_field(in[0]->col(0));
    auto result = integrate(*state->field, y0, times, cfg);
    state->record = std::move(result.record);
    return std::move(result.trajectory.states);
  };
  auto backward = [state, cfg](const Eigen::MatrixXd& out_adj) -> std::vector<Eigen::MatrixXd> {
    const Sensitivity s = integrate_adjoint(*state->field, state->record, out_adj, cfg);
    return {Eigen::MatrixXd(s.params)};
  };
  return tape.custom("ode_solve", {theta}, forward, backward);
}

/// Black-box fields on logarithmic grids run in s = log10 t with a clock
/// state τ = (s - s0) / span appended.
struct LogClock {
  double s0 = 0.0;
  double span = 1.0;
};

/// Initial state and output grid of a window in the field's coordinates.
std::pair<Eigen::VectorXd, std::vector<double>> field_coordinates(const Trajectory& sub,
                                                                  const std::optional<LogClock>& clock) {
  if (!clock) return {sub.state(0), sub.times};
  std::vector<double> s(sub.times.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::log10(sub.times[i]);
  const Eigen::Index n = sub.n_species();
  Eigen::VectorXd y0(n + 1);
  y0 << sub.state(0), (s.front() - clock->s0) / clock->span;
  return {std::move(y0), std::move(s)};
}

/// L_y + alpha L_v + beta L_a for one window on a tape.
/// Coordinates the derivative terms are taken in: time itself, or log10 t
/// on logarithmic grids, together with the matching span.
struct DerivativeFrame {
  std::vector<double> coords;
  double span = 1.0;
};

DerivativeFrame derivative_frame(const std::vector<double>& times, double t_scale, bool log_time, double log_span) {
  DerivativeFrame f{times, t_scale};
  if (log_time) {
    for (auto& c : f.coords) c = std::log10(c);
    f.span = log_span;
  }
  return f;
}

double log_span_of(const std::vector<double>& times) {
  if (!(times.front() > 0.0)) throw std::invalid_argument("log-time derivatives need positive times");
  return std::log10(times.back()) - std::log10(times.front());
}

ad::Var trajectory_loss(ad::Tape& tape, ad::Var pred, const Trajectory& obs, const NormStats& stats,
                        const LossWeights& w, const DerivativeScales* scales = nullptr, bool log_time = false) {
  const Eigen::Index n = static_cast<Eigen::Index>(obs.n_times());
  const Eigen::VectorXd inv_range = stats.range().cwiseInverse();
  const auto scale_y = tape.constant(tile_rows(inv_range, n));
  ad::Var loss = tape.mean_square(tape.mul(tape.sub(pred, tape.constant(obs.states)), scale_y));
  if (n < 3 || (w.alpha == 0.0 && w.beta == 0.0)) return loss;
  if (scales == nullptr) throw std::logic_error("trajectory_loss: derivative terms need scales");

  std::vector<double> coords = obs.times;
  if (log_time)
    for (auto& c : coords) c = std::log10(c);
  if (w.alpha != 0.0) {
    const Eigen::MatrixXd d1 = fd_velocity_operator(coords);
    const auto scale = tape.constant(tile_rows(scales->velocity.cwiseInverse(), n));
    const auto vel = tape.matmul(tape.constant(d1), pred);
    const auto diff = tape.mul(tape.sub(vel, tape.constant(d1 * obs.states)), scale);
    loss = tape.add(loss, tape.scale(tape.mean_square(diff), w.alpha));
  }
  if (w.beta != 0.0) {
    const Eigen::MatrixXd d2 = fd_acceleration_operator(coords);
    const auto scale = tape.constant(tile_rows(scales->acceleration.cwiseInverse(), n));
    const auto acc = tape.matmul(tape.constant(d2), pred);
    const auto diff = tape.mul(tape.sub(acc, tape.constant(d2 * obs.states)), scale);
    loss = tape.add(loss, tape.scale(tape.mean_square(diff), w.beta));
  }
  return loss;
}

/// Mean loss and gradient over windows; a window whose integration fails
/// or whose loss is not finite is skipped and counted.
Evaluation windowed_objective(const Eigen::VectorXd& theta, const Trajectory& obs,
                              const std::vector<Window>& windows, const FieldFactory& make_field,
                              const std::function<ad::Var(ad::Tape&, ad::Var, const Trajectory&)>& window_loss,
                              const SolverConfig& solver, const std::optional<LogClock>& clock = std::nullopt) {
  Evaluation ev;
  ev.grad = Eigen::VectorXd::Zero(theta.size());
  for (const auto& w : windows) {
    const Trajectory sub = obs.slice(w.first, w.count);
    try {
      ad::Tape tape;
      const auto p = tape.input(theta);
      auto [y0, grid] = field_coordinates(sub, clock);
      auto pred = ode_solve(tape, p, make_field, std::move(y0), std::move(grid), solver);
      if (clock) pred = tape.matmul(pred, tape.constant(Eigen::MatrixXd::Identity(sub.n_species() + 1, sub.n_species())));
      const auto loss = window_loss(tape, pred, sub);
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value)) {
        ++ev.failed;
        continue;
      }
      const auto adj = tape.backward(loss);
      const auto& g = adj[p.id()];
      if (g.size() == 0 || !g.allFinite()) {
        ++ev.failed;
        continue;
      }
      ev.loss += value;
      ev.grad += g.col(0);
      ++ev.evaluated;
    } catch (const SolverError&) {
      ++ev.failed;
    } catch (const ad::SingularSystem&) {
      ++ev.failed;
    }
  }
  if (ev.evaluated > 0) {
    ev.loss /= static_cast<double>(ev.evaluated);
    ev.grad /= static_cast<double>(ev.evaluated);
  }
  return ev;
}

/// Batched CRNN residual with precomputed log-concentration terms.
class CollocationLoss {
 public:
  CollocationLoss(const KineticModel& model, const Collocation& data, const NormStats& stats)
      : n_points_(data.states.rows()) {
    if (data.states.rows() != data.derivs.rows() || data.states.cols() != model.n_species())
      throw std::invalid_argument("collocation data does not match the scheme");
    const Eigen::MatrixXd log_y = data.states.array().max(kLogClampFloor).log().matrix();
    base_ = log_y * model.forward().transpose();
    for (Eigen::Index r = 0; r < model.n_reactions(); ++r) {
      if (!model.ro2_scaled(r)) continue;
      for (Eigen::Index i = 0; i < n_points_; ++i)
        base_(i, r) += std::log(std::max(model.ro2_sum(data.states.row(i).transpose()), kLogClampFloor));
    }
    stoich_t_ = model.stoichiometry().transpose();
    const Eigen::VectorXd scale = stats.range().cwiseInverse() * stats.t_scale;
    scale_ = tile_rows(scale, n_points_);
    target_ = data.derivs;
  }

  Evaluation operator()(const Eigen::VectorXd& log_k) const {
    ad::Tape tape;
    const auto p = tape.input(log_k.transpose());
    const auto z = tape.add(tape.matmul(tape.constant(Eigen::MatrixXd::Ones(n_points_, 1)), p), tape.constant(base_));
    const auto dydt = tape.matmul(tape.exp(z), tape.constant(stoich_t_));
    const auto resid = tape.mul(tape.sub(dydt, tape.constant(target_)), tape.constant(scale_));
    const auto loss = tape.mean_square(resid);
    Evaluation ev;
    ev.loss = loss.value()(0, 0);
    const auto adj = tape.backward(loss);
    ev.grad = adj[p.id()].row(0).transpose();
    ev.evaluated = 1;
    return ev;
  }

 private:
  Eigen::Index n_points_;
  Eigen::MatrixXd base_;
  Eigen::MatrixXd stoich_t_;
  Eigen::MatrixXd scale_;
  Eigen::MatrixXd target_;
};

}  // namespace

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !std::isfinite(alpha) || !std::isfinite(beta))
    throw std::invalid_argument("loss weights must be finite and non-negative");
}

void WindowSpec::validate(std::size_t n_times) const {
  if (size < 2) throw std::invalid_argument("window size must be at least 2");
  if (n_times > 0 && size > n_times) throw std::invalid_argument("window size exceeds the number of samples");
  if (stride < 1) throw std::invalid_argument("window stride must be at least 1");
}

std::vector<Window> make_windows(std::size_t n_times, const WindowSpec& spec) {
  if (n_times < 2) throw std::invalid_argument("need at least two samples for windows");
  if (spec.size < 2 || spec.stride < 1) spec.validate(0);
  if (spec.size >= n_times) return {{0, n_times}};
  std::vector<Window> out;
  for (std::size_t s = 0; s + spec.size <= n_times; s += spec.stride) out.push_back({s, spec.size});
  if (out.back().first + spec.size < n_times) out.push_back({n_times - spec.size, spec.size});
  return out;
}

double TrainConfig::stage_learning_rate(int stage) const {
  if (stage == 2 && learning_rate_stage2) return *learning_rate_stage2;
  if (stage == 3 && learning_rate_stage3) return *learning_rate_stage3;
  return learning_rate;
}

void TrainConfig::validate() const {
  for (int s = 1; s <= 3; ++s)
    if (!(stage_learning_rate(s) > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(anneal_factor > 0.0 && anneal_factor < 1.0)) throw std::invalid_argument("anneal factor must lie in (0, 1)");
  if (!(anneal_patience_fraction > 0.0 && anneal_patience_fraction <= 1.0))
    throw std::invalid_argument("anneal patience fraction must lie in (0, 1]");
  if (interpolation_factor < 1) throw std::invalid_argument("interpolation factor must be at least 1");
  if (window.size < 2 || window.stride < 1) window.validate(0);
  for (int h : hidden)
    if (h < 1) throw std::invalid_argument("hidden layer widths must be positive");
  weights.validate();
  solver.validate();
}

// ---- losses ----------------------------------------------------------------

double scaled_mse(const Trajectory& pred, const Trajectory& obs, const NormStats& stats) {
  require_same_grid(pred, obs, "scaled_mse");
  const Eigen::ArrayXXd diff = (pred.states - obs.states).array().rowwise() / stats.range().transpose().array();
  return diff.square().mean();
}

Eigen::MatrixXd fd_velocity_operator(std::span<const double> t) {
  const auto n = static_cast<Eigen::Index>(t.size());
  if (n < 2) throw std::invalid_argument("finite differences need at least two samples");
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  const auto at = [&](Eigen::Index i) { return t[static_cast<std::size_t>(i)]; };
  d(0, 0) = -1.0 / (at(1) - at(0));
  d(0, 1) = 1.0 / (at(1) - at(0));
  for (Eigen::Index i = 1; i + 1 < n; ++i) {
    d(i, i - 1) = -1.0 / (at(i + 1) - at(i - 1));
    d(i, i + 1) = 1.0 / (at(i + 1) - at(i - 1));
  }
  d(n - 1, n - 2) = -1.0 / (at(n - 1) - at(n - 2));
  d(n - 1, n - 1) = 1.0 / (at(n - 1) - at(n - 2));
  return d;
}

Eigen::MatrixXd fd_acceleration_operator(std::span<const double> t) {
  const auto n = static_cast<Eigen::Index>(t.size());
  if (n < 3) throw std::invalid_argument("second differences need at least three samples");
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  const auto at = [&](Eigen::Index i) { return t[static_cast<std::size_t>(i)]; };
  for (Eigen::Index i = 1; i + 1 < n; ++i) {
    const double hl = at(i) - at(i - 1);
    const double hr = at(i + 1) - at(i);
    d(i, i - 1) = 2.0 / (hl * (hl + hr));
    d(i, i) = -2.0 / (hl * hr);
    d(i, i + 1) = 2.0 / (hr * (hl + hr));
  }
  d.row(0) = d.row(1);
  d.row(n - 1) = d.row(n - 2);
  return d;
}

DerivativeScales derivative_scales(const Trajectory& obs, const NormStats& stats, bool log_time) {
  if (obs.n_times() < 3) throw std::invalid_argument("derivative_scales: need at least three samples");
  const DerivativeFrame frame =
      derivative_frame(obs.times, stats.t_scale, log_time, log_time ? log_span_of(obs.times) : 1.0);
  const Eigen::VectorXd range = stats.range();
  DerivativeScales s;
  s.velocity = (fd_velocity_operator(frame.coords) * obs.states).cwiseAbs().colwise().maxCoeff().transpose();
  s.acceleration = (fd_acceleration_operator(frame.coords) * obs.states).cwiseAbs().colwise().maxCoeff().transpose();
  s.velocity = s.velocity.cwiseMax(range / frame.span);
  s.acceleration = s.acceleration.cwiseMax(range / (frame.span * frame.span));
  return s;
}

std::pair<double, double> derivative_losses(const Trajectory& pred, const Trajectory& obs, const NormStats& stats,
                                            bool log_time) {
  require_same_grid(pred, obs, "derivative_losses");
  const DerivativeScales scales = derivative_scales(obs, stats, log_time);
  std::vector<double> coords = obs.times;
  if (log_time)
    for (auto& c : coords) c = std::log10(c);
  const Eigen::MatrixXd diff = pred.states - obs.states;
  const Eigen::ArrayXXd v =
      (fd_velocity_operator(coords) * diff).array().rowwise() / scales.velocity.transpose().array();
  const Eigen::ArrayXXd a =
      (fd_acceleration_operator(coords) * diff).array().rowwise() / scales.acceleration.transpose().array();
  return {v.square().mean(), a.square().mean()};
}

Eigen::MatrixXd finite_difference(std::span<const double> t, const Eigen::MatrixXd& y) {
  if (static_cast<Eigen::Index>(t.size()) != y.rows())
    throw std::invalid_argument("finite_difference: grid and samples differ in length");
  const auto n = y.rows();
  if (n < 2) throw std::invalid_argument("finite differences need at least two samples");
  Eigen::MatrixXd d(n, y.cols());
  const auto at = [&](Eigen::Index i) { return t[static_cast<std::size_t>(i)]; };
  d.row(0) = (y.row(1) - y.row(0)) / (at(1) - at(0));
  for (Eigen::Index i = 1; i + 1 < n; ++i) d.row(i) = (y.row(i + 1) - y.row(i - 1)) / (at(i + 1) - at(i - 1));
  d.row(n - 1) = (y.row(n - 1) - y.row(n - 2)) / (at(n - 1) - at(n - 2));
  return d;
}

Resampled resample(const Trajectory& traj, std::size_t factor, bool log_time) {
  if (factor < 1) throw std::invalid_argument("resample factor must be at least 1");
  const std::size_t m = traj.n_times();
  if (m < 2) throw std::invalid_argument("resample needs at least two samples");
  std::vector<double> x(traj.times);
  if (log_time) {
    for (auto& v : x) {
      if (!(v > 0.0)) throw std::invalid_argument("log-time resampling needs positive times");
      v = std::log10(v);
    }
  }
  const std::size_t n = (m - 1) * factor + 1;
  std::vector<double> xd(n);
  for (std::size_t i = 0; i + 1 < m; ++i)
    for (std::size_t j = 0; j < factor; ++j)
      xd[i * factor + j] = x[i] + (x[i + 1] - x[i]) * static_cast<double>(j) / static_cast<double>(factor);
  xd[n - 1] = x[m - 1];

  Resampled out;
  out.dense.provenance = Provenance::resampled;
  out.dense.species = traj.species;
  out.dense.times.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.dense.times[i] = log_time ? std::pow(10.0, xd[i]) : xd[i];
  for (std::size_t i = 0; i < m; ++i) out.dense.times[i * factor] = traj.times[i];
  out.dense.states.resize(static_cast<Eigen::Index>(n), traj.n_species());

  for (Eigen::Index s = 0; s < traj.n_species(); ++s) {
    std::vector<double> ys(m);
    for (std::size_t i = 0; i < m; ++i) ys[i] = traj.states(static_cast<Eigen::Index>(i), s);
    if (factor == 1) {
      for (std::size_t i = 0; i < m; ++i) out.dense.states(static_cast<Eigen::Index>(i), s) = ys[i];
    } else {
      const Pchip spline(x, std::move(ys));
      for (std::size_t i = 0; i < n; ++i) out.dense.states(static_cast<Eigen::Index>(i), s) = spline(xd[i]);
    }
    for (std::size_t i = 0; i < m; ++i)
      out.dense.states(static_cast<Eigen::Index>(i * factor), s) = traj.states(static_cast<Eigen::Index>(i), s);
  }
  out.derivs = finite_difference(out.dense.times, out.dense.states);
  return out;
}

// ---- optimisation ------------------------------------------------------------

Adam::Adam(Eigen::Index n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

void Adam::step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, const std::vector<bool>& frozen) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (static_cast<std::size_t>(i) < frozen.size() && frozen[static_cast<std::size_t>(i)]) continue;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    theta[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

bool Annealer::observe(double loss, Adam& opt) {
  if (loss < best_) {
    best_ = loss;
    stale_ = 0;
    return false;
  }
  if (++stale_ < patience_) return false;
  opt.set_learning_rate(opt.learning_rate() * factor_);
  stale_ = 0;
  return true;
}

std::size_t Annealer::patience_for(std::size_t epochs, double fraction) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(epochs))));
}

Eigen::VectorXd optimize(const Eigen::VectorXd& theta0, const std::vector<bool>& frozen, std::size_t epochs,
                         double learning_rate, const TrainConfig& cfg, const Objective& objective,
                         StageReport& report) {
  const auto start = Clock::now();
  Eigen::VectorXd theta = theta0;
  Eigen::VectorXd best = theta0;
  Eigen::VectorXd prev = theta0;
  Eigen::VectorXd update = Eigen::VectorXd::Zero(theta0.size());
  bool have_update = false;
  Adam opt(theta0.size(), learning_rate);
  Annealer annealer(Annealer::patience_for(epochs, cfg.anneal_patience_fraction), cfg.anneal_factor);

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    Evaluation ev = objective(theta);
    if (ev.failed > 0 && have_update) {
      for (int retry = 1; retry <= 3 && ev.failed > 0; ++retry) {
        theta = prev + std::pow(0.5, retry) * update;
        ev = objective(theta);
        report.events.push_back("epoch " + std::to_string(epoch) + ": solver failure, update scaled by " +
                                std::to_string(std::pow(0.5, retry)));
      }
    }
    if (ev.failed > 0) {
      report.skipped_windows += ev.failed;
      report.events.push_back("epoch " + std::to_string(epoch) + ": skipped " + std::to_string(ev.failed) +
                              " window(s)");
    }
    if (ev.evaluated == 0)
      throw SolverError(report.stage + ": no window could be integrated at epoch " + std::to_string(epoch));
    if (!std::isfinite(ev.loss) || !ev.grad.allFinite())
      throw std::runtime_error(report.stage + ": non-finite loss at epoch " + std::to_string(epoch));

    report.losses.push_back(ev.loss);
    report.learning_rates.push_back(opt.learning_rate());
    if (ev.loss < report.best_loss) {
      report.best_loss = ev.loss;
      report.best_epoch = epoch;
      best = theta;
    }
    if (annealer.observe(ev.loss, opt)) ++report.anneal_events;

    prev = theta;
    opt.step(theta, ev.grad, frozen);
    update = theta - prev;
    have_update = true;
  }
  report.seconds = seconds_since(start);
  return best;
}

// ---- initialisation ----------------------------------------------------------

CrnnParams random_crnn_init(const ReactionScheme& scheme, std::uint64_t seed) {
  CrnnParams p = CrnnParams::truth(scheme);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double draw = normal(rng);
    if (!p.frozen_mask[i]) p.log_k[static_cast<Eigen::Index>(i)] = draw * std::log(10.0);
  }
  return p;
}

CrnnParams perturbed_crnn_init(const ReactionScheme& scheme, double frac, std::uint64_t seed) {
  if (!(frac >= 0.0)) throw std::invalid_argument("perturbation fraction must be non-negative");
  CrnnParams p = CrnnParams::truth(scheme);
  std::mt19937_64 rng(seed);
  const double span = std::log1p(frac);
  std::uniform_real_distribution<double> uniform(-span, span);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double draw = uniform(rng);
    if (!p.frozen_mask[i]) p.log_k[static_cast<Eigen::Index>(i)] += draw;
  }
  return p;
}

// ---- stages ------------------------------------------------------------------

std::vector<Window> training_windows(const ReactionScheme& scheme, const Trajectory& obs, const TrainConfig& cfg) {
  if (!cfg.use_windows || scheme.time_grid.kind == GridKind::log) return {{0, obs.n_times()}};
  return make_windows(obs.n_times(), cfg.window);
}

Evaluation stage1_objective(const MlpParams& params, const NormStats& stats, const Trajectory& obs,
                            const std::vector<Window>& windows, const TrainConfig& cfg, bool log_time) {
  const double log_span = log_time ? log_span_of(obs.times) : 1.0;
  std::optional<LogClock> clock;
  if (log_time) clock = LogClock{std::log10(obs.times.front()), log_span};
  const auto make_field = [&params, &stats, log_time, log_span](const Eigen::VectorXd& theta) -> std::unique_ptr<VectorField> {
    MlpParams p = params;
    p.theta = theta;
    return std::make_unique<MlpField>(std::move(p), stats, log_time ? std::optional<double>(log_span) : std::nullopt);
  };
  std::optional<DerivativeScales> scales;
  if (obs.n_times() >= 3 && (cfg.weights.alpha != 0.0 || cfg.weights.beta != 0.0))
    scales = derivative_scales(obs, stats, log_time);
  const auto loss = [&stats, &cfg, &scales, log_time](ad::Tape& tape, ad::Var pred, const Trajectory& sub) {
    return trajectory_loss(tape, pred, sub, stats, cfg.weights, scales ? &*scales : nullptr, log_time);
  };
  return windowed_objective(params.theta, obs, windows, make_field, loss, cfg.solver, clock);
}

namespace {

Trajectory integrate_windows(const VectorField& f, const Trajectory& obs, const std::vector<Window>& windows,
                             const SolverConfig& cfg, const std::optional<LogClock>& clock) {
  Trajectory out;
  out.times = obs.times;
  out.species = obs.species;
  out.provenance = Provenance::fitted;
  out.states = obs.states;
  for (const auto& w : windows) {
    const Trajectory sub = obs.slice(w.first, w.count);
    const auto [y0, grid] = field_coordinates(sub, clock);
    const auto result = integrate(f, y0, grid, cfg);
    // Later windows overwrite the tail of earlier ones.
    out.states.middleRows(static_cast<Eigen::Index>(w.first), static_cast<Eigen::Index>(w.count)) =
        result.trajectory.states.leftCols(obs.n_species());
  }
  return out;
}

}  // namespace

Trajectory integrate_windows(const VectorField& f, const Trajectory& obs, const std::vector<Window>& windows,
                             const SolverConfig& cfg) {
  return integrate_windows(f, obs, windows, cfg, std::nullopt);
}

Trajectory stage1_trajectory(const Stage1Result& s1, const Trajectory& obs, const std::vector<Window>& windows,
                             const SolverConfig& cfg) {
  std::optional<LogClock> clock;
  if (s1.log_span) clock = LogClock{std::log10(obs.times.front()), *s1.log_span};
  return integrate_windows(MlpField(s1.params, s1.stats, s1.log_span), obs, windows, cfg, clock);
}

Eigen::MatrixXd stage1_rates(const Stage1Result& s1, const Trajectory& obs) {
  const MlpField field(s1.params, s1.stats, s1.log_span);
  const Eigen::Index n = obs.n_species();
  Eigen::MatrixXd out(obs.states.rows(), n);
  for (Eigen::Index i = 0; i < obs.states.rows(); ++i) {
    const auto ii = static_cast<std::size_t>(i);
    if (!s1.log_span) {
      out.row(i) = field.eval(obs.state(ii)).transpose();
      continue;
    }
    Eigen::VectorXd x(n + 1);
    x << obs.state(ii), (std::log10(obs.times[ii]) - std::log10(obs.times.front())) / *s1.log_span;
    // dy/dt = (dy/ds) / (t ln 10)
    out.row(i) = field.eval(x).head(n).transpose() / (obs.times[ii] * std::log(10.0));
  }
  return out;
}

Stage1Result stage1_fit(const ReactionScheme& scheme, const Trajectory& obs, const TrainConfig& cfg,
                        std::optional<MlpParams> init) {
  cfg.validate();
  obs.validate();
  const auto start = Clock::now();
  const bool log_time = scheme.time_grid.kind == GridKind::log;
  Stage1Result res;
  res.stats = fit_norm_stats(obs);
  if (log_time) res.log_span = log_span_of(obs.times);
  res.params = init ? std::move(*init)
                    : MlpParams::init(static_cast<int>(obs.n_species()), derive_seed(cfg.seed, 1), cfg.hidden,
                                      cfg.activation, log_time ? 1 : 0);
  res.report.stage = "stage1";
  const auto windows = training_windows(scheme, obs, cfg);
  const MlpParams shape = res.params;
  const Objective objective = [&](const Eigen::VectorXd& theta) {
    MlpParams p = shape;
    p.theta = theta;
    return stage1_objective(p, res.stats, obs, windows, cfg, log_time);
  };
  res.params.theta = optimize(res.params.theta, {}, cfg.epochs_stage1, cfg.stage_learning_rate(1), cfg, objective,
                              res.report);
  try {
    res.fitted = stage1_trajectory(res, obs, windows, cfg.solver);
  } catch (const SolverError& e) {
    throw SolverError(std::string("stage1: fitted model cannot be integrated: ") + e.what());
  }
  res.report.seconds = seconds_since(start);
  return res;
}

Collocation collocation_from_trajectory(const Trajectory& traj, std::size_t factor, bool log_time) {
  const Resampled r = resample(traj, factor, log_time);
  return {r.dense.states, r.derivs};
}

Evaluation stage2_objective(const KineticModel& model, const Eigen::VectorXd& log_k, const Collocation& data,
                            const NormStats& stats) {
  return CollocationLoss(model, data, stats)(log_k);
}

CrnnResult train_collocation(const ReactionScheme& scheme, const Collocation& data, const NormStats& stats,
                             const CrnnParams& init, std::size_t epochs, const TrainConfig& cfg,
                             const std::string& stage_name) {
  cfg.validate();
  const auto start = Clock::now();
  const KineticModel model(scheme);
  const CollocationLoss loss(model, data, stats);
  CrnnResult res;
  res.report.stage = stage_name;
  res.params = init;
  const Objective objective = [&](const Eigen::VectorXd& log_k) {
    Evaluation ev = loss(log_k);
    if (!std::isfinite(ev.loss) || !ev.grad.allFinite())
      throw std::runtime_error(stage_name + ": non-finite collocation loss");
    return ev;
  };
  res.params.log_k = optimize(init.log_k, init.frozen_mask, epochs, cfg.stage_learning_rate(2), cfg, objective,
                              res.report);
  res.report.seconds = seconds_since(start);
  return res;
}

CrnnResult stage2_pretrain(const ReactionScheme& scheme, const Trajectory& fitted, const TrainConfig& cfg,
                           std::optional<CrnnParams> init) {
  fitted.validate();
  const NormStats stats = fit_norm_stats(fitted);
  const Collocation data =
      collocation_from_trajectory(fitted, cfg.interpolation_factor, scheme.time_grid.kind == GridKind::log);
  const CrnnParams start = init ? std::move(*init) : random_crnn_init(scheme, derive_seed(cfg.seed, 2));
  return train_collocation(scheme, data, stats, start, cfg.epochs_stage2, cfg, "stage2");
}

Evaluation stage3_objective(const ReactionScheme& scheme, const Eigen::VectorXd& log_k, const Trajectory& obs,
                            const NormStats& stats, const std::vector<Window>& windows, const SolverConfig& solver) {
  const auto make_field = [&scheme](const Eigen::VectorXd& theta) -> std::unique_ptr<VectorField> {
    return std::make_unique<CrnnField>(scheme, theta);
  };
  const LossWeights none{0.0, 0.0};
  const auto loss = [&stats, &none](ad::Tape& tape, ad::Var pred, const Trajectory& sub) {
    return trajectory_loss(tape, pred, sub, stats, none);
  };
  return windowed_objective(log_k, obs, windows, make_field, loss, solver);
}

CrnnResult stage3_finetune(const ReactionScheme& scheme, const Trajectory& obs, const CrnnParams& init,
                           const TrainConfig& cfg) {
  cfg.validate();
  obs.validate();
  const auto start = Clock::now();
  const NormStats stats = fit_norm_stats(obs);
  const auto windows = training_windows(scheme, obs, cfg);
  CrnnResult res;
  res.report.stage = "stage3";
  res.params = init;
  const Objective objective = [&](const Eigen::VectorXd& log_k) {
    return stage3_objective(scheme, log_k, obs, stats, windows, cfg.solver);
  };
  res.params.log_k = optimize(init.log_k, init.frozen_mask, cfg.epochs_stage3, cfg.stage_learning_rate(3), cfg,
                              objective, res.report);
  res.report.seconds = seconds_since(start);
  return res;
}

// ---- metrics -----------------------------------------------------------------

double coeff_mae(const ReactionScheme& scheme, const Eigen::VectorXd& k_estimate) {
  if (k_estimate.size() != static_cast<Eigen::Index>(scheme.n_reactions()))
    throw std::invalid_argument("coeff_mae: estimate has the wrong length");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < scheme.n_reactions(); ++i) {
    if (scheme.reactions[i].frozen) continue;
    sum += std::abs(std::log10(k_estimate[static_cast<Eigen::Index>(i)]) - std::log10(scheme.reactions[i].rate_coefficient));
    ++n;
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

double coeff_mae_ln_all(const ReactionScheme& scheme, const Eigen::VectorXd& k_estimate) {
  if (k_estimate.size() != static_cast<Eigen::Index>(scheme.n_reactions()))
    throw std::invalid_argument("coeff_mae: estimate has the wrong length");
  double sum = 0.0;
  for (std::size_t i = 0; i < scheme.n_reactions(); ++i)
    sum += std::abs(std::log(k_estimate[static_cast<Eigen::Index>(i)]) - std::log(scheme.reactions[i].rate_coefficient));
  return scheme.n_reactions() > 0 ? sum / static_cast<double>(scheme.n_reactions()) : 0.0;
}

Metrics evaluate(const ReactionScheme& scheme, const CrnnParams& params, const Trajectory& obs,
                 const SolverConfig& solver) {
  Metrics m;
  const Eigen::VectorXd k = params.coefficients();
  m.coeff_mae = coeff_mae(scheme, k);
  m.coeff_mae_ln_all = coeff_mae_ln_all(scheme, k);
  for (std::size_t i = 0; i < scheme.n_reactions(); ++i)
    m.coefficients.push_back({scheme.reactions[i].id, scheme.reactions[i].rate_coefficient,
                              k[static_cast<Eigen::Index>(i)], scheme.reactions[i].frozen});
  try {
    const CrnnField field(scheme, params.log_k);
    const auto result = integrate(field, obs.state(0), obs.times, solver);
    m.traj_mse = scaled_mse(result.trajectory, obs, fit_norm_stats(obs));
  } catch (const SolverError& e) {
    m.traj_mse = std::numeric_limits<double>::infinity();
    m.diagnostic = e.what();
  }
  return m;
}

// ---- ablations ---------------------------------------------------------------

const char* to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::direct_fd: return "direct_fd";
    case AblationVariant::mlp_proxy: return "mlp_proxy";
    case AblationVariant::no_interpolation: return "no_interpolation";
  }
  return "?";
}

AblationVariant ablation_from_string(const std::string& name) {
  if (name == "direct_fd") return AblationVariant::direct_fd;
  if (name == "mlp_proxy") return AblationVariant::mlp_proxy;
  if (name == "no_interpolation") return AblationVariant::no_interpolation;
  throw std::invalid_argument("unknown ablation variant '" + name + "'");
}

TrainReport ablation_run(AblationVariant variant, const ReactionScheme& scheme, const Trajectory& obs,
                         const TrainConfig& cfg, const Stage1Result* stage1, CrnnParams* trained) {
  const auto start = Clock::now();
  TrainReport report;
  report.seed = cfg.seed;
  std::optional<Stage1Result> own;
  if (variant != AblationVariant::direct_fd && stage1 == nullptr) {
    own = stage1_fit(scheme, obs, cfg);
    report.stages.push_back(own->report);
    stage1 = &*own;
  }
  // Without interpolation there are fewer collocation points; train longer
  // to see as many.
  const std::size_t m = obs.n_times();
  const std::size_t dense = (m - 1) * cfg.interpolation_factor + 1;
  const std::size_t epochs = cfg.epochs_stage2 * dense / m;

  const bool log_grid = scheme.time_grid.kind == GridKind::log;
  Collocation data;
  NormStats stats = fit_norm_stats(obs);
  switch (variant) {
    case AblationVariant::direct_fd:
      data = collocation_from_trajectory(obs, 1, log_grid);
      break;
    case AblationVariant::no_interpolation:
      data = collocation_from_trajectory(stage1->fitted, 1, log_grid);
      stats = fit_norm_stats(stage1->fitted);
      break;
    case AblationVariant::mlp_proxy:
      data.states = obs.states;
      data.derivs = stage1_rates(*stage1, obs);
      break;
  }
  const CrnnParams init = random_crnn_init(scheme, derive_seed(cfg.seed, 2));
  auto res = train_collocation(scheme, data, stats, init, epochs, cfg, std::string("stage2_") + to_string(variant));
  report.stages.push_back(res.report);
  const Metrics metrics = evaluate(scheme, res.params, obs, cfg.solver);
  report.stage_metrics.emplace_back(res.report.stage, metrics);
  report.final_metrics = metrics;
  if (trained) *trained = res.params;
  report.wall_seconds = seconds_since(start);
  return report;
}

}  // namespace stiffkin
