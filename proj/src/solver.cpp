#include "stiffkin/solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <Eigen/LU>

#include "stiffkin/autodiff.hpp"
#include "stiffkin/kinetics.hpp"

namespace stiffkin {

namespace {

// Kvaerno(3): 4-stage ESDIRK, explicit first stage, stiffly accurate,
// L-stable. Stage 3 ends at c = 1 as well and serves as the embedded
// second-order solution.
struct Tableau {
  static constexpr double gamma = 0.43586652150845899942;
  double a[4][4] = {};
  double c[4] = {};
  double err[4] = {};

  Tableau() {
    const double g = gamma;
    a[1][0] = g;
    a[1][1] = g;
    a[2][0] = (-4.0 * g * g + 6.0 * g - 1.0) / (4.0 * g);
    a[2][1] = (-2.0 * g + 1.0) / (4.0 * g);
    a[2][2] = g;
    a[3][0] = (6.0 * g - 1.0) / (12.0 * g);
    a[3][1] = -1.0 / ((24.0 * g - 12.0) * g);
    a[3][2] = (-6.0 * g * g + 6.0 * g - 1.0) / (6.0 * g - 3.0);
    a[3][3] = g;
    for (int i = 0; i < 4; ++i) {
      c[i] = 0.0;
      for (int j = 0; j <= i; ++j) c[i] += a[i][j];
    }
    for (int j = 0; j < 4; ++j) err[j] = a[3][j] - a[2][j];
  }
};

const Tableau& tableau() {
  static const Tableau t;
  return t;
}

constexpr double kSafety = 0.9;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 5.0;
constexpr int kMaxConsecutiveNewtonFailures = 30;

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

struct StepAttempt {
  bool newton_ok = false;
  bool nonfinite = false;  // the field returned NaN or inf during the attempt
  std::array<Eigen::VectorXd, 4> z;
  std::array<Eigen::VectorXd, 4> k;
};

class Stepper {
 public:
  Stepper(const VectorField& f, const SolverConfig& cfg) : f_(f), cfg_(cfg), n_(f.dimension()) {}

  // Solves the three implicit stages of one step from state y.
  StepAttempt attempt(const Eigen::VectorXd& y, double h) const {
    const auto& tb = tableau();
    StepAttempt s;
    s.z[0] = y;
    s.k[0] = f_.eval(y);
    if (!all_finite(s.k[0])) return nonfinite(s);
    const double hg = h * Tableau::gamma;
    const Eigen::MatrixXd iter = Eigen::MatrixXd::Identity(n_, n_) - hg * f_.newton_jacobian(y);
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(iter);

    for (int i = 1; i < 4; ++i) {
      Eigen::VectorXd base = y;
      for (int j = 0; j < i; ++j) base.noalias() += (h * tb.a[i][j]) * s.k[static_cast<std::size_t>(j)];
      Eigen::VectorXd z = base + hg * s.k[static_cast<std::size_t>(i - 1)];
      bool converged = false;
      double prev = 0.0;
      for (int it = 0; it < cfg_.newton_max_iters; ++it) {
        const Eigen::VectorXd fz = f_.eval(z);
        if (!all_finite(fz)) return nonfinite(s);
        const Eigen::VectorXd residual = z - base - hg * fz;
        const Eigen::VectorXd dz = lu.solve(-residual);
        z += dz;
        if (!all_finite(z)) return s;
        const double norm = (dz.array().abs() / (cfg_.atol + z.array().abs())).maxCoeff();
        if (norm <= cfg_.newton_tol || norm < 1e-15) {
          converged = true;
          break;
        }
        if (it > 0) {
          const double rate = norm / prev;
          if (rate >= 1.0) return s;
          if (rate / (1.0 - rate) * norm <= cfg_.newton_tol) {
            converged = true;
            break;
          }
        }
        prev = norm;
      }
      if (!converged) return s;
      s.z[static_cast<std::size_t>(i)] = z;
      s.k[static_cast<std::size_t>(i)] = f_.eval(z);
      if (!all_finite(s.k[static_cast<std::size_t>(i)])) return nonfinite(s);
    }
    s.newton_ok = true;
    return s;
  }

  static StepAttempt& nonfinite(StepAttempt& s) {
    s.nonfinite = true;
    return s;
  }

  double error_norm(const Eigen::VectorXd& y, const StepAttempt& s, double h) const {
    const auto& tb = tableau();
    Eigen::VectorXd err = Eigen::VectorXd::Zero(n_);
    for (int j = 0; j < 4; ++j) err.noalias() += (h * tb.err[j]) * s.k[static_cast<std::size_t>(j)];
    const Eigen::ArrayXd scale = cfg_.atol + cfg_.rtol * y.array().abs().max(s.z[3].array().abs());
    return std::sqrt((err.array() / scale).square().mean());
  }

  StepRecord accept(double t, double h, const Eigen::VectorXd& y, StepAttempt&& s, SolverStats& stats) const {
    StepRecord rec;
    rec.t = t;
    rec.h = h;
    rec.y = y;
    rec.y_next = s.z[3];
    rec.keep = Eigen::ArrayXd::Ones(n_);
    if (cfg_.clamp_nonnegative) {
      bool clamped = false;
      for (Eigen::Index i = 0; i < n_; ++i) {
        if (rec.y_next[i] < 0.0) {
          rec.y_next[i] = 0.0;
          rec.keep[i] = 0.0;
          clamped = true;
        }
      }
      if (clamped) ++stats.clamped_steps;
    }
    if (!all_finite(rec.y_next)) throw NonFiniteState("non-finite state at t=" + std::to_string(t + h));
    rec.k = std::move(s.k);
    if (cfg_.recompute_stages) {
      rec.k = {};
    } else {
      rec.z = std::move(s.z);
    }
    // Hermite needs the endpoint derivatives even when stages are dropped.
    return rec;
  }

  double auto_initial_step(const Eigen::VectorXd& y0, double span) const {
    double h = 1e-4 * span;
    const Eigen::VectorXd f0 = f_.eval(y0);
    if (!all_finite(f0)) throw NonFiniteState("non-finite derivative at the initial state");
    const Eigen::ArrayXd scale = cfg_.atol + cfg_.rtol * y0.array().abs();
    for (int i = 0; i < 60; ++i) {
      const Eigen::VectorXd y1 = y0 + h * f0;
      const Eigen::VectorXd f1 = f_.eval(y1);
      if (all_finite(f1)) {
        const double est = std::sqrt(((0.5 * h) * (f1 - f0).array() / scale).square().mean());
        if (est <= 1.0) break;
      }
      h *= 0.1;
    }
    return std::max(h, 1e-12 * span);
  }

 private:
  const VectorField& f_;
  const SolverConfig& cfg_;
  Eigen::Index n_;
};

void hermite_weights(double theta, double& h00, double& h10, double& h01, double& h11) {
  const double t2 = theta * theta, t3 = t2 * theta;
  h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
  h10 = t3 - 2.0 * t2 + theta;
  h01 = -2.0 * t3 + 3.0 * t2;
  h11 = t3 - t2;
}

Eigen::VectorXd hermite(const StepRecord& s, const Eigen::VectorXd& k_start, const Eigen::VectorXd& k_end,
                        double theta) {
  double h00, h10, h01, h11;
  hermite_weights(theta, h00, h10, h01, h11);
  return h00 * s.y + (h10 * s.h) * k_start + h01 * s.y_next + (h11 * s.h) * k_end;
}

void check_inputs(const VectorField& f, const Eigen::VectorXd& y0, std::span<const double> times,
                  const SolverConfig& cfg) {
  cfg.validate();
  if (y0.size() != f.dimension()) throw std::invalid_argument("integrate: y0 has the wrong dimension");
  if (!y0.allFinite()) throw NonFiniteState("integrate: non-finite initial state");
  if (times.size() < 2) throw std::invalid_argument("integrate: need at least two output times");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw std::invalid_argument("integrate: output times must increase strictly");
}

// Places every output time on the accepted step that contains it and fills
// the sampled trajectory.
void sample_outputs(IntegrationResult& result, std::span<const double> times, const Eigen::VectorXd& y0,
                    const std::vector<std::array<Eigen::VectorXd, 2>>& end_derivs) {
  auto& rec = result.record;
  auto& traj = result.trajectory;
  const auto n = y0.size();
  traj.times.assign(times.begin(), times.end());
  traj.states.resize(static_cast<Eigen::Index>(times.size()), n);
  traj.states.row(0) = y0.transpose();
  rec.outputs.assign(times.size(), OutputLocation{});
  std::size_t step = 0;
  for (std::size_t i = 1; i < times.size(); ++i) {
    while (step + 1 < rec.steps.size() && rec.steps[step].t + rec.steps[step].h < times[i]) ++step;
    const auto& s = rec.steps[step];
    const double theta = (i + 1 == times.size() && step + 1 == rec.steps.size())
                             ? 1.0
                             : std::clamp((times[i] - s.t) / s.h, 0.0, 1.0);
    rec.outputs[i] = {step, theta};
    traj.states.row(static_cast<Eigen::Index>(i)) =
        hermite(s, end_derivs[step][0], end_derivs[step][1], theta).transpose();
  }
}

IntegrationResult run(const VectorField& f, const Eigen::VectorXd& y0, std::span<const double> times,
                      const SolverConfig& cfg, std::span<const double> fixed_steps) {
  check_inputs(f, y0, times, cfg);
  Stepper stepper(f, cfg);
  IntegrationResult result;
  auto& stats = result.stats;
  result.record.stages_stored = !cfg.recompute_stages;
  std::vector<std::array<Eigen::VectorXd, 2>> end_derivs;

  const double t0 = times.front();
  const double t_end = times.back();
  const bool replay = !fixed_steps.empty();
  if (replay && (fixed_steps.front() != t0 || fixed_steps.back() != t_end || fixed_steps.size() < 2))
    throw std::invalid_argument("integrate_on_steps: step grid must span the output interval");

  double t = t0;
  Eigen::VectorXd y = y0;
  double h = replay ? fixed_steps[1] - fixed_steps[0]
                    : (cfg.initial_step ? *cfg.initial_step : stepper.auto_initial_step(y0, t_end - t0));
  double err_prev = 1.0;
  int newton_failures_in_row = 0;
  std::size_t step_index = 0;

  while (t < t_end) {
    if (result.record.steps.size() >= cfg.max_steps)
      throw StepLimitExceeded("step limit " + std::to_string(cfg.max_steps) + " exceeded at t=" + std::to_string(t));
    bool last = false;
    if (replay) {
      h = fixed_steps[step_index + 1] - fixed_steps[step_index];
      last = step_index + 2 == fixed_steps.size();
    } else if (t + h >= t_end - 1e-12 * std::abs(t_end)) {
      h = t_end - t;
      last = true;
    } else if (t + 2.0 * h > t_end) {
      h = 0.5 * (t_end - t);
    }

    StepAttempt s = stepper.attempt(y, h);
    if (!s.newton_ok) {
      ++stats.newton_failures;
      if (replay) throw NewtonDivergence("Newton failed on a replayed step at t=" + std::to_string(t));
      if (++newton_failures_in_row > kMaxConsecutiveNewtonFailures || h < 1e-14 * std::max(1.0, std::abs(t))) {
        if (s.nonfinite) throw NonFiniteState("non-finite derivative near t=" + std::to_string(t));
        throw NewtonDivergence("Newton iteration failed after step-halving retries at t=" + std::to_string(t));
      }
      h *= 0.5;
      continue;
    }
    newton_failures_in_row = 0;

    double err = 0.0;
    if (!replay) {
      err = stepper.error_norm(y, s, h);
      if (!std::isfinite(err) || err > 1.0) {
        ++stats.rejected;
        const double fac = std::isfinite(err) ? std::max(kMinFactor, kSafety * std::pow(err, -1.0 / 3.0)) : kMinFactor;
        h *= std::min(fac, 1.0);
        continue;
      }
    }

    const Eigen::VectorXd k_start = s.k[0];
    const Eigen::VectorXd k_end = s.k[3];
    StepRecord rec = stepper.accept(t, h, y, std::move(s), stats);
    end_derivs.push_back({k_start, k_end});
    ++stats.accepted;
    y = rec.y_next;
    t = last ? t_end : t + h;
    result.record.steps.push_back(std::move(rec));
    ++step_index;

    if (!replay) {
      double fac = kMaxFactor;
      if (err > 0.0) fac = kSafety * std::pow(err, -0.7 / 3.0) * std::pow(err_prev, 0.4 / 3.0);
      fac = std::clamp(fac, kMinFactor, kMaxFactor);
      err_prev = std::max(err, 1e-4);
      h *= fac;
    }
  }

  sample_outputs(result, times, y0, end_derivs);
  if (cfg.recompute_stages) {
    // Keep only what the Hermite adjoint and stage replay need.
    for (auto& rec : result.record.steps) rec.k = {};
  }
  result.trajectory.provenance = Provenance::fitted;
  return result;
}

}  // namespace

SolverConfig SolverConfig::data_generation() {
  SolverConfig cfg;
  cfg.rtol = 1e-10;
  cfg.atol = 1e-13;
  cfg.clamp_nonnegative = true;
  return cfg;
}

void SolverConfig::validate() const {
  if (!(rtol > 0.0) || !(atol > 0.0)) throw std::invalid_argument("solver tolerances must be positive");
  if (max_steps < 1) throw std::invalid_argument("max_steps must be at least 1");
  if (!(newton_tol > 0.0) || newton_max_iters < 1) throw std::invalid_argument("invalid Newton settings");
  if (initial_step && !(*initial_step > 0.0)) throw std::invalid_argument("initial step must be positive");
}

void VectorField::vjp(const Eigen::VectorXd& y, const Eigen::VectorXd& v, Eigen::VectorXd* y_adj,
                      Eigen::VectorXd&) const {
  if (y_adj) *y_adj = jacobian(y).transpose() * v;
}

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::observed: return "observed";
    case Provenance::fitted: return "fitted";
    case Provenance::resampled: return "resampled";
  }
  return "?";
}

Trajectory Trajectory::slice(std::size_t first, std::size_t count) const {
  if (first + count > n_times()) throw std::out_of_range("trajectory slice out of range");
  Trajectory out;
  out.times.assign(times.begin() + static_cast<std::ptrdiff_t>(first),
                   times.begin() + static_cast<std::ptrdiff_t>(first + count));
  out.states = states.middleRows(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(count));
  out.provenance = provenance;
  out.species = species;
  return out;
}

void Trajectory::validate() const {
  if (times.size() < 2) throw std::invalid_argument("trajectory needs at least two samples");
  if (states.rows() != static_cast<Eigen::Index>(times.size()))
    throw std::invalid_argument("trajectory rows do not match its time grid");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw std::invalid_argument("trajectory times must increase strictly");
  if (!states.allFinite()) throw std::invalid_argument("trajectory contains non-finite states");
  if (!species.empty() && static_cast<Eigen::Index>(species.size()) != states.cols())
    throw std::invalid_argument("trajectory species names do not match its columns");
}

std::vector<double> IntegrationRecord::step_times() const {
  std::vector<double> t;
  if (steps.empty()) return t;
  t.reserve(steps.size() + 1);
  for (const auto& s : steps) t.push_back(s.t);
  t.push_back(steps.back().t + steps.back().h);
  return t;
}

IntegrationResult integrate(const VectorField& f, const Eigen::VectorXd& y0, std::span<const double> times,
                            const SolverConfig& cfg) {
  return run(f, y0, times, cfg, {});
}

IntegrationResult integrate_on_steps(const VectorField& f, const Eigen::VectorXd& y0, std::span<const double> times,
                                     std::span<const double> step_times, const SolverConfig& cfg) {
  if (step_times.size() < 2) throw std::invalid_argument("integrate_on_steps: need at least one step");
  std::vector<double> grid(step_times.begin(), step_times.end());
  grid.back() = times.back();
  return run(f, y0, times, cfg, grid);
}

Sensitivity integrate_adjoint(const VectorField& f, const IntegrationRecord& record,
                              const Eigen::MatrixXd& output_adjoint, const SolverConfig& cfg) {
  const auto& tb = tableau();
  const Eigen::Index n = f.dimension();
  if (output_adjoint.rows() != static_cast<Eigen::Index>(record.outputs.size()) || output_adjoint.cols() != n)
    throw std::invalid_argument("integrate_adjoint: adjoint shape does not match the sampled trajectory");

  Sensitivity sens;
  sens.params = Eigen::VectorXd::Zero(f.n_params());

  std::vector<std::vector<std::size_t>> outputs_by_step(record.steps.size());
  Eigen::VectorXd y0_direct = Eigen::VectorXd::Zero(n);
  for (std::size_t i = 0; i < record.outputs.size(); ++i) {
    const auto& loc = record.outputs[i];
    if (loc.step == OutputLocation::kInitial) y0_direct += output_adjoint.row(static_cast<Eigen::Index>(i)).transpose();
    else outputs_by_step[loc.step].push_back(i);
  }

  Stepper stepper(f, cfg);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd y_next_adj = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd tmp(n);

  for (std::size_t si = record.steps.size(); si-- > 0;) {
    const StepRecord& rec = record.steps[si];
    std::array<Eigen::VectorXd, 4> z_store;
    const std::array<Eigen::VectorXd, 4>* z = &rec.z;
    if (!record.stages_stored || rec.z[3].size() == 0) {
      StepAttempt again = stepper.attempt(rec.y, rec.h);
      if (!again.newton_ok) throw NewtonDivergence("stage recomputation failed during the backward pass");
      z_store = std::move(again.z);
      z = &z_store;
    }

    Eigen::VectorXd y_adj = Eigen::VectorXd::Zero(n);
    std::array<Eigen::VectorXd, 4> k_adj;
    for (auto& v : k_adj) v = Eigen::VectorXd::Zero(n);
    for (auto oi : outputs_by_step[si]) {
      double h00, h10, h01, h11;
      hermite_weights(record.outputs[oi].theta, h00, h10, h01, h11);
      const Eigen::VectorXd g = output_adjoint.row(static_cast<Eigen::Index>(oi)).transpose();
      y_adj += h00 * g;
      k_adj[0] += (h10 * rec.h) * g;
      y_next_adj += h01 * g;
      k_adj[3] += (h11 * rec.h) * g;
    }

    std::array<Eigen::VectorXd, 4> z_adj;
    z_adj[3] = (y_next_adj.array() * rec.keep).matrix();
    const double hg = rec.h * Tableau::gamma;
    for (int i = 3; i >= 1; --i) {
      const auto ui = static_cast<std::size_t>(i);
      const Eigen::MatrixXd jac = f.jacobian((*z)[ui]);
      Eigen::VectorXd rhs = jac.transpose() * k_adj[ui];
      if (z_adj[ui].size() > 0) rhs += z_adj[ui];
      const Eigen::VectorXd w = ad::solve_transposed(eye - hg * jac, rhs);
      const Eigen::VectorXd u = k_adj[ui] + hg * w;
      f.vjp((*z)[ui], u, nullptr, sens.params);
      y_adj += w;
      for (int j = 0; j < i; ++j) k_adj[static_cast<std::size_t>(j)] += (rec.h * tb.a[i][j]) * w;
    }
    f.vjp(rec.y, k_adj[0], &tmp, sens.params);
    y_adj += tmp;
    y_next_adj = y_adj;
  }
  sens.y0 = y_next_adj + y0_direct;
  return sens;
}

struct MassActionField::Impl {
  KineticModel model;
  Eigen::VectorXd k;
};

MassActionField::MassActionField(const ReactionScheme& scheme, Eigen::VectorXd k)
    : impl_(std::make_unique<Impl>(Impl{KineticModel(scheme), std::move(k)})) {}

MassActionField::~MassActionField() = default;

Eigen::Index MassActionField::dimension() const { return impl_->model.n_species(); }

Eigen::VectorXd MassActionField::eval(const Eigen::VectorXd& y) const { return impl_->model.rhs(y, impl_->k); }

Eigen::MatrixXd MassActionField::jacobian(const Eigen::VectorXd& y) const {
  return impl_->model.jacobian(y, impl_->k);
}

Trajectory generate_dataset(const ReactionScheme& scheme, const SolverConfig& cfg) {
  const auto times = scheme.time_grid.times();
  const MassActionField field(scheme, scheme.true_coefficients());
  const Eigen::VectorXd y0 =
      Eigen::Map<const Eigen::VectorXd>(scheme.initial_concentrations.data(),
                                        static_cast<Eigen::Index>(scheme.initial_concentrations.size()));
  SolverConfig c = cfg;
  c.clamp_nonnegative = true;
  auto result = integrate(field, y0, times, c);
  result.trajectory.provenance = Provenance::observed;
  result.trajectory.species = scheme.species_names();
  return std::move(result.trajectory);
}

Trajectory downsample(const Trajectory& traj, std::size_t factor) {
  const auto n = traj.n_times();
  if (factor < 1) throw std::invalid_argument("downsample factor must be at least 1");
  if (n < 2 || factor > n - 1)
    throw std::invalid_argument("downsample factor " + std::to_string(factor) + " exceeds n_times - 1");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < n; i += factor) keep.push_back(i);
  if (keep.back() != n - 1) keep.push_back(n - 1);
  Trajectory out;
  out.provenance = traj.provenance;
  out.species = traj.species;
  out.states.resize(static_cast<Eigen::Index>(keep.size()), traj.states.cols());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    out.times.push_back(traj.times[keep[r]]);
    out.states.row(static_cast<Eigen::Index>(r)) = traj.states.row(static_cast<Eigen::Index>(keep[r]));
  }
  return out;
}

std::string trajectory_to_csv(const Trajectory& traj) {
  std::string out = "t";
  for (Eigen::Index j = 0; j < traj.n_species(); ++j) {
    out += ',';
    out += j < static_cast<Eigen::Index>(traj.species.size()) ? traj.species[static_cast<std::size_t>(j)]
                                                               : "y" + std::to_string(j);
  }
  out += '\n';
  char buf[40];
  for (std::size_t i = 0; i < traj.n_times(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.16e", traj.times[i]);
    out += buf;
    for (Eigen::Index j = 0; j < traj.n_species(); ++j) {
      std::snprintf(buf, sizeof(buf), ",%.16e", traj.states(static_cast<Eigen::Index>(i), j));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

Trajectory trajectory_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty trajectory CSV");
  const auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      cells.push_back(cell);
    }
    return cells;
  };
  auto header = split(line);
  if (header.empty() || header.front() != "t") throw std::invalid_argument("trajectory CSV header must start with 't'");
  Trajectory traj;
  traj.species.assign(header.begin() + 1, header.end());
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split(line);
    if (cells.size() != header.size())
      throw std::invalid_argument("trajectory CSV line " + std::to_string(line_no) + " has the wrong column count");
    std::vector<double> row;
    for (const auto& c : cells) {
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (end == c.c_str() || *end != '\0')
        throw std::invalid_argument("trajectory CSV line " + std::to_string(line_no) + ": bad number '" + c + "'");
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  traj.states.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(traj.species.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    traj.times.push_back(rows[i][0]);
    for (std::size_t j = 1; j < rows[i].size(); ++j)
      traj.states(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j - 1)) = rows[i][j];
  }
  traj.provenance = Provenance::observed;
  traj.validate();
  return traj;
}

void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << trajectory_to_csv(traj);
}

Trajectory read_trajectory_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return trajectory_from_csv(ss.str());
}

}  // namespace stiffkin
