#include "stiffkin/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace stiffkin {

using json = nlohmann::json;

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

// JSON has no infinity; non-finite values are written as strings.
json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

json numbers(const std::vector<double>& v) {
  json out = json::array();
  for (double x : v) out.push_back(number(x));
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Plot area with linear mapping from data to pixels.
struct Frame {
  double width = 640, height = 420, left = 70, right = 20, top = 40, bottom = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }

  std::string open(const std::string& title, const std::string& xlabel, const std::string& ylabel) const {
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
      << "</text>\n";
    s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << width - left - right << "\" height=\""
      << height - top - bottom << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double xv = x0 + (x1 - x0) * i / 4.0;
      const double yv = y0 + (y1 - y0) * i / 4.0;
      s << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << height - bottom + 16 << "\" text-anchor=\"middle\">"
        << fmt_g(xv) << "</text>\n";
      s << "<text x=\"" << left - 6 << "\" y=\"" << fmt(py(yv) + 4) << "\" text-anchor=\"end\">" << fmt_g(yv)
        << "</text>\n";
    }
    s << "<text x=\"" << width / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">" << escape(xlabel)
      << "</text>\n";
    s << "<text x=\"16\" y=\"" << height / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << height / 2
      << ")\">" << escape(ylabel) << "</text>\n";
    return s.str();
  }
};

void widen(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
}

}  // namespace

json metrics_to_json(const Metrics& m) {
  json j;
  j["traj_mse"] = number(m.traj_mse);
  j["coeff_mae"] = number(m.coeff_mae);
  j["coeff_mae_metric"] = "mean |log10 k_est - log10 k_true| over trainable reactions";
  j["coeff_mae_ln_all"] = number(m.coeff_mae_ln_all);
  if (!m.diagnostic.empty()) j["diagnostic"] = m.diagnostic;
  json rows = json::array();
  for (const auto& r : m.coefficients)
    rows.push_back({{"id", r.id}, {"truth", number(r.truth)}, {"estimate", number(r.estimate)}, {"frozen", r.frozen}});
  j["coefficients"] = rows;
  return j;
}

json stage_to_json(const StageReport& s) {
  return {{"stage", s.stage},
          {"epochs", s.losses.size()},
          {"losses", numbers(s.losses)},
          {"learning_rates", numbers(s.learning_rates)},
          {"best_loss", number(s.best_loss)},
          {"best_epoch", s.best_epoch},
          {"anneal_events", s.anneal_events},
          {"skipped_windows", s.skipped_windows},
          {"events", s.events},
          {"seconds", s.seconds}};
}

json solver_config_to_json(const SolverConfig& cfg) {
  json j = {{"rtol", cfg.rtol},
            {"atol", cfg.atol},
            {"max_steps", cfg.max_steps},
            {"newton_tol", cfg.newton_tol},
            {"newton_max_iters", cfg.newton_max_iters},
            {"clamp_nonnegative", cfg.clamp_nonnegative},
            {"recompute_stages", cfg.recompute_stages}};
  j["initial_step"] = cfg.initial_step ? json(*cfg.initial_step) : json("auto");
  return j;
}

json train_config_to_json(const TrainConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate},
          {"learning_rate_stage2", cfg.stage_learning_rate(2)},
          {"learning_rate_stage3", cfg.stage_learning_rate(3)},
          {"epochs_stage1", cfg.epochs_stage1},
          {"epochs_stage2", cfg.epochs_stage2},
          {"epochs_stage3", cfg.epochs_stage3},
          {"anneal_patience_fraction", cfg.anneal_patience_fraction},
          {"anneal_factor", cfg.anneal_factor},
          {"interpolation_factor", cfg.interpolation_factor},
          {"seed", cfg.seed},
          {"alpha", cfg.weights.alpha},
          {"beta", cfg.weights.beta},
          {"window_size", cfg.window.size},
          {"window_stride", cfg.window.stride},
          {"use_windows", cfg.use_windows},
          {"hidden", cfg.hidden},
          {"activation", to_string(cfg.activation)},
          {"solver", solver_config_to_json(cfg.solver)}};
}

json report_to_json(const TrainReport& r) {
  json j;
  j["seed"] = r.seed;
  json stages = json::array();
  for (const auto& s : r.stages) stages.push_back(stage_to_json(s));
  j["stages"] = stages;
  json metrics = json::object();
  for (const auto& [name, m] : r.stage_metrics) metrics[name] = metrics_to_json(m);
  j["stage_metrics"] = metrics;
  if (r.final_metrics) j["final_metrics"] = metrics_to_json(*r.final_metrics);
  j["wall_seconds"] = r.wall_seconds;
  return j;
}

std::string loss_curves_csv(const std::vector<StageReport>& stages) {
  std::string out = "stage,epoch,loss,learning_rate\n";
  char buf[96];
  for (const auto& s : stages)
    for (std::size_t e = 0; e < s.losses.size(); ++e) {
      std::snprintf(buf, sizeof(buf), ",%zu,%.17g,%.17g\n", e, s.losses[e], s.learning_rates[e]);
      out += s.stage;
      out += buf;
    }
  return out;
}

std::string coefficients_csv(const std::vector<CoefficientRow>& rows) {
  std::string out = "id,truth,estimate,frozen\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%d\n", r.id, r.truth, r.estimate, r.frozen ? 1 : 0);
    out += buf;
  }
  return out;
}

std::string svg_loss_curves(const std::vector<StageReport>& stages) {
  Frame f;
  double lo = INFINITY, hi = -INFINITY;
  std::size_t max_epochs = 1;
  for (const auto& s : stages) {
    max_epochs = std::max(max_epochs, s.losses.size());
    for (double l : s.losses)
      if (l > 0 && std::isfinite(l)) {
        lo = std::min(lo, std::log10(l));
        hi = std::max(hi, std::log10(l));
      }
  }
  if (!std::isfinite(lo)) lo = hi = 0;
  widen(lo, hi);
  f.x0 = 0;
  f.x1 = static_cast<double>(max_epochs);
  f.y0 = lo;
  f.y1 = hi;
  std::string out = f.open("training loss", "epoch", "log10 loss");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    const std::size_t stride = std::max<std::size_t>(1, s.losses.size() / 1000);
    out += "<polyline class=\"loss\" fill=\"none\" stroke=\"" + std::string(palette(i)) + "\" points=\"";
    for (std::size_t e = 0; e < s.losses.size(); e += stride)
      if (s.losses[e] > 0 && std::isfinite(s.losses[e]))
        out += fmt(f.px(static_cast<double>(e))) + "," + fmt(f.py(std::log10(s.losses[e]))) + " ";
    out += "\"/>\n";
    out += "<text x=\"" + fmt(f.width - f.right - 8) + "\" y=\"" + fmt(f.top + 16 + 14.0 * static_cast<double>(i)) +
           "\" text-anchor=\"end\" fill=\"" + palette(i) + "\">" + escape(s.stage) + "</text>\n";
  }
  return out + "</svg>\n";
}

std::string svg_coefficient_scatter(const std::vector<CoefficientRow>& rows) {
  Frame f;
  double lo = INFINITY, hi = -INFINITY;
  std::vector<const CoefficientRow*> shown;
  for (const auto& r : rows) {
    if (r.frozen) continue;
    shown.push_back(&r);
    for (double v : {r.truth, r.estimate})
      if (v > 0 && std::isfinite(v)) {
        lo = std::min(lo, std::log10(v));
        hi = std::max(hi, std::log10(v));
      }
  }
  if (!std::isfinite(lo)) lo = hi = 0;
  widen(lo, hi);
  f.x0 = 0;
  f.x1 = static_cast<double>(std::max<std::size_t>(shown.size(), 1)) + 1;
  f.y0 = std::floor(lo);
  f.y1 = std::ceil(hi);
  std::string out = f.open("rate coefficients (trainable reactions)", "reaction (ordinal)", "log10 k");
  for (std::size_t i = 0; i < shown.size(); ++i) {
    const auto& r = *shown[i];
    const double x = f.px(static_cast<double>(i + 1));
    out += "<rect class=\"truth\" data-id=\"" + std::to_string(r.id) + "\" x=\"" + fmt(x - 4) + "\" y=\"" +
           fmt(f.py(std::log10(r.truth)) - 4) + "\" width=\"8\" height=\"8\" fill=\"none\" stroke=\"black\"/>\n";
    out += "<circle class=\"estimate\" data-id=\"" + std::to_string(r.id) + "\" cx=\"" + fmt(x) + "\" cy=\"" +
           fmt(f.py(std::log10(r.estimate))) + "\" r=\"3.5\" fill=\"#d62728\"/>\n";
  }
  out += "<text x=\"" + fmt(f.left + 8) + "\" y=\"" + fmt(f.top + 16) +
         "\">square: truth, dot: estimate</text>\n";
  return out + "</svg>\n";
}

std::string svg_trajectory_overlay(const Trajectory& obs, const Trajectory& model,
                                   const std::vector<Eigen::Index>& columns, bool log_time, const std::string& title) {
  Frame f;
  const auto tx = [&](double t) { return log_time ? std::log10(t) : t; };
  f.x0 = tx(obs.times.front());
  f.x1 = tx(obs.times.back());
  widen(f.x0, f.x1);
  f.y0 = -0.05;
  f.y1 = 1.05;
  std::string out = f.open(title, log_time ? "log10 t" : "t", "normalised concentration");
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const Eigen::Index j = columns[c];
    const double lo = obs.states.col(j).minCoeff();
    const double range = std::max(obs.states.col(j).maxCoeff() - lo, 1e-30);
    const std::string color = palette(c);
    out += "<polyline class=\"model\" fill=\"none\" stroke=\"" + color + "\" points=\"";
    for (std::size_t i = 0; i < model.n_times(); ++i) {
      const double v = std::clamp((model.states(static_cast<Eigen::Index>(i), j) - lo) / range, -0.05, 1.05);
      out += fmt(f.px(tx(model.times[i]))) + "," + fmt(f.py(v)) + " ";
    }
    out += "\"/>\n";
    for (std::size_t i = 0; i < obs.n_times(); ++i) {
      const double v = (obs.states(static_cast<Eigen::Index>(i), j) - lo) / range;
      out += "<circle class=\"observed\" cx=\"" + fmt(f.px(tx(obs.times[i]))) + "\" cy=\"" + fmt(f.py(v)) +
             "\" r=\"2.5\" fill=\"" + color + "\"/>\n";
    }
    const std::string name = static_cast<std::size_t>(j) < obs.species.size() ? obs.species[static_cast<std::size_t>(j)]
                                                                              : "y" + std::to_string(j);
    out += "<text x=\"" + fmt(f.width - f.right - 8) + "\" y=\"" + fmt(f.top + 16 + 14.0 * static_cast<double>(c)) +
           "\" text-anchor=\"end\" fill=\"" + color + "\">" + escape(name) + "</text>\n";
  }
  return out + "</svg>\n";
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace stiffkin
