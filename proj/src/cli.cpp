#include "stiffkin/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "stiffkin/models.hpp"
#include "stiffkin/pipeline.hpp"
#include "stiffkin/report.hpp"
#include "stiffkin/solver.hpp"

namespace stiffkin {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct RunConfig {
  std::string scheme_path;
  std::string output_dir = "out";
  std::string stage = "all";
  std::string init = "random";
  std::string data_path;
  std::string targets = "fitted";
  std::string checkpoint;
  std::string variant;
  std::string config_file;
  std::size_t downsample = 1;
  std::uint64_t seed = 0;
  std::string hidden = "128,128";
  std::string activation = "tanh";
  TrainConfig train;
  SolverConfig solver = SolverConfig::training();
  SolverConfig data_solver = SolverConfig::data_generation();
  double lr2 = 1e-2;
  double lr3 = 1e-2;
};

class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<int> parse_hidden(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    std::size_t used = 0;
    const int v = std::stoi(cell, &used);
    if (used != cell.size() || v < 1) throw std::invalid_argument("bad hidden layer list '" + text + "'");
    out.push_back(v);
  }
  return out;
}

/// Flat key=value lines; '#' starts a comment.
std::map<std::string, std::string> read_flat_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file '" + path + "'");
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t n = 0;
  const auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error(path + ":" + std::to_string(n) + ": expected key=value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

/// Fills options not given on the command line from the config file.
void apply_config(CLI::App& cmd, const std::string& path) {
  for (const auto& [key, value] : read_flat_config(path)) {
    CLI::Option* opt = cmd.get_option_no_throw("--" + key);
    if (opt == nullptr) throw std::runtime_error("config file: unknown key '" + key + "'");
    if (opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

std::string config_echo(const CLI::App& cmd) {
  std::string out;
  for (const CLI::Option* opt : cmd.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config" || opt->get_positional()) continue;
    std::string value;
    const auto results = opt->reduced_results();
    if (!results.empty()) value = results.front();
    else value = opt->get_default_str();
    if (opt->get_type_size() == 0 && value.empty()) value = "false";
    out += name + " = " + value + "\n";
  }
  return out;
}

void add_solver_options(CLI::App& cmd, SolverConfig& s, const std::string& prefix) {
  cmd.add_option("--" + prefix + "rtol", s.rtol, "relative tolerance")->capture_default_str();
  cmd.add_option("--" + prefix + "atol", s.atol, "absolute tolerance")->capture_default_str();
  cmd.add_option("--" + prefix + "max-steps", s.max_steps, "step limit per integration")->capture_default_str();
}

void add_train_options(CLI::App& cmd, RunConfig& rc) {
  auto& t = rc.train;
  cmd.add_option("--epochs1", t.epochs_stage1, "stage-1 epochs")->capture_default_str();
  cmd.add_option("--epochs2", t.epochs_stage2, "stage-2 epochs")->capture_default_str();
  cmd.add_option("--epochs3", t.epochs_stage3, "stage-3 epochs")->capture_default_str();
  cmd.add_option("--lr", t.learning_rate, "learning rate")->capture_default_str();
  cmd.add_option("--lr2", rc.lr2, "stage-2 learning rate")->capture_default_str();
  cmd.add_option("--lr3", rc.lr3, "stage-3 learning rate")->capture_default_str();
  cmd.add_option("--anneal-patience", t.anneal_patience_fraction, "fraction of epochs without improvement")
      ->capture_default_str();
  cmd.add_option("--anneal-factor", t.anneal_factor, "learning-rate multiplier on anneal")->capture_default_str();
  cmd.add_option("--interp", t.interpolation_factor, "stage-2 interpolation factor")->capture_default_str();
  cmd.add_option("--alpha", t.weights.alpha, "velocity loss weight")->capture_default_str();
  cmd.add_option("--beta", t.weights.beta, "acceleration loss weight")->capture_default_str();
  cmd.add_option("--window-size", t.window.size, "sliding window length")->capture_default_str();
  cmd.add_option("--window-stride", t.window.stride, "sliding window stride")->capture_default_str();
  cmd.add_option("--use-windows", t.use_windows, "train on sliding windows (linear grids)")->capture_default_str();
  cmd.add_option("--hidden", rc.hidden, "hidden layer widths")->capture_default_str();
  cmd.add_option("--activation", rc.activation, "hidden activation")
      ->check(CLI::IsMember({"tanh", "softplus"}))
      ->capture_default_str();
  add_solver_options(cmd, rc.solver, "");
}

void add_common(CLI::App& cmd, RunConfig& rc) {
  cmd.add_option("scheme", rc.scheme_path, "mechanism file")->required()->check(CLI::ExistingFile);
  cmd.add_option("-o,--output", rc.output_dir, "output directory")->capture_default_str();
  cmd.add_option("--config", rc.config_file, "flat key=value config file")->check(CLI::ExistingFile);
  cmd.add_option("--seed", rc.seed, "random seed (falls back to STIFFKIN_SEED)")->capture_default_str();
  cmd.add_option("--downsample", rc.downsample, "keep every n-th observation")->capture_default_str();
}

void finish_options(CLI::App& cmd, RunConfig& rc) {
  if (!rc.config_file.empty()) apply_config(cmd, rc.config_file);
  if (cmd.get_option("--seed")->count() == 0) {
    if (const char* env = std::getenv("STIFFKIN_SEED"); env && *env) {
      try {
        rc.seed = std::stoull(env);
      } catch (const std::exception&) {
        throw std::invalid_argument(std::string("STIFFKIN_SEED is not an integer: ") + env);
      }
    }
  }
  rc.train.seed = rc.seed;
  rc.train.hidden = parse_hidden(rc.hidden);
  rc.train.activation = activation_from_string(rc.activation);
  rc.train.solver = rc.solver;
  rc.train.learning_rate_stage2 = rc.lr2;
  rc.train.learning_rate_stage3 = rc.lr3;
  rc.train.validate();
  if (rc.downsample < 1) throw std::invalid_argument("--downsample must be at least 1");
  fs::create_directories(rc.output_dir);
}

std::string out_path(const RunConfig& rc, const std::string& name) { return (fs::path(rc.output_dir) / name).string(); }

void write_echo(const RunConfig& rc, const CLI::App& cmd) {
  std::string text = "# effective configuration for `" + cmd.get_name() + " " + rc.scheme_path + "`\n";
  text += "seed = " + std::to_string(rc.seed) + "\n";
  for (const auto& line : [&] {
         std::vector<std::string> lines;
         std::stringstream ss(config_echo(cmd));
         std::string l;
         while (std::getline(ss, l))
           if (l.rfind("seed ", 0) != 0) lines.push_back(l);
         return lines;
       }())
    text += line + "\n";
  write_text(out_path(rc, "config.ini"), text);
}

Trajectory load_observations(const RunConfig& rc, const ReactionScheme& scheme) {
  Trajectory obs;
  if (!rc.data_path.empty()) {
    obs = read_trajectory_csv(rc.data_path);
  } else if (fs::exists(out_path(rc, "dataset.csv"))) {
    obs = read_trajectory_csv(out_path(rc, "dataset.csv"));
  } else {
    obs = generate_dataset(scheme, rc.data_solver);
    write_trajectory_csv(obs, out_path(rc, "dataset.csv"));
  }
  if (obs.n_species() != static_cast<Eigen::Index>(scheme.n_species()))
    throw std::invalid_argument("dataset has " + std::to_string(obs.n_species()) + " species, scheme has " +
                                std::to_string(scheme.n_species()));
  if (rc.downsample > 1) obs = downsample(obs, rc.downsample);
  return obs;
}

Checkpoint crnn_checkpoint(const ReactionScheme& scheme, const CrnnParams& p, std::uint64_t seed,
                           const std::string& stage) {
  Checkpoint c;
  c.kind = Checkpoint::Kind::crnn;
  c.seed = seed;
  c.stage = stage;
  c.crnn = p;
  for (const auto& r : scheme.reactions) c.reaction_ids.push_back(r.id);
  return c;
}

CrnnParams crnn_from_checkpoint(const Checkpoint& c, const ReactionScheme& scheme) {
  if (c.kind != Checkpoint::Kind::crnn) throw std::invalid_argument("checkpoint does not hold CRNN parameters");
  if (c.crnn.size() != scheme.n_reactions())
    throw std::invalid_argument("checkpoint has " + std::to_string(c.crnn.size()) + " coefficients, scheme has " +
                                std::to_string(scheme.n_reactions()));
  CrnnParams p = c.crnn;
  p.frozen_mask = scheme.frozen_mask();
  return p;
}

void write_metrics_outputs(const RunConfig& rc, const ReactionScheme& scheme, const Metrics& m) {
  write_text(out_path(rc, "metrics.json"), metrics_to_json(m).dump(2) + "\n");
  write_text(out_path(rc, "coefficients.csv"), coefficients_csv(m.coefficients));
  write_text(out_path(rc, "coefficient_scatter.svg"), svg_coefficient_scatter(m.coefficients));
  (void)scheme;
}

void write_report(const RunConfig& rc, const TrainReport& report, const CLI::App& cmd) {
  json j = report_to_json(report);
  j["config"] = train_config_to_json(rc.train);
  j["command"] = cmd.get_name();
  j["scheme_path"] = rc.scheme_path;
  j["downsample"] = rc.downsample;
  j["init"] = rc.init;
  write_text(out_path(rc, "report.json"), j.dump(2) + "\n");
  write_text(out_path(rc, "loss_curves.csv"), loss_curves_csv(report.stages));
  write_text(out_path(rc, "loss_curves.svg"), svg_loss_curves(report.stages));
}

template <class F>
auto in_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage + ": " + e.what());
  }
}

int cmd_generate(const RunConfig& rc, const CLI::App& cmd) {
  const ReactionScheme scheme = load_scheme(rc.scheme_path);
  Trajectory obs = generate_dataset(scheme, rc.data_solver);
  if (rc.downsample > 1) obs = downsample(obs, rc.downsample);
  const std::string csv = trajectory_to_csv(obs);
  write_text(out_path(rc, "dataset.csv"), csv);
  const std::string hash = hex64(fnv1a64(csv));
  json meta = {{"scheme_path", rc.scheme_path},
               {"scheme", serialize_scheme(scheme)},
               {"n_times", obs.n_times()},
               {"n_species", obs.n_species()},
               {"species", obs.species},
               {"downsample", rc.downsample},
               {"provenance", to_string(obs.provenance)},
               {"solver", solver_config_to_json(rc.data_solver)},
               {"hash", "fnv1a64:" + hash}};
  write_text(out_path(rc, "dataset.json"), meta.dump(2) + "\n");
  write_echo(rc, cmd);
  std::cout << "wrote " << obs.n_times() << " samples to " << out_path(rc, "dataset.csv") << " (fnv1a64 " << hash
            << ")\n";
  return 0;
}

int cmd_train(const RunConfig& rc, const CLI::App& cmd) {
  const auto start = std::chrono::steady_clock::now();
  const ReactionScheme scheme = load_scheme(rc.scheme_path);
  const Trajectory obs = load_observations(rc, scheme);
  const bool init_given = cmd.get_option("--init")->count() > 0;
  const bool all = rc.stage == "all";
  const bool run1 = all || rc.stage == "1";
  const bool run2 = all || rc.stage == "2";
  const bool run3 = all || rc.stage == "3";
  const bool log_grid = scheme.time_grid.kind == GridKind::log;

  // Fail on missing inputs before spending time on earlier stages.
  if (run3 && !run2 && !init_given && !fs::exists(out_path(rc, "stage2.json")))
    throw StageError("stage 3: no stage-2 checkpoint in '" + rc.output_dir + "' and no --init given");
  if (run2 && !run1 && rc.targets == "fitted" && !fs::exists(out_path(rc, "stage1_fitted.csv")))
    throw StageError("stage 2: no stage-1 output in '" + rc.output_dir + "' (use --targets observed to fit the data)");

  TrainReport report;
  report.seed = rc.seed;
  std::optional<Trajectory> fitted;
  std::optional<CrnnParams> crnn;

  if (run1) {
    const auto s1 = in_stage("stage 1", [&] { return stage1_fit(scheme, obs, rc.train); });
    Checkpoint c;
    c.kind = Checkpoint::Kind::mlp;
    c.seed = rc.seed;
    c.stage = "stage1";
    c.stats = s1.stats;
    c.mlp = s1.params;
    c.log_span = s1.log_span;
    write_checkpoint(c, out_path(rc, "stage1.json"));
    write_trajectory_csv(s1.fitted, out_path(rc, "stage1_fitted.csv"));
    write_text(out_path(rc, "stage1_overlay.svg"),
               svg_trajectory_overlay(obs, s1.fitted, [&] {
                 std::vector<Eigen::Index> cols;
                 for (Eigen::Index j = 0; j < std::min<Eigen::Index>(obs.n_species(), 5); ++j) cols.push_back(j);
                 return cols;
               }(), log_grid, "stage 1 fit"));
    report.stages.push_back(s1.report);
    report.stage_metrics.emplace_back("stage1", Metrics{scaled_mse(s1.fitted, obs, s1.stats), 0, 0, "", {}});
    fitted = s1.fitted;
  }

  if (run2) {
    if (!fitted) {
      fitted = rc.targets == "observed" ? obs : read_trajectory_csv(out_path(rc, "stage1_fitted.csv"));
    }
    const CrnnParams init = in_stage("stage 2", [&] { return resolve_init(rc.init, scheme, rc.seed); });
    const auto s2 = in_stage("stage 2", [&] { return stage2_pretrain(scheme, *fitted, rc.train, init); });
    write_checkpoint(crnn_checkpoint(scheme, s2.params, rc.seed, "stage2"), out_path(rc, "stage2.json"));
    report.stages.push_back(s2.report);
    const Metrics m = evaluate(scheme, s2.params, obs, rc.train.solver);
    report.stage_metrics.emplace_back("stage2", m);
    report.final_metrics = m;
    crnn = s2.params;
  }

  if (run3) {
    if (!crnn) {
      crnn = in_stage("stage 3", [&] {
        return init_given ? resolve_init(rc.init, scheme, rc.seed)
                          : crnn_from_checkpoint(read_checkpoint(out_path(rc, "stage2.json")), scheme);
      });
    }
    const auto s3 = in_stage("stage 3", [&] { return stage3_finetune(scheme, obs, *crnn, rc.train); });
    write_checkpoint(crnn_checkpoint(scheme, s3.params, rc.seed, "stage3"), out_path(rc, "stage3.json"));
    report.stages.push_back(s3.report);
    const Metrics m = evaluate(scheme, s3.params, obs, rc.train.solver);
    report.stage_metrics.emplace_back("stage3", m);
    report.final_metrics = m;
  }

  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_report(rc, report, cmd);
  if (report.final_metrics) write_metrics_outputs(rc, scheme, *report.final_metrics);
  write_echo(rc, cmd);
  for (const auto& [name, m] : report.stage_metrics) {
    std::cout << name << ": traj_mse " << m.traj_mse;
    if (name != "stage1") std::cout << ", coeff_mae(log10) " << m.coeff_mae;
    std::cout << "\n";
  }
  return 0;
}

int cmd_evaluate(const RunConfig& rc, const CLI::App& cmd) {
  const ReactionScheme scheme = load_scheme(rc.scheme_path);
  const Trajectory obs = load_observations(rc, scheme);
  CrnnParams params;
  if (cmd.get_option("--init")->count() > 0) {
    params = resolve_init(rc.init, scheme, rc.seed);
  } else {
    std::string path = rc.checkpoint;
    if (path.empty()) {
      for (const char* name : {"stage3.json", "stage2.json"})
        if (fs::exists(out_path(rc, name))) {
          path = out_path(rc, name);
          break;
        }
    }
    if (path.empty() || !fs::exists(path))
      throw std::runtime_error("evaluate: no checkpoint found (give --checkpoint, --init, or train first)");
    params = crnn_from_checkpoint(read_checkpoint(path), scheme);
  }
  const Metrics m = evaluate(scheme, params, obs, rc.train.solver);
  write_metrics_outputs(rc, scheme, m);
  if (std::isfinite(m.traj_mse)) {
    const CrnnField field(scheme, params.log_k);
    Trajectory model = integrate(field, obs.state(0), obs.times, rc.train.solver).trajectory;
    model.species = obs.species;
    write_trajectory_csv(model, out_path(rc, "trajectory.csv"));
    const bool log_grid = scheme.time_grid.kind == GridKind::log;
    std::size_t group = 0;
    for (Eigen::Index first = 0; first < obs.n_species(); first += 5) {
      std::vector<Eigen::Index> cols;
      for (Eigen::Index j = first; j < std::min<Eigen::Index>(first + 5, obs.n_species()); ++j) cols.push_back(j);
      write_text(out_path(rc, "trajectory_overlay_" + std::to_string(++group) + ".svg"),
                 svg_trajectory_overlay(obs, model, cols, log_grid, "observed vs model"));
    }
  }
  write_echo(rc, cmd);
  std::cout << "traj_mse " << m.traj_mse << ", coeff_mae(log10) " << m.coeff_mae << ", coeff_mae(ln, all) "
            << m.coeff_mae_ln_all << "\n";
  if (!m.diagnostic.empty()) std::cout << "diagnostic: " << m.diagnostic << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& rc, const CLI::App& cmd) {
  const ReactionScheme scheme = load_scheme(rc.scheme_path);
  const Trajectory obs = load_observations(rc, scheme);
  const AblationVariant variant = ablation_from_string(rc.variant);
  CrnnParams trained;
  const TrainReport report = ablation_run(variant, scheme, obs, rc.train, nullptr, &trained);
  write_checkpoint(crnn_checkpoint(scheme, trained, rc.seed, to_string(variant)),
                   out_path(rc, std::string("ablation_") + to_string(variant) + ".json"));
  write_report(rc, report, cmd);
  if (report.final_metrics) write_metrics_outputs(rc, scheme, *report.final_metrics);
  write_echo(rc, cmd);
  if (report.final_metrics)
    std::cout << to_string(variant) << ": coeff_mae(log10) " << report.final_metrics->coeff_mae << ", traj_mse "
              << report.final_metrics->traj_mse << "\n";
  return 0;
}

}  // namespace

CrnnParams read_coefficient_csv(const std::string& path, const ReactionScheme& scheme) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read coefficient file '" + path + "'");
  CrnnParams p = CrnnParams::truth(scheme);
  std::vector<bool> seen(scheme.n_reactions(), false);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (n == 1 && line.rfind("id", 0) == 0)) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error(path + ":" + std::to_string(n) + ": expected id,k");
    std::size_t id = 0;
    double k = 0.0;
    try {
      id = std::stoul(line.substr(0, comma));
      k = std::stod(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(n) + ": malformed row");
    }
    std::size_t index = scheme.n_reactions();
    for (std::size_t i = 0; i < scheme.n_reactions(); ++i)
      if (scheme.reactions[i].id == id) index = i;
    if (index == scheme.n_reactions()) throw std::runtime_error(path + ": unknown reaction id " + std::to_string(id));
    if (!(k > 0.0)) throw std::runtime_error(path + ": coefficient of reaction " + std::to_string(id) + " must be positive");
    p.log_k[static_cast<Eigen::Index>(index)] = std::log(k);
    seen[index] = true;
  }
  for (std::size_t i = 0; i < scheme.n_reactions(); ++i)
    if (!seen[i] && !scheme.reactions[i].frozen)
      throw std::runtime_error(path + ": trainable reaction " + std::to_string(scheme.reactions[i].id) + " is missing");
  return p;
}

CrnnParams resolve_init(const std::string& spec, const ReactionScheme& scheme, std::uint64_t seed) {
  if (spec == "random") return random_crnn_init(scheme, seed ^ 0x5eedULL);
  if (spec == "truth") return CrnnParams::truth(scheme);
  if (spec.rfind("perturbed:", 0) == 0) {
    double frac = 0.0;
    try {
      frac = std::stod(spec.substr(10));
    } catch (const std::exception&) {
      throw std::invalid_argument("bad --init '" + spec + "'");
    }
    return perturbed_crnn_init(scheme, frac, seed ^ 0x9e7ULL);
  }
  if (spec.rfind("file:", 0) == 0) {
    const std::string path = spec.substr(5);
    const std::string ext = fs::path(path).extension().string();
    if (ext == ".json") return crnn_from_checkpoint(read_checkpoint(path), scheme);
    return read_coefficient_csv(path, scheme);
  }
  throw std::invalid_argument("unknown --init '" + spec + "' (random, truth, perturbed:<frac>, file:<path>)");
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Rate-coefficient estimation for stiff reaction mechanisms"};
  app.require_subcommand(1);
  RunConfig rc;

  auto* gen = app.add_subcommand("generate", "integrate a mechanism and write its dataset");
  add_common(*gen, rc);
  add_solver_options(*gen, rc.data_solver, "");

  auto* train = app.add_subcommand("train", "run training stages");
  add_common(*train, rc);
  add_train_options(*train, rc);
  train->add_option("--stage", rc.stage, "1, 2, 3 or all")->check(CLI::IsMember({"1", "2", "3", "all"}))
      ->capture_default_str();
  train->add_option("--init", rc.init, "random | truth | perturbed:<frac> | file:<path>")->capture_default_str();
  train->add_option("--data", rc.data_path, "observation CSV (default: generate)");
  train->add_option("--targets", rc.targets, "stage-2 input when stage 1 is skipped")
      ->check(CLI::IsMember({"fitted", "observed"}))
      ->capture_default_str();

  auto* eval = app.add_subcommand("evaluate", "score a trained CRNN against the data");
  add_common(*eval, rc);
  add_solver_options(*eval, rc.solver, "");
  eval->add_option("--checkpoint", rc.checkpoint, "CRNN checkpoint (default: latest in the output directory)");
  eval->add_option("--init", rc.init, "coefficients to evaluate instead of a checkpoint");
  eval->add_option("--data", rc.data_path, "observation CSV (default: generate)");

  auto* ablate = app.add_subcommand("ablate", "run a stage-2 ablation variant");
  add_common(*ablate, rc);
  add_train_options(*ablate, rc);
  ablate->add_option("--variant", rc.variant, "direct_fd | mlp_proxy | no_interpolation")
      ->required()
      ->check(CLI::IsMember({"direct_fd", "mlp_proxy", "no_interpolation"}));
  ablate->add_option("--data", rc.data_path, "observation CSV (default: generate)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    CLI::App* cmd = app.get_subcommands().front();
    finish_options(*cmd, rc);
    if (cmd == gen) return cmd_generate(rc, *cmd);
    if (cmd == train) return cmd_train(rc, *cmd);
    if (cmd == eval) return cmd_evaluate(rc, *cmd);
    return cmd_ablate(rc, *cmd);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace stiffkin
