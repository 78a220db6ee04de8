#include "stiffkin/models.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "stiffkin/autodiff.hpp"

namespace stiffkin {

using json = nlohmann::json;

Eigen::VectorXd NormStats::range() const {
  Eigen::VectorXd r = y_max - y_min;
  for (Eigen::Index i = 0; i < r.size(); ++i)
    if (r[i] < kRangeEpsilon) r[i] = kRangeEpsilon;
  return r;
}

void NormStats::validate() const {
  if (y_min.size() != y_max.size()) throw std::invalid_argument("norm stats: y_min and y_max differ in size");
  if (!y_min.allFinite() || !y_max.allFinite()) throw std::invalid_argument("norm stats: non-finite bounds");
  if ((y_max.array() < y_min.array()).any()) throw std::invalid_argument("norm stats: y_max below y_min");
  if (!(t_scale > 0.0) || !std::isfinite(t_scale)) throw std::invalid_argument("norm stats: t_scale must be positive");
}

NormStats fit_norm_stats(const Trajectory& traj) {
  if (traj.n_times() < 2) throw std::invalid_argument("fit_norm_stats: need at least two samples");
  NormStats s;
  s.y_min = traj.states.colwise().minCoeff().transpose();
  s.y_max = traj.states.colwise().maxCoeff().transpose();
  s.t_scale = traj.times.back() - traj.times.front();
  s.validate();
  return s;
}

Eigen::VectorXd normalize(const Eigen::VectorXd& y, const NormStats& stats) {
  return ((y - stats.y_min).array() / stats.range().array()).matrix();
}

Eigen::VectorXd denormalize(const Eigen::VectorXd& u, const NormStats& stats) {
  return (u.array() * stats.range().array()).matrix() + stats.y_min;
}

const char* to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::softplus: return "softplus";
  }
  return "?";
}

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "softplus") return Activation::softplus;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::size_t MlpParams::parameter_count(const std::vector<int>& layers) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l)
    n += static_cast<std::size_t>(layers[l] + 1) * static_cast<std::size_t>(layers[l + 1]);
  return n;
}

MlpParams MlpParams::zeros(std::vector<int> layers, Activation activation) {
  if (layers.size() < 2) throw std::invalid_argument("MLP needs at least an input and an output layer");
  for (int w : layers)
    if (w < 1) throw std::invalid_argument("MLP layer widths must be positive");
  MlpParams p;
  p.layers = std::move(layers);
  p.activation = activation;
  p.theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameter_count(p.layers)));
  return p;
}

MlpParams MlpParams::init(int n_species, std::uint64_t seed, std::vector<int> hidden, Activation activation,
                          int extra_inputs) {
  if (extra_inputs < 0) throw std::invalid_argument("MLP extra inputs must be non-negative");
  std::vector<int> layers{n_species + extra_inputs};
  layers.insert(layers.end(), hidden.begin(), hidden.end());
  layers.push_back(n_species);
  MlpParams p = zeros(std::move(layers), activation);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < p.n_layers(); ++l) {
    const double limit = std::sqrt(6.0 / (p.layers[l] + p.layers[l + 1]));
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto w = p.weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
  }
  return p;
}

std::size_t MlpParams::offset(std::size_t l) const {
  std::size_t off = 0;
  for (std::size_t i = 0; i < l; ++i) off += static_cast<std::size_t>(layers[i] + 1) * static_cast<std::size_t>(layers[i + 1]);
  return off;
}

Eigen::Map<const Eigen::MatrixXd> MlpParams::weight(std::size_t l) const {
  return {theta.data() + offset(l), layers[l + 1], layers[l]};
}

Eigen::Map<const Eigen::VectorXd> MlpParams::bias(std::size_t l) const {
  return {theta.data() + offset(l) + static_cast<std::size_t>(layers[l]) * static_cast<std::size_t>(layers[l + 1]),
          layers[l + 1]};
}

Eigen::Map<Eigen::MatrixXd> MlpParams::weight(std::size_t l) { return {theta.data() + offset(l), layers[l + 1], layers[l]}; }

Eigen::Map<Eigen::VectorXd> MlpParams::bias(std::size_t l) {
  return {theta.data() + offset(l) + static_cast<std::size_t>(layers[l]) * static_cast<std::size_t>(layers[l + 1]),
          layers[l + 1]};
}

void MlpParams::validate() const {
  if (layers.size() < 2) throw std::invalid_argument("MLP needs at least two layers");
  if (static_cast<std::size_t>(theta.size()) != parameter_count(layers))
    throw std::invalid_argument("MLP parameter vector does not match its layer sizes");
  if (!theta.allFinite()) throw std::invalid_argument("MLP parameters must be finite");
}

namespace {

Eigen::VectorXd activate(Activation a, const Eigen::VectorXd& x) {
  if (a == Activation::tanh) return x.array().tanh().matrix();
  // log(1 + e^x) without overflow
  return (x.array().max(0.0) + (-x.array().abs()).exp().log1p()).matrix();
}

Eigen::VectorXd activate_slope(Activation a, const Eigen::VectorXd& x, const Eigen::VectorXd& fx) {
  if (a == Activation::tanh) return (1.0 - fx.array().square()).matrix();
  return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

ad::Var activate(ad::Tape& tape, Activation a, ad::Var x) {
  if (a == Activation::tanh) return tape.tanh(x);
  const auto& v = x.value();
  const auto one = tape.constant(Eigen::MatrixXd::Ones(v.rows(), v.cols()));
  return tape.log(tape.add(one, tape.exp(x)));
}

}  // namespace

Eigen::VectorXd mlp_forward(const MlpParams& params, const Eigen::VectorXd& u) {
  Eigen::VectorXd h = u;
  for (std::size_t l = 0; l < params.n_layers(); ++l) {
    Eigen::VectorXd z = params.weight(l) * h + params.bias(l);
    h = l + 1 < params.n_layers() ? activate(params.activation, z) : std::move(z);
  }
  return h;
}

MlpField::MlpField(MlpParams params, NormStats stats, std::optional<double> log_span)
    : params_(std::move(params)), stats_(std::move(stats)), log_span_(log_span) {
  params_.validate();
  stats_.validate();
  const Eigen::Index n = stats_.y_min.size();
  const Eigen::Index clock = log_span_ ? 1 : 0;
  if (log_span_ && !(*log_span_ > 0.0 && std::isfinite(*log_span_)))
    throw std::invalid_argument("MLP field: log span must be positive");
  if (params_.layers.front() != n + clock || params_.layers.back() != n)
    throw std::invalid_argument("MLP width does not match the number of species");
  const Eigen::VectorXd range = stats_.range();
  out_scale_ = range / (log_span_ ? *log_span_ : stats_.t_scale);
  in_scale_ = Eigen::VectorXd::Ones(n + clock);
  in_scale_.head(n) = range.cwiseInverse();
  shift_ = Eigen::VectorXd::Zero(n + clock);
  shift_.head(n) = stats_.y_min;
}

Eigen::Index MlpField::dimension() const { return shift_.size(); }

Eigen::Index MlpField::n_params() const { return params_.theta.size(); }

Eigen::VectorXd MlpField::eval(const Eigen::VectorXd& y) const {
  const Eigen::VectorXd out = mlp_forward(params_, (y - shift_).cwiseProduct(in_scale_)).cwiseProduct(out_scale_);
  if (!log_span_) return out;
  Eigen::VectorXd full(out.size() + 1);
  full << out, 1.0 / *log_span_;
  return full;
}

Eigen::MatrixXd MlpField::jacobian(const Eigen::VectorXd& y) const {
  Eigen::VectorXd h = (y - shift_).cwiseProduct(in_scale_);
  Eigen::MatrixXd jac = in_scale_.asDiagonal();
  for (std::size_t l = 0; l < params_.n_layers(); ++l) {
    const auto w = params_.weight(l);
    const Eigen::VectorXd z = w * h + params_.bias(l);
    jac = w * jac;
    if (l + 1 < params_.n_layers()) {
      h = activate(params_.activation, z);
      jac = activate_slope(params_.activation, z, h).asDiagonal() * jac;
    }
  }
  Eigen::MatrixXd full = Eigen::MatrixXd::Zero(dimension(), dimension());
  full.topRows(out_scale_.size()) = out_scale_.asDiagonal() * jac;
  return full;
}

void MlpField::vjp(const Eigen::VectorXd& y, const Eigen::VectorXd& v, Eigen::VectorXd* y_adj,
                   Eigen::VectorXd& p_adj) const {
  ad::Tape tape;
  const auto u = tape.input((y - shift_).cwiseProduct(in_scale_));
  std::vector<ad::Var> weights, biases;
  ad::Var h = u;
  for (std::size_t l = 0; l < params_.n_layers(); ++l) {
    weights.push_back(tape.input(params_.weight(l)));
    biases.push_back(tape.input(params_.bias(l)));
    const auto z = tape.add(tape.matmul(weights.back(), h), biases.back());
    h = l + 1 < params_.n_layers() ? activate(tape, params_.activation, z) : z;
  }
  const Eigen::VectorXd v_out = v.head(out_scale_.size()).cwiseProduct(out_scale_);
  const auto loss = tape.sum(tape.mul(h, tape.constant(v_out)));
  const auto adj = tape.backward(loss);
  for (std::size_t l = 0; l < params_.n_layers(); ++l) {
    const auto off = static_cast<Eigen::Index>(params_.offset(l));
    const auto& gw = adj[weights[l].id()];
    const auto& gb = adj[biases[l].id()];
    p_adj.segment(off, gw.size()) += Eigen::Map<const Eigen::VectorXd>(gw.data(), gw.size());
    p_adj.segment(off + gw.size(), gb.size()) += Eigen::Map<const Eigen::VectorXd>(gb.data(), gb.size());
  }
  if (y_adj) *y_adj = adj[u.id()].col(0).cwiseProduct(in_scale_);
}

Eigen::VectorXd mlp_field(const MlpParams& params, const NormStats& stats, const Eigen::VectorXd& y) {
  return MlpField(params, stats).eval(y);
}

CrnnField::CrnnField(const ReactionScheme& scheme, Eigen::VectorXd log_k)
    : model_(scheme), log_k_(std::move(log_k)), k_(log_k_.array().exp()) {
  if (log_k_.size() != model_.n_reactions())
    throw std::invalid_argument("CRNN parameter count does not match the number of reactions");
}

Eigen::Index CrnnField::dimension() const { return model_.n_species(); }

Eigen::Index CrnnField::n_params() const { return log_k_.size(); }

Eigen::VectorXd CrnnField::eval(const Eigen::VectorXd& y) const { return model_.crnn_rhs(y, log_k_); }

Eigen::MatrixXd CrnnField::jacobian(const Eigen::VectorXd& y) const { return model_.crnn_jacobian(y, log_k_); }

Eigen::MatrixXd CrnnField::newton_jacobian(const Eigen::VectorXd& y) const { return model_.jacobian(y, k_); }

void CrnnField::vjp(const Eigen::VectorXd& y, const Eigen::VectorXd& v, Eigen::VectorXd* y_adj,
                    Eigen::VectorXd& p_adj) const {
  auto [ya, ka] = model_.crnn_vjp(y, log_k_, v);
  p_adj += ka;
  if (y_adj) *y_adj = std::move(ya);
}

namespace {

json vec_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string checkpoint_to_json(const Checkpoint& ckpt) {
  json j;
  j["format"] = "stiffkin-checkpoint";
  j["version"] = Checkpoint::kVersion;
  j["kind"] = ckpt.kind == Checkpoint::Kind::mlp ? "mlp" : "crnn";
  j["seed"] = ckpt.seed;
  j["stage"] = ckpt.stage;
  if (ckpt.stats.y_min.size() > 0)
    j["norm"] = {{"y_min", vec_to_json(ckpt.stats.y_min)},
                 {"y_max", vec_to_json(ckpt.stats.y_max)},
                 {"t_scale", ckpt.stats.t_scale}};
  if (ckpt.kind == Checkpoint::Kind::mlp) {
    j["mlp"] = {{"layers", ckpt.mlp.layers},
                {"activation", to_string(ckpt.mlp.activation)},
                {"theta", vec_to_json(ckpt.mlp.theta)}};
    if (ckpt.log_span) j["mlp"]["log_span"] = *ckpt.log_span;
  } else {
    j["crnn"] = {{"reaction_ids", ckpt.reaction_ids},
                 {"log_k", vec_to_json(ckpt.crnn.log_k)},
                 {"frozen", ckpt.crnn.frozen_mask}};
  }
  return j.dump(1);
}

Checkpoint checkpoint_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (j.value("format", "") != "stiffkin-checkpoint") throw std::invalid_argument("not a stiffkin checkpoint");
  if (j.value("version", 0) != Checkpoint::kVersion)
    throw std::invalid_argument("unsupported checkpoint version " + std::to_string(j.value("version", 0)));
  try {
    Checkpoint c;
    c.kind = j.at("kind").get<std::string>() == "mlp" ? Checkpoint::Kind::mlp : Checkpoint::Kind::crnn;
    c.seed = j.value("seed", std::uint64_t{0});
    c.stage = j.value("stage", "");
    if (j.contains("norm")) {
      c.stats.y_min = vec_from_json(j["norm"].at("y_min"));
      c.stats.y_max = vec_from_json(j["norm"].at("y_max"));
      c.stats.t_scale = j["norm"].at("t_scale").get<double>();
      c.stats.validate();
    }
    if (c.kind == Checkpoint::Kind::mlp) {
      const auto& m = j.at("mlp");
      c.mlp.layers = m.at("layers").get<std::vector<int>>();
      c.mlp.activation = activation_from_string(m.at("activation").get<std::string>());
      c.mlp.theta = vec_from_json(m.at("theta"));
      if (m.contains("log_span")) c.log_span = m["log_span"].get<double>();
      c.mlp.validate();
    } else {
      const auto& m = j.at("crnn");
      c.reaction_ids = m.at("reaction_ids").get<std::vector<std::size_t>>();
      c.crnn.log_k = vec_from_json(m.at("log_k"));
      c.crnn.frozen_mask = m.at("frozen").get<std::vector<bool>>();
      if (c.crnn.frozen_mask.size() != c.crnn.size() || c.reaction_ids.size() != c.crnn.size())
        throw std::invalid_argument("checkpoint CRNN fields differ in length");
    }
    return c;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed checkpoint: ") + e.what());
  }
}

void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << checkpoint_to_json(ckpt) << '\n';
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace stiffkin
