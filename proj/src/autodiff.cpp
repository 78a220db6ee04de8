#include "stiffkin/autodiff.hpp"

#include <cmath>

#include <Eigen/LU>

namespace stiffkin::ad {

const Eigen::MatrixXd& Var::value() const {
  if (!tape_) throw GradError("value() on an unbound Var");
  return tape_->value(*this);
}

const char* to_string(OpKind op) {
  switch (op) {
    case OpKind::input: return "input";
    case OpKind::constant: return "constant";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::matmul: return "matmul";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::tanh: return "tanh";
    case OpKind::sum: return "sum";
    case OpKind::select: return "select";
    case OpKind::linear_solve: return "linear_solve";
    case OpKind::custom: return "custom";
  }
  return "?";
}

namespace {

void require_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw GradError(std::string(op) + ": shape mismatch");
}

void accumulate(Eigen::MatrixXd& into, const Eigen::MatrixXd& delta) {
  if (into.size() == 0) into = delta;
  else into += delta;
}

}  // namespace

Var Tape::push(Node n) {
  n.value = evaluate(n, {});
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) throw GradError("Var does not belong to this tape");
  return nodes_[v.id()];
}

// With an empty `values`, reads inputs from the recorded node values.
Eigen::MatrixXd Tape::evaluate(const Node& n, const std::vector<Eigen::MatrixXd>& values) const {
  const auto in = [&](std::size_t i) -> const Eigen::MatrixXd& {
    const auto id = n.inputs[i];
    return values.empty() ? nodes_[id].value : values[id];
  };
  switch (n.op) {
    case OpKind::input:
    case OpKind::constant: return n.value;
    case OpKind::add: require_same_shape(in(0), in(1), "add"); return in(0) + in(1);
    case OpKind::sub: require_same_shape(in(0), in(1), "sub"); return in(0) - in(1);
    case OpKind::mul: require_same_shape(in(0), in(1), "mul"); return in(0).cwiseProduct(in(1));
    case OpKind::scale: return n.scalar * in(0);
    case OpKind::matmul:
      if (in(0).cols() != in(1).rows()) throw GradError("matmul: inner dimensions differ");
      return in(0) * in(1);
    case OpKind::exp: return in(0).array().exp().matrix();
    case OpKind::log: return in(0).array().log().matrix();
    case OpKind::tanh: return in(0).array().tanh().matrix();
    case OpKind::sum: return Eigen::MatrixXd::Constant(1, 1, in(0).sum());
    case OpKind::select: {
      require_same_shape(in(0), in(1), "select");
      if (n.mask.rows() != in(0).rows() || n.mask.cols() != in(0).cols()) throw GradError("select: mask shape");
      return (n.mask > 0.0).select(in(0).array(), in(1).array()).matrix();
    }
    case OpKind::linear_solve:
      if (in(0).rows() != in(0).cols() || in(0).rows() != in(1).rows()) throw GradError("linear_solve: shapes");
      return in(0).partialPivLu().solve(in(1));
    case OpKind::custom: {
      std::vector<const Eigen::MatrixXd*> args;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) args.push_back(&in(i));
      return n.forward(args);
    }
  }
  throw GradError("unknown op");
}

Var Tape::input(Eigen::MatrixXd value) {
  Node n;
  n.op = OpKind::input;
  n.value = std::move(value);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Eigen::MatrixXd value) {
  Node n;
  n.op = OpKind::constant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

#define STIFFKIN_UNARY(fn, kind)           \
  Var Tape::fn(Var a) {                     \
    Node n;                                 \
    n.op = OpKind::kind;                    \
    n.inputs = {a.id()};                    \
    n.needs_grad = node(a).needs_grad;      \
    return push(std::move(n));              \
  }

STIFFKIN_UNARY(exp, exp)
STIFFKIN_UNARY(log, log)
STIFFKIN_UNARY(tanh, tanh)
STIFFKIN_UNARY(sum, sum)
#undef STIFFKIN_UNARY

#define STIFFKIN_BINARY(fn, kind)                              \
  Var Tape::fn(Var a, Var b) {                                  \
    Node n;                                                     \
    n.op = OpKind::kind;                                        \
    n.inputs = {a.id(), b.id()};                                \
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;    \
    return push(std::move(n));                                  \
  }

STIFFKIN_BINARY(add, add)
STIFFKIN_BINARY(sub, sub)
STIFFKIN_BINARY(mul, mul)
STIFFKIN_BINARY(matmul, matmul)
STIFFKIN_BINARY(linear_solve, linear_solve)
#undef STIFFKIN_BINARY

Var Tape::scale(Var a, double c) {
  Node n;
  n.op = OpKind::scale;
  n.inputs = {a.id()};
  n.scalar = c;
  n.needs_grad = node(a).needs_grad;
  return push(std::move(n));
}

Var Tape::select(const Eigen::ArrayXXd& mask, Var a, Var b) {
  Node n;
  n.op = OpKind::select;
  n.inputs = {a.id(), b.id()};
  n.mask = mask;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(n));
}

Var Tape::custom(std::string name, std::vector<Var> inputs, CustomForward forward, CustomBackward backward) {
  if (!forward) throw GradError("custom op '" + name + "' needs a forward function");
  Node n;
  n.op = OpKind::custom;
  n.name = std::move(name);
  for (const auto& v : inputs) {
    n.inputs.push_back(v.id());
    n.needs_grad = n.needs_grad || node(v).needs_grad;
  }
  n.forward = std::move(forward);
  n.backward = std::move(backward);
  return push(std::move(n));
}

Var Tape::mean_square(Var a) {
  const auto count = static_cast<double>(value(a).size());
  return scale(sum(mul(a, a)), count > 0 ? 1.0 / count : 0.0);
}

std::vector<Eigen::MatrixXd> Tape::backward(Var output) const {
  const auto& out = node(output);
  if (out.value.rows() != 1 || out.value.cols() != 1) throw GradError("grad requires a scalar output");

  std::vector<Eigen::MatrixXd> adj(nodes_.size());
  adj[output.id()] = Eigen::MatrixXd::Ones(1, 1);

  for (std::size_t idx = output.id() + 1; idx-- > 0;) {
    const Node& n = nodes_[idx];
    if (!n.needs_grad || adj[idx].size() == 0) continue;
    const Eigen::MatrixXd& g = adj[idx];
    const auto wants = [&](std::size_t i) { return nodes_[n.inputs[i]].needs_grad; };
    const auto in = [&](std::size_t i) -> const Eigen::MatrixXd& { return nodes_[n.inputs[i]].value; };
    auto& a0 = n.inputs.empty() ? adj[idx] : adj[n.inputs[0]];
    switch (n.op) {
      case OpKind::input:
      case OpKind::constant: break;
      case OpKind::add:
        if (wants(0)) accumulate(a0, g);
        if (wants(1)) accumulate(adj[n.inputs[1]], g);
        break;
      case OpKind::sub:
        if (wants(0)) accumulate(a0, g);
        if (wants(1)) accumulate(adj[n.inputs[1]], -g);
        break;
      case OpKind::mul:
        if (wants(0)) accumulate(a0, g.cwiseProduct(in(1)));
        if (wants(1)) accumulate(adj[n.inputs[1]], g.cwiseProduct(in(0)));
        break;
      case OpKind::scale:
        if (wants(0)) accumulate(a0, n.scalar * g);
        break;
      case OpKind::matmul:
        if (wants(0)) accumulate(a0, g * in(1).transpose());
        if (wants(1)) accumulate(adj[n.inputs[1]], in(0).transpose() * g);
        break;
      case OpKind::exp:
        if (wants(0)) accumulate(a0, g.cwiseProduct(n.value));
        break;
      case OpKind::log:
        if (wants(0)) accumulate(a0, g.cwiseQuotient(in(0)));
        break;
      case OpKind::tanh:
        if (wants(0)) accumulate(a0, (g.array() * (1.0 - n.value.array().square())).matrix());
        break;
      case OpKind::sum:
        if (wants(0)) accumulate(a0, Eigen::MatrixXd::Constant(in(0).rows(), in(0).cols(), g(0, 0)));
        break;
      case OpKind::select: {
        const Eigen::ArrayXXd on = (n.mask > 0.0).cast<double>();
        if (wants(0)) accumulate(a0, (g.array() * on).matrix());
        if (wants(1)) accumulate(adj[n.inputs[1]], (g.array() * (1.0 - on)).matrix());
        break;
      }
      case OpKind::linear_solve: {
        const Eigen::MatrixXd gb = in(0).transpose().partialPivLu().solve(g);
        if (wants(0)) accumulate(a0, -gb * n.value.transpose());
        if (wants(1)) accumulate(adj[n.inputs[1]], gb);
        break;
      }
      case OpKind::custom: {
        if (!n.backward) throw GradError("unsupported primitive: custom op '" + n.name + "' has no derivative");
        auto grads = n.backward(g);
        if (grads.size() != n.inputs.size()) throw GradError("custom op '" + n.name + "' returned wrong adjoint count");
        for (std::size_t i = 0; i < grads.size(); ++i) {
          if (!wants(i) || grads[i].size() == 0) continue;
          require_same_shape(grads[i], in(i), "custom adjoint");
          accumulate(adj[n.inputs[i]], grads[i]);
        }
        break;
      }
    }
  }
  return adj;
}

std::vector<Eigen::MatrixXd> Tape::replay() const {
  std::vector<Eigen::MatrixXd> values;
  values.reserve(nodes_.size());
  for (const auto& n : nodes_) values.push_back(evaluate(n, values));
  return values;
}

GradResult grad(const LossFunction& loss_fn, const std::vector<Parameter>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.input(p.value));
  const Var loss = loss_fn(tape, vars);
  const auto adj = tape.backward(loss);

  GradResult result;
  result.loss = loss.value()(0, 0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& a = adj[vars[i].id()];
    Eigen::VectorXd g = a.size() == 0 ? Eigen::VectorXd::Zero(params[i].value.size()) : Eigen::VectorXd(a.col(0));
    for (std::size_t j = 0; j < params[i].frozen.size() && j < static_cast<std::size_t>(g.size()); ++j)
      if (params[i].frozen[j]) g[static_cast<Eigen::Index>(j)] = 0.0;
    result.gradients.push_back(std::move(g));
  }
  return result;
}

Eigen::VectorXd solve_transposed(const Eigen::MatrixXd& dF_dz, const Eigen::VectorXd& cotangent) {
  // Rows and columns are equilibrated first, so a regular but badly scaled
  // matrix (a species with a degenerate range, say) is not mistaken for a
  // singular one.
  Eigen::MatrixXd a = dF_dz.transpose();
  if (!a.allFinite()) throw SingularSystem("non-finite iteration matrix in adjoint solve");
  const Eigen::VectorXd rows = a.cwiseAbs().rowwise().maxCoeff();
  if (!(rows.minCoeff() > 0.0)) throw SingularSystem("singular iteration matrix in adjoint solve");
  a = rows.cwiseInverse().asDiagonal() * a;
  const Eigen::VectorXd cols = a.cwiseAbs().colwise().maxCoeff().transpose();
  if (!(cols.minCoeff() > 0.0)) throw SingularSystem("singular iteration matrix in adjoint solve");
  a = a * cols.cwiseInverse().asDiagonal();
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
  const double rc = lu.rcond();
  if (!(rc > 1e-15)) throw SingularSystem("singular iteration matrix in adjoint solve");
  const Eigen::VectorXd x = lu.solve(rows.cwiseInverse().cwiseProduct(cotangent)).cwiseQuotient(cols);
  if (!x.allFinite()) throw SingularSystem("non-finite adjoint solution");
  return x;
}

Eigen::VectorXd adjoint_implicit_solve(const ImplicitFunction& F, const Eigen::VectorXd& z_star,
                                       const Eigen::VectorXd& p, const Eigen::VectorXd& cotangent, double tol) {
  if (F.residual) {
    const double res = F.residual(z_star, p).lpNorm<Eigen::Infinity>();
    if (!(res <= tol)) throw std::invalid_argument("adjoint_implicit_solve: z* is not a converged root");
  }
  const Eigen::VectorXd w = solve_transposed(F.jacobian_z(z_star, p), cotangent);
  return -(F.jacobian_p(z_star, p).transpose() * w);
}

}  // namespace stiffkin::ad
