#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

// Reverse-mode differentiation over dense matrix values.
namespace stiffkin::ad {

class GradError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularSystem : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;
  const Eigen::MatrixXd& value() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class OpKind { input, constant, add, sub, mul, scale, matmul, exp, log, tanh, sum, select, linear_solve, custom };

const char* to_string(OpKind op);

using CustomForward = std::function<Eigen::MatrixXd(const std::vector<const Eigen::MatrixXd*>& inputs)>;
/// Given the output adjoint, returns one adjoint per input (same shapes).
using CustomBackward = std::function<std::vector<Eigen::MatrixXd>(const Eigen::MatrixXd& out_adjoint)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var input(Eigen::MatrixXd value);
  Var constant(Eigen::MatrixXd value);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double c);
  Var matmul(Var a, Var b);
  Var exp(Var a);
  Var log(Var a);
  Var tanh(Var a);
  Var sum(Var a);
  /// Elementwise mask ? a : b.
  Var select(const Eigen::ArrayXXd& mask, Var a, Var b);
  /// x = A⁻¹ b.
  Var linear_solve(Var a, Var b);
  /// Operation whose derivative is supplied by the caller. An empty
  /// backward makes the node non-differentiable.
  Var custom(std::string name, std::vector<Var> inputs, CustomForward forward, CustomBackward backward);

  /// mean of squares, built from the primitives above.
  Var mean_square(Var a);

  std::size_t size() const { return nodes_.size(); }
  const Eigen::MatrixXd& value(Var v) const { return nodes_[v.id()].value; }
  OpKind kind(Var v) const { return nodes_[v.id()].op; }

  /// Adjoint of every node with respect to the scalar `output`.
  std::vector<Eigen::MatrixXd> backward(Var output) const;

  /// Recomputes every node value from the recorded inputs.
  std::vector<Eigen::MatrixXd> replay() const;

 private:
  struct Node {
    OpKind op = OpKind::input;
    std::vector<std::size_t> inputs;
    Eigen::MatrixXd value;
    bool needs_grad = false;
    double scalar = 0.0;
    Eigen::ArrayXXd mask;
    std::string name;
    CustomForward forward;
    CustomBackward backward;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  Eigen::MatrixXd evaluate(const Node& n, const std::vector<Eigen::MatrixXd>& values) const;

  std::vector<Node> nodes_;
};

/// Parameter vector with an optional frozen mask; frozen gradient entries
/// are reported as exactly zero.
struct Parameter {
  Eigen::VectorXd value;
  std::vector<bool> frozen;
};

struct GradResult {
  double loss = 0.0;
  std::vector<Eigen::VectorXd> gradients;
};

using LossFunction = std::function<Var(Tape&, const std::vector<Var>& params)>;

GradResult grad(const LossFunction& loss_fn, const std::vector<Parameter>& params);

/// Solves (dF/dz)ᵀ w = cotangent.
Eigen::VectorXd solve_transposed(const Eigen::MatrixXd& dF_dz, const Eigen::VectorXd& cotangent);

/// Residual F(z; p) = 0 with its partial Jacobians.
struct ImplicitFunction {
  std::function<Eigen::VectorXd(const Eigen::VectorXd& z, const Eigen::VectorXd& p)> residual;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd& z, const Eigen::VectorXd& p)> jacobian_z;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd& z, const Eigen::VectorXd& p)> jacobian_p;
};

/// Implicit-function-theorem pullback at a converged root z*: returns
/// -(∂F/∂p)ᵀ w with (∂F/∂z)ᵀ w = cotangent. Throws std::invalid_argument
/// if ‖F(z*)‖∞ exceeds tol.
Eigen::VectorXd adjoint_implicit_solve(const ImplicitFunction& F, const Eigen::VectorXd& z_star,
                                       const Eigen::VectorXd& p, const Eigen::VectorXd& cotangent,
                                       double tol = 1e-10);

}  // namespace stiffkin::ad
