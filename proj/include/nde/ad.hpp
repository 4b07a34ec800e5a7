#pragma once

// Reverse-mode differentiation over vector-valued primitives.
//
// A Tape records every primitive applied to Var handles together with its
// primal value. Nodes are appended in evaluation order, so the reverse of the
// append order is a valid reverse topological order for the adjoint sweep.
// Scalars are represented as length-1 vectors.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "nde/error.hpp"

namespace nde::ad {

enum class Op : std::uint8_t {
  leaf,
  constant,
  add,
  sub,
  scale,
  hadamard,
  tanh,
  cube,
  sqrt_floor,
  matvec,
  matvec_t,
  sum_squares,
  dot,
  norm,
  div_scalar,
  mul_scalar,
  slice,
  embed,
  sum,
  abs,
  max_abs,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::constant: return "constant";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::scale: return "scale";
    case Op::hadamard: return "hadamard";
    case Op::tanh: return "tanh";
    case Op::cube: return "cube";
    case Op::sqrt_floor: return "sqrt_floor";
    case Op::matvec: return "matvec";
    case Op::matvec_t: return "matvec_t";
    case Op::sum_squares: return "sum_squares";
    case Op::dot: return "dot";
    case Op::norm: return "norm";
    case Op::div_scalar: return "div_scalar";
    case Op::mul_scalar: return "mul_scalar";
    case Op::slice: return "slice";
    case Op::embed: return "embed";
    case Op::sum: return "sum";
    case Op::abs: return "abs";
    case Op::max_abs: return "max_abs";
  }
  return "unknown";
}

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

  inline const Eigen::VectorXd& value() const;
  Eigen::Index size() const { return value().size(); }
  double scalar() const { return value()[0]; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// A matrix stored row-major inside a vector node.
struct MatVar {
  Var data;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
};

class Tape {
 public:
  struct Node {
    Op op = Op::constant;
    int a = -1;
    int b = -1;
    double c = 0.0;
    // matvec: matrix shape; slice: (offset, length); embed: (offset, total).
    Eigen::Index m = 0;
    Eigen::Index n = 0;
    Eigen::VectorXd value;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(Eigen::VectorXd v) { return push_leaf(Op::leaf, std::move(v)); }
  Var constant(Eigen::VectorXd v) { return push_leaf(Op::constant, std::move(v)); }
  Var constant(double s) { return constant(Eigen::VectorXd::Constant(1, s)); }

  Var record(Op op, int a, int b = -1, double c = 0.0, Eigen::Index m = 0,
             Eigen::Index n = 0) {
    Node node{op, a, b, c, m, n, {}};
    node.value = evaluate(node);
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const Eigen::VectorXd& value(int id) const { return node(id).value; }

  /// Overwrite the primal value of a leaf; call replay() to propagate.
  void set_value(Var leaf, Eigen::VectorXd v) {
    auto& node = nodes_[static_cast<std::size_t>(leaf.id())];
    if (node.op != Op::leaf && node.op != Op::constant)
      throw InputError("set_value: node is not a leaf");
    if (v.size() != node.value.size())
      throw InputError("set_value: size mismatch");
    node.value = std::move(v);
  }

  /// Recompute every non-leaf value from its operands in recording order.
  void replay() {
    for (auto& node : nodes_)
      if (node.op != Op::leaf && node.op != Op::constant) node.value = evaluate(node);
  }

  void clear_adjoints() { adjoints_.clear(); }

  /// Add `seed` to the adjoint of `out`. Seeds accumulate until backward().
  void seed(Var out, const Eigen::VectorXd& seed) {
    ensure_adjoints();
    if (seed.size() != out.size()) throw InputError("seed: size mismatch");
    accumulate(out.id(), seed);
  }
  void seed(Var out, double s) { seed(out, Eigen::VectorXd::Constant(1, s)); }

  /// Propagate seeded adjoints to every node. Throws GradientError naming the
  /// first node (in sweep order) whose adjoint is not finite.
  void backward() {
    ensure_adjoints();
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      const auto& g = adjoints_[static_cast<std::size_t>(i)];
      if (g.size() == 0) continue;
      const Node& node = nodes_[static_cast<std::size_t>(i)];
      if (!g.allFinite())
        throw GradientError("non-finite partial at node " + std::to_string(i) + " (" +
                                op_name(node.op) + ")",
                            static_cast<std::size_t>(i));
      propagate(node, g);
    }
  }

  /// Adjoint of a node after backward(); zero if nothing reached it.
  Eigen::VectorXd adjoint(Var v) const {
    const auto id = static_cast<std::size_t>(v.id());
    if (id < adjoints_.size() && adjoints_[id].size() != 0) return adjoints_[id];
    return Eigen::VectorXd::Zero(v.size());
  }

 private:
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Var push_leaf(Op op, Eigen::VectorXd v) {
    Node node;
    node.op = op;
    node.value = std::move(v);
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  void ensure_adjoints() {
    if (adjoints_.size() < nodes_.size()) adjoints_.resize(nodes_.size());
  }

  void accumulate(int id, const Eigen::VectorXd& g) {
    auto& slot = adjoints_[static_cast<std::size_t>(id)];
    if (slot.size() == 0)
      slot = g;
    else
      slot += g;
  }

  const Eigen::VectorXd& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  Eigen::VectorXd evaluate(const Node& node) const {
    switch (node.op) {
      case Op::leaf:
      case Op::constant:
        return node.value;
      case Op::add:
        return val(node.a) + val(node.b);
      case Op::sub:
        return val(node.a) - val(node.b);
      case Op::scale:
        return node.c * val(node.a);
      case Op::hadamard:
        return val(node.a).cwiseProduct(val(node.b));
      case Op::tanh:
        return val(node.a).array().tanh().matrix();
      case Op::cube:
        return val(node.a).array().cube().matrix();
      case Op::sqrt_floor:
        return val(node.a).array().max(node.c).sqrt().matrix();
      case Op::matvec: {
        Eigen::Map<const RowMajor> w(val(node.a).data(), node.m, node.n);
        return w * val(node.b);
      }
      case Op::matvec_t: {
        Eigen::Map<const RowMajor> w(val(node.a).data(), node.m, node.n);
        return w.transpose() * val(node.b);
      }
      case Op::sum_squares:
        return Eigen::VectorXd::Constant(1, val(node.a).squaredNorm());
      case Op::dot:
        return Eigen::VectorXd::Constant(1, val(node.a).dot(val(node.b)));
      case Op::norm:
        return Eigen::VectorXd::Constant(1, val(node.a).norm());
      case Op::div_scalar:
        return val(node.a) / val(node.b)[0];
      case Op::mul_scalar:
        return val(node.a) * val(node.b)[0];
      case Op::slice:
        return val(node.a).segment(node.m, node.n);
      case Op::embed: {
        Eigen::VectorXd out = Eigen::VectorXd::Zero(node.n);
        out.segment(node.m, val(node.a).size()) = val(node.a);
        return out;
      }
      case Op::sum:
        return Eigen::VectorXd::Constant(1, val(node.a).sum());
      case Op::abs:
        return val(node.a).cwiseAbs();
      case Op::max_abs:
        return Eigen::VectorXd::Constant(
            1, val(node.a).size() == 0 ? 0.0 : val(node.a).cwiseAbs().maxCoeff());
    }
    return {};
  }

  void propagate(const Node& node, const Eigen::VectorXd& g) {
    switch (node.op) {
      case Op::leaf:
      case Op::constant:
        return;
      case Op::add:
        accumulate(node.a, g);
        accumulate(node.b, g);
        return;
      case Op::sub:
        accumulate(node.a, g);
        accumulate(node.b, -g);
        return;
      case Op::scale:
        accumulate(node.a, node.c * g);
        return;
      case Op::hadamard:
        accumulate(node.a, g.cwiseProduct(val(node.b)));
        accumulate(node.b, g.cwiseProduct(val(node.a)));
        return;
      case Op::tanh: {
        const auto& y = node.value;
        accumulate(node.a, g.cwiseProduct((1.0 - y.array().square()).matrix()));
        return;
      }
      case Op::cube: {
        const auto& x = val(node.a);
        accumulate(node.a, g.cwiseProduct((3.0 * x.array().square()).matrix()));
        return;
      }
      case Op::sqrt_floor: {
        const auto& x = val(node.a);
        Eigen::VectorXd d(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i)
          d[i] = x[i] > node.c ? 0.5 / node.value[i] : 0.0;
        accumulate(node.a, g.cwiseProduct(d));
        return;
      }
      case Op::matvec: {
        Eigen::Map<const RowMajor> w(val(node.a).data(), node.m, node.n);
        const auto& x = val(node.b);
        RowMajor gw = g * x.transpose();
        accumulate(node.a, Eigen::Map<const Eigen::VectorXd>(gw.data(), gw.size()));
        accumulate(node.b, w.transpose() * g);
        return;
      }
      case Op::matvec_t: {
        Eigen::Map<const RowMajor> w(val(node.a).data(), node.m, node.n);
        const auto& x = val(node.b);
        RowMajor gw = x * g.transpose();
        accumulate(node.a, Eigen::Map<const Eigen::VectorXd>(gw.data(), gw.size()));
        accumulate(node.b, w * g);
        return;
      }
      case Op::sum_squares:
        accumulate(node.a, (2.0 * g[0]) * val(node.a));
        return;
      case Op::dot:
        accumulate(node.a, g[0] * val(node.b));
        accumulate(node.b, g[0] * val(node.a));
        return;
      case Op::norm: {
        const double r = node.value[0];
        if (r > 0.0) accumulate(node.a, (g[0] / r) * val(node.a));
        return;
      }
      case Op::div_scalar: {
        const double s = val(node.b)[0];
        accumulate(node.a, g / s);
        accumulate(node.b, Eigen::VectorXd::Constant(1, -g.dot(val(node.a)) / (s * s)));
        return;
      }
      case Op::mul_scalar: {
        const double s = val(node.b)[0];
        accumulate(node.a, g * s);
        accumulate(node.b, Eigen::VectorXd::Constant(1, g.dot(val(node.a))));
        return;
      }
      case Op::slice: {
        Eigen::VectorXd full = Eigen::VectorXd::Zero(val(node.a).size());
        full.segment(node.m, node.n) = g;
        accumulate(node.a, full);
        return;
      }
      case Op::embed:
        accumulate(node.a, g.segment(node.m, val(node.a).size()));
        return;
      case Op::sum:
        accumulate(node.a, Eigen::VectorXd::Constant(val(node.a).size(), g[0]));
        return;
      case Op::abs: {
        const auto& x = val(node.a);
        Eigen::VectorXd d(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i) d[i] = x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0);
        accumulate(node.a, g.cwiseProduct(d));
        return;
      }
      case Op::max_abs: {
        const auto& x = val(node.a);
        if (x.size() == 0) return;
        Eigen::Index k = 0;
        x.cwiseAbs().maxCoeff(&k);
        Eigen::VectorXd d = Eigen::VectorXd::Zero(x.size());
        d[k] = x[k] > 0 ? g[0] : (x[k] < 0 ? -g[0] : 0.0);
        accumulate(node.a, d);
        return;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<Eigen::VectorXd> adjoints_;
};

inline const Eigen::VectorXd& Var::value() const { return tape_->value(id_); }

namespace detail {
inline void check_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw InputError("operands recorded on different tapes");
}
inline void check_same_size(const Var& a, const Var& b, const char* what) {
  if (a.size() != b.size()) throw InputError(std::string(what) + ": size mismatch");
}
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) {
  detail::check_same_tape(a, b);
  detail::check_same_size(a, b, "add");
  return a.tape()->record(Op::add, a.id(), b.id());
}
inline Var operator-(const Var& a, const Var& b) {
  detail::check_same_tape(a, b);
  detail::check_same_size(a, b, "sub");
  return a.tape()->record(Op::sub, a.id(), b.id());
}
inline Var operator*(double c, const Var& a) { return a.tape()->record(Op::scale, a.id(), -1, c); }
inline Var operator*(const Var& a, double c) { return c * a; }
inline Var operator-(const Var& a) { return -1.0 * a; }
inline Var operator+(const Var& a, const Eigen::VectorXd& c) { return a + a.tape()->constant(c); }
inline Var operator-(const Var& a, const Eigen::VectorXd& c) { return a - a.tape()->constant(c); }

inline Var hadamard(const Var& a, const Var& b) {
  detail::check_same_tape(a, b);
  detail::check_same_size(a, b, "hadamard");
  return a.tape()->record(Op::hadamard, a.id(), b.id());
}
inline Var tanh(const Var& a) { return a.tape()->record(Op::tanh, a.id()); }
inline Var cube(const Var& a) { return a.tape()->record(Op::cube, a.id()); }
/// sqrt(max(a, floor)); the derivative is zero where a <= floor.
inline Var sqrt_floor(const Var& a, double floor) {
  return a.tape()->record(Op::sqrt_floor, a.id(), -1, floor);
}
inline Var matvec(const MatVar& w, const Var& x) {
  detail::check_same_tape(w.data, x);
  if (x.size() != w.cols) throw InputError("matvec: dimension mismatch");
  return x.tape()->record(Op::matvec, w.data.id(), x.id(), 0.0, w.rows, w.cols);
}
inline Var matvec_t(const MatVar& w, const Var& x) {
  detail::check_same_tape(w.data, x);
  if (x.size() != w.rows) throw InputError("matvec_t: dimension mismatch");
  return x.tape()->record(Op::matvec_t, w.data.id(), x.id(), 0.0, w.rows, w.cols);
}
inline Var sum_squares(const Var& a) { return a.tape()->record(Op::sum_squares, a.id()); }
inline Var dot(const Var& a, const Var& b) {
  detail::check_same_tape(a, b);
  detail::check_same_size(a, b, "dot");
  return a.tape()->record(Op::dot, a.id(), b.id());
}
inline Var norm(const Var& a) { return a.tape()->record(Op::norm, a.id()); }
inline Var div_scalar(const Var& a, const Var& s) {
  detail::check_same_tape(a, s);
  return a.tape()->record(Op::div_scalar, a.id(), s.id());
}
inline Var mul_scalar(const Var& a, const Var& s) {
  detail::check_same_tape(a, s);
  return a.tape()->record(Op::mul_scalar, a.id(), s.id());
}
inline Var slice(const Var& a, Eigen::Index offset, Eigen::Index length) {
  if (offset < 0 || length < 0 || offset + length > a.size())
    throw InputError("slice: out of range");
  return a.tape()->record(Op::slice, a.id(), -1, 0.0, offset, length);
}
/// Zero vector of length `total` with `a` written at `offset`.
inline Var embed(const Var& a, Eigen::Index offset, Eigen::Index total) {
  if (offset < 0 || offset + a.size() > total) throw InputError("embed: out of range");
  return a.tape()->record(Op::embed, a.id(), -1, 0.0, offset, total);
}
inline Var sum(const Var& a) { return a.tape()->record(Op::sum, a.id()); }
inline Var abs(const Var& a) { return a.tape()->record(Op::abs, a.id()); }
inline Var max_abs(const Var& a) { return a.tape()->record(Op::max_abs, a.id()); }

inline MatVar as_matrix(const Var& flat, Eigen::Index rows, Eigen::Index cols) {
  if (flat.size() != rows * cols) throw InputError("as_matrix: size mismatch");
  return MatVar{flat, rows, cols};
}

/// Decision-vector aligned partials.
using Gradient = Eigen::VectorXd;

struct ValueAndGradient {
  double value = 0.0;
  Gradient gradient;
};

/// Reverse-mode gradient of a scalar program. `objective` receives a fresh
/// tape and the leaf holding z, and must return a length-1 Var.
template <class Objective>
ValueAndGradient grad(Objective&& objective, const Eigen::VectorXd& z) {
  Tape tape;
  const Var zv = tape.variable(z);
  const Var out = objective(tape, zv);
  if (out.size() != 1) throw InputError("grad: objective must return a scalar");
  tape.seed(out, 1.0);
  tape.backward();
  ValueAndGradient result{out.scalar(), tape.adjoint(zv)};
  if (!result.gradient.allFinite())
    throw GradientError("non-finite gradient entry", static_cast<std::size_t>(zv.id()));
  return result;
}

/// Central finite differences (f(z+εeᵢ) − f(z−εeᵢ)) / 2ε.
template <class Function>
Gradient fd_grad(Function&& f, const Eigen::VectorXd& z, double eps) {
  if (!(eps > 0.0)) throw InputError("fd_grad: eps must be positive");
  Gradient g(z.size());
  Eigen::VectorXd probe = z;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    probe[i] = z[i] + eps;
    const double up = f(probe);
    probe[i] = z[i] - eps;
    const double down = f(probe);
    probe[i] = z[i];
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

}  // namespace nde::ad
