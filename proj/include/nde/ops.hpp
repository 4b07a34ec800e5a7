#pragma once

// Overload set shared by the plain (Eigen) and taped (ad::Var) evaluation
// paths. Generic network, integrator and shooting code is written against
// these names so that one source produces both the primal value and the
// recorded program.

#include <Eigen/Dense>

#include "nde/ad.hpp"

namespace nde::ops {

inline const Eigen::VectorXd& value(const Eigen::VectorXd& x) { return x; }
inline const Eigen::VectorXd& value(const ad::Var& x) { return x.value(); }

inline Eigen::Index size(const Eigen::VectorXd& x) { return x.size(); }
inline Eigen::Index size(const ad::Var& x) { return x.size(); }

inline Eigen::Index rows(const Eigen::MatrixXd& w) { return w.rows(); }
inline Eigen::Index rows(const ad::MatVar& w) { return w.rows; }
inline Eigen::Index cols(const Eigen::MatrixXd& w) { return w.cols(); }
inline Eigen::Index cols(const ad::MatVar& w) { return w.cols; }

inline Eigen::VectorXd tanh(const Eigen::VectorXd& x) { return x.array().tanh().matrix(); }
inline ad::Var tanh(const ad::Var& x) { return ad::tanh(x); }

inline Eigen::VectorXd cube(const Eigen::VectorXd& x) { return x.array().cube().matrix(); }
inline ad::Var cube(const ad::Var& x) { return ad::cube(x); }

inline Eigen::VectorXd sqrt_floor(const Eigen::VectorXd& x, double floor) {
  return x.array().max(floor).sqrt().matrix();
}
inline ad::Var sqrt_floor(const ad::Var& x, double floor) { return ad::sqrt_floor(x, floor); }

inline Eigen::VectorXd matvec(const Eigen::MatrixXd& w, const Eigen::VectorXd& x) {
  if (x.size() != w.cols()) throw InputError("matvec: dimension mismatch");
  return w * x;
}
inline ad::Var matvec(const ad::MatVar& w, const ad::Var& x) { return ad::matvec(w, x); }

inline Eigen::VectorXd matvec_t(const Eigen::MatrixXd& w, const Eigen::VectorXd& x) {
  if (x.size() != w.rows()) throw InputError("matvec_t: dimension mismatch");
  return w.transpose() * x;
}
inline ad::Var matvec_t(const ad::MatVar& w, const ad::Var& x) { return ad::matvec_t(w, x); }

inline double norm(const Eigen::VectorXd& x) { return x.norm(); }
inline ad::Var norm(const ad::Var& x) { return ad::norm(x); }

inline Eigen::VectorXd div_scalar(const Eigen::VectorXd& x, double s) { return x / s; }
inline ad::Var div_scalar(const ad::Var& x, const ad::Var& s) { return ad::div_scalar(x, s); }

inline double scalar_value(double s) { return s; }
inline double scalar_value(const ad::Var& s) { return s.scalar(); }

inline double sum_squares(const Eigen::VectorXd& x) { return x.squaredNorm(); }
inline ad::Var sum_squares(const ad::Var& x) { return ad::sum_squares(x); }

inline Eigen::VectorXd embed(const Eigen::VectorXd& x, Eigen::Index offset, Eigen::Index total) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(total);
  out.segment(offset, x.size()) = x;
  return out;
}
inline ad::Var embed(const ad::Var& x, Eigen::Index offset, Eigen::Index total) {
  return ad::embed(x, offset, total);
}

inline Eigen::VectorXd hadamard(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.cwiseProduct(b);
}
inline ad::Var hadamard(const ad::Var& a, const ad::Var& b) { return ad::hadamard(a, b); }

/// x ∘ c for a constant vector c.
inline Eigen::VectorXd scale_by(const Eigen::VectorXd& x, const Eigen::VectorXd& c) {
  return x.cwiseProduct(c);
}
inline ad::Var scale_by(const ad::Var& x, const Eigen::VectorXd& c) {
  return ad::hadamard(x, x.tape()->constant(c));
}

/// x + c for a constant vector c.
inline Eigen::VectorXd add_constant(const Eigen::VectorXd& x, const Eigen::VectorXd& c) {
  return x + c;
}
inline ad::Var add_constant(const ad::Var& x, const Eigen::VectorXd& c) { return x + c; }

/// Constant vector living on the same evaluation path as `like`.
inline Eigen::VectorXd constant_like(const Eigen::VectorXd&, Eigen::VectorXd c) { return c; }
inline ad::Var constant_like(const ad::Var& like, Eigen::VectorXd c) {
  return like.tape()->constant(std::move(c));
}

}  // namespace nde::ops
