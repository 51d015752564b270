#pragma once

#include <Eigen/Dense>
#include <complex>
#include <numbers>

namespace swingkit {

using Complex = std::complex<double>;
using VecC = Eigen::VectorXcd;
using MatC = Eigen::MatrixXcd;
using VecR = Eigen::VectorXd;
using MatR = Eigen::MatrixXd;
using RowR = Eigen::RowVectorXd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr Complex kJ{0.0, 1.0};

// Real stacking of a complex map acting on a real vector:
// rows (Re; Im), so [Re(A); Im(A)] * w reproduces (Re(A w); Im(A w)).
inline MatR stack_real(const MatC& a) {
  MatR out(2 * a.rows(), a.cols());
  out.topRows(a.rows()) = a.real();
  out.bottomRows(a.rows()) = a.imag();
  return out;
}

inline VecR stack_real(const VecC& a) {
  VecR out(2 * a.size());
  out.head(a.size()) = a.real();
  out.tail(a.size()) = a.imag();
  return out;
}

// Embedding of a complex matrix as the rotation-commuting real block form
// [[Re, -Im], [Im, Re]] acting on stacked (x; y).
inline MatR complex_embed(const MatC& a) {
  MatR out(2 * a.rows(), 2 * a.cols());
  out.topLeftCorner(a.rows(), a.cols()) = a.real();
  out.topRightCorner(a.rows(), a.cols()) = -a.imag();
  out.bottomLeftCorner(a.rows(), a.cols()) = a.imag();
  out.bottomRightCorner(a.rows(), a.cols()) = a.real();
  return out;
}

// Split a stacked real vector (x; y) back into a complex vector x + j y.
inline VecC unstack_complex(const VecR& w) {
  const Eigen::Index n = w.size() / 2;
  VecC v(n);
  v.real() = w.head(n);
  v.imag() = w.tail(n);
  return v;
}

}  // namespace swingkit
