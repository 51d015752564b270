#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "swingkit/case_model.hpp"
#include "swingkit/errors.hpp"
#include "swingkit/he_linearizer.hpp"
#include "swingkit/types.hpp"

namespace swingkit {

// Machine-side state on the internal nodes: w stacks (x_I; y_I), wdot its rate.
struct SwingState {
  double t = 0.0;
  VecR w;
  VecR wdot;
};

// Operating quantities that close the classical machine model for one region.
struct MachineOperating {
  double e = 1.0;       // internal voltage magnitude
  double p_mech = 0.0;  // mechanical input, pu
};

inline std::vector<MachineOperating> default_operating(const AugmentedNetwork& net) {
  std::vector<MachineOperating> out(net.n_machines());
  for (int j = 0; j < net.n_machines(); ++j)
    out[j] = {net.machines[j].e, net.p_mech[j]};
  return out;
}

// ddelta/dt = (x y' - y x') / (x^2 + y^2), the rotational part of the motion
inline VecR rotor_speeds(const SwingState& s, int ni) {
  require(s.w.size() == 2 * ni && s.wdot.size() == 2 * ni, ErrorKind::config,
          "state size must match the machine count");
  VecR out(ni);
  for (int j = 0; j < ni; ++j) {
    const double x = s.w(j), y = s.w(ni + j);
    const double r2 = x * x + y * y;
    require(r2 > 0.0, ErrorKind::domain, "machine voltage collapsed to the origin");
    out(j) = (x * s.wdot(ni + j) - y * s.wdot(j)) / r2;
  }
  return out;
}

// rotor angle is the imaginary part of log(x + jy)
inline VecR rotor_angles(const VecR& w) {
  const int ni = static_cast<int>(w.size()) / 2;
  VecR out(ni);
  for (int j = 0; j < ni; ++j) out(j) = std::atan2(w(ni + j), w(j));
  return out;
}

// Linear swing ODE  w'' + diag(D/M) w' + L w + l = 0  over the stacked
// internal voltages, with the network folded in through the master map.
struct SwingSystem {
  MatR l_mat;     // L
  VecR l_vec;     // l
  VecR d_over_m;  // per-machine damping over inertia
  MatR t_mat;     // companion [[0, I], [-L, -diag(D/M)]]
  VecR b0;        // b_jj + (M_j/E_j^2)(ddelta_j/dt)^2, frozen at region entry
  MatR j_rot;     // [[0, diag(w0)], [-diag(w0), 0]] with region-entry speeds
  int region = 0;
  int n_i = 0;
  int rank_l = 0;
  double cond_l = 0.0;  // |sigma_max/sigma_min| of L, logged at assembly
};

// Row pair of machine j, scaled by 1/M_j:
//   x: b0_j E^2 x_j + (p_mech - g E^2) y_j - xi_j - |y_link| E^2 v_k^x
//   y: b0_j E^2 y_j - (p_mech - g E^2) x_j - zeta_j - |y_link| E^2 v_k^y
// with xi/zeta and the terminal voltage v_k taken from the master map.
inline SwingSystem build_swing_system(const PadeLinearization& lin,
                                      const std::vector<MachineOperating>& gens,
                                      const AugmentedNetwork& net, const SwingState& state0,
                                      int region = 0) {
  const int ni = net.n_machines(), nkm = net.n_km();
  require(ni >= 1, ErrorKind::config, "need at least one machine");
  require(lin.n_i == ni && lin.n_km == nkm, ErrorKind::config,
          "linearization does not match the network");
  require(static_cast<int>(gens.size()) == ni, ErrorKind::config,
          "need operating data per machine");

  SwingSystem sys;
  sys.region = region;
  sys.n_i = ni;
  sys.l_mat = MatR::Zero(2 * ni, 2 * ni);
  sys.l_vec = VecR::Zero(2 * ni);
  sys.d_over_m = VecR::Zero(ni);
  sys.b0 = VecR::Zero(ni);
  const VecR speeds = rotor_speeds(state0, ni);

  for (int j = 0; j < ni; ++j) {
    const GeneratorDynamic& dyn = net.machines[j];
    const GenLink& link = net.links[j];
    require(dyn.m > 0.0, ErrorKind::domain, "machine inertia must be positive");
    require(gens[j].e > 0.0, ErrorKind::domain, "internal voltage must be positive");
    const double m = dyn.m, e2 = gens[j].e * gens[j].e;
    const double g_jj = link.g_self, b_jj = -link.b_self;
    sys.d_over_m(j) = dyn.d / m;
    sys.b0(j) = b_jj + (m / e2) * speeds(j) * speeds(j);

    const auto pos = std::find(net.km.begin(), net.km.end(), link.kbus);
    require(pos != net.km.end(), ErrorKind::structural,
            "terminal bus is not among the retained buses");
    const int kx = static_cast<int>(pos - net.km.begin());
    const int ky = nkm + kx;
    const double swing = gens[j].p_mech - g_jj * e2;
    const double couple = link.y_link * e2;

    sys.l_mat.row(j) = (-lin.map.row(lin.xi_start() + j) - couple * lin.map.row(kx)) / m;
    sys.l_mat(j, j) += sys.b0(j) * e2 / m;
    sys.l_mat(j, ni + j) += swing / m;
    sys.l_vec(j) = -(lin.off(lin.xi_start() + j) + couple * lin.off(kx)) / m;

    sys.l_mat.row(ni + j) =
        (-lin.map.row(lin.zeta_start() + j) - couple * lin.map.row(ky)) / m;
    sys.l_mat(ni + j, ni + j) += sys.b0(j) * e2 / m;
    sys.l_mat(ni + j, j) -= swing / m;
    sys.l_vec(ni + j) = -(lin.off(lin.zeta_start() + j) + couple * lin.off(ky)) / m;
  }

  sys.t_mat = MatR::Zero(4 * ni, 4 * ni);
  sys.t_mat.topRightCorner(2 * ni, 2 * ni) = MatR::Identity(2 * ni, 2 * ni);
  sys.t_mat.bottomLeftCorner(2 * ni, 2 * ni) = -sys.l_mat;
  for (int j = 0; j < ni; ++j) {
    sys.t_mat(2 * ni + j, 2 * ni + j) = -sys.d_over_m(j);
    sys.t_mat(3 * ni + j, 3 * ni + j) = -sys.d_over_m(j);
  }

  sys.j_rot = MatR::Zero(2 * ni, 2 * ni);
  for (int j = 0; j < ni; ++j) {
    sys.j_rot(j, ni + j) = speeds(j);
    sys.j_rot(ni + j, j) = -speeds(j);
  }

  const Eigen::JacobiSVD<MatR> svd(sys.l_mat);
  const VecR& sv = svd.singularValues();
  sys.rank_l = static_cast<int>(svd.rank());
  sys.cond_l = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : 0.0;
  require(sys.rank_l == 2 * ni, ErrorKind::singular,
          "coupling matrix is singular: rank " + std::to_string(sys.rank_l) + " of " +
              std::to_string(2 * ni));
  return sys;
}

// Real-form eigenmodes of the companion matrix: real eigenvalues ascending,
// then conjugate pairs (decay alpha, frequency omega > 0) by ascending omega.
struct ModeSet {
  VecR lambda_re;  // real eigenvalues
  MatR vec_re;     // one eigenvector column each
  VecR alpha;      // pair decay rates
  VecR omega;      // pair frequencies
  MatR pair_a;     // real parts of the pair eigenvectors
  MatR pair_b;     // imaginary parts
  int n_state = 0;

  int n_real() const { return static_cast<int>(lambda_re.size()); }
  int n_pairs() const { return static_cast<int>(alpha.size()); }
  int n_modes() const { return n_real() + 2 * n_pairs(); }
  double spectral_abscissa() const {
    double worst = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n_real(); ++i) worst = std::max(worst, lambda_re(i));
    for (int p = 0; p < n_pairs(); ++p) worst = std::max(worst, alpha(p));
    return worst;
  }
};

// Columns psi_k: the mode values at t = 0 (the beta-fit basis).
inline MatR mode_matrix_at0(const ModeSet& modes) {
  MatR phi(modes.n_state, modes.n_modes());
  int k = 0;
  for (int i = 0; i < modes.n_real(); ++i) phi.col(k++) = modes.vec_re.col(i);
  for (int p = 0; p < modes.n_pairs(); ++p) {
    phi.col(k++) = modes.pair_a.col(p);
    phi.col(k++) = modes.pair_b.col(p);
  }
  return phi;
}

// Worst Sylvester residual ||T Psi_k - Psi_k D_l|| over the modes, where the
// pair blocks evolve by [[alpha, -omega], [omega, alpha]].
inline double mode_residual(const SwingSystem& sys, const ModeSet& modes) {
  double worst = 0.0;
  for (int i = 0; i < modes.n_real(); ++i)
    worst = std::max(
        worst,
        (sys.t_mat * modes.vec_re.col(i) - modes.lambda_re(i) * modes.vec_re.col(i)).norm());
  for (int p = 0; p < modes.n_pairs(); ++p) {
    const VecR a = modes.pair_a.col(p), b = modes.pair_b.col(p);
    const double al = modes.alpha(p), om = modes.omega(p);
    MatR c1(modes.n_state, 2), c2(modes.n_state, 2);
    c1.col(0) = a;
    c1.col(1) = -b;
    c2.col(0) = b;
    c2.col(1) = a;
    MatR r(2, 2);
    r << al, -om, om, al;
    worst = std::max(worst, (sys.t_mat * c1 - c1 * r).norm());
    worst = std::max(worst, (sys.t_mat * c2 - c2 * r).norm());
  }
  return worst;
}

inline ModeSet eigensolve(const SwingSystem& sys) {
  const int n = 4 * sys.n_i;
  Eigen::EigenSolver<MatR> es(sys.t_mat);
  require(es.info() == Eigen::Success, ErrorKind::singular,
          "eigen decomposition did not converge");

  const VecC lam = es.eigenvalues();
  double scale = 0.0;
  for (int i = 0; i < n; ++i) scale = std::max(scale, std::abs(lam(i)));
  const double tol = 1e-9 * std::max(1.0, scale);

  std::vector<int> real_idx, pair_idx;
  for (int i = 0; i < n; ++i) {
    if (std::abs(lam(i).imag()) <= tol)
      real_idx.push_back(i);
    else if (lam(i).imag() > 0.0)
      pair_idx.push_back(i);
  }
  require(static_cast<int>(real_idx.size() + 2 * pair_idx.size()) == n, ErrorKind::singular,
          "eigenvalues did not split into reals and conjugate pairs");

  std::sort(real_idx.begin(), real_idx.end(),
            [&](int a, int b) { return lam(a).real() < lam(b).real(); });
  std::sort(pair_idx.begin(), pair_idx.end(),
            [&](int a, int b) { return lam(a).imag() < lam(b).imag(); });

  ModeSet modes;
  modes.n_state = n;
  const int nr = static_cast<int>(real_idx.size());
  const int np = static_cast<int>(pair_idx.size());
  modes.lambda_re.resize(nr);
  modes.vec_re.resize(n, nr);
  for (int i = 0; i < nr; ++i) {
    modes.lambda_re(i) = lam(real_idx[i]).real();
    modes.vec_re.col(i) = es.eigenvectors().col(real_idx[i]).real();
  }
  modes.alpha.resize(np);
  modes.omega.resize(np);
  modes.pair_a.resize(n, np);
  modes.pair_b.resize(n, np);
  for (int p = 0; p < np; ++p) {
    modes.alpha(p) = lam(pair_idx[p]).real();
    modes.omega(p) = lam(pair_idx[p]).imag();
    modes.pair_a.col(p) = es.eigenvectors().col(pair_idx[p]).real();
    modes.pair_b.col(p) = es.eigenvectors().col(pair_idx[p]).imag();
  }

  const Eigen::JacobiSVD<MatR> phi_svd(mode_matrix_at0(modes));
  const VecR& phi_sv = phi_svd.singularValues();
  if (phi_sv(n - 1) < 1e-10 * phi_sv(0)) {
    double best = std::numeric_limits<double>::infinity();
    Complex rep = lam(0);
    for (int i = 0; i < n; ++i)
      for (int k = i + 1; k < n; ++k)
        if (std::abs(lam(i) - lam(k)) < best) {
          best = std::abs(lam(i) - lam(k));
          rep = lam(i);
        }
    char buf[96];
    std::snprintf(buf, sizeof buf, "defective system: repeated eigenvalue %.6g%+.6gi",
                  rep.real(), rep.imag());
    fail(ErrorKind::singular, buf);
  }
  require(mode_residual(sys, modes) <= 1e-8 * sys.t_mat.norm(), ErrorKind::singular,
          "eigenmode residual exceeds tolerance; system is near defective");
  return modes;
}

struct BetaFit {
  VecR beta;
  double residual = 0.0;
};

// argmin over beta of || [psi_1 ... psi_n] beta - (w0 - w_eq; -J w0) ||
inline BetaFit fit_beta(const ModeSet& modes, const VecR& w0, const MatR& j_rot,
                        const VecR& w_eq) {
  const int half = modes.n_state / 2;
  require(w0.size() == half && w_eq.size() == half, ErrorKind::config,
          "initial state must cover the machine coordinates");
  require(j_rot.rows() == half && j_rot.cols() == half, ErrorKind::config,
          "rotation block must match the machine coordinates");
  const MatR phi = mode_matrix_at0(modes);
  VecR rhs(modes.n_state);
  rhs.head(half) = w0 - w_eq;
  rhs.tail(half) = -j_rot * w0;
  Eigen::ColPivHouseholderQR<MatR> qr(phi);
  if (qr.rank() < modes.n_modes())
    fail(ErrorKind::degenerate, "mode matrix is rank deficient: rank " +
                                    std::to_string(qr.rank()) + " of " +
                                    std::to_string(modes.n_modes()));
  BetaFit out;
  out.beta = qr.solve(rhs);
  out.residual = (phi * out.beta - rhs).norm();
  return out;
}

// Closed-form region solution: sum of beta-weighted modes plus the constant
// offset (-L^{-1} l; 0), valid from the region start t0 onward.
struct AnalyticSolution {
  ModeSet modes;
  VecR beta;
  VecR w_eq;
  double t0 = 0.0;
  double fit_residual = 0.0;
  int n_i = 0;
};

inline AnalyticSolution analytic_solution(const SwingSystem& sys, const SwingState& state0) {
  AnalyticSolution sol;
  sol.n_i = sys.n_i;
  sol.t0 = state0.t;
  const Eigen::FullPivLU<MatR> lu(sys.l_mat);
  require(lu.isInvertible(), ErrorKind::singular,
          "coupling matrix is singular: rank " + std::to_string(lu.rank()) + " of " +
              std::to_string(2 * sys.n_i));
  sol.w_eq = -lu.solve(sys.l_vec);
  sol.modes = eigensolve(sys);
  const BetaFit fit = fit_beta(sol.modes, state0.w, sys.j_rot, sol.w_eq);
  sol.beta = fit.beta;
  sol.fit_residual = fit.residual;
  return sol;
}

// Full companion state (w; w') at time t.
inline VecR evaluate_state(const AnalyticSolution& sol, double t) {
  require(t >= sol.t0, ErrorKind::domain, "evaluation before the region start");
  const double dt = t - sol.t0;
  VecR s = VecR::Zero(sol.modes.n_state);
  int k = 0;
  for (int i = 0; i < sol.modes.n_real(); ++i)
    s += sol.beta(k++) * std::exp(sol.modes.lambda_re(i) * dt) * sol.modes.vec_re.col(i);
  for (int p = 0; p < sol.modes.n_pairs(); ++p) {
    const double e = std::exp(sol.modes.alpha(p) * dt);
    const double c = std::cos(sol.modes.omega(p) * dt), sn = std::sin(sol.modes.omega(p) * dt);
    s += sol.beta(k++) * e * (c * sol.modes.pair_a.col(p) - sn * sol.modes.pair_b.col(p));
    s += sol.beta(k++) * e * (sn * sol.modes.pair_a.col(p) + c * sol.modes.pair_b.col(p));
  }
  s.head(sol.modes.n_state / 2) += sol.w_eq;
  return s;
}

// Time derivative (w'; w'') from the differentiated mode basis.
inline VecR evaluate_state_dot(const AnalyticSolution& sol, double t) {
  require(t >= sol.t0, ErrorKind::domain, "evaluation before the region start");
  const double dt = t - sol.t0;
  VecR s = VecR::Zero(sol.modes.n_state);
  int k = 0;
  for (int i = 0; i < sol.modes.n_real(); ++i)
    s += sol.beta(k++) * sol.modes.lambda_re(i) * std::exp(sol.modes.lambda_re(i) * dt) *
         sol.modes.vec_re.col(i);
  for (int p = 0; p < sol.modes.n_pairs(); ++p) {
    const double al = sol.modes.alpha(p), om = sol.modes.omega(p);
    const double e = std::exp(al * dt);
    const double c = std::cos(om * dt), sn = std::sin(om * dt);
    s += sol.beta(k++) * e *
         ((al * c - om * sn) * sol.modes.pair_a.col(p) -
          (al * sn + om * c) * sol.modes.pair_b.col(p));
    s += sol.beta(k++) * e *
         ((al * sn + om * c) * sol.modes.pair_a.col(p) +
          (al * c - om * sn) * sol.modes.pair_b.col(p));
  }
  return s;
}

inline SwingState evaluate(const AnalyticSolution& sol, double t) {
  const VecR s = evaluate_state(sol, t);
  const int half = sol.modes.n_state / 2;
  return {t, s.head(half), s.tail(half)};
}

// || w'' + diag(D/M) w' + L w + l || relative to the largest term magnitude
inline double ode_residual(const SwingSystem& sys, const AnalyticSolution& sol, double t) {
  const VecR s = evaluate_state(sol, t);
  const VecR sd = evaluate_state_dot(sol, t);
  const int half = sol.modes.n_state / 2, ni = sys.n_i;
  const VecR w = s.head(half), wdot = s.tail(half), wddot = sd.tail(half);
  VecR damp(half);
  for (int j = 0; j < ni; ++j) {
    damp(j) = sys.d_over_m(j) * wdot(j);
    damp(ni + j) = sys.d_over_m(j) * wdot(ni + j);
  }
  const VecR spring = sys.l_mat * w + sys.l_vec;
  const VecR r = wddot + damp + spring;
  const double scale =
      std::max({wddot.norm(), damp.norm(), spring.norm(), (sd.head(half) - wdot).norm(), 1e-300});
  return std::max(r.norm(), (sd.head(half) - wdot).norm()) / scale;
}

// COI weights M_j / M_tot
inline VecR coi_weights(const VecR& m_inertia) {
  require((m_inertia.array() > 0.0).all(), ErrorKind::domain,
          "inertias must be positive");
  return m_inertia / m_inertia.sum();
}

// delta_j - delta_COI = sum_i [delta_ij - M_i/M_tot] delta_i, reference-free
inline VecR to_coi_angles(const VecR& delta18, const VecR& m_inertia) {
  require(delta18.size() == m_inertia.size(), ErrorKind::config,
          "need one angle per machine");
  const VecR w = coi_weights(m_inertia);
  return delta18.array() - w.dot(delta18);
}

// Eigenvalues with the scaled leading coefficient of each mode.
inline void write_mode_report(std::ostream& os, const AnalyticSolution& sol) {
  char buf[128];
  auto line = [&](int k, double re, double im, double coeff) {
    std::snprintf(buf, sizeof buf, "mode %d lambda %.12g %.12g coeff %.12g\n", k, re, im,
                  coeff);
    os << buf;
  };
  os << "modes " << sol.modes.n_modes() << "\n";
  int k = 0;
  for (int i = 0; i < sol.modes.n_real(); ++i) {
    const double coeff = std::abs(sol.beta(k)) * sol.modes.vec_re.col(i).cwiseAbs().maxCoeff();
    line(k + 1, sol.modes.lambda_re(i), 0.0, coeff);
    ++k;
  }
  for (int p = 0; p < sol.modes.n_pairs(); ++p) {
    const double lead = std::max(sol.modes.pair_a.col(p).cwiseAbs().maxCoeff(),
                                 sol.modes.pair_b.col(p).cwiseAbs().maxCoeff());
    line(k + 1, sol.modes.alpha(p), sol.modes.omega(p), std::abs(sol.beta(k)) * lead);
    ++k;
    line(k + 1, sol.modes.alpha(p), -sol.modes.omega(p), std::abs(sol.beta(k)) * lead);
    ++k;
  }
}

}  // namespace swingkit
