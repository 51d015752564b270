#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "swingkit/case_model.hpp"
#include "swingkit/errors.hpp"
#include "swingkit/he_linearizer.hpp"
#include "swingkit/qpf.hpp"
#include "swingkit/swing_core.hpp"
#include "swingkit/types.hpp"

namespace swingkit {

// Validity boundary around one expansion point. Each machine carries the
// 3-vector (1 - |v_j|/E_j, x_j x_j' + y_j y_j', relative total-power drift)
// whose 1-norm must stay under eps (conservative end of ||.||inf <= ||.||2
// <= ||.||1); the worst machine governs. The power ratio is of totals:
// machines swing against each other to first order, so the total moves with
// the losses and the term stays second order like the other two.
struct ValidityConstraint {
  double eps = 0.01;
  VecR e_mag;          // per-machine radius
  double p_tot0 = 0.0; // region-start total generation, the drift datum
  MatR p_map;          // machine P block of the master map
  VecR p_off;
};

inline ValidityConstraint make_constraint(const PadeLinearization& lin,
                                          const std::vector<MachineOperating>& gens,
                                          const VecR& w_start, double eps) {
  const int ni = lin.n_i;
  require(static_cast<int>(gens.size()) == ni, ErrorKind::config,
          "need operating data per machine");
  ValidityConstraint c;
  c.eps = eps;
  c.e_mag.resize(ni);
  for (int j = 0; j < ni; ++j) c.e_mag(j) = gens[j].e;
  c.p_map = lin.map.middleRows(lin.p_start(), ni);
  c.p_off = lin.off.segment(lin.p_start(), ni);
  c.p_tot0 = (c.p_map * w_start + c.p_off).sum();
  require(c.p_tot0 != 0.0, ErrorKind::config,
          "zero region-start total generation leaves the power drift undefined");
  return c;
}

inline double constraint_value(const ValidityConstraint& c, const SwingState& s) {
  const int ni = static_cast<int>(c.e_mag.size());
  require(s.w.size() == 2 * ni && s.wdot.size() == 2 * ni, ErrorKind::config,
          "state size must match the machine count");
  double worst = 0.0;
  for (int j = 0; j < ni; ++j) {
    const double x = s.w(j), y = s.w(ni + j);
    const double own = std::abs(1.0 - std::sqrt(x * x + y * y) / c.e_mag(j)) +
                       std::abs(x * s.wdot(j) + y * s.wdot(ni + j));
    worst = std::max(worst, own);
  }
  // the total-power entry is common to every machine's vector
  return worst + std::abs((c.p_map * s.w + c.p_off).sum() / c.p_tot0 - 1.0);
}

// ||w - w0|| / ||w0||, the trust bound of the linear map around w0. A plain
// ratio of norms cannot serve here: consistent starts restore every machine
// magnitude, hence the state norm, so it would sit at zero while the angles
// walk arbitrarily far from the expansion point.
inline double o2_drift(const PadeLinearization& lin, const VecR& w) {
  const double base = lin.w0.norm();
  require(base > 0.0, ErrorKind::config, "expansion point has zero norm");
  return (w - lin.w0).norm() / base;
}

struct CrossingOptions {
  double step = 1e-3;  // dense sampling stride, seconds
  double t_tol = 1e-9;
};

// Earliest t in (t0, t_max] where the constraint reaches eps: dense march
// then bisection on the closed-form solution.
inline std::optional<double> find_crossing(const AnalyticSolution& sol,
                                           const ValidityConstraint& c, double t_max,
                                           CrossingOptions opts = {}) {
  require(t_max > sol.t0, ErrorKind::domain, "horizon precedes the segment start");
  auto value = [&](double t) { return constraint_value(c, evaluate(sol, t)); };
  require(value(sol.t0) <= c.eps, ErrorKind::domain,
          "constraint already exceeds the tolerance at the segment start");

  double lo = sol.t0;
  while (lo < t_max) {
    const double hi = std::min(lo + opts.step, t_max);
    if (value(hi) > c.eps) {
      double a = lo, b = hi;
      while (b - a > opts.t_tol) {
        const double mid = 0.5 * (a + b);
        (value(mid) > c.eps ? b : a) = mid;
      }
      return 0.5 * (a + b);
    }
    lo = hi;
  }
  return std::nullopt;
}

enum class ProjectionMode { position, velocity, both };

struct InitOptions {
  ProjectionMode mode = ProjectionMode::both;
  double tol = 1e-12;  // on ||g||; the certificate requirement is 1e-8
  int max_iter = 25;
  double position_weight = 10.0;  // velocity moves are preferred ten to one
};

// Consistent start for a region: w on the machine circles, radial velocity
// zero, and the acceleration closing the linear swing balance exactly.
struct ConsistentState {
  VecR w, wdot, wddot;
  double residual = 0.0;  // ||F|| = ||(f; g)|| at the returned point
  double g_full = 0.0;    // both Eq-style blocks even when the mode solves one
  int iterations = 0;
  double dw_norm = 0.0;     // accumulated position correction
  double dwdot_norm = 0.0;  // accumulated velocity correction
  VecR p_inj;               // master-map injections at the returned point
};

// Newton on F = (f; g): g rows are chosen by the mode, steps are least-norm
// in a metric that makes position moves expensive, and the acceleration block
// f is closed exactly once g converges.
inline ConsistentState consistent_init(const SwingState& guess, const PadeLinearization& lin,
                                       const SwingSystem& sys,
                                       const std::vector<MachineOperating>& gens,
                                       InitOptions opts = {}) {
  const int ni = sys.n_i;
  require(guess.w.size() == 2 * ni && guess.wdot.size() == 2 * ni, ErrorKind::config,
          "state size must match the machine count");
  require(static_cast<int>(gens.size()) == ni, ErrorKind::config,
          "need operating data per machine");
  const bool use_pos = opts.mode != ProjectionMode::velocity;
  const bool use_vel = opts.mode != ProjectionMode::position;
  const int rows = (use_pos ? ni : 0) + (use_vel ? ni : 0);

  VecR w = guess.w, wd = guess.wdot;
  auto g_of = [&](const VecR& wv, const VecR& wdv) {
    VecR g(rows);
    int r = 0;
    if (use_pos)
      for (int j = 0; j < ni; ++j, ++r)
        g(r) = gens[j].e * gens[j].e - (wv(j) * wv(j) + wv(ni + j) * wv(ni + j));
    if (use_vel)
      for (int j = 0; j < ni; ++j, ++r)
        g(r) = wv(j) * wdv(j) + wv(ni + j) * wdv(ni + j);
    return g;
  };

  ConsistentState out;
  int it = 0;
  VecR g = g_of(w, wd);
  for (; it < opts.max_iter && g.norm() > opts.tol; ++it) {
    MatR jac = MatR::Zero(rows, 4 * ni);
    int r = 0;
    if (use_pos)
      for (int j = 0; j < ni; ++j, ++r) {
        jac(r, j) = -2.0 * w(j);
        jac(r, ni + j) = -2.0 * w(ni + j);
      }
    if (use_vel)
      for (int j = 0; j < ni; ++j, ++r) {
        jac(r, j) = wd(j);
        jac(r, ni + j) = wd(ni + j);
        jac(r, 2 * ni + j) = w(j);
        jac(r, 3 * ni + j) = w(ni + j);
      }
    // velocity mode moves only the wdot block
    if (opts.mode == ProjectionMode::velocity) jac.leftCols(2 * ni).setZero();

    VecR w_inv(4 * ni);
    w_inv.head(2 * ni).setConstant(1.0 / opts.position_weight);
    w_inv.tail(2 * ni).setOnes();
    // least-norm step in the metric W: delta = W^-1 J^T (J W^-1 J^T)^-1 (-g)
    const MatR gram = jac * w_inv.asDiagonal() * jac.transpose();
    const Eigen::FullPivLU<MatR> lu(gram);
    require(lu.isInvertible(), ErrorKind::singular, "singular projection Jacobian");
    const VecR delta = w_inv.asDiagonal() * (jac.transpose() * lu.solve(-g));
    w += delta.head(2 * ni);
    wd += delta.tail(2 * ni);
    out.dw_norm += delta.head(2 * ni).norm();
    out.dwdot_norm += delta.tail(2 * ni).norm();
    g = g_of(w, wd);
  }
  require(g.norm() <= 1e-8, ErrorKind::divergence,
          "consistent initialization stalled after " + std::to_string(it) + " iterations");

  out.w = w;
  out.wdot = wd;
  out.wddot = -(sys.l_mat * w + sys.l_vec);
  for (int j = 0; j < ni; ++j) {
    out.wddot(j) -= sys.d_over_m(j) * wd(j);
    out.wddot(ni + j) -= sys.d_over_m(j) * wd(ni + j);
  }
  VecR f_res = out.wddot + sys.l_mat * w + sys.l_vec;
  for (int j = 0; j < ni; ++j) {
    f_res(j) += sys.d_over_m(j) * wd(j);
    f_res(ni + j) += sys.d_over_m(j) * wd(ni + j);
  }
  out.residual = std::sqrt(f_res.squaredNorm() + g.squaredNorm());
  double g2 = 0.0;
  for (int j = 0; j < ni; ++j) {
    const double mag = gens[j].e * gens[j].e - (w(j) * w(j) + w(ni + j) * w(ni + j));
    const double rad = w(j) * wd(j) + w(ni + j) * wd(ni + j);
    g2 += mag * mag + rad * rad;
  }
  out.g_full = std::sqrt(g2);
  out.iterations = it;
  out.p_inj = lin.predict_p(w);
  return out;
}

enum class ExitCause { boundary, horizon, instability };

inline const char* exit_name(ExitCause cause) {
  switch (cause) {
    case ExitCause::boundary: return "boundary";
    case ExitCause::horizon: return "horizon";
    default: return "instability";
  }
}

namespace detail {

// i*v over the stacked (x; y) blocks, the direction of a rigid rotation
inline VecR quarter_turn(const VecR& w) {
  const int ni = static_cast<int>(w.size()) / 2;
  VecR out(w.size());
  out.head(ni) = -w.tail(ni);
  out.tail(ni) = w.head(ni);
  return out;
}

inline VecR rotate_stack(const VecR& w, double theta) {
  const int ni = static_cast<int>(w.size()) / 2;
  const double c = std::cos(theta), s = std::sin(theta);
  VecR out(w.size());
  out.head(ni) = c * w.head(ni) - s * w.tail(ni);
  out.tail(ni) = s * w.head(ni) + c * w.tail(ni);
  return out;
}

}  // namespace detail

// inertia-weighted mean rotor speed, the uniform rotation a segment frame removes
inline double coi_speed(const SwingState& s, const VecR& m_inertia) {
  const int ni = static_cast<int>(m_inertia.size());
  return coi_weights(m_inertia).dot(rotor_speeds(s, ni));
}

struct SegmentDiag {
  int reinit_iterations = 0;  // Newton count that produced this segment's start
  double f_residual = 0.0;    // ||F|| certificate at the start
  bool relinearized = false;
  double join_jump = 0.0;       // |w_left - w_start|_inf at the entry join
  double kirchhoff_gap = 0.0;   // |p_network - p_map|_inf at the start
};

struct RegionSegment {
  double t_start = 0.0;
  double t_end = 0.0;
  double frame_speed = 0.0;  // uniform rotation removed before solving
  VecR w0;  // expansion state the segment's system was built around
  AnalyticSolution sol;   // closed form in the co-rotating frame
  ValidityConstraint constraint;  // the datum this segment was trusted against
  ExitCause exit = ExitCause::horizon;
  SegmentDiag diag;
};

// Closed-form sample mapped back to the fixed frame: positions rotate by the
// accumulated frame angle and velocities regain the frame's angular rate.
inline SwingState segment_state(const RegionSegment& seg, double t) {
  SwingState s = evaluate(seg.sol, t);
  if (seg.frame_speed != 0.0) {
    const double theta = seg.frame_speed * (t - seg.t_start);
    s.wdot = detail::rotate_stack(
        s.wdot + seg.frame_speed * detail::quarter_turn(s.w), theta);
    s.w = detail::rotate_stack(s.w, theta);
  }
  return s;
}

struct PiecewiseTrajectory {
  std::vector<RegionSegment> segments;
  bool completed = false;
  std::string failure;
  int n_i = 0;

  double t_begin() const { return segments.front().t_start; }
  double t_finish() const { return segments.back().t_end; }
  bool hit_instability() const {
    return !segments.empty() && segments.back().exit == ExitCause::instability;
  }

  // at a join the stored sample is the projected right start
  const RegionSegment& segment_at(double t) const {
    require(!segments.empty(), ErrorKind::domain, "empty trajectory");
    require(t >= t_begin() - 1e-12 && t <= t_finish() + 1e-12, ErrorKind::domain,
            "time outside the computed trajectory");
    std::size_t k = 0;
    while (k + 1 < segments.size() && t >= segments[k + 1].t_start) ++k;
    return segments[k];
  }
  SwingState state_at(double t) const {
    const RegionSegment& seg = segment_at(t);
    return segment_state(seg, std::clamp(t, seg.t_start, seg.t_end));
  }
};

struct ChainOptions {
  double eps = 0.01;
  double eps_o2 = 0.0;  // 0 keeps the Eq-16 bound equal to eps
  double sample_dt = 1e-3;
  double t_tol = 1e-9;
  int max_segments = 200;
  bool relinearize = true;
  bool coi_frame = true;  // solve each segment co-rotating at its entry COI speed
  double runaway_ratio = 2.0;   // |v_j|/E_j beyond this is divergence
  double spread_limit = kPi;    // unwrapped COI angle spread beyond this too
  InitOptions init;
};

namespace detail {

inline double wrap_angle(double a) {
  while (a > kPi) a -= 2.0 * kPi;
  while (a < -kPi) a += 2.0 * kPi;
  return a;
}

// first sampled time where the segment runs away or the machines separate
inline std::optional<double> scan_instability(const AnalyticSolution& sol, const VecR& e_mag,
                                              const VecR& m_inertia, double t_end, double dt,
                                              double runaway_ratio, double spread_limit) {
  const int ni = static_cast<int>(e_mag.size());
  VecR unwrapped = rotor_angles(evaluate_state(sol, sol.t0).head(2 * ni));
  for (double t = sol.t0;; t = std::min(t + dt, t_end)) {
    const VecR s = evaluate_state(sol, t).head(2 * ni);
    const VecR ang = rotor_angles(s);
    for (int j = 0; j < ni; ++j)
      unwrapped(j) += wrap_angle(ang(j) - wrap_angle(unwrapped(j)));
    for (int j = 0; j < ni; ++j) {
      const double r = std::hypot(s(j), s(ni + j));
      if (r >= runaway_ratio * e_mag(j)) return t;
    }
    if (ni > 1) {
      const VecR coi = to_coi_angles(unwrapped, m_inertia);
      if (coi.maxCoeff() - coi.minCoeff() > spread_limit) return t;
    }
    if (t >= t_end) return std::nullopt;
  }
}

}  // namespace detail

// True network injections at the machines with the retained buses solved by
// power balance, the datum the master-map prediction is checked against.
inline VecR kirchhoff_injections(const AugmentedNetwork& net, const ExtendedLoadSet& loads,
                                 const VecR& w) {
  const int ni = net.n_machines();
  VecC v_i(ni);
  for (int j = 0; j < ni; ++j) v_i(j) = Complex(w(j), w(ni + j));
  const QuadraticFormSystem sys = assemble_qpf(net, loads, v_i);
  const QpfSolution ps = solve_qpf(sys, flat_guess(sys));
  VecR p(ni);
  for (int j = 0; j < ni; ++j) p(j) = ps.p_inj(net.ibus[j]);
  return p;
}

// Piecewise closed-form trajectory: solve, ride to the validity boundary,
// project a consistent start, refresh the frozen terms, and continue. Each
// segment is solved in a frame co-rotating at its entry COI speed: machine
// power is rotation invariant, the rotation's damping folds into the
// mechanical torque, and the map keeps being read near its expansion point
// instead of spinning away from it. The expensive sensitivity rebuild
// happens only when the trust bound trips.
inline PiecewiseTrajectory chain_segments(const AugmentedNetwork& net,
                                          const ExtendedLoadSet& loads,
                                          const std::vector<MachineOperating>& gens,
                                          const PadeLinearization& lin0,
                                          const SwingState& initial, double t_end,
                                          ChainOptions opts = {}) {
  require(t_end > initial.t, ErrorKind::domain, "horizon precedes the start");
  const int ni = net.n_machines();
  const double eps_o2 = opts.eps_o2 > 0.0 ? opts.eps_o2 : opts.eps;
  VecR e_mag(ni), m_inertia(ni);
  for (int j = 0; j < ni; ++j) {
    e_mag(j) = gens[j].e;
    m_inertia(j) = net.machines[j].m;
  }

  PiecewiseTrajectory traj;
  traj.n_i = ni;
  PadeLinearization lin = lin0;
  SwingState state = initial;
  SegmentDiag pending;

  for (int seg = 0; seg < opts.max_segments; ++seg) {
    double omega_c = 0.0;
    SwingState state_f = state;
    std::vector<MachineOperating> gens_f = gens;
    if (opts.coi_frame) {
      omega_c = coi_speed(state, m_inertia);
      state_f.wdot -= omega_c * detail::quarter_turn(state.w);
      for (int j = 0; j < ni; ++j) gens_f[j].p_mech -= net.machines[j].d * omega_c;
    }
    const SwingSystem sys = build_swing_system(lin, gens_f, net, state_f, seg);
    RegionSegment region;
    region.t_start = state.t;
    region.frame_speed = omega_c;
    region.w0 = state.w;
    region.sol = analytic_solution(sys, state_f);
    region.diag = pending;

    region.constraint = make_constraint(lin, gens, state.w, opts.eps);
    const std::optional<double> t_cross =
        find_crossing(region.sol, region.constraint, t_end, {opts.sample_dt, opts.t_tol});
    region.t_end = t_cross ? *t_cross : t_end;
    region.exit = t_cross ? ExitCause::boundary : ExitCause::horizon;

    const std::optional<double> t_unstable =
        detail::scan_instability(region.sol, e_mag, m_inertia, region.t_end, opts.sample_dt,
                                 opts.runaway_ratio, opts.spread_limit);
    if (t_unstable) {
      region.t_end = *t_unstable;
      region.exit = ExitCause::instability;
    }
    traj.segments.push_back(std::move(region));
    const RegionSegment& done = traj.segments.back();
    if (done.exit != ExitCause::boundary) {
      traj.completed = true;
      return traj;
    }

    // project in the frame, then return to the fixed frame for the next region
    const SwingState guess = evaluate(done.sol, done.t_end);
    ConsistentState cs;
    try {
      cs = consistent_init(guess, lin, sys, gens, opts.init);
    } catch (const Error& e) {
      traj.failure = e.what();
      return traj;
    }
    pending = SegmentDiag{};
    pending.reinit_iterations = cs.iterations;
    pending.f_residual = cs.residual;
    pending.join_jump = (cs.w - guess.w).cwiseAbs().maxCoeff();

    VecR w_next = cs.w, wdot_next = cs.wdot;
    if (opts.coi_frame) {
      const double theta = omega_c * (done.t_end - done.t_start);
      wdot_next =
          detail::rotate_stack(cs.wdot + omega_c * detail::quarter_turn(cs.w), theta);
      w_next = detail::rotate_stack(cs.w, theta);
    }

    if (opts.relinearize && o2_drift(lin, w_next) > eps_o2) {
      try {
        VecC v_i(ni);
        for (int j = 0; j < ni; ++j) v_i(j) = Complex(w_next(j), w_next(ni + j));
        lin = assemble_linearization(net, loads, v_i, lin.l, lin.m, lin.e_ref);
      } catch (const Error& e) {
        traj.failure = std::string("refresh failed at the region join: ") + e.what();
        return traj;
      }
      pending.relinearized = true;
    }
    try {
      pending.kirchhoff_gap =
          (kirchhoff_injections(net, loads, w_next) - lin.predict_p(w_next))
              .cwiseAbs()
              .maxCoeff();
    } catch (const Error&) {
      pending.kirchhoff_gap = std::numeric_limits<double>::quiet_NaN();
    }

    state = SwingState{done.t_end, w_next, wdot_next};
  }
  traj.failure = "segment budget exhausted";
  return traj;
}

// segment id, bounds, exit cause, and the entry-join certificates
inline void write_segment_log(std::ostream& os, const PiecewiseTrajectory& traj) {
  os << "segment,t_start,t_end,exit,reinit_iterations,f_residual,relinearized\n";
  char buf[160];
  for (std::size_t k = 0; k < traj.segments.size(); ++k) {
    const RegionSegment& s = traj.segments[k];
    std::snprintf(buf, sizeof buf, "%zu,%.12g,%.12g,%s,%d,%.12g,%d\n", k, s.t_start, s.t_end,
                  exit_name(s.exit), s.diag.reinit_iterations, s.diag.f_residual,
                  s.diag.relinearized ? 1 : 0);
    os << buf;
  }
}

}  // namespace swingkit
