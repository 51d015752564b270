#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "case_model.hpp"
#include "qpf.hpp"
#include "swing_core.hpp"
#include "zip_loads.hpp"

namespace swingkit {

enum class DampingModel { on_speed, on_angle };

struct TdsConfig {
  double dt = 1e-3;
  double horizon = 1.0;
  double qpf_tol = 1e-8;
  DampingModel damping = DampingModel::on_speed;
};

// Sampled rotor and voltage history on the integrator grid.
struct TdsTrajectory {
  VecR times;
  MatR delta;  // sample rows, one column per machine (rad)
  MatR omega;  // rad/s deviation from synchronous
  MatC v;      // sample rows, one column per network node
  long qpf_solves = 0;
  bool completed = false;
  std::string failure;

  int n_samples() const { return static_cast<int>(times.size()); }
  double t_begin() const {
    require(n_samples() > 0, ErrorKind::domain, "empty trajectory");
    return times(0);
  }
  double t_finish() const {
    require(n_samples() > 0, ErrorKind::domain, "empty trajectory");
    return times(n_samples() - 1);
  }

  // piecewise-linear readout between grid samples
  VecR delta_at(double t) const { return interp_rows(delta, t); }
  VecR omega_at(double t) const { return interp_rows(omega, t); }

 private:
  VecR interp_rows(const MatR& rows, double t) const {
    const int n = n_samples();
    require(n > 0, ErrorKind::domain, "empty trajectory");
    require(t >= times(0) - 1e-12 && t <= times(n - 1) + 1e-12, ErrorKind::domain,
            "time outside the sampled range");
    if (t <= times(0)) return rows.row(0).transpose();
    if (t >= times(n - 1)) return rows.row(n - 1).transpose();
    int lo = 0, hi = n - 1;
    while (hi - lo > 1) {
      const int mid = (lo + hi) / 2;
      (times(mid) <= t ? lo : hi) = mid;
    }
    const double f = (t - times(lo)) / (times(hi) - times(lo));
    return (rows.row(lo) * (1.0 - f) + rows.row(hi) * f).transpose();
  }
};

namespace detail {

// rotor angle and angular speed of each machine from the cartesian state
inline void rotor_coordinates(const SwingState& s, int ni, VecR& delta, VecR& omega) {
  delta.resize(ni);
  omega.resize(ni);
  for (int j = 0; j < ni; ++j) {
    const double x = s.w(j), y = s.w(ni + j);
    const double xd = s.wdot(j), yd = s.wdot(ni + j);
    const double r2 = x * x + y * y;
    require(r2 > 0.0, ErrorKind::domain, "machine voltage vanishes");
    delta(j) = std::atan2(y, x);
    omega(j) = (x * yd - y * xd) / r2;
  }
}

}  // namespace detail

// Modified-Euler swing integration with a network balance solve at both the
// predictor and the corrector stage.
inline TdsTrajectory tds_run(const AugmentedNetwork& net, const ExtendedLoadSet& loads,
                             const std::vector<MachineOperating>& gens, const SwingState& initial,
                             const TdsConfig& cfg) {
  require(cfg.dt > 0.0, ErrorKind::config, "step must be positive");
  require(cfg.horizon > 0.0, ErrorKind::config, "horizon must be positive");
  const int ni = net.n_machines();
  require(static_cast<int>(gens.size()) == ni, ErrorKind::config,
          "need one operating point per machine");

  VecR delta, omega;
  detail::rotor_coordinates(initial, ni, delta, omega);
  const VecR delta_ref = delta;

  VecR e(ni), pm(ni), mi(ni), dd(ni);
  for (int j = 0; j < ni; ++j) {
    e(j) = gens[j].e;
    pm(j) = gens[j].p_mech;
    mi(j) = net.machines[j].m;
    dd(j) = net.machines[j].d;
  }

  const int n_steps = static_cast<int>(std::ceil(cfg.horizon / cfg.dt - 1e-9));
  TdsTrajectory out;
  out.times.resize(n_steps + 1);
  out.delta.resize(n_steps + 1, ni);
  out.omega.resize(n_steps + 1, ni);
  out.v.resize(n_steps + 1, net.n_total());

  QuadraticFormSystem sys = assemble_qpf(net, loads, VecC::Ones(ni));
  QpfOptions qopts;
  qopts.tol = cfg.qpf_tol;
  qopts.solve_counter = &out.qpf_solves;
  VecC guess = flat_guess(sys);

  auto solve_at = [&](const VecR& dl) {
    for (int j = 0; j < ni; ++j)
      sys.v_fixed(net.ibus[j]) = e(j) * Complex(std::cos(dl(j)), std::sin(dl(j)));
    const QpfSolution ps = solve_qpf(sys, guess, qopts);
    guess = ps.v;
    return ps;
  };
  auto accel = [&](const VecR& dl, const VecR& om, const QpfSolution& ps) {
    VecR a(ni);
    for (int j = 0; j < ni; ++j) {
      const double damp = cfg.damping == DampingModel::on_speed ? dd(j) * om(j)
                                                                : dd(j) * (dl(j) - delta_ref(j));
      a(j) = (pm(j) - ps.p_inj(net.ibus[j]) - damp) / mi(j);
    }
    return a;
  };

  double t = initial.t;
  int row = 0;
  try {
    for (int k = 0; k < n_steps; ++k) {
      const QpfSolution here = solve_at(delta);
      out.times(row) = t;
      out.delta.row(row) = delta.transpose();
      out.omega.row(row) = omega.transpose();
      out.v.row(row) = here.v.transpose();
      ++row;

      const double h = std::min(cfg.dt, initial.t + cfg.horizon - t);
      const VecR a1 = accel(delta, omega, here);
      const VecR d1 = omega;
      const VecR delta_p = delta + h * d1;
      const VecR omega_p = omega + h * a1;

      const QpfSolution ahead = solve_at(delta_p);
      const VecR a2 = accel(delta_p, omega_p, ahead);
      const VecR d2 = omega_p;

      delta += 0.5 * h * (d1 + d2);
      omega += 0.5 * h * (a1 + a2);
      t += h;
    }
    const QpfSolution last = solve_at(delta);
    out.times(row) = t;
    out.delta.row(row) = delta.transpose();
    out.omega.row(row) = omega.transpose();
    out.v.row(row) = last.v.transpose();
    ++row;
    out.completed = true;
  } catch (const Error& err) {
    out.failure = err.what();
  }

  out.times.conservativeResize(row);
  out.delta.conservativeResize(row, ni);
  out.omega.conservativeResize(row, ni);
  out.v.conservativeResize(row, net.n_total());
  return out;
}

// Truncated power-series state around one expansion time.
struct McLaurinState {
  double t_tr = 0.0;
  int m = 0;
  MatR delta_c;  // m rows of coefficients, one column per machine
  MatR omega_c;
  MatC v_c;      // m rows, one column per network node; empty for synthetic oracles
};

// Horner evaluation of one coefficient column at offset dt from the expansion.
inline double evaluate_series(const VecR& coeffs, double dt) {
  double acc = 0.0;
  for (int k = static_cast<int>(coeffs.size()) - 1; k >= 0; --k)
    acc = acc * dt + coeffs(k);
  return acc;
}

// Per-order electrical power source: called once per order tau with every
// coefficient row at or below tau already filled in.
using PowerSeriesOracle = std::function<VecR(int tau, const MatR& delta_c, const MatR& omega_c)>;

// Coefficient recursion: M_j (tau+1) omega[tau+1] + D_j (tau+1) delta[tau+1]
// equals the order-tau net power, and (tau+1) delta[tau+1] = omega[tau].
inline McLaurinState htms_coefficients(const VecR& delta0, const VecR& omega0, int m,
                                       const VecR& m_inertia, const VecR& d_damp,
                                       const VecR& p_mech, const PowerSeriesOracle& p_elec_order) {
  const int ni = static_cast<int>(delta0.size());
  require(m >= 1, ErrorKind::config, "need at least one series term");
  require(omega0.size() == ni && m_inertia.size() == ni && d_damp.size() == ni &&
              p_mech.size() == ni,
          ErrorKind::config, "machine arrays disagree on the machine count");

  McLaurinState ms;
  ms.m = m;
  ms.delta_c.setZero(m, ni);
  ms.omega_c.setZero(m, ni);
  ms.delta_c.row(0) = delta0;
  ms.omega_c.row(0) = omega0;

  for (int tau = 0; tau + 1 < m; ++tau) {
    VecR pe;
    try {
      pe = p_elec_order(tau, ms.delta_c, ms.omega_c);
    } catch (const Error& err) {
      throw Error(err.kind(), "power series stalled at order " + std::to_string(tau) + ": " +
                                  err.what());
    }
    require(pe.size() == ni, ErrorKind::config, "oracle returned a wrong-sized power order");
    for (int j = 0; j < ni; ++j) {
      const double p_net = (tau == 0 ? p_mech(j) : 0.0) - pe(j);
      ms.omega_c(tau + 1, j) =
          (p_net - d_damp(j) * ms.omega_c(tau, j)) / ((tau + 1) * m_inertia(j));
      ms.delta_c(tau + 1, j) = ms.omega_c(tau, j) / (tau + 1);
    }
  }
  return ms;
}

// Drives the nodal voltage and electrical power series through the network
// balance, one order at a time. The linear operator of every order is the
// power balance Jacobian at the expansion solution, factored once.
class NetworkPowerSeries {
 public:
  NetworkPowerSeries(const AugmentedNetwork& net, const ExtendedLoadSet& loads,
                     const QpfSolution& base, int m)
      : ibus_(net.ibus), n_(net.n_total()), m_(m) {
    sys_ = assemble_qpf(net, loads, VecC::Ones(net.n_machines()));
    for (int j = 0; j < net.n_machines(); ++j) sys_.v_fixed(ibus_[j]) = base.v(ibus_[j]);
    VecR f;
    MatR jac;
    detail::qpf_residual(sys_, base.v, f, &jac);
    lu_.compute(jac);
    require(f.cwiseAbs().maxCoeff() <= 1e-6, ErrorKind::domain,
            "expansion state does not satisfy the power balance");

    const int ni = static_cast<int>(ibus_.size());
    v_hist_.setZero(m, n_);
    i_hist_.setZero(m, n_);
    rot_.setZero(m, ni);
    v_hist_.row(0) = base.v.transpose();
    i_hist_.row(0) = (sys_.y_eff * base.v - sys_.i0).transpose();
    e_mag_.resize(ni);
    for (int j = 0; j < ni; ++j) e_mag_(j) = std::abs(base.v(ibus_[j]));
  }

  // electrical power coefficients of order tau at the machines
  VecR order(int tau, const MatR& delta_c, const MatR& omega_c) {
    (void)omega_c;
    const int ni = static_cast<int>(ibus_.size());
    require(tau >= 0 && tau < m_, ErrorKind::domain, "order outside the allocated series");
    if (tau == 0) {
      for (int j = 0; j < ni; ++j)
        rot_(0, j) = Complex(std::cos(delta_c(0, j)), std::sin(delta_c(0, j)));
      return power_order(0);
    }

    // rotor factor exp(i delta(t)) advanced through g' = i delta' g
    for (int j = 0; j < ni; ++j) {
      Complex acc(0.0, 0.0);
      for (int k = 1; k <= tau; ++k)
        acc += static_cast<double>(k) * delta_c(k, j) * rot_(tau - k, j);
      rot_(tau, j) = Complex(0.0, 1.0) * acc / static_cast<double>(tau);
    }

    // order-tau balance: pinned machine rows, convolution remainder elsewhere
    VecR rhs = VecR::Zero(2 * n_);
    for (int j = 0; j < ni; ++j) {
      const Complex vt = e_mag_(j) * rot_(tau, j);
      rhs(2 * ibus_[j]) = vt.real();
      rhs(2 * ibus_[j] + 1) = vt.imag();
    }
    for (int i = 0; i < n_; ++i) {
      if (sys_.role[i] == NodeRole::fixed) continue;
      Complex r(0.0, 0.0);
      for (int a = 1; a < tau; ++a) r += std::conj(v_hist_(a, i)) * i_hist_(tau - a, i);
      rhs(2 * i) = -r.real();
      rhs(2 * i + 1) = -r.imag();
    }

    const VecR z = lu_.solve(rhs);
    require(z.allFinite(), ErrorKind::singular, "singular balance operator in the series solve");
    for (int i = 0; i < n_; ++i) v_hist_(tau, i) = Complex(z(i), z(n_ + i));
    i_hist_.row(tau) = (sys_.y_eff * v_hist_.row(tau).transpose()).transpose();
    ++solves_;
    return power_order(tau);
  }

  PowerSeriesOracle oracle() {
    return [this](int tau, const MatR& dc, const MatR& oc) { return order(tau, dc, oc); };
  }

  const MatC& v_series() const { return v_hist_; }
  long solves() const { return solves_; }

 private:
  VecR power_order(int tau) const {
    const int ni = static_cast<int>(ibus_.size());
    VecR p(ni);
    for (int j = 0; j < ni; ++j) {
      Complex s(0.0, 0.0);
      for (int a = 0; a <= tau; ++a)
        s += v_hist_(a, ibus_[j]) * std::conj(i_hist_(tau - a, ibus_[j]));
      p(j) = s.real();
    }
    return p;
  }

  std::vector<int> ibus_;
  int n_ = 0;
  int m_ = 0;
  QuadraticFormSystem sys_;
  Eigen::PartialPivLU<MatR> lu_;
  MatC v_hist_, i_hist_, rot_;
  VecR e_mag_;
  long solves_ = 0;
};

// Smallest last-ratio bound over every tracked series; terminating series
// contribute an unbounded radius.
inline double convergence_radius(const McLaurinState& ms) {
  require(ms.m >= 2, ErrorKind::domain, "radius needs at least two terms");
  const double inf = std::numeric_limits<double>::infinity();
  double radius = inf;
  auto take = [&](double prev, double last) {
    const double mag = std::abs(last);
    if (mag == 0.0) return;
    radius = std::min(radius, std::abs(prev) / mag);
  };
  for (int j = 0; j < ms.delta_c.cols(); ++j) {
    take(ms.delta_c(ms.m - 2, j), ms.delta_c(ms.m - 1, j));
    take(ms.omega_c(ms.m - 2, j), ms.omega_c(ms.m - 1, j));
  }
  for (int i = 0; i < ms.v_c.cols(); ++i) {
    take(ms.v_c(ms.m - 2, i).real(), ms.v_c(ms.m - 1, i).real());
    take(ms.v_c(ms.m - 2, i).imag(), ms.v_c(ms.m - 1, i).imag());
  }
  return radius;
}

struct HtmsSegment {
  double t_start = 0.0;
  double t_end = 0.0;
  double radius = 0.0;
  McLaurinState coeffs;
};

struct HtmsTrajectory {
  std::vector<HtmsSegment> segments;
  bool completed = false;
  std::string failure;
  long qpf_solves = 0;
  long order_solves = 0;

  double t_begin() const {
    require(!segments.empty(), ErrorKind::domain, "empty trajectory");
    return segments.front().t_start;
  }
  double t_finish() const {
    require(!segments.empty(), ErrorKind::domain, "empty trajectory");
    return segments.back().t_end;
  }
  const HtmsSegment& segment_at(double t) const {
    require(!segments.empty(), ErrorKind::domain, "empty trajectory");
    require(t >= t_begin() - 1e-12 && t <= t_finish() + 1e-12, ErrorKind::domain,
            "time outside the tracked range");
    for (size_t k = segments.size(); k-- > 1;)
      if (t >= segments[k].t_start) return segments[k];
    return segments.front();
  }
  VecR delta_at(double t) const { return eval(t, /*speed=*/false); }
  VecR omega_at(double t) const { return eval(t, /*speed=*/true); }

 private:
  VecR eval(double t, bool speed) const {
    const HtmsSegment& seg = segment_at(t);
    const double dt = std::clamp(t, seg.t_start, seg.t_end) - seg.coeffs.t_tr;
    const MatR& c = speed ? seg.coeffs.omega_c : seg.coeffs.delta_c;
    VecR out(c.cols());
    for (int j = 0; j < c.cols(); ++j) out(j) = evaluate_series(c.col(j), dt);
    return out;
  }
};

struct HtmsOptions {
  double safety = 0.5;    // fraction of the convergence radius spent per segment
  double dt_min = 1e-4;   // radius below this aborts with a term-count hint
  int max_segments = 20000;
};

// Series tracking with re-expansion once the guarded radius is spent.
inline HtmsTrajectory htms_run(const AugmentedNetwork& net, const ExtendedLoadSet& loads,
                               const std::vector<MachineOperating>& gens,
                               const SwingState& initial, int m, double horizon,
                               const HtmsOptions& opts = {}) {
  require(m >= 2, ErrorKind::config, "series tracking needs at least two terms");
  require(horizon > 0.0, ErrorKind::config, "horizon must be positive");
  const int ni = net.n_machines();
  require(static_cast<int>(gens.size()) == ni, ErrorKind::config,
          "need one operating point per machine");

  VecR delta, omega;
  detail::rotor_coordinates(initial, ni, delta, omega);
  VecR e(ni), pm(ni), mi(ni), dd(ni);
  for (int j = 0; j < ni; ++j) {
    e(j) = gens[j].e;
    pm(j) = gens[j].p_mech;
    mi(j) = net.machines[j].m;
    dd(j) = net.machines[j].d;
  }

  QuadraticFormSystem sys = assemble_qpf(net, loads, VecC::Ones(ni));
  QpfOptions qopts;
  HtmsTrajectory out;
  qopts.solve_counter = &out.qpf_solves;
  VecC guess = flat_guess(sys);

  const double t_end = initial.t + horizon;
  double t = initial.t;
  while (static_cast<int>(out.segments.size()) < opts.max_segments) {
    for (int j = 0; j < ni; ++j)
      sys.v_fixed(net.ibus[j]) = e(j) * Complex(std::cos(delta(j)), std::sin(delta(j)));
    const QpfSolution base = solve_qpf(sys, guess, qopts);
    guess = base.v;

    NetworkPowerSeries series(net, loads, base, m);
    McLaurinState ms = htms_coefficients(delta, omega, m, mi, dd, pm, series.oracle());
    ms.t_tr = t;
    ms.v_c = series.v_series();
    out.order_solves += series.solves();

    const double radius = convergence_radius(ms);
    require(radius >= opts.dt_min, ErrorKind::divergence,
            "series radius " + std::to_string(radius) +
                " collapsed below the step floor; increase the term count");
    const double step = opts.safety * radius;
    const double t_next = std::min(t + step, t_end);

    HtmsSegment seg;
    seg.t_start = t;
    seg.t_end = t_next;
    seg.radius = radius;
    seg.coeffs = std::move(ms);
    out.segments.push_back(std::move(seg));

    if (t_next >= t_end - 1e-12) {
      out.completed = true;
      break;
    }
    delta = out.delta_at(t_next);
    omega = out.omega_at(t_next);
    t = t_next;
  }
  if (!out.completed && out.failure.empty()) out.failure = "segment budget exhausted";
  return out;
}

// Shared sampled-trajectory table and its plot-ready rendering.
struct TrajectoryTable {
  VecR times;
  MatR delta_coi;  // one column per machine
  MatR omega;
  MatC v;  // one column per network node; may be empty
};

inline void write_trajectory_csv(std::ostream& os, const TrajectoryTable& table,
                                 const std::vector<int>& gen_buses,
                                 const std::vector<int>& node_buses) {
  const int ng = static_cast<int>(gen_buses.size());
  require(table.delta_coi.cols() == ng && table.omega.cols() == ng, ErrorKind::config,
          "machine columns do not match the generator list");
  const bool with_v = table.v.size() > 0;
  if (with_v)
    require(table.v.cols() == static_cast<int>(node_buses.size()), ErrorKind::config,
            "voltage columns do not match the node list");

  os << "t";
  for (int j = 0; j < ng; ++j) os << ",delta_coi_" << gen_buses[j];
  for (int j = 0; j < ng; ++j) os << ",omega_" << gen_buses[j];
  if (with_v) {
    for (int id : node_buses) os << ",vx_" << id;
    for (int id : node_buses) os << ",vy_" << id;
  }
  os << "\n";

  char buf[32];
  auto put = [&](double value) {
    std::snprintf(buf, sizeof(buf), ",%.12g", value);
    os << buf;
  };
  for (int r = 0; r < static_cast<int>(table.times.size()); ++r) {
    std::snprintf(buf, sizeof(buf), "%.12g", table.times(r));
    os << buf;
    for (int j = 0; j < ng; ++j) put(table.delta_coi(r, j));
    for (int j = 0; j < ng; ++j) put(table.omega(r, j));
    if (with_v) {
      for (int i = 0; i < table.v.cols(); ++i) put(table.v(r, i).real());
      for (int i = 0; i < table.v.cols(); ++i) put(table.v(r, i).imag());
    }
    os << "\n";
  }
}

}  // namespace swingkit
