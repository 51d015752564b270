#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "helpers.hpp"
#include "swingkit/case_model.hpp"
#include "swingkit/he_linearizer.hpp"
#include "swingkit/swing_core.hpp"
#include "swingkit/zip_loads.hpp"

namespace swingkit::testing {

struct NineBus {
  AugmentedNetwork net;
  ExtendedLoadSet loads;
};

inline NineBus nine_bus(double fz, double fi, double fp) {
  CaseDocument doc = load_case("ieee9.case");
  AugmentedNetwork net = augment_with_ibus(doc);
  const ExtendedLoadSet loads = build_extended_loads(with_fractions(doc.zips, fz, fi, fp),
                                                     net.buses, VecC::Ones(net.n_total()));
  return {std::move(net), loads};
}

// one isolated machine: no link current, restoring torque only through the
// self susceptance -b_self = k / e^2, so each coordinate obeys
// m u'' + d u' + k u = 0
inline AugmentedNetwork toy_machine(double m, double d, double k, double e = 1.0) {
  AugmentedNetwork net;
  BusRecord kb;
  kb.id = 1;
  kb.kind = BusKind::kbus;
  kb.reference = true;
  BusRecord ib;
  ib.id = 2;
  ib.kind = BusKind::ibus;
  net.buses = {kb, ib};
  net.ybus = MatC::Zero(2, 2);
  net.ytr = MatC::Zero(2, 2);
  net.ysh = VecC::Zero(2);
  net.ibus = {1};
  net.km = {0};
  GenLink link;
  link.ibus = 1;
  link.kbus = 0;
  link.y_link = 0.0;
  link.g_self = 0.0;
  link.b_self = -k / (e * e);
  net.links = {link};
  GeneratorDynamic dyn;
  dyn.bus = 2;
  dyn.m = m;
  dyn.d = d;
  dyn.e = e;
  dyn.omega0 = 376.99111843;
  net.machines = {dyn};
  net.p_mech = {0.0};
  return net;
}

inline AugmentedNetwork two_toys(double d, double k1, double k2) {
  AugmentedNetwork net;
  for (int id = 1; id <= 4; ++id) {
    BusRecord b;
    b.id = id;
    b.kind = id <= 2 ? BusKind::kbus : BusKind::ibus;
    b.reference = id == 1;
    net.buses.push_back(b);
  }
  net.ybus = MatC::Zero(4, 4);
  net.ytr = MatC::Zero(4, 4);
  net.ysh = VecC::Zero(4);
  net.ibus = {2, 3};
  net.km = {0, 1};
  for (int j = 0; j < 2; ++j) {
    GenLink link;
    link.ibus = 2 + j;
    link.kbus = j;
    link.b_self = -(j == 0 ? k1 : k2);
    net.links.push_back(link);
    GeneratorDynamic dyn;
    dyn.bus = 3 + j;
    dyn.m = 1.0;
    dyn.d = d;
    dyn.omega0 = 376.99111843;
    net.machines.push_back(dyn);
    net.p_mech.push_back(0.0);
  }
  return net;
}

inline PadeLinearization zero_lin(const AugmentedNetwork& net) {
  PadeLinearization lin;
  lin.n_km = net.n_km();
  lin.n_i = net.n_machines();
  lin.map = MatR::Zero(lin.rows(), 2 * lin.n_i);
  lin.off = VecR::Zero(lin.rows());
  lin.w0 = VecR::Zero(2 * lin.n_i);
  return lin;
}

inline ExtendedLoadSet zero_loads(const AugmentedNetwork& net) {
  return build_extended_loads({}, net.buses, VecC::Ones(net.n_total()));
}

inline SwingState circular_state(const VecR& emag, const VecR& delta, const VecR& speed,
                                 double t = 0.0) {
  const int ni = static_cast<int>(emag.size());
  SwingState s;
  s.t = t;
  s.w.resize(2 * ni);
  s.wdot.resize(2 * ni);
  for (int j = 0; j < ni; ++j) {
    s.w(j) = emag(j) * std::cos(delta(j));
    s.w(ni + j) = emag(j) * std::sin(delta(j));
    s.wdot(j) = -s.w(ni + j) * speed(j);
    s.wdot(ni + j) = s.w(j) * speed(j);
  }
  return s;
}

inline VecC polar_vec(const VecR& emag, const VecR& delta) {
  VecC v(emag.size());
  for (int j = 0; j < emag.size(); ++j) v(j) = std::polar(emag(j), delta(j));
  return v;
}

struct NineSwing {
  AugmentedNetwork net;
  ExtendedLoadSet loads;
  PadeLinearization lin;
  std::vector<MachineOperating> gens;
  SwingState state0;
  SwingSystem sys;
};

inline NineSwing nine_swing(double fz, double fi, double fp, const VecR& delta, const VecR& speed,
                            const VecR& emag, double t0 = 0.0) {
  auto [net, loads] = nine_bus(fz, fi, fp);
  NineSwing f;
  f.net = std::move(net);
  f.loads = loads;
  f.lin = assemble_linearization(f.net, f.loads, polar_vec(emag, delta));
  f.gens = default_operating(f.net);
  for (int j = 0; j < 3; ++j) f.gens[j].e = emag(j);
  f.state0 = circular_state(emag, delta, speed, t0);
  f.sys = build_swing_system(f.lin, f.gens, f.net, f.state0);
  return f;
}

inline VecR nine_delta() {
  VecR d(3);
  d << 0.0, 0.10, 0.05;
  return d;
}

inline VecR nine_emag() {
  VecR e(3);
  e << 1.05, 1.02, 0.98;
  return e;
}

// classical companion state u = (w; w') integrated by fourth-order Runge-Kutta
inline VecR rk4_orbit(const SwingSystem& sys, const VecR& u0, double t_end, double dt) {
  VecR g = VecR::Zero(u0.size());
  g.tail(sys.l_vec.size()) = -sys.l_vec;
  auto f = [&](const VecR& u) -> VecR { return sys.t_mat * u + g; };
  VecR u = u0;
  const int steps = static_cast<int>(std::round(t_end / dt));
  for (int i = 0; i < steps; ++i) {
    const VecR k1 = f(u);
    const VecR k2 = f(u + 0.5 * dt * k1);
    const VecR k3 = f(u + 0.5 * dt * k2);
    const VecR k4 = f(u + dt * k3);
    u += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return u;
}

inline std::string error_message(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace swingkit::testing
