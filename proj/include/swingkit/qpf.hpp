#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "swingkit/case_model.hpp"
#include "swingkit/errors.hpp"
#include "swingkit/types.hpp"
#include "swingkit/zip_loads.hpp"

namespace swingkit {

// Power balance in rectangular coordinates. Every node contributes two scalar
// rows over the unknown vector (x_1..x_n, y_1..y_n):
//   fixed:     x_j and y_j pinned (internal machine nodes, reference bus)
//   pq:        Re and Im of  v_j^* (Y v - i0)_j + conj(S_j(|v_j|)) = 0
//   pv:        the Re row above plus the magnitude row x_j^2 + y_j^2 = V_j^2
// Loads are either the extended form (constant powers, Z parts folded into the
// matrix) or the full zip law S(|v|) = S0 (fz |v|^2 + fi |v| + fp).
enum class NodeRole { fixed, pq, pv };

struct QuadraticFormSystem {
  MatC y_eff;
  VecC i0;
  std::vector<NodeRole> role;
  VecC v_fixed;   // fixed nodes
  VecC s_load;    // extended constant powers (consumption positive)
  bool zip_law = false;
  VecC s0;        // zip law data, zero rows where no load
  VecR fz, fi, fp;
  VecR p_gen;     // pv nodes: scheduled injection
  VecR v_mag;     // pv nodes: magnitude setpoint
  int n = 0;

  int n_equations() const { return 2 * n; }
};

inline QuadraticFormSystem make_empty_system(int n) {
  QuadraticFormSystem sys;
  sys.n = n;
  sys.y_eff = MatC::Zero(n, n);
  sys.i0 = VecC::Zero(n);
  sys.role.assign(n, NodeRole::pq);
  sys.v_fixed = VecC::Zero(n);
  sys.s_load = VecC::Zero(n);
  sys.s0 = VecC::Zero(n);
  sys.fz = VecR::Zero(n);
  sys.fi = VecR::Zero(n);
  sys.fp = VecR::Zero(n);
  sys.p_gen = VecR::Zero(n);
  sys.v_mag = VecR::Ones(n);
  return sys;
}

// Internal machine voltages pinned, every original bus a pq node.
inline QuadraticFormSystem assemble_qpf(const AugmentedNetwork& net, const ExtendedLoadSet& loads,
                                        const VecC& v_ibus) {
  require(v_ibus.size() == net.n_machines(), ErrorKind::config,
          "need one fixed voltage per machine");
  QuadraticFormSystem sys = make_empty_system(net.n_total());
  sys.y_eff = net.ybus;
  sys.y_eff.diagonal() += loads.ybus_add;
  sys.i0 = loads.i0;
  sys.s_load = loads.p_loads;
  for (int m = 0; m < net.n_machines(); ++m) {
    sys.role[net.ibus[m]] = NodeRole::fixed;
    sys.v_fixed(net.ibus[m]) = v_ibus(m);
  }
  return sys;
}

// Same partition but with loads kept in the full zip law (reference solves).
inline QuadraticFormSystem assemble_qpf_zip(const AugmentedNetwork& net,
                                            const std::vector<ZipLoadSpec>& zips, const VecC& v_ibus) {
  require(v_ibus.size() == net.n_machines(), ErrorKind::config,
          "need one fixed voltage per machine");
  QuadraticFormSystem sys = make_empty_system(net.n_total());
  sys.y_eff = net.ybus;
  sys.zip_law = true;
  auto index_of = [&](int id) -> int {
    for (int i = 0; i < net.n_total(); ++i)
      if (net.buses[i].id == id) return i;
    fail(ErrorKind::dangling_ref, "zip load references unknown bus " + std::to_string(id));
  };
  for (const auto& z : zips) {
    const int j = index_of(z.bus);
    sys.s0(j) += z.s0;
    // fractions blend by power weight when several specs share a bus
    sys.fz(j) = z.fz;
    sys.fi(j) = z.fi;
    sys.fp(j) = z.fp;
  }
  for (int m = 0; m < net.n_machines(); ++m) {
    sys.role[net.ibus[m]] = NodeRole::fixed;
    sys.v_fixed(net.ibus[m]) = v_ibus(m);
  }
  return sys;
}

// Conventional pre-disturbance solve: the reference generator bus is pinned at
// its setpoint, other generator buses hold (P, |V|), the rest are pq.
inline QuadraticFormSystem assemble_pf(const CaseDocument& doc, bool zip_law,
                                       const ExtendedLoadSet* ext_loads = nullptr) {
  const int n = static_cast<int>(doc.buses.size());
  QuadraticFormSystem sys = make_empty_system(n);
  const YbusSet ys = build_ybus(doc.buses, doc.branches);
  sys.y_eff = ys.ybus;
  sys.zip_law = zip_law;
  if (zip_law) {
    for (const auto& z : doc.zips) {
      const int j = doc.index_of(z.bus);
      sys.s0(j) += z.s0;
      sys.fz(j) = z.fz;
      sys.fi(j) = z.fi;
      sys.fp(j) = z.fp;
    }
  } else {
    require(ext_loads != nullptr, ErrorKind::config, "extended solve needs an ExtendedLoadSet");
    require(ext_loads->p_loads.size() == n, ErrorKind::config, "load set does not match the case");
    sys.y_eff.diagonal() += ext_loads->ybus_add;
    sys.s_load = ext_loads->p_loads;
    sys.i0 = ext_loads->i0;
  }

  int n_ref = 0;
  for (const auto& g : doc.gens) {
    const int j = doc.index_of(g.bus);
    if (doc.buses[j].reference) {
      sys.role[j] = NodeRole::fixed;
      sys.v_fixed(j) = Complex(g.v_set, 0.0);
      ++n_ref;
    } else {
      sys.role[j] = NodeRole::pv;
      sys.p_gen(j) = g.p_mech;
      sys.v_mag(j) = g.v_set;
    }
  }
  require(n_ref == 1, ErrorKind::config, "exactly one generator bus must carry the reference mark");
  return sys;
}

struct QpfOptions {
  double tol = 1e-8;
  int max_iter = 30;
  long* solve_counter = nullptr;  // incremented once per successful solve
};

struct QpfSolution {
  VecC v;
  VecR p_inj, q_inj;  // back-computed nodal injections
  int iterations = 0;
  double residual = 0.0;
};

namespace detail {

inline Complex load_power(const QuadraticFormSystem& sys, int j, double vm) {
  if (!sys.zip_law) return sys.s_load(j);
  return sys.s0(j) * (sys.fz(j) * vm * vm + sys.fi(j) * vm + sys.fp(j));
}

// Residual and Jacobian of the full real system at v. Row layout: node j owns
// rows (2j, 2j+1); unknown layout: (x_0..x_{n-1}, y_0..y_{n-1}).
inline void qpf_residual(const QuadraticFormSystem& sys, const VecC& v, VecR& f, MatR* jac) {
  const int n = sys.n;
  f.setZero(2 * n);
  if (jac) jac->setZero(2 * n, 2 * n);
  const VecC yv = sys.y_eff * v;

  for (int j = 0; j < n; ++j) {
    const int rp = 2 * j, rq = 2 * j + 1;
    if (sys.role[j] == NodeRole::fixed) {
      f(rp) = v(j).real() - sys.v_fixed(j).real();
      f(rq) = v(j).imag() - sys.v_fixed(j).imag();
      if (jac) {
        (*jac)(rp, j) = 1.0;
        (*jac)(rq, n + j) = 1.0;
      }
      continue;
    }

    const Complex tj = yv(j) - sys.i0(j);
    const double vm = std::abs(v(j));
    const Complex r_c = std::conj(v(j)) * tj + std::conj(load_power(sys, j, vm));

    if (sys.role[j] == NodeRole::pq) {
      f(rp) = r_c.real();
      f(rq) = r_c.imag();
    } else {  // pv: active balance (generation enters) + magnitude row
      f(rp) = r_c.real() - sys.p_gen(j);
      f(rq) = vm * vm - sys.v_mag(j) * sys.v_mag(j);
    }

    if (!jac) continue;
    for (int k = 0; k < n; ++k) {
      Complex dx = std::conj(v(j)) * sys.y_eff(j, k);
      Complex dy = std::conj(v(j)) * sys.y_eff(j, k) * kJ;
      if (k == j) {
        dx += tj;
        dy += -kJ * tj;
        if (sys.zip_law && vm > 0.0) {
          const Complex ds = std::conj(sys.s0(j));
          dx += ds * (2.0 * sys.fz(j) * v(j).real() + sys.fi(j) * v(j).real() / vm);
          dy += ds * (2.0 * sys.fz(j) * v(j).imag() + sys.fi(j) * v(j).imag() / vm);
        }
      }
      (*jac)(rp, k) = dx.real();
      (*jac)(rp, n + k) = dy.real();
      if (sys.role[j] == NodeRole::pq) {
        (*jac)(rq, k) = dx.imag();
        (*jac)(rq, n + k) = dy.imag();
      }
    }
    if (sys.role[j] == NodeRole::pv) {
      (*jac)(rq, j) = 2.0 * v(j).real();
      (*jac)(rq, n + j) = 2.0 * v(j).imag();
    }
  }
}

}  // namespace detail

inline VecC flat_guess(const QuadraticFormSystem& sys) {
  VecC v = VecC::Ones(sys.n);
  for (int j = 0; j < sys.n; ++j) {
    if (sys.role[j] == NodeRole::fixed) v(j) = sys.v_fixed(j);
    if (sys.role[j] == NodeRole::pv) v(j) = Complex(sys.v_mag(j), 0.0);
  }
  return v;
}

inline QpfSolution solve_qpf(const QuadraticFormSystem& sys, const VecC& guess,
                             const QpfOptions& opts = {}) {
  require(guess.size() == sys.n, ErrorKind::config, "guess size does not match the system");
  VecC v = guess;
  VecR f;
  MatR jac;
  std::ostringstream trace;

  int it = 0;
  double res = 0.0;
  for (; it < opts.max_iter; ++it) {
    detail::qpf_residual(sys, v, f, &jac);
    res = f.cwiseAbs().maxCoeff();
    trace << "iter " << it << " residual " << res << "\n";
    if (res <= opts.tol) break;
    Eigen::PartialPivLU<MatR> lu(jac);
    const VecR dz = lu.solve(-f);
    if (!dz.allFinite())
      fail(ErrorKind::singular, "singular Jacobian in power balance solve\n" + trace.str());
    v.real() += dz.head(sys.n);
    v.imag() += dz.tail(sys.n);
    for (int j = 0; j < sys.n; ++j)
      if (sys.role[j] == NodeRole::fixed) v(j) = sys.v_fixed(j);  // bit-exact pins
  }
  if (res > opts.tol)
    fail(ErrorKind::divergence,
         "power balance solve did not converge in " + std::to_string(opts.max_iter) + " iterations\n" + trace.str());

  QpfSolution sol;
  sol.v = v;
  sol.iterations = it;
  sol.residual = res;
  const VecC s_back = v.array() * (sys.y_eff * v - sys.i0).conjugate().array();
  sol.p_inj = s_back.real();
  sol.q_inj = s_back.imag();
  if (opts.solve_counter) ++*opts.solve_counter;
  return sol;
}

// Materialized symmetric form of one balance row: with z = (x; y; 1) the row's
// residual is z^T M z. Exposed so tests can check symmetry and agreement with
// the solver's residual path. Only extended-load (non-zip) rows are quadratic.
inline MatR quad_row_matrix(const QuadraticFormSystem& sys, int bus, bool reactive) {
  require(!sys.zip_law, ErrorKind::unsupported, "zip-law rows are not pure quadratic forms");
  require(sys.role[bus] != NodeRole::fixed, ErrorKind::domain, "fixed rows are linear");
  const int n = sys.n;
  const int dim = 2 * n + 1;
  MatR m = MatR::Zero(dim, dim);
  if (reactive && sys.role[bus] == NodeRole::pv) {  // magnitude row
    m(bus, bus) = 1.0;
    m(n + bus, n + bus) = 1.0;
    m(dim - 1, dim - 1) = -sys.v_mag(bus) * sys.v_mag(bus);
    return m;
  }
  // v_j^* (Y v)_j = sum_k (x_j - i y_j)(Y_jk)(x_k + i y_k)
  for (int k = 0; k < n; ++k) {
    const Complex y = sys.y_eff(bus, k);
    // real part: g (x_j x_k + y_j y_k) + b (y_j x_k - x_j y_k)
    // imag part: g (x_j y_k - y_j x_k) + b (x_j x_k + y_j y_k)
    const double g = y.real(), b = y.imag();
    const double c1 = reactive ? b : g;   // weight of x_j x_k + y_j y_k
    const double c2 = reactive ? g : -b;  // weight of x_j y_k - y_j x_k
    m(bus, k) += c1;
    m(n + bus, n + k) += c1;
    m(bus, n + k) += c2;
    m(n + bus, k) += -c2;
  }
  // -i0 and constant-load terms live in the affine border
  const Complex i0 = sys.i0(bus);
  const Complex sl = std::conj(sys.s_load(bus));
  if (!reactive) {
    m(bus, dim - 1) += -i0.real();
    m(n + bus, dim - 1) += -i0.imag();
    m(dim - 1, dim - 1) += sl.real() - (sys.role[bus] == NodeRole::pv ? sys.p_gen(bus) : 0.0);
  } else {
    m(bus, dim - 1) += -i0.imag();
    m(n + bus, dim - 1) += i0.real();
    m(dim - 1, dim - 1) += sl.imag();
  }
  return 0.5 * (m + m.transpose());
}

}  // namespace swingkit
