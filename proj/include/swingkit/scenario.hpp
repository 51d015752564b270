#pragma once

#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "swingkit/case_model.hpp"
#include "swingkit/errors.hpp"
#include "swingkit/qpf.hpp"
#include "swingkit/swing_core.hpp"
#include "swingkit/types.hpp"
#include "swingkit/zip_loads.hpp"

namespace swingkit {

// Prefault operating point of the classical machines: internal voltages
// E angle delta behind the transient reactance and the mechanical powers
// balancing the air gap, all recomputed from one conventional network solve.
struct ClassicalInit {
  QpfSolution pf;  // prefault solution on the original buses
  VecC e_int;      // machine internal voltages, generator-table order
  std::vector<MachineOperating> gens;
  SwingState state;  // rest start at the internal voltages
};

inline ClassicalInit classical_init(const CaseDocument& doc, bool zip_law = true,
                                    const ExtendedLoadSet* ext_loads = nullptr) {
  const QuadraticFormSystem sys = assemble_pf(doc, zip_law, ext_loads);
  ClassicalInit out;
  out.pf = solve_qpf(sys, flat_guess(sys));

  const int ng = static_cast<int>(doc.gens.size());
  out.e_int.resize(ng);
  out.gens.resize(ng);
  out.state.t = 0.0;
  out.state.w = VecR::Zero(2 * ng);
  out.state.wdot = VecR::Zero(2 * ng);

  for (int j = 0; j < ng; ++j) {
    const GeneratorRecord& g = doc.gens[j];
    double xd_t = -1.0;
    for (const auto& d : doc.dynamics)
      if (d.bus == g.bus) xd_t = d.xd_t;
    require(xd_t > 0.0, ErrorKind::config,
            "generator bus " + std::to_string(g.bus) + " has no dynamics row");

    const int b = doc.index_of(g.bus);
    const Complex v = out.pf.v(b);
    require(std::abs(v) > 0.0, ErrorKind::domain, "collapsed terminal voltage");

    // net nodal injection plus the local load drawn under the solve's law
    Complex s_gen(out.pf.p_inj(b), out.pf.q_inj(b));
    const double vm = std::abs(v);
    if (zip_law) {
      for (const auto& z : doc.zips)
        if (z.bus == g.bus) s_gen += z.s0 * (z.fz * vm * vm + z.fi * vm + z.fp);
    } else {
      s_gen += ext_loads->p_loads(b);
    }

    const Complex i_gen = std::conj(s_gen / v);
    const Complex e = v + Complex(0.0, xd_t) * i_gen;
    out.e_int(j) = e;
    out.gens[j].e = std::abs(e);
    out.gens[j].p_mech = (e * std::conj(i_gen)).real();
    out.state.w(j) = e.real();
    out.state.w(ng + j) = e.imag();
  }
  return out;
}

// Copy of the case with every branch between the two bus ids switched out.
inline CaseDocument with_outage(const CaseDocument& doc, int from, int to) {
  CaseDocument out = doc;
  int hits = 0;
  for (auto& br : out.branches)
    if ((br.from == from && br.to == to) || (br.from == to && br.to == from)) {
      br.in_service = false;
      ++hits;
    }
  require(hits > 0, ErrorKind::dangling_ref,
          "no branch joins buses " + std::to_string(from) + " and " + std::to_string(to));
  return out;
}

// Rebuild the branch between two buses as a pair of parallel circuits whose
// combination reproduces the printed impedance and charging. Tripping one
// circuit then halves the corridor admittance instead of severing it.
inline CaseDocument split_double_circuit(const CaseDocument& doc, int from, int to) {
  CaseDocument out = doc;
  std::vector<BranchRecord> rebuilt;
  rebuilt.reserve(out.branches.size() + 1);
  int hits = 0;
  for (const auto& br : out.branches) {
    if ((br.from == from && br.to == to) || (br.from == to && br.to == from)) {
      BranchRecord circuit = br;
      circuit.r *= 2.0;
      circuit.x *= 2.0;
      circuit.b_charge /= 2.0;
      rebuilt.push_back(circuit);
      rebuilt.push_back(circuit);
      ++hits;
    } else {
      rebuilt.push_back(br);
    }
  }
  require(hits > 0, ErrorKind::dangling_ref,
          "no branch joins buses " + std::to_string(from) + " and " + std::to_string(to));
  out.branches = std::move(rebuilt);
  return out;
}

// Trip one in-service circuit of the branch between two buses; any parallel
// circuits stay in service.
inline CaseDocument with_circuit_outage(const CaseDocument& doc, int from, int to) {
  CaseDocument out = doc;
  for (auto& br : out.branches)
    if (br.in_service &&
        ((br.from == from && br.to == to) || (br.from == to && br.to == from))) {
      br.in_service = false;
      return out;
    }
  throw Error(ErrorKind::dangling_ref, "no in-service branch joins buses " +
                                           std::to_string(from) + " and " + std::to_string(to));
}

// Designated split voltages over the augmented bus list: the solved prefault
// voltages on the original buses, unity on the internal nodes.
inline VecC designated_voltages(const AugmentedNetwork& net, const QpfSolution& pf) {
  const int n_orig = static_cast<int>(pf.v.size());
  require(net.n_total() == n_orig + net.n_machines(), ErrorKind::config,
          "network does not extend the solved bus set");
  VecC v = VecC::Ones(net.n_total());
  v.head(n_orig) = pf.v;
  return v;
}

}  // namespace swingkit
