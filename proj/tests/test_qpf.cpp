#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "helpers.hpp"
#include "swingkit/qpf.hpp"

using namespace swingkit;
using swingkit::testing::kind_of;
using swingkit::testing::load_case;

namespace {

AugmentedNetwork nine_bus_net() { return augment_with_ibus(load_case("ieee9.case")); }

VecC nine_bus_vibus() {
  VecC v(3);
  v << std::polar(1.04, 0.0), std::polar(1.025, 0.10), std::polar(1.025, 0.05);
  return v;
}

}  // namespace

TEST_CASE("counts equations on the augmented nine-bus system") {
  const AugmentedNetwork net = nine_bus_net();
  const ExtendedLoadSet loads =
      build_extended_loads(load_case("ieee9.case").zips, net.buses, VecC::Ones(net.n_total()));
  const QuadraticFormSystem sys = assemble_qpf(net, loads, nine_bus_vibus());
  REQUIRE(sys.n == 12);
  REQUIRE(sys.n_equations() == 24);
  REQUIRE(kind_of([&] { assemble_qpf(net, loads, VecC::Ones(2)); }) == ErrorKind::config);
}

TEST_CASE("solves the flat no-load network exactly") {
  const std::string text =
      "baseMVA 100\nbus\n1 2 0 0 230\n2 1 0 0 230\n3 1 0 0 230\n"
      "branch\n1 2 0 0.1 0 0 1\n2 3 0 0.2 0 0 1\n"
      "gen\n1 50 1.0\ndynamics\n1 0.1 0.01 1.0 0.05 377.0\n";
  const AugmentedNetwork net = augment_with_ibus(parse_case(text));
  const ExtendedLoadSet loads = build_extended_loads({}, net.buses, VecC::Ones(net.n_total()));
  const QuadraticFormSystem sys = assemble_qpf(net, loads, VecC::Ones(1));
  const QpfSolution sol = solve_qpf(sys, flat_guess(sys));
  REQUIRE(sol.iterations == 0);
  REQUIRE((sol.v - VecC::Ones(4)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("matches the closed-form two-bus root") {
  QuadraticFormSystem sys = make_empty_system(2);
  sys.y_eff << Complex(0, -10), Complex(0, 10), Complex(0, 10), Complex(0, -10);
  sys.role[0] = NodeRole::fixed;
  sys.v_fixed(0) = Complex(1.0, 0.0);
  sys.s_load(1) = Complex(0.1, 0.0);

  const QpfSolution sol = solve_qpf(sys, flat_guess(sys));
  REQUIRE(sol.residual <= 1e-8);
  REQUIRE(sol.v(0) == Complex(1.0, 0.0));
  REQUIRE(std::abs(sol.v(1) - Complex(0.9998999899979994, -0.01)) < 1e-10);
}

TEST_CASE("residual certificate on the nine-bus case") {
  const CaseDocument doc = load_case("ieee9.case");
  const AugmentedNetwork net = nine_bus_net();
  const ExtendedLoadSet loads = build_extended_loads(doc.zips, net.buses, VecC::Ones(net.n_total()));
  const VecC v_ibus = nine_bus_vibus();
  const QuadraticFormSystem sys = assemble_qpf(net, loads, v_ibus);
  const QpfSolution sol = solve_qpf(sys, flat_guess(sys));
  REQUIRE(sol.residual <= 1e-8);

  // power leaving each KM bus into the plain network equals the load drawn there
  const VecC inet = net.ybus * sol.v;
  for (int k : net.km) {
    const Complex s_net = sol.v(k) * std::conj(inet(k));
    const double vm = std::abs(sol.v(k));
    const Complex drawn = std::conj(loads.ybus_add(k)) * vm * vm + loads.p_loads(k);
    REQUIRE(std::abs(s_net + drawn) < 1e-8);
  }
  // pinned voltages are returned bit-for-bit
  for (int m = 0; m < net.n_machines(); ++m) REQUIRE(sol.v(net.ibus[m]) == v_ibus(m));
  // stored injections are the Kirchhoff back-computation
  for (int m = 0; m < net.n_machines(); ++m) {
    const int ii = net.ibus[m];
    const Complex s = sol.v(ii) * std::conj(inet(ii));
    REQUIRE(sol.p_inj(ii) == Catch::Approx(s.real()).margin(1e-12));
    REQUIRE(sol.q_inj(ii) == Catch::Approx(s.imag()).margin(1e-12));
  }
}

TEST_CASE("feeding a solution back converges immediately") {
  const CaseDocument doc = load_case("ieee9.case");
  const AugmentedNetwork net = nine_bus_net();
  const ExtendedLoadSet loads = build_extended_loads(doc.zips, net.buses, VecC::Ones(net.n_total()));
  const QuadraticFormSystem sys = assemble_qpf(net, loads, nine_bus_vibus());
  const QpfSolution first = solve_qpf(sys, flat_guess(sys));
  const QpfSolution again = solve_qpf(sys, first.v);
  REQUIRE(again.iterations <= 2);
  REQUIRE((again.v - first.v).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("conjugating the inputs conjugates the solution") {
  const CaseDocument doc = load_case("ieee9.case");
  const AugmentedNetwork net = nine_bus_net();
  const ExtendedLoadSet loads = build_extended_loads(doc.zips, net.buses, VecC::Ones(net.n_total()));
  QuadraticFormSystem sys = assemble_qpf(net, loads, nine_bus_vibus());
  const QpfSolution sol = solve_qpf(sys, flat_guess(sys));

  QuadraticFormSystem mirrored = sys;
  mirrored.y_eff = sys.y_eff.conjugate();
  mirrored.i0 = sys.i0.conjugate();
  mirrored.s_load = sys.s_load.conjugate();
  mirrored.v_fixed = sys.v_fixed.conjugate();
  const QpfSolution mir = solve_qpf(mirrored, flat_guess(mirrored));
  REQUIRE((mir.v - sol.v.conjugate()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("reports divergence and singular systems distinctly") {
  QuadraticFormSystem sys = make_empty_system(2);
  sys.y_eff << Complex(0, -10), Complex(0, 10), Complex(0, 10), Complex(0, -10);
  sys.role[0] = NodeRole::fixed;
  sys.v_fixed(0) = Complex(1.0, 0.0);
  sys.s_load(1) = Complex(100.0, 0.0);  // far beyond the line's transfer capacity
  try {
    solve_qpf(sys, flat_guess(sys));
    FAIL("expected divergence");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::divergence);
    REQUIRE(std::string(e.what()).find("iter") != std::string::npos);
  }

  QuadraticFormSystem dead = make_empty_system(1);
  dead.s_load(0) = Complex(1.0, 0.0);
  REQUIRE(kind_of([&] { solve_qpf(dead, flat_guess(dead)); }) == ErrorKind::singular);
}

TEST_CASE("zp split stays within one percent of the zip law") {
  const CaseDocument doc = load_case("ieee9.case");
  const AugmentedNetwork net = nine_bus_net();
  const VecC v_ibus = nine_bus_vibus();

  const ExtendedLoadSet loads = build_extended_loads(doc.zips, net.buses, VecC::Ones(net.n_total()));
  const QuadraticFormSystem zp_sys = assemble_qpf(net, loads, v_ibus);
  const QpfSolution zp = solve_qpf(zp_sys, flat_guess(zp_sys));
  const QpfSolution zip = solve_qpf(assemble_qpf_zip(net, doc.zips, v_ibus), zp.v);

  for (int k : net.km) REQUIRE(std::abs(zp.v(k) - zip.v(k)) < 0.01);
}

TEST_CASE("conventional solve pins the reference and setpoints") {
  const CaseDocument doc = load_case("ieee9.case");
  const QuadraticFormSystem sys = assemble_pf(doc, true);
  const QpfSolution sol = solve_qpf(sys, flat_guess(sys));
  REQUIRE(sol.residual <= 1e-8);
  REQUIRE(sol.v(0) == Complex(1.04, 0.0));
  REQUIRE(std::abs(sol.v(1)) == Catch::Approx(1.025).margin(1e-7));
  REQUIRE(std::abs(sol.v(2)) == Catch::Approx(1.025).margin(1e-7));
  REQUIRE(sol.p_inj(1) == Catch::Approx(1.63).margin(1e-6));
  REQUIRE(sol.p_inj(2) == Catch::Approx(0.85).margin(1e-6));

  for (const char* name : {"ieee14.case", "ieee30.case"}) {
    const CaseDocument big = load_case(name);
    const QuadraticFormSystem s2 = assemble_pf(big, true);
    const QpfSolution sol2 = solve_qpf(s2, flat_guess(s2));
    REQUIRE(sol2.residual <= 1e-8);
    REQUIRE(sol2.iterations < 30);
  }
}

TEST_CASE("zp against zip under the conventional solve stays within one percent") {
  for (const char* name : {"ieee9.case", "ieee14.case", "ieee30.case"}) {
    const CaseDocument doc = load_case(name);
    const QuadraticFormSystem zip_sys = assemble_pf(doc, true);
    const QpfSolution zip = solve_qpf(zip_sys, flat_guess(zip_sys));

    const ExtendedLoadSet loads =
        build_extended_loads(doc.zips, doc.buses, VecC::Ones(doc.buses.size()));
    const QuadraticFormSystem zp_sys = assemble_pf(doc, false, &loads);
    const QpfSolution zp = solve_qpf(zp_sys, flat_guess(zp_sys));

    for (Eigen::Index k = 0; k < zip.v.size(); ++k) REQUIRE(std::abs(zp.v(k) - zip.v(k)) < 0.01);
  }
}

TEST_CASE("quadratic row forms match the solver residual") {
  const CaseDocument doc = load_case("ieee9.case");
  const AugmentedNetwork net = nine_bus_net();
  const ExtendedLoadSet loads = build_extended_loads(doc.zips, net.buses, VecC::Ones(net.n_total()));
  const QuadraticFormSystem sys = assemble_qpf(net, loads, nine_bus_vibus());

  std::mt19937 rng(23);
  std::uniform_real_distribution<double> coord(-1.2, 1.2);
  VecC v(sys.n);
  for (int j = 0; j < sys.n; ++j) v(j) = Complex(coord(rng), coord(rng));

  VecR f;
  detail::qpf_residual(sys, v, f, nullptr);
  VecR z(2 * sys.n + 1);
  z.head(sys.n) = v.real();
  z.segment(sys.n, sys.n) = v.imag();
  z(2 * sys.n) = 1.0;

  for (int j = 0; j < sys.n; ++j) {
    if (sys.role[j] == NodeRole::fixed) continue;
    const MatR mp = quad_row_matrix(sys, j, false);
    REQUIRE((mp - mp.transpose()).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(z.dot(mp * z) == Catch::Approx(f(2 * j)).margin(1e-10));
    const MatR mq = quad_row_matrix(sys, j, true);
    REQUIRE(z.dot(mq * z) == Catch::Approx(f(2 * j + 1)).margin(1e-10));
  }
}

TEST_CASE("counts successful solves") {
  const CaseDocument doc = load_case("ieee9.case");
  const AugmentedNetwork net = nine_bus_net();
  const ExtendedLoadSet loads = build_extended_loads(doc.zips, net.buses, VecC::Ones(net.n_total()));
  const QuadraticFormSystem sys = assemble_qpf(net, loads, nine_bus_vibus());
  long counter = 0;
  QpfOptions opts;
  opts.solve_counter = &counter;
  solve_qpf(sys, flat_guess(sys), opts);
  solve_qpf(sys, flat_guess(sys), opts);
  REQUIRE(counter == 2);
}
