#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "swingkit/case_model.hpp"

using namespace swingkit;
using swingkit::testing::kind_of;
using swingkit::testing::load_case;

namespace {

const char* kTwoBusDoc = R"(name twobus
baseMVA 100
bus
1 3 0 5.0 230   # 5 MVAr shunt -> 0.05 pu
2 1 0 0   230
branch
1 2 0.01 0.1 0.2 0 1
gen
1 71.6 1.04
dynamics
1 0.125 0.02 1.0 0.0608 376.991118431
zip
2 125.0 50.0 0.2 0.3 0.5
)";

}  // namespace

TEST_CASE("parses a minimal two-bus document") {
  const CaseDocument doc = parse_case(kTwoBusDoc);
  REQUIRE(doc.name == "twobus");
  REQUIRE(doc.base_mva == 100.0);
  REQUIRE(doc.buses.size() == 2);
  REQUIRE(doc.branches.size() == 1);
  REQUIRE(doc.gens.size() == 1);

  REQUIRE(doc.buses[0].id == 1);
  REQUIRE(doc.buses[0].kind == BusKind::kbus);
  REQUIRE(doc.buses[0].reference);
  REQUIRE(doc.buses[0].b_shunt == Catch::Approx(0.05));
  REQUIRE(doc.buses[1].kind == BusKind::mbus);
  REQUIRE_FALSE(doc.buses[1].reference);

  REQUIRE(doc.branches[0].from == 1);
  REQUIRE(doc.branches[0].to == 2);
  REQUIRE(doc.branches[0].x == 0.1);
  REQUIRE(doc.branches[0].tap == 0.0);
  REQUIRE(doc.branches[0].in_service);

  REQUIRE(doc.gens[0].p_mech == Catch::Approx(0.716));
  REQUIRE(doc.gens[0].v_set == 1.04);
  REQUIRE(doc.dynamics[0].xd_t == 0.0608);
  REQUIRE(doc.zips[0].s0 == Complex(1.25, 0.5));
  REQUIRE(doc.zips[0].fi == 0.3);
}

TEST_CASE("rejects malformed documents") {
  auto parse = [](const std::string& text) { return [text] { parse_case(text); }; };

  REQUIRE(kind_of(parse("bus\n1 1 0 0 230\n")) == ErrorKind::syntax);  // no baseMVA
  REQUIRE(kind_of(parse("baseMVA 100\n1 1 0 0 230\n")) == ErrorKind::syntax);  // row outside table
  REQUIRE(kind_of(parse("baseMVA 100\nbus\n1 1 0 0\n")) == ErrorKind::syntax);  // short row
  REQUIRE(kind_of(parse("baseMVA 100\nbus\n1 1 0 zz 230\n")) == ErrorKind::syntax);
  REQUIRE(kind_of(parse("baseMVA 100\nbogus\n")) == ErrorKind::syntax);
  REQUIRE(kind_of(parse("baseMVA 100\nbus\n1 7 0 0 230\n")) == ErrorKind::syntax);  // bad kind-code

  const std::string dup = "baseMVA 100\nbus\n1 1 0 0 230\n1 2 0 0 230\n";
  REQUIRE(kind_of(parse(dup)) == ErrorKind::duplicate);

  const std::string dangling = "baseMVA 100\nbus\n1 1 0 0 230\n2 1 0 0 230\nbranch\n1 99 0 0.1 0 0 1\n";
  REQUIRE(kind_of(parse(dangling)) == ErrorKind::dangling_ref);
  REQUIRE(kind_of(parse("baseMVA 100\nbus\n1 1 0 0 230\ngen\n9 10\n")) == ErrorKind::dangling_ref);
  REQUIRE(kind_of(parse("baseMVA 100\nbus\n1 1 0 0 230\nzip\n9 1 0 0 0 1\n")) == ErrorKind::dangling_ref);

  const std::string badfrac = "baseMVA 100\nbus\n1 1 0 0 230\nzip\n1 10 5 0.5 0.3 0.1\n";
  REQUIRE(kind_of(parse(badfrac)) == ErrorKind::domain);
  const std::string negfrac = "baseMVA 100\nbus\n1 1 0 0 230\nzip\n1 10 5 1.5 -0.5 0\n";
  REQUIRE(kind_of(parse(negfrac)) == ErrorKind::domain);

  const std::string selfloop = "baseMVA 100\nbus\n1 1 0 0 230\nbranch\n1 1 0 0.1 0 0 1\n";
  REQUIRE(kind_of(parse(selfloop)) == ErrorKind::structural);
}

TEST_CASE("loads the nine-bus fixture") {
  const CaseDocument doc = load_case("ieee9.case");
  REQUIRE(doc.buses.size() == 9);
  REQUIRE(doc.branches.size() == 9);
  REQUIRE(doc.gens.size() == 3);
  REQUIRE(doc.dynamics.size() == 3);
  REQUIRE(doc.zips.size() == 3);

  REQUIRE(doc.buses[0].reference);
  REQUIRE(doc.buses[0].kind == BusKind::kbus);
  REQUIRE(doc.buses[3].kind == BusKind::mbus);
  for (const auto& z : doc.zips) REQUIRE(z.fz + z.fi + z.fp == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("assembles the two-bus admittance matrix") {
  // one branch y = 1/(j0.1) between two buses, no shunts
  const std::string doc_text =
      "baseMVA 100\nbus\n1 1 0 0 230\n2 1 0 0 230\nbranch\n1 2 0 0.1 0 0 1\n";
  const CaseDocument doc = parse_case(doc_text);
  const YbusSet ys = build_ybus(doc.buses, doc.branches);
  REQUIRE(ys.ybus(0, 0) == Complex(0.0, -10.0));
  REQUIRE(ys.ybus(0, 1) == Complex(0.0, 10.0));
  REQUIRE(ys.ybus(1, 0) == Complex(0.0, 10.0));
  REQUIRE(ys.ybus(1, 1) == Complex(0.0, -10.0));
  REQUIRE(ys.ysh(0) == Complex(0.0, 0.0));

  // a bus shunt moves only the diagonal remainder, never the transfer part
  const std::string with_shunt =
      "baseMVA 100\nbus\n1 1 0 5 230\n2 1 0 0 230\nbranch\n1 2 0 0.1 0 0 1\n";
  const CaseDocument doc2 = parse_case(with_shunt);
  const YbusSet ys2 = build_ybus(doc2.buses, doc2.branches);
  REQUIRE(std::abs(ys2.ysh(0) - Complex(0.0, 0.05)) < 1e-15);
  REQUIRE((ys2.ytr - ys.ytr).cwiseAbs().maxCoeff() < 1e-15);

  // out-of-service branches contribute nothing
  const std::string off =
      "baseMVA 100\nbus\n1 1 0 0 230\n2 1 0 0 230\nbranch\n1 2 0 0.1 0 0 0\n";
  const CaseDocument doc3 = parse_case(off);
  const YbusSet ys3 = build_ybus(doc3.buses, doc3.branches);
  REQUIRE(ys3.ybus.cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(ys3.warnings.size() == 2);
}

TEST_CASE("matches frozen values for a tapped phase-shifting branch") {
  const std::string doc_text =
      "baseMVA 100\nbus\n1 1 0 0 230\n2 1 0 0 230\nbranch\n1 2 0.01 0.1 0.2 0.978 30 1\n";
  const CaseDocument doc = parse_case(doc_text);
  REQUIRE(doc.branches[0].shift_deg == 30.0);
  const YbusSet ys = build_ybus(doc.buses, doc.branches);
  REQUIRE(std::abs(ys.ybus(0, 0) - Complex(1.0351443515009033, -10.246893935507444)) < 1e-12);
  REQUIRE(std::abs(ys.ybus(0, 1) - Complex(-5.938595035113524, 8.261205974857141)) < 1e-12);
  REQUIRE(std::abs(ys.ybus(1, 0) - Complex(4.185116722565307, 9.273577150625023)) < 1e-12);
  REQUIRE(std::abs(ys.ybus(1, 1) - Complex(0.99009900990099, -9.800990099009901)) < 1e-12);
}

TEST_CASE("independently reassembles the nine-bus matrix") {
  const CaseDocument doc = load_case("ieee9.case");
  const YbusSet ys = build_ybus(doc.buses, doc.branches);

  // incidence-matrix construction: Y = A^T diag(y) A + diag(charging + shunts);
  // valid because every 9-bus branch has unity tap
  const int n = static_cast<int>(doc.buses.size());
  const int nb = static_cast<int>(doc.branches.size());
  MatC a = MatC::Zero(nb, n);
  VecC yser(nb);
  VecC diag = VecC::Zero(n);
  for (int e = 0; e < nb; ++e) {
    const auto& br = doc.branches[e];
    REQUIRE(br.tap == 0.0);
    const int f = doc.index_of(br.from), t = doc.index_of(br.to);
    a(e, f) = 1.0;
    a(e, t) = -1.0;
    yser(e) = 1.0 / Complex(br.r, br.x);
    diag(f) += Complex(0.0, br.b_charge / 2.0);
    diag(t) += Complex(0.0, br.b_charge / 2.0);
  }
  for (int i = 0; i < n; ++i) diag(i) += Complex(doc.buses[i].g_shunt, doc.buses[i].b_shunt);
  MatC oracle = a.transpose() * yser.asDiagonal() * a;
  oracle += MatC(diag.asDiagonal());

  REQUIRE((ys.ybus - oracle).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("separates transfer and shunt parts with zero row sums") {
  for (const char* name : {"ieee9.case", "ieee14.case", "ieee30.case"}) {
    const CaseDocument doc = load_case(name);
    const YbusSet ys = build_ybus(doc.buses, doc.branches);
    const VecC rowsum = ys.ytr.rowwise().sum();
    REQUIRE(rowsum.cwiseAbs().maxCoeff() <= 1e-9);
    MatC rebuilt = ys.ytr;
    rebuilt.diagonal() += ys.ysh;
    REQUIRE((rebuilt - ys.ybus).cwiseAbs().maxCoeff() < 1e-14);
  }
  // unity taps keep the matrix symmetric
  const CaseDocument nine = load_case("ieee9.case");
  const YbusSet ys = build_ybus(nine.buses, nine.branches);
  REQUIRE((ys.ybus - ys.ybus.transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("augments the nine-bus case with internal machine nodes") {
  const AugmentedNetwork net = augment_with_ibus(load_case("ieee9.case"));
  REQUIRE(net.n_total() == 12);
  REQUIRE(net.n_machines() == 3);
  REQUIRE(net.n_km() == 9);
  REQUIRE(net.buses[9].id == 10);
  REQUIRE(net.buses[10].id == 11);
  REQUIRE(net.buses[11].id == 12);
  for (int m = 0; m < 3; ++m) {
    REQUIRE(net.buses[net.ibus[m]].kind == BusKind::ibus);
    const GenLink& link = net.links[m];
    const double xd = net.machines[m].xd_t;
    REQUIRE(link.y_link == Catch::Approx(1.0 / xd));
    REQUIRE(link.b_self == Catch::Approx(-1.0 / xd));
    REQUIRE(link.g_self == Catch::Approx(0.0).margin(1e-14));
    REQUIRE(std::abs(net.ybus(link.ibus, link.kbus) - Complex(0.0, 1.0 / xd)) < 1e-12);
  }
  REQUIRE(net.links[0].kbus == 0);
  REQUIRE(net.links[1].kbus == 1);
  REQUIRE(net.links[2].kbus == 2);
  REQUIRE(net.p_mech[0] == Catch::Approx(0.716));
  REQUIRE(net.p_mech[1] == Catch::Approx(1.63));
  REQUIRE(net.p_mech[2] == Catch::Approx(0.85));

  const VecC rowsum = net.ytr.rowwise().sum();
  REQUIRE(rowsum.cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("augment identity and rejection cases") {
  // zero generators: untouched network, no internal nodes
  const std::string plain =
      "baseMVA 100\nbus\n1 1 0 0 230\n2 1 0 0 230\nbranch\n1 2 0 0.1 0 0 1\n";
  const CaseDocument doc = parse_case(plain);
  const AugmentedNetwork net = augment_with_ibus(doc);
  REQUIRE(net.n_machines() == 0);
  REQUIRE(net.n_total() == 2);
  const YbusSet ys = build_ybus(doc.buses, doc.branches);
  REQUIRE((net.ybus - ys.ybus).cwiseAbs().maxCoeff() == 0.0);

  // a document that already carries internal nodes is rejected
  CaseDocument tainted = doc;
  tainted.buses.push_back({3, BusKind::ibus, false, 0, 0, 230});
  REQUIRE(kind_of([&] { augment_with_ibus(tainted); }) == ErrorKind::structural);

  // two machines on one bus
  CaseDocument doubled = doc;
  doubled.gens.push_back({1, 0.5, 1.0});
  doubled.gens.push_back({1, 0.5, 1.0});
  doubled.dynamics.push_back({1, 0.1, 0.01, 1.0, 0.1, 377.0});
  REQUIRE(kind_of([&] { augment_with_ibus(doubled); }) == ErrorKind::unsupported);

  // generator without a dynamics row
  CaseDocument nodyn = doc;
  nodyn.gens.push_back({2, 0.5, 1.0});
  REQUIRE(kind_of([&] { augment_with_ibus(nodyn); }) == ErrorKind::config);
}

TEST_CASE("warns on isolated buses") {
  const std::string doc_text =
      "baseMVA 100\nbus\n1 1 0 0 230\n2 1 0 0 230\n3 1 0 0 230\nbranch\n1 2 0 0.1 0 0 1\n";
  const CaseDocument doc = parse_case(doc_text);
  const YbusSet ys = build_ybus(doc.buses, doc.branches);
  REQUIRE(ys.warnings.size() == 1);
  REQUIRE(ys.warnings[0].find("bus 3") != std::string::npos);
}
