#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "swingkit/errors.hpp"
#include "swingkit/types.hpp"

namespace swingkit {

enum class BusKind { mbus, kbus, ibus };

struct BusRecord {
  int id = 0;
  BusKind kind = BusKind::mbus;
  bool reference = false;  // angle reference for the pre-disturbance solve
  double g_shunt = 0.0;    // pu admittance on system base
  double b_shunt = 0.0;
  double base_kv = 0.0;
};

struct BranchRecord {
  int from = 0;
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double b_charge = 0.0;
  double tap = 0.0;  // 0 => unity ratio
  double shift_deg = 0.0;
  bool in_service = true;
};

struct GeneratorRecord {
  int bus = 0;
  double p_mech = 0.0;  // pu
  double v_set = 1.0;
};

struct GeneratorDynamic {
  int bus = 0;
  double m = 0.0;     // inertia constant, s^2 pu
  double d = 0.0;     // damping, pu per rad/s
  double e = 1.0;     // internal voltage magnitude
  double xd_t = 0.0;  // transient reactance behind which the internal node sits
  double omega0 = 0.0;  // synchronous angular speed, rad/s
};

struct ZipLoadSpec {
  int bus = 0;
  Complex s0;          // pu complex power drawn at |v| = 1
  double fz = 0.0;
  double fi = 0.0;
  double fp = 0.0;
};

struct CaseDocument {
  std::string name;
  double base_mva = 100.0;
  std::vector<BusRecord> buses;
  std::vector<BranchRecord> branches;
  std::vector<GeneratorRecord> gens;
  std::vector<GeneratorDynamic> dynamics;
  std::vector<ZipLoadSpec> zips;

  int index_of(int bus_id) const {
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (buses[i].id == bus_id) return static_cast<int>(i);
    fail(ErrorKind::dangling_ref, "unknown bus id " + std::to_string(bus_id));
  }
  bool has_bus(int bus_id) const {
    return std::any_of(buses.begin(), buses.end(), [&](const BusRecord& b) { return b.id == bus_id; });
  }
};

namespace detail {

inline std::string strip_comment(const std::string& line) {
  const auto pos = line.find_first_of("#%");
  return pos == std::string::npos ? line : line.substr(0, pos);
}

inline std::vector<std::string> tokens_of(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> toks;
  std::string t;
  while (in >> t) toks.push_back(t);
  return toks;
}

inline double num_at(const std::vector<std::string>& toks, std::size_t i, int line_no) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(toks.at(i), &used);
  } catch (const std::exception&) {
    fail(ErrorKind::syntax, "line " + std::to_string(line_no) + ": expected a number, got '" + toks[i] + "'");
  }
  require(used == toks[i].size(), ErrorKind::syntax,
          "line " + std::to_string(line_no) + ": trailing characters in '" + toks[i] + "'");
  return v;
}

inline int int_at(const std::vector<std::string>& toks, std::size_t i, int line_no) {
  const double v = num_at(toks, i, line_no);
  require(std::nearbyint(v) == v, ErrorKind::syntax,
          "line " + std::to_string(line_no) + ": expected an integer, got '" + toks[i] + "'");
  return static_cast<int>(v);
}

}  // namespace detail

// Case documents are plain text: a `baseMVA <value>` line plus named numeric
// tables (bus, branch, gen, dynamics, zip), one row per line, `#`/`%` comments.
// Power columns are MW/MVAr on baseMVA and are converted to pu here.
inline CaseDocument parse_case(const std::string& text) {
  CaseDocument doc;
  enum class Table { none, bus, branch, gen, dynamics, zip };
  Table table = Table::none;
  bool saw_base = false;

  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  std::vector<std::vector<std::string>> pending[6];
  std::vector<int> pending_lines[6];

  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = detail::strip_comment(raw);
    const auto toks = detail::tokens_of(line);
    if (toks.empty()) continue;

    if (toks[0] == "baseMVA") {
      require(toks.size() == 2, ErrorKind::syntax, "line " + std::to_string(line_no) + ": baseMVA takes one value");
      doc.base_mva = detail::num_at(toks, 1, line_no);
      require(doc.base_mva > 0, ErrorKind::domain, "baseMVA must be positive");
      saw_base = true;
      continue;
    }
    if (toks[0] == "name") {
      doc.name = toks.size() > 1 ? toks[1] : "";
      continue;
    }
    if (toks.size() == 1 && !std::isdigit(static_cast<unsigned char>(toks[0][0])) && toks[0][0] != '-') {
      if (toks[0] == "bus")
        table = Table::bus;
      else if (toks[0] == "branch")
        table = Table::branch;
      else if (toks[0] == "gen")
        table = Table::gen;
      else if (toks[0] == "dynamics")
        table = Table::dynamics;
      else if (toks[0] == "zip")
        table = Table::zip;
      else
        fail(ErrorKind::syntax, "line " + std::to_string(line_no) + ": unknown table '" + toks[0] + "'");
      continue;
    }
    require(table != Table::none, ErrorKind::syntax,
            "line " + std::to_string(line_no) + ": data row outside any table");
    pending[static_cast<int>(table)].push_back(toks);
    pending_lines[static_cast<int>(table)].push_back(line_no);
  }
  require(saw_base, ErrorKind::syntax, "missing baseMVA line");

  const double base = doc.base_mva;

  const auto& bus_rows = pending[static_cast<int>(Table::bus)];
  const auto& bus_lines = pending_lines[static_cast<int>(Table::bus)];
  for (std::size_t i = 0; i < bus_rows.size(); ++i) {
    const auto& toks = bus_rows[i];
    const int ln = bus_lines[i];
    require(toks.size() == 5, ErrorKind::syntax, "line " + std::to_string(ln) + ": bus rows take 5 columns");
    BusRecord b;
    b.id = detail::int_at(toks, 0, ln);
    const int code = detail::int_at(toks, 1, ln);
    require(code >= 1 && code <= 3, ErrorKind::syntax,
            "line " + std::to_string(ln) + ": bus kind-code must be 1 (M), 2 (K) or 3 (K, reference)");
    b.kind = code == 1 ? BusKind::mbus : BusKind::kbus;
    b.reference = code == 3;
    b.g_shunt = detail::num_at(toks, 2, ln) / base;
    b.b_shunt = detail::num_at(toks, 3, ln) / base;
    b.base_kv = detail::num_at(toks, 4, ln);
    require(!doc.has_bus(b.id), ErrorKind::duplicate, "line " + std::to_string(ln) + ": duplicate bus id " + std::to_string(b.id));
    doc.buses.push_back(b);
  }
  require(!doc.buses.empty(), ErrorKind::syntax, "case has no bus table");

  const auto& br_rows = pending[static_cast<int>(Table::branch)];
  const auto& br_lines = pending_lines[static_cast<int>(Table::branch)];
  for (std::size_t i = 0; i < br_rows.size(); ++i) {
    const auto& toks = br_rows[i];
    const int ln = br_lines[i];
    require(toks.size() == 7 || toks.size() == 8, ErrorKind::syntax,
            "line " + std::to_string(ln) + ": branch rows take 7 columns (from to R X B tap status) or 8 (with shift before status)");
    BranchRecord br;
    br.from = detail::int_at(toks, 0, ln);
    br.to = detail::int_at(toks, 1, ln);
    br.r = detail::num_at(toks, 2, ln);
    br.x = detail::num_at(toks, 3, ln);
    br.b_charge = detail::num_at(toks, 4, ln);
    br.tap = detail::num_at(toks, 5, ln);
    if (toks.size() == 8) {
      br.shift_deg = detail::num_at(toks, 6, ln);
      br.in_service = detail::int_at(toks, 7, ln) != 0;
    } else {
      br.in_service = detail::int_at(toks, 6, ln) != 0;
    }
    require(doc.has_bus(br.from), ErrorKind::dangling_ref,
            "line " + std::to_string(ln) + ": branch endpoint " + std::to_string(br.from) + " is not a bus");
    require(doc.has_bus(br.to), ErrorKind::dangling_ref,
            "line " + std::to_string(ln) + ": branch endpoint " + std::to_string(br.to) + " is not a bus");
    require(br.from != br.to, ErrorKind::structural, "line " + std::to_string(ln) + ": branch loops on one bus");
    doc.branches.push_back(br);
  }

  const auto& gen_rows = pending[static_cast<int>(Table::gen)];
  const auto& gen_lines = pending_lines[static_cast<int>(Table::gen)];
  for (std::size_t i = 0; i < gen_rows.size(); ++i) {
    const auto& toks = gen_rows[i];
    const int ln = gen_lines[i];
    require(toks.size() == 2 || toks.size() == 3, ErrorKind::syntax,
            "line " + std::to_string(ln) + ": gen rows take 2 or 3 columns (bus p_mech [v_set])");
    GeneratorRecord g;
    g.bus = detail::int_at(toks, 0, ln);
    g.p_mech = detail::num_at(toks, 1, ln) / base;
    g.v_set = toks.size() == 3 ? detail::num_at(toks, 2, ln) : 1.0;
    require(doc.has_bus(g.bus), ErrorKind::dangling_ref,
            "line " + std::to_string(ln) + ": gen bus " + std::to_string(g.bus) + " is not a bus");
    doc.gens.push_back(g);
  }

  const auto& dyn_rows = pending[static_cast<int>(Table::dynamics)];
  const auto& dyn_lines = pending_lines[static_cast<int>(Table::dynamics)];
  for (std::size_t i = 0; i < dyn_rows.size(); ++i) {
    const auto& toks = dyn_rows[i];
    const int ln = dyn_lines[i];
    require(toks.size() == 6, ErrorKind::syntax,
            "line " + std::to_string(ln) + ": dynamics rows take 6 columns (bus M D E xd_t omega0)");
    GeneratorDynamic d;
    d.bus = detail::int_at(toks, 0, ln);
    d.m = detail::num_at(toks, 1, ln);
    d.d = detail::num_at(toks, 2, ln);
    d.e = detail::num_at(toks, 3, ln);
    d.xd_t = detail::num_at(toks, 4, ln);
    d.omega0 = detail::num_at(toks, 5, ln);
    require(doc.has_bus(d.bus), ErrorKind::dangling_ref,
            "line " + std::to_string(ln) + ": dynamics bus " + std::to_string(d.bus) + " is not a bus");
    require(d.m > 0, ErrorKind::domain, "line " + std::to_string(ln) + ": inertia must be positive");
    require(d.xd_t > 0, ErrorKind::domain, "line " + std::to_string(ln) + ": xd_t must be positive");
    doc.dynamics.push_back(d);
  }

  const auto& zip_rows = pending[static_cast<int>(Table::zip)];
  const auto& zip_lines = pending_lines[static_cast<int>(Table::zip)];
  for (std::size_t i = 0; i < zip_rows.size(); ++i) {
    const auto& toks = zip_rows[i];
    const int ln = zip_lines[i];
    require(toks.size() == 6, ErrorKind::syntax,
            "line " + std::to_string(ln) + ": zip rows take 6 columns (bus P0 Q0 fz fi fp)");
    ZipLoadSpec z;
    z.bus = detail::int_at(toks, 0, ln);
    z.s0 = Complex(detail::num_at(toks, 1, ln) / base, detail::num_at(toks, 2, ln) / base);
    z.fz = detail::num_at(toks, 3, ln);
    z.fi = detail::num_at(toks, 4, ln);
    z.fp = detail::num_at(toks, 5, ln);
    require(doc.has_bus(z.bus), ErrorKind::dangling_ref,
            "line " + std::to_string(ln) + ": zip bus " + std::to_string(z.bus) + " is not a bus");
    require(std::abs(z.fz + z.fi + z.fp - 1.0) <= 1e-12, ErrorKind::domain,
            "line " + std::to_string(ln) + ": zip fractions must sum to 1");
    require(z.fz >= 0 && z.fi >= 0 && z.fp >= 0, ErrorKind::domain,
            "line " + std::to_string(ln) + ": zip fractions must be nonnegative");
    doc.zips.push_back(z);
  }

  return doc;
}

struct YbusSet {
  MatC ybus;  // full nodal admittance matrix
  MatC ytr;   // transfer part: ybus minus its row sums, every row sums to zero
  VecC ysh;   // diagonal remainder (shunts, charging, off-nominal tap leftovers)
  std::vector<std::string> warnings;
};

// Builds the nodal admittance matrix over `buses` (pi-model branches with
// complex taps, bus shunts) and splits it into a zero-row-sum transfer part
// plus a diagonal remainder.
inline YbusSet build_ybus(const std::vector<BusRecord>& buses, const std::vector<BranchRecord>& branches) {
  const int n = static_cast<int>(buses.size());
  auto index_of = [&](int id) -> int {
    for (int i = 0; i < n; ++i)
      if (buses[i].id == id) return i;
    fail(ErrorKind::dangling_ref, "unknown bus id " + std::to_string(id));
  };

  YbusSet out;
  out.ybus = MatC::Zero(n, n);
  for (const auto& br : branches) {
    if (!br.in_service) continue;
    require(br.r != 0.0 || br.x != 0.0, ErrorKind::structural,
            "zero-impedance branch " + std::to_string(br.from) + "-" + std::to_string(br.to));
    const int f = index_of(br.from);
    const int t = index_of(br.to);
    const Complex y = 1.0 / Complex(br.r, br.x);
    const Complex ych(0.0, br.b_charge / 2.0);
    const double ratio = br.tap == 0.0 ? 1.0 : br.tap;
    const Complex tap = std::polar(ratio, br.shift_deg * kPi / 180.0);
    out.ybus(f, f) += (y + ych) / (tap * std::conj(tap));
    out.ybus(f, t) += -y / std::conj(tap);
    out.ybus(t, f) += -y / tap;
    out.ybus(t, t) += y + ych;
  }
  for (int i = 0; i < n; ++i) out.ybus(i, i) += Complex(buses[i].g_shunt, buses[i].b_shunt);

  out.ysh = out.ybus.rowwise().sum();
  out.ytr = out.ybus;
  out.ytr.diagonal() -= out.ysh;

  for (int i = 0; i < n; ++i) {
    double off = 0.0;
    for (int k = 0; k < n; ++k)
      if (k != i) off += std::abs(out.ybus(i, k));
    if (off == 0.0 && std::abs(out.ybus(i, i)) == 0.0)
      out.warnings.push_back("bus " + std::to_string(buses[i].id) + " is isolated");
  }
  return out;
}

struct GenLink {
  int ibus = 0;       // internal-node index into the augmented bus list
  int kbus = 0;       // terminal-bus index
  double y_link = 0;  // |ybus(ibus,kbus)|
  double g_self = 0;  // Re ybus(ibus,ibus)
  double b_self = 0;  // Im ybus(ibus,ibus); the restoring susceptance is its negative
};

struct AugmentedNetwork {
  std::vector<BusRecord> buses;  // originals followed by one internal node per machine
  MatC ybus;
  MatC ytr;
  VecC ysh;
  std::vector<int> ibus;              // indices of internal nodes, machine order
  std::vector<int> km;                // indices of all original buses
  std::vector<GenLink> links;         // aligned with machines
  std::vector<GeneratorDynamic> machines;
  std::vector<double> p_mech;         // aligned with machines
  double base_mva = 100.0;
  std::vector<std::string> warnings;

  int n_machines() const { return static_cast<int>(machines.size()); }
  int n_km() const { return static_cast<int>(km.size()); }
  int n_total() const { return static_cast<int>(buses.size()); }
};

// Adds one internal machine node per generator behind xd_t. Internal nodes get
// ids max_id+1 ... max_id+NI in generator-table order and kind `ibus`.
inline AugmentedNetwork augment_with_ibus(const CaseDocument& doc) {
  for (const auto& b : doc.buses)
    require(b.kind != BusKind::ibus, ErrorKind::structural, "case already carries internal machine nodes");

  AugmentedNetwork net;
  net.base_mva = doc.base_mva;
  net.buses = doc.buses;

  std::map<int, GeneratorDynamic> dyn_by_bus;
  for (const auto& d : doc.dynamics) {
    require(!dyn_by_bus.count(d.bus), ErrorKind::duplicate,
            "bus " + std::to_string(d.bus) + " hosts more than one machine");
    dyn_by_bus[d.bus] = d;
  }

  int next_id = 0;
  for (const auto& b : doc.buses) next_id = std::max(next_id, b.id);

  std::vector<BranchRecord> branches = doc.branches;
  std::map<int, bool> seen_gen_bus;
  for (const auto& g : doc.gens) {
    require(!seen_gen_bus[g.bus], ErrorKind::unsupported,
            "bus " + std::to_string(g.bus) + " hosts more than one generator");
    seen_gen_bus[g.bus] = true;
    const auto it = dyn_by_bus.find(g.bus);
    require(it != dyn_by_bus.end(), ErrorKind::config,
            "generator bus " + std::to_string(g.bus) + " has no dynamics row");
    const GeneratorDynamic& dyn = it->second;

    BusRecord ib;
    ib.id = ++next_id;
    ib.kind = BusKind::ibus;
    ib.base_kv = doc.buses[doc.index_of(g.bus)].base_kv;
    net.buses.push_back(ib);

    BranchRecord link;
    link.from = ib.id;
    link.to = g.bus;
    link.r = 0.0;
    link.x = dyn.xd_t;
    branches.push_back(link);

    net.machines.push_back(dyn);
    net.p_mech.push_back(g.p_mech);
  }

  YbusSet ys = build_ybus(net.buses, branches);
  net.ybus = std::move(ys.ybus);
  net.ytr = std::move(ys.ytr);
  net.ysh = std::move(ys.ysh);
  net.warnings = std::move(ys.warnings);

  const int n_orig = static_cast<int>(doc.buses.size());
  for (int i = 0; i < n_orig; ++i) net.km.push_back(i);
  for (std::size_t m = 0; m < net.machines.size(); ++m) {
    const int ii = n_orig + static_cast<int>(m);
    net.ibus.push_back(ii);
    GenLink link;
    link.ibus = ii;
    link.kbus = doc.index_of(doc.gens[m].bus);
    link.y_link = std::abs(net.ybus(ii, link.kbus));
    link.g_self = net.ybus(ii, ii).real();
    link.b_self = net.ybus(ii, ii).imag();
    net.links.push_back(link);
  }
  return net;
}

// Block views of a matrix over index sets; used to partition ytr/ybus into
// KM/I blocks without copying index bookkeeping around.
inline MatC submatrix(const MatC& m, const std::vector<int>& rows, const std::vector<int>& cols) {
  MatC out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = m(rows[i], cols[j]);
  return out;
}

inline VecC subvector(const VecC& v, const std::vector<int>& idx) {
  VecC out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out(i) = v(idx[i]);
  return out;
}

}  // namespace swingkit
