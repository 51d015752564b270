#pragma once

#include <cmath>
#include <ostream>
#include <vector>

#include "swingkit/case_model.hpp"
#include "swingkit/errors.hpp"
#include "swingkit/types.hpp"

namespace swingkit {

// Constant-current load split into a constant-admittance half and a
// constant-power half, both exact at |v| = v0_mag:
//   S(|v|) = S0 |v|  ->  (S0 / (2 v0)) |v|^2 + (S0 / 2) v0.
struct CurrentLoadSplit {
  Complex z_part;  // admittance contribution: conj(S0) / (2 v0)
  Complex p_part;  // constant complex power: (S0 / 2) v0
};

inline CurrentLoadSplit decompose_current_load(Complex s0, double v0_mag) {
  require(v0_mag > 0.0, ErrorKind::domain, "current-load split needs |v0| > 0");
  return {std::conj(s0) / (2.0 * v0_mag), 0.5 * s0 * v0_mag};
}

// Apparent-to-true power ratio of the split as the voltage moves off v0:
// with r = |v|/|v0| the reconstructed load draws (r/2 + 1/(2r)) times the
// true constant-current demand. Symmetric under r -> 1/r, equals 1 at r = 1.
inline double current_load_error_ratio(double r) {
  require(r > 0.0, ErrorKind::domain, "voltage ratio must be positive");
  return 0.5 * r + 0.5 / r;
}

// Per-bus aggregate of all zip loads after the split: the Z and I halves land
// in a diagonal admittance add-on, the P and I halves in constant powers.
struct ExtendedLoadSet {
  VecC ybus_add;  // per-bus diagonal admittance contribution
  VecC p_loads;   // per-bus constant complex power drawn (consumption positive)
  VecR v0_mag;    // split voltages, 1.0 where no current load
  VecC i0;        // designated current injections; zero unless a study sets them
};

inline ExtendedLoadSet build_extended_loads(const std::vector<ZipLoadSpec>& zips,
                                            const std::vector<BusRecord>& buses, const VecC& v0) {
  const int n = static_cast<int>(buses.size());
  require(v0.size() == n, ErrorKind::config, "v0 must cover every bus");
  ExtendedLoadSet out;
  out.ybus_add = VecC::Zero(n);
  out.p_loads = VecC::Zero(n);
  out.v0_mag = VecR::Ones(n);
  out.i0 = VecC::Zero(n);

  auto index_of = [&](int id) -> int {
    for (int i = 0; i < n; ++i)
      if (buses[i].id == id) return i;
    fail(ErrorKind::dangling_ref, "zip load references unknown bus " + std::to_string(id));
  };

  for (const auto& z : zips) {
    const int j = index_of(z.bus);
    const double vm = std::abs(v0(j));
    require(vm > 0.0, ErrorKind::domain, "zip split voltage is zero at bus " + std::to_string(z.bus));
    out.v0_mag(j) = vm;
    // S0 is the draw at |v| = 1, so the Z fraction is the admittance conj(fz S0)
    // outright (exact at every voltage); only the I fraction needs the split point.
    out.ybus_add(j) += std::conj(z.fz * z.s0);
    out.p_loads(j) += z.fp * z.s0;
    if (z.fi != 0.0) {
      const auto split = decompose_current_load(z.fi * z.s0, vm);
      out.ybus_add(j) += split.z_part;
      out.p_loads(j) += split.p_part;
    }
  }
  return out;
}

// Largest relative drift of |v| from the split voltages; past 0.15 the
// current-load split should be recomputed at the current operating point.
inline double split_voltage_drift(const ExtendedLoadSet& loads, const VecC& v_now) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < v_now.size() && j < loads.v0_mag.size(); ++j) {
    if (loads.ybus_add(j) == Complex(0, 0) && loads.p_loads(j) == Complex(0, 0)) continue;
    worst = std::max(worst, std::abs(std::abs(v_now(j)) / loads.v0_mag(j) - 1.0));
  }
  return worst;
}

inline constexpr double kSplitDriftLimit = 0.15;

inline std::vector<ZipLoadSpec> with_fractions(std::vector<ZipLoadSpec> zips, double fz, double fi,
                                               double fp) {
  require(std::abs(fz + fi + fp - 1.0) <= 1e-12, ErrorKind::domain, "zip fractions must sum to 1");
  for (auto& z : zips) {
    z.fz = fz;
    z.fi = fi;
    z.fp = fp;
  }
  return zips;
}

// Error-curve table for plots: voltage ratio against reconstruction ratio.
inline void write_error_curve(std::ostream& os, double r_min, double r_max, int steps) {
  require(r_min > 0 && r_max > r_min && steps >= 2, ErrorKind::domain, "bad error-curve range");
  os << "r,ratio\n";
  char buf[64];
  for (int i = 0; i < steps; ++i) {
    const double r = r_min + (r_max - r_min) * i / (steps - 1);
    std::snprintf(buf, sizeof buf, "%.12g,%.12g\n", r, current_load_error_ratio(r));
    os << buf;
  }
}

}  // namespace swingkit
