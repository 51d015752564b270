#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "swingkit/case_model.hpp"
#include "swingkit/errors.hpp"
#include "swingkit/qpf.hpp"
#include "swingkit/types.hpp"
#include "swingkit/zip_loads.hpp"

namespace swingkit {

// Affine maps over the stacked machine coordinates w_I = (x_I; y_I).
struct AffineC {
  MatC m;
  VecC off;
  VecC at(const VecR& w) const { return m * w.cast<Complex>() + off; }
};

struct AffineR {
  MatR m;
  VecR off;
  VecR at(const VecR& w) const { return m * w + off; }
};

inline AffineC conj_map(const AffineC& a) { return {a.m.conjugate(), a.off.conjugate()}; }

// Tangent map at w0 of the elementwise product of two affine series
// coefficients: (fg)(w) ~ f0 g(w) + g0 f(w) - f0 g0, exact at w = w0.
inline AffineC jet_product(const AffineC& f, const AffineC& g, const VecR& w0) {
  const VecC f0 = f.at(w0), g0 = g.at(w0);
  AffineC out;
  out.m = f0.asDiagonal() * g.m + g0.asDiagonal() * f.m;
  out.off = f0.cwiseProduct(g.off) + g0.cwiseProduct(f.off) - f0.cwiseProduct(g0);
  return out;
}

inline AffineR jet_product(const AffineR& f, const AffineR& g, const VecR& w0) {
  const VecR f0 = f.at(w0), g0 = g.at(w0);
  AffineR out;
  out.m = f0.asDiagonal() * g.m + g0.asDiagonal() * f.m;
  out.off = f0.cwiseProduct(g.off) + g0.cwiseProduct(f.off) - f0.cwiseProduct(g0);
  return out;
}

// Per-order coefficients of u(s) z(s) with every bilinear term jet-linearized.
inline std::vector<AffineR> jet_series_product(const std::vector<AffineR>& u,
                                               const std::vector<AffineR>& z, int n_out,
                                               const VecR& w0) {
  std::vector<AffineR> out;
  for (int n = 0; n <= n_out; ++n) {
    AffineR acc{MatR::Zero(u[0].m.rows(), u[0].m.cols()), VecR::Zero(u[0].off.size())};
    for (int k = 0; k < static_cast<int>(u.size()) && k <= n; ++k) {
      if (n - k >= static_cast<int>(z.size())) continue;
      const AffineR term = jet_product(u[k], z[n - k], w0);
      acc.m += term.m;
      acc.off += term.off;
    }
    out.push_back(std::move(acc));
  }
  return out;
}

// Power series of the embedded balance, one affine map per order. Rows are
// stacked (Re; Im) over the retained buses or the machines:
//   v_map[n]      voltages on the retained buses, 2 NKM rows
//   wstar_map[n]  conjugate reciprocal voltages there, 2 NKM rows
//   pq_map[k]     machine-side p - jq, 2 NI rows (top Re = p, bottom Im = -q)
struct HeSeries {
  int order = 0;
  int n_km = 0, n_i = 0;
  double e_ref = 1.0;
  VecR w0;  // expansion point (x_I0; y_I0)
  std::vector<MatR> v_map;
  std::vector<VecR> v_off;
  std::vector<MatR> wstar_map;
  std::vector<VecR> wstar_off;
  std::vector<MatR> pq_map;
  std::vector<VecR> pq_off;
};

// Embedded balance on the retained buses:
//   e_j^T Ytr v(s) = s (p - jq)_j w_j*(s) + s i0_j - s ysh_j v_j(s)
// with the germ v(0) = E_ref uniform and v_I(s) = E_ref + (v_I - E_ref) s.
// Each order is an affine map of w_I = (x_I; y_I); the reciprocal convolution
//   w*[n+1] = -(1/E_ref) sum_{k<=n} w*[k] v*[n+1-k]
// and every other bilinear term are jet-linearized at the expansion point, so
// evaluating the maps at w0 reproduces the scalar series exactly.
inline HeSeries he_recursion(const AugmentedNetwork& net, const ExtendedLoadSet& loads,
                             const VecC& v_i, int n_max, double e_ref = 1.0) {
  const int ni = net.n_machines();
  const int nkm = net.n_km();
  require(ni >= 1, ErrorKind::config, "series needs at least one machine node");
  require(n_max >= 2, ErrorKind::config, "series order must be at least 2");
  require(v_i.size() == ni, ErrorKind::config, "need one machine voltage per internal node");
  require(loads.ybus_add.size() == net.n_total(), ErrorKind::config,
          "load set does not match the augmented network");
  require(e_ref > 0.0, ErrorKind::domain, "reference magnitude must be positive");

  const MatC ytr_kk = submatrix(net.ytr, net.km, net.km);
  const MatC ytr_ki = submatrix(net.ytr, net.km, net.ibus);
  const MatC ytr_ik = submatrix(net.ytr, net.ibus, net.km);
  const MatC ytr_ii = submatrix(net.ytr, net.ibus, net.ibus);
  const VecC ysh_all = net.ysh + loads.ybus_add;
  const VecC ysh_km = subvector(ysh_all, net.km);
  const VecC ysh_ib = subvector(ysh_all, net.ibus);
  const VecC pq_km = -subvector(loads.p_loads, net.km).conjugate();
  const VecC i0_km = subvector(loads.i0, net.km);
  const VecC i0_ib = subvector(loads.i0, net.ibus);

  Eigen::FullPivLU<MatC> lu(ytr_kk);
  require(lu.isInvertible(), ErrorKind::structural,
          "transfer matrix over the retained buses is singular");

  HeSeries s;
  s.order = n_max;
  s.n_km = nkm;
  s.n_i = ni;
  s.e_ref = e_ref;
  s.w0 = stack_real(v_i);

  const Complex cref(e_ref, 0.0);
  const VecC ones_km = VecC::Constant(nkm, 1.0);
  const VecC ones_ib = VecC::Constant(ni, 1.0);

  // machine-side embedding: order 0 constant, order 1 affine, nothing above
  AffineC vi0{MatC::Zero(ni, 2 * ni), cref * ones_ib};
  AffineC vi1{MatC::Zero(ni, 2 * ni), -cref * ones_ib};
  vi1.m.leftCols(ni) = MatC::Identity(ni, ni);
  vi1.m.rightCols(ni) = kJ * MatC::Identity(ni, ni);
  const AffineC vi1_star = conj_map(vi1);

  std::vector<AffineC> vkm, wst;
  vkm.push_back({MatC::Zero(nkm, 2 * ni), cref * ones_km});
  wst.push_back({MatC::Zero(nkm, 2 * ni), Complex(1.0 / e_ref, 0.0) * ones_km});

  for (int n = 0; n < n_max; ++n) {
    AffineC rhs{MatC::Zero(nkm, 2 * ni), VecC::Zero(nkm)};
    if (n == 0) {
      rhs.m -= ytr_ki * vi1.m;
      rhs.off -= ytr_ki * vi1.off;
      rhs.off += i0_km;
    }
    rhs.m += pq_km.asDiagonal() * wst[n].m;
    rhs.off += pq_km.cwiseProduct(wst[n].off);
    rhs.m -= ysh_km.asDiagonal() * vkm[n].m;
    rhs.off -= ysh_km.cwiseProduct(vkm[n].off);

    AffineC next{lu.solve(rhs.m), lu.solve(rhs.off)};
    if (!next.m.allFinite() || !next.off.allFinite() ||
        next.m.cwiseAbs().maxCoeff() > 1e100 || next.off.cwiseAbs().maxCoeff() > 1e100)
      fail(ErrorKind::divergence,
           "series coefficients overflow at order " + std::to_string(n + 1) +
               "; last stable order " + std::to_string(n));
    vkm.push_back(std::move(next));

    AffineC w_next{MatC::Zero(nkm, 2 * ni), VecC::Zero(nkm)};
    for (int k = 0; k <= n; ++k) {
      const AffineC term = jet_product(wst[k], conj_map(vkm[n + 1 - k]), s.w0);
      w_next.m -= term.m / cref;
      w_next.off -= term.off / cref;
    }
    wst.push_back(std::move(w_next));
  }

  // machine-side power balance, p - jq = v_i*(s) [e_i^T Ytr v(s) - s i0_i + s ysh_i v_i(s)];
  // the bracket's per-order maps first, then the product with the affine v_i*(s)
  std::vector<AffineC> cur;
  for (int k = 0; k <= n_max; ++k) {
    AffineC c{ytr_ik * vkm[k].m, ytr_ik * vkm[k].off};
    if (k <= 1) {
      const AffineC& vik = (k == 0) ? vi0 : vi1;
      c.m += ytr_ii * vik.m;
      c.off += ytr_ii * vik.off;
    }
    if (k == 1) c.off -= i0_ib;
    if (k == 1 || k == 2) {
      const AffineC& prev = (k == 1) ? vi0 : vi1;
      c.m += ysh_ib.asDiagonal() * prev.m;
      c.off += ysh_ib.cwiseProduct(prev.off);
    }
    cur.push_back(std::move(c));
  }
  for (int k = 0; k <= n_max; ++k) {
    AffineC pq{cref * cur[k].m, cref * cur[k].off};
    if (k >= 1) {
      const AffineC term = jet_product(vi1_star, cur[k - 1], s.w0);
      pq.m += term.m;
      pq.off += term.off;
    }
    s.pq_map.push_back(stack_real(pq.m));
    s.pq_off.push_back(stack_real(pq.off));
  }

  for (int n = 0; n <= n_max; ++n) {
    s.v_map.push_back(stack_real(vkm[n].m));
    s.v_off.push_back(stack_real(vkm[n].off));
    s.wstar_map.push_back(stack_real(wst[n].m));
    s.wstar_off.push_back(stack_real(wst[n].off));
  }
  return s;
}

// Rational compression of an affine-map series: numerator coefficients are the
// convolutions C[k] = sum_j b[j] A[k-j], and the denominator b annihilates the
// orders l+1..l+m. W_b stacks every map and offset entry of those orders, so
// one denominator serves the whole row group.
struct PadeFit {
  std::vector<MatR> num_map;  // C[0..l]
  std::vector<VecR> num_off;  // c[0..l]
  VecR b;                     // denominator coefficients b[0..m]
  double sigma_min = 0.0;     // smallest singular value of W_b
  double sigma_gap = 1.0;     // relative gap between the two smallest
  double w_norm = 0.0;        // largest singular value of W_b
  double denom_sum = 0.0;     // sum of b, the denominator at s = 1
  bool degenerate = false;    // near-ambiguous null space
};

inline PadeFit pade_fit(const std::vector<MatR>& maps, const std::vector<VecR>& offs, int l,
                        int m) {
  require(l >= 1 && m >= 1, ErrorKind::config, "rational orders must be positive");
  require(l == m, ErrorKind::config, "numerator and denominator orders must match");
  require(static_cast<int>(maps.size()) > l + m && maps.size() == offs.size(),
          ErrorKind::config, "series must be computed through order l+m");
  const Eigen::Index rows = maps[0].rows(), cols = maps[0].cols();
  for (std::size_t k = 0; k < maps.size(); ++k)
    require(maps[k].rows() == rows && maps[k].cols() == cols && offs[k].size() == rows,
            ErrorKind::config, "series maps must share one shape");

  const Eigen::Index ent = rows * cols + rows;
  MatR w(m * ent, m + 1);
  for (int k = l + 1; k <= l + m; ++k) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(k - l - 1) * ent;
    for (int j = 0; j <= m; ++j) {
      const int src = k - j;
      w.block(r0, j, rows * cols, 1) =
          Eigen::Map<const VecR>(maps[src].data(), rows * cols);
      w.block(r0 + rows * cols, j, rows, 1) = offs[src];
    }
  }

  PadeFit fit;
  if (w.cwiseAbs().maxCoeff() == 0.0) {
    fit.b = VecR::Zero(m + 1);  // series is already a polynomial of degree <= l
    fit.b(0) = 1.0;
  } else {
    Eigen::JacobiSVD<MatR> svd(w, Eigen::ComputeFullV);
    const VecR& sv = svd.singularValues();
    fit.b = svd.matrixV().col(m);
    fit.sigma_min = sv(m);
    fit.w_norm = sv(0);
    fit.sigma_gap = sv(m - 1) > 0.0 ? (sv(m - 1) - sv(m)) / sv(m - 1) : 0.0;
    fit.degenerate = fit.sigma_gap < 1e-10;
  }
  fit.denom_sum = fit.b.sum();
  require(std::abs(fit.denom_sum) > 1e-12, ErrorKind::degenerate,
          "rational denominator vanishes at s = 1");
  if (fit.denom_sum < 0.0) {  // fix the null-vector sign for reproducible dumps
    fit.b = -fit.b;
    fit.denom_sum = -fit.denom_sum;
  }

  for (int k = 0; k <= l; ++k) {
    MatR cm = MatR::Zero(rows, cols);
    VecR co = VecR::Zero(rows);
    for (int j = 0; j <= std::min(k, m); ++j) {
      cm += fit.b(j) * maps[k - j];
      co += fit.b(j) * offs[k - j];
    }
    fit.num_map.push_back(std::move(cm));
    fit.num_off.push_back(std::move(co));
  }
  return fit;
}

// Value of the rational map at s = 1: (sum C[k]) / (sum b[j]).
inline AffineR pade_eval_one(const PadeFit& fit) {
  AffineR out{MatR::Zero(fit.num_map[0].rows(), fit.num_map[0].cols()),
              VecR::Zero(fit.num_off[0].size())};
  for (std::size_t k = 0; k < fit.num_map.size(); ++k) {
    out.m += fit.num_map[k];
    out.off += fit.num_off[k];
  }
  out.m /= fit.denom_sum;
  out.off /= fit.denom_sum;
  return out;
}

struct PadeBlockDiag {
  std::string name;
  int entries = 0;         // scalar coefficient series fitted in this block
  int degenerate = 0;      // entries whose null vector was near-ambiguous
  double resid_max = 0.0;  // worst annihilation residual ||W b|| / ||W||
  double margin_min = 1.0; // smallest |denominator at s = 1| seen
};

// Master affine map chi = map * w_I + off at s = 1. Row layout:
//   [0, 2 NKM)            retained-bus voltages, stacked (Re; Im)
//   [p_start, +NI)        machine real power
//   [q_start, +NI)        machine reactive power
//   [xi_start, +NI)       xi = q x at the machine terminals' internal nodes
//   [zeta_start, +NI)     zeta = q y
struct PadeLinearization {
  MatR map;
  VecR off;
  int l = 0, m = 0;
  int n_km = 0, n_i = 0;
  double e_ref = 1.0;
  VecR w0;
  std::vector<PadeBlockDiag> blocks;

  int p_start() const { return 2 * n_km; }
  int q_start() const { return 2 * n_km + n_i; }
  int xi_start() const { return 2 * n_km + 2 * n_i; }
  int zeta_start() const { return 2 * n_km + 3 * n_i; }
  int rows() const { return 2 * n_km + 4 * n_i; }

  VecR predict(const VecR& w_i) const { return map * w_i + off; }
  VecC predict_v(const VecR& w_i) const {
    return unstack_complex(map.topRows(2 * n_km) * w_i + off.head(2 * n_km));
  }
  VecR predict_p(const VecR& w_i) const {
    return map.middleRows(p_start(), n_i) * w_i + off.segment(p_start(), n_i);
  }
  VecR predict_q(const VecR& w_i) const {
    return map.middleRows(q_start(), n_i) * w_i + off.segment(q_start(), n_i);
  }
  VecR predict_xi(const VecR& w_i) const {
    return map.middleRows(xi_start(), n_i) * w_i + off.segment(xi_start(), n_i);
  }
  VecR predict_zeta(const VecR& w_i) const {
    return map.middleRows(zeta_start(), n_i) * w_i + off.segment(zeta_start(), n_i);
  }
};

namespace detail {

struct ScalarFit {
  double value = 0.0;
  double resid = 0.0;   // ||W b|| / ||W||, zero for a polynomial series
  double margin = 1.0;  // |sum b|, the denominator magnitude at s = 1
  bool degenerate = false;
};

// One rational fit for a single scalar coefficient series. The annihilation
// system is m x (m+1), so an exact null vector always exists and the residual
// stays at rounding level; the entry value is the rational at s = 1.
inline ScalarFit fit_scalar(const std::vector<double>& a, int l, int m) {
  MatR w(m, m + 1);
  for (int k = l + 1; k <= l + m; ++k)
    for (int j = 0; j <= m; ++j) w(k - l - 1, j) = a[k - j];
  ScalarFit out;
  VecR b = VecR::Zero(m + 1);
  b(0) = 1.0;  // polynomial of degree <= l when nothing needs annihilating
  if (w.cwiseAbs().maxCoeff() != 0.0) {
    Eigen::JacobiSVD<MatR> svd(w, Eigen::ComputeFullV);
    const VecR& sv = svd.singularValues();
    b = svd.matrixV().col(m);
    out.degenerate = sv(m - 1) < 1e-10 * sv(0);  // a second kernel direction
    if (out.degenerate) {
      // the kernel plane leaves b ambiguous; take the combination with the
      // largest denominator at s = 1 so poles are only reported when the
      // whole plane pins one at the evaluation point
      const VecR alt = svd.matrixV().col(m - 1);
      const double nrm = std::hypot(b.sum(), alt.sum());
      if (nrm > 0.0) b = (b.sum() * b + alt.sum() * alt) / nrm;
    }
    out.resid = (w * b).norm() / sv(0);
  }
  const double den = b.sum();
  require(std::abs(den) > 1e-12, ErrorKind::degenerate,
          "rational denominator vanishes at s = 1");
  double num = 0.0;
  for (int k = 0; k <= l; ++k)
    for (int j = 0; j <= std::min(k, m); ++j) num += b(j) * a[k - j];
  out.value = num / den;
  out.margin = std::abs(den);
  return out;
}

// Entrywise fits over one row group. Tails of the map and offset series cancel
// when evaluated at the expansion point, so a denominator shared across the
// group lets the worst entry contaminate every other; fitting each scalar
// series on its own keeps the group's value error at the entry tail level.
inline void fit_block(const std::string& name, const std::vector<MatR>& maps,
                      const std::vector<VecR>& offs, int l, int m, MatR& h_map, VecR& h_off,
                      Eigen::Index row0, std::vector<PadeBlockDiag>& diags) {
  require(l >= 1 && m >= 1, ErrorKind::config, "rational orders must be positive");
  require(l == m, ErrorKind::config, "numerator and denominator orders must match");
  require(static_cast<int>(maps.size()) > l + m && maps.size() == offs.size(),
          ErrorKind::config, "series must be computed through order l+m");
  const Eigen::Index rows = maps[0].rows(), cols = maps[0].cols();
  PadeBlockDiag diag;
  diag.name = name;
  std::vector<double> a(l + m + 1);
  auto one = [&](auto coeff) -> double {
    for (int n = 0; n <= l + m; ++n) a[n] = coeff(n);
    ScalarFit fit;
    try {
      fit = fit_scalar(a, l, m);
    } catch (const Error& e) {
      fail(e.kind(), "block " + name + ": " + e.what());
    }
    ++diag.entries;
    if (fit.degenerate) ++diag.degenerate;
    diag.resid_max = std::max(diag.resid_max, fit.resid);
    diag.margin_min = std::min(diag.margin_min, fit.margin);
    return fit.value;
  };
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c)
      h_map(row0 + r, c) = one([&](int n) { return maps[n](r, c); });
    h_off(row0 + r) = one([&](int n) { return offs[n](r); });
  }
  diags.push_back(std::move(diag));
}

}  // namespace detail

// Series to order l+m, then one rational fit per scalar entry, grouped for
// diagnostics into row blocks: retained-bus voltages, machine p, machine q,
// and the jet-linearized products xi = q x, zeta = q y, all sharing the
// expansion point of the series.
inline PadeLinearization assemble_linearization(const AugmentedNetwork& net,
                                                const ExtendedLoadSet& loads, const VecC& v_i0,
                                                int l = 7, int m = 7, double e_ref = 1.0) {
  const HeSeries s = he_recursion(net, loads, v_i0, l + m, e_ref);
  const int ni = s.n_i, nkm = s.n_km;

  PadeLinearization lin;
  lin.l = l;
  lin.m = m;
  lin.n_km = nkm;
  lin.n_i = ni;
  lin.e_ref = e_ref;
  lin.w0 = s.w0;
  lin.map = MatR::Zero(2 * nkm + 4 * ni, 2 * ni);
  lin.off = VecR::Zero(2 * nkm + 4 * ni);

  std::vector<MatR> p_maps, q_maps;
  std::vector<VecR> p_offs, q_offs;
  std::vector<AffineR> q_series;
  for (int k = 0; k <= s.order; ++k) {
    p_maps.push_back(s.pq_map[k].topRows(ni));
    p_offs.push_back(s.pq_off[k].head(ni));
    q_maps.push_back(-s.pq_map[k].bottomRows(ni));
    q_offs.push_back(-s.pq_off[k].tail(ni));
    q_series.push_back({q_maps.back(), q_offs.back()});
  }

  // x_i(s) = E_ref + (x_i - E_ref) s and y_i(s) = y_i s as two-term series
  std::vector<AffineR> x_series(2), y_series(2);
  x_series[0] = {MatR::Zero(ni, 2 * ni), VecR::Constant(ni, e_ref)};
  x_series[1] = {MatR::Zero(ni, 2 * ni), VecR::Constant(ni, -e_ref)};
  x_series[1].m.leftCols(ni) = MatR::Identity(ni, ni);
  y_series[0] = {MatR::Zero(ni, 2 * ni), VecR::Zero(ni)};
  y_series[1] = {MatR::Zero(ni, 2 * ni), VecR::Zero(ni)};
  y_series[1].m.rightCols(ni) = MatR::Identity(ni, ni);

  const std::vector<AffineR> xi_series = jet_series_product(x_series, q_series, s.order, s.w0);
  const std::vector<AffineR> zeta_series = jet_series_product(y_series, q_series, s.order, s.w0);
  std::vector<MatR> xi_maps, zeta_maps;
  std::vector<VecR> xi_offs, zeta_offs;
  for (int k = 0; k <= s.order; ++k) {
    xi_maps.push_back(xi_series[k].m);
    xi_offs.push_back(xi_series[k].off);
    zeta_maps.push_back(zeta_series[k].m);
    zeta_offs.push_back(zeta_series[k].off);
  }

  detail::fit_block("km", s.v_map, s.v_off, l, m, lin.map, lin.off, 0, lin.blocks);
  detail::fit_block("p", p_maps, p_offs, l, m, lin.map, lin.off, lin.p_start(), lin.blocks);
  detail::fit_block("q", q_maps, q_offs, l, m, lin.map, lin.off, lin.q_start(), lin.blocks);
  detail::fit_block("xi", xi_maps, xi_offs, l, m, lin.map, lin.off, lin.xi_start(), lin.blocks);
  detail::fit_block("zeta", zeta_maps, zeta_offs, l, m, lin.map, lin.off, lin.zeta_start(),
                    lin.blocks);
  return lin;
}

// Current balance with constant power folded into a shunt-like diagonal:
//   [Y^KMKM - diag(S*/|v|^2)] v_KM = -Y^KMI v_I + i0,
// valid while the retained-bus voltage magnitudes hold their estimates.
inline AffineC ward_reduction(const AugmentedNetwork& net, const ExtendedLoadSet& loads,
                              const VecR& v_km_mag) {
  const int nkm = net.n_km();
  require(v_km_mag.size() == nkm, ErrorKind::config, "need one magnitude per retained bus");
  require((v_km_mag.array() > 0.0).all(), ErrorKind::domain,
          "retained-bus magnitudes must be positive");

  MatC y_eff = net.ybus;
  y_eff.diagonal() += loads.ybus_add;
  MatC bracket = submatrix(y_eff, net.km, net.km);
  const VecC s_inj = -subvector(loads.p_loads, net.km);
  const VecC folded =
      (s_inj.conjugate().array() / v_km_mag.array().square().cast<Complex>()).matrix();
  bracket.diagonal() -= folded;

  Eigen::FullPivLU<MatC> lu(bracket);
  require(lu.isInvertible(), ErrorKind::singular, "reduced current balance is singular");
  AffineC out;
  out.m = -lu.solve(submatrix(y_eff, net.km, net.ibus));
  out.off = lu.solve(subvector(loads.i0, net.km));
  return out;
}

// Implicit-function sensitivity of the balanced network at a full solution v0:
// the balance rows of the retained buses give J_km dw_km + J_i dw_i = 0, so
// w_km = (-J_km^-1 J_i) w_i + (w_km0 - map w_i0).
inline AffineR taylor_sensitivity(const AugmentedNetwork& net, const ExtendedLoadSet& loads,
                                  const VecC& v0) {
  const int n = net.n_total();
  require(v0.size() == n, ErrorKind::config, "need the full augmented voltage vector");
  const QuadraticFormSystem sys = assemble_qpf(net, loads, subvector(v0, net.ibus));
  VecR f;
  MatR jac;
  detail::qpf_residual(sys, v0, f, &jac);
  require(f.cwiseAbs().maxCoeff() <= 1e-8, ErrorKind::domain,
          "expansion point violates the power balance");

  const int nkm = net.n_km(), ni = net.n_machines();
  std::vector<int> row_idx, km_col, i_col;
  for (int j : net.km) row_idx.push_back(2 * j);
  for (int j : net.km) row_idx.push_back(2 * j + 1);
  for (int j : net.km) km_col.push_back(j);
  for (int j : net.km) km_col.push_back(n + j);
  for (int j : net.ibus) i_col.push_back(j);
  for (int j : net.ibus) i_col.push_back(n + j);

  MatR j_km(2 * nkm, 2 * nkm), j_i(2 * nkm, 2 * ni);
  for (int r = 0; r < 2 * nkm; ++r) {
    for (int c = 0; c < 2 * nkm; ++c) j_km(r, c) = jac(row_idx[r], km_col[c]);
    for (int c = 0; c < 2 * ni; ++c) j_i(r, c) = jac(row_idx[r], i_col[c]);
  }

  Eigen::FullPivLU<MatR> lu(j_km);
  require(lu.isInvertible(), ErrorKind::singular, "voltage sensitivity matrix is singular");
  AffineR out;
  out.m = -lu.solve(j_i);
  out.off = stack_real(subvector(v0, net.km)) - out.m * stack_real(subvector(v0, net.ibus));
  return out;
}

// Forward error of an equality-constrained least-squares solve when the
// truncated pair (psi, rhs) stands in for a higher-order one:
//   bound = eps (2 kappa2 / cos th + tan th kappa2^2),
// eps the larger relative perturbation, th the residual angle at the solution.
struct ErrorBoundDiag {
  double epsilon = 0.0;
  double theta = 0.0;
  double kappa2 = 0.0;
  double bound = 0.0;
};

inline ErrorBoundDiag error_bound_diag(const MatR& psi, const VecR& rhs, const MatR& psi_ext,
                                       const VecR& rhs_ext, const VecR& solution) {
  require(psi.rows() == psi_ext.rows() && psi.cols() == psi_ext.cols(),
          ErrorKind::config, "matrix pairs must share dimensions");
  require(rhs.size() == rhs_ext.size() && rhs.size() == psi.rows(), ErrorKind::config,
          "vector pairs must share dimensions");
  require(solution.size() == psi.cols(), ErrorKind::config, "solution length must match");

  Eigen::JacobiSVD<MatR> svd(psi);
  const double s_max = svd.singularValues()(0);
  const double s_min = svd.singularValues()(svd.singularValues().size() - 1);
  const double rhs_norm = rhs.norm();
  require(s_max > 0.0 && rhs_norm > 0.0, ErrorKind::domain,
          "error bound undefined for a zero system");

  Eigen::JacobiSVD<MatR> dsvd(psi_ext - psi);
  const double dm = dsvd.singularValues().size() ? dsvd.singularValues()(0) : 0.0;

  ErrorBoundDiag d;
  d.epsilon = std::max(dm / s_max, (rhs_ext - rhs).norm() / rhs_norm);
  const double sin_t = std::min((rhs - psi * solution).norm() / rhs_norm, 1.0);
  d.theta = std::asin(sin_t);
  d.kappa2 = s_min > 0.0 ? s_max / s_min : std::numeric_limits<double>::infinity();

  if (d.epsilon == 0.0) return d;  // no truncation, no drift
  const double cos_t = std::cos(d.theta);
  if (cos_t == 0.0 || !std::isfinite(d.kappa2)) {
    d.bound = std::numeric_limits<double>::infinity();
    return d;
  }
  d.bound = d.epsilon * (2.0 * d.kappa2 / cos_t + std::tan(d.theta) * d.kappa2 * d.kappa2);
  return d;
}

inline double error_bound(const MatR& psi, const VecR& rhs, const MatR& psi_ext,
                          const VecR& rhs_ext, const VecR& solution) {
  return error_bound_diag(psi, rhs, psi_ext, rhs_ext, solution).bound;
}

// Structured text dump for cross-language regression fixtures.
inline void write_linearization(std::ostream& os, const PadeLinearization& lin) {
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, " %.12g", v);
    os << buf;
  };
  os << "orders " << lin.l << " " << lin.m << "\n";
  os << "shape " << lin.rows() << " " << 2 * lin.n_i << "\n";
  os << "point";
  for (Eigen::Index i = 0; i < lin.w0.size(); ++i) put(lin.w0(i));
  os << "\n";
  for (const auto& blk : lin.blocks) {
    os << "block " << blk.name << " entries " << blk.entries << " resid_max";
    put(blk.resid_max);
    os << " margin_min";
    put(blk.margin_min);
    os << "\n";
  }
  os << "map\n";
  for (Eigen::Index r = 0; r < lin.map.rows(); ++r) {
    for (Eigen::Index c = 0; c < lin.map.cols(); ++c) put(lin.map(r, c));
    os << "\n";
  }
  os << "off\n";
  for (Eigen::Index r = 0; r < lin.off.size(); ++r) put(lin.off(r));
  os << "\n";
}

}  // namespace swingkit
