#pragma once
// Anisotropic weights, cone profiles, Littlewood-Paley and slab partitions,
// the three-way cutoff, and the weighted norms built on the partial transform.

#include "fbi/contact_geometry.hpp"
#include "fbi/cutoff.hpp"
#include "fbi/partial_fbi.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

namespace fbi {

// psi_+ as a function of (|zeta+|, |zeta-|); must be 1 on C*_+(1/3), 0 on C*_-(1/3).
using ConeProfile = std::function<double(double, double)>;

// Smooth step in the angle atan2(|zeta-|, |zeta+|) between atan(1/3) and atan(3).
inline double angle_profile(double np, double nm) {
  static const double t1 = std::atan(1.0 / 3.0), t2 = std::atan(3.0);
  double th = std::atan2(nm, np);
  return smooth_step((t2 - th) / (t2 - t1));
}

inline double default_tau(double r, int d) { return 0.5 + 1.0 / (200.0 * r * d); }

struct WeightSpec {
  int d = 1;
  double r = 4;
  double tau = default_tau(4, 1);
  double N = 32;
  double delta = 0.1;
  ConeProfile psi_plus = angle_profile;

  void validate() const {
    std::ostringstream os;
    if (d < 1) os << "d must be >= 1; ";
    if (!(r >= 0)) os << "r must be non-negative; ";
    if (r > 0 && !(tau > 0.5 && tau < 0.5 + 1.0 / (100.0 * r * d)))
      os << "tau must lie in (1/2, 1/2 + 1/(100 r d)); ";
    if (!(N > 0)) os << "N must be positive; ";
    if (!(delta > 0)) os << "delta must be positive; ";
    if (!psi_plus) os << "cone profile missing; ";
    if (!os.str().empty()) throw std::invalid_argument("weight spec: " + os.str());
  }
};

inline WeightSpec make_weight_spec(int d, double r, double N = 32, double delta = 0.1) {
  WeightSpec w;
  w.d = d;
  w.r = r;
  w.tau = r > 0 ? default_tau(r, d) : 0.5;
  w.N = N;
  w.delta = delta;
  return w;
}

inline double psi_plus(const RVec& zeta, const ConeProfile& prof = angle_profile) {
  double np, nm;
  split_pm(zeta, np, nm);
  if (np == 0 && nm == 0) return 1.0;
  return prof(np, nm);
}

inline double psi_minus(const RVec& zeta, const ConeProfile& prof = angle_profile) {
  return 1.0 - psi_plus(zeta, prof);
}

inline double w_aniso(const RVec& zeta, double r, const ConeProfile& prof = angle_profile) {
  double n = zeta.norm();
  if (n == 0) return 1.0;
  double b = bracket(n), p = psi_plus(zeta, prof);
  return p * std::pow(b, -r) + (1 - p) * std::pow(b, r);
}

// Weight on R^{2d} (+) R^{2d+1}; depends on (x_dag, xi) only through the
// twisted covector, so it is invariant under the affine group.
inline double cal_w_aniso(const RVec& x_dag, const RVec& xi, double r,
                          const ConeProfile& prof = angle_profile) {
  RVec z = twisted_dag(x_dag, xi);
  double rad = std::sqrt(xi[0] * xi[0] + z.squaredNorm());
  return w_aniso(z / std::sqrt(bracket(rad)), 2 * r, prof);
}

// Weight of the linear model on R^{2d} at scale s.
inline double weight_vs(const RVec& z, double r, double s, const ConeProfile& prof = angle_profile) {
  double b = bracket(std::sqrt(1.0 + z.squaredNorm() / s));
  return w_aniso(z / std::sqrt(b), 2 * r, prof);
}

inline double chi_n(int n, double s) {
  if (n < 0) throw std::invalid_argument("chi_n: n must be non-negative");
  double a = std::abs(s);
  if (n == 0) return chi(a);
  return chi(std::ldexp(a, -n)) - chi(std::ldexp(a, -n + 1));
}

inline double psi_m(int m, const RVec& zeta, const ConeProfile& prof = angle_profile) {
  double n = zeta.norm();
  if (m == 0) return chi_n(0, n);
  double c = chi_n(std::abs(m), n);
  if (c == 0) return 0.0;
  return m > 0 ? c * psi_plus(zeta, prof) : c * psi_minus(zeta, prof);
}

// The argument is the twisted covector scaled by <|(xi0, zeta)|>^{-1/2}.
inline RVec lp_argument(const RVec& x_dag, const RVec& xi) {
  RVec z = twisted_dag(x_dag, xi);
  double rad = std::sqrt(xi[0] * xi[0] + z.squaredNorm());
  return z / std::sqrt(bracket(rad));
}

inline double lp_partition(int m, const RVec& x_dag, const RVec& xi,
                           const ConeProfile& prof = angle_profile) {
  return psi_m(m, lp_argument(x_dag, xi), prof);
}

// Indices m with possibly nonzero Psi_m at the point.
inline std::vector<int> lp_active(const RVec& x_dag, const RVec& xi, const ConeProfile& prof = angle_profile) {
  RVec a = lp_argument(x_dag, xi);
  std::vector<int> out;
  int top = 2 + static_cast<int>(std::ceil(std::log2(std::max(1.0, a.norm()))));
  for (int m = -top; m <= top; ++m)
    if (psi_m(m, a, prof) != 0.0) out.push_back(m);
  return out;
}

struct Cutoffs {
  double X0 = 0, Xctr = 0, Xhyp = 0;
};

inline Cutoffs cutoffs(const RVec& x_dag, const RVec& xi, const WeightSpec& spec) {
  RVec z = twisted_dag(x_dag, xi);
  double rad = std::sqrt(xi[0] * xi[0] + z.squaredNorm());
  Cutoffs c;
  c.X0 = chi(rad / spec.N);
  c.Xctr = chi(z.norm() / std::pow(bracket(xi[0]), spec.tau));
  c.Xhyp = (1 - c.X0) * (1 - c.Xctr);
  return c;
}

inline double q_k(int k, double t) { return chi(t - k + 1) - chi(t - k + 2); }

inline double gamma_root(double t) { return t >= 0 ? std::sqrt(t) : -std::sqrt(-t); }

inline double q_tilde(int k, double t) { return q_k(k, gamma_root(t)); }

inline double Q_block(int k, const std::vector<int>& kk, const RVec& x_dag, double delta) {
  if (static_cast<Eigen::Index>(kk.size()) != x_dag.size())
    throw std::invalid_argument("Q_block: index length must match x_dag");
  double scale = std::pow(std::max(std::abs(k), 1), 1 - delta), v = 1;
  for (std::size_t j = 0; j < kk.size(); ++j) v *= q_k(kk[j], scale * x_dag[j]);
  return v;
}

// Closed support of q_tilde_k.
inline std::pair<double, double> q_tilde_support(int k) {
  double a = k - 2.0 / 3.0, b = k + 2.0 / 3.0;
  auto sq = [](double t) { return t >= 0 ? t * t : -t * t; };
  return {sq(a), sq(b)};
}

inline double interval_distance(std::pair<double, double> a, std::pair<double, double> b) {
  return std::max({0.0, b.first - a.second, a.first - b.second});
}

// Smallest dist(supp q~_k, supp q~_k') / max(|k|, |k'|) over |k-k'| >= 2, |k|,|k'| <= kmax.
// Supports are measured on a fine sample grid rather than taken from the formula.
inline double fit_slab_separation(int kmax, double step = 1e-3) {
  std::vector<std::pair<double, double>> supp(2 * kmax + 1);
  for (int k = -kmax; k <= kmax; ++k) {
    auto [a, b] = q_tilde_support(k);
    double lo = a - 1, hi = b + 1, first = hi, last = lo;
    for (double t = lo; t <= hi; t += step)
      if (q_tilde(k, t) > 0) {
        first = std::min(first, t);
        last = std::max(last, t);
      }
    supp[k + kmax] = {first, last};
  }
  double c = std::numeric_limits<double>::infinity();
  for (int k = -kmax; k <= kmax; ++k)
    for (int k2 = -kmax; k2 <= kmax; ++k2) {
      if (std::abs(k - k2) < 2) continue;
      double m = std::max(std::abs(k), std::abs(k2));
      c = std::min(c, interval_distance(supp[k + kmax], supp[k2 + kmax]) / m);
    }
  return c;
}

inline RVec slice_node_xi(double xi0, const RVec& xi_dag) {
  RVec xi(xi_dag.size() + 1);
  xi << xi0, xi_dag;
  return xi;
}

// Applies f(x_dag, xi) pointwise to the phase values of every slice.
inline PartialPhaseField multiply_phase(const PartialPhaseField& v,
                                        const std::function<double(const RVec&, const RVec&)>& f) {
  PartialPhaseField out = v;
  for (int m = 0; m < v.grid.n0(); ++m) {
    const auto& sl = v.grid.slices[m];
    const double xi0 = v.grid.frequency(m);
    for (std::size_t j = 0; j < sl.size(); ++j) {
      auto p = sl.point(j);
      out.slices[m][j] *= f(p.x, slice_node_xi(xi0, p.xi));
    }
  }
  return out;
}

inline double aniso_norm(const PartialSpaceField& u, const PartialGrid& g, const WeightSpec& spec) {
  spec.validate();
  auto v = pfbi_forward(u, g);
  return l2_norm(multiply_phase(v, [&](const RVec& x, const RVec& xi) {
    return cal_w_aniso(x, xi, spec.r, spec.psi_plus);
  }));
}

// (||<xi>^r F u||, ||<xi>^r T u||) for each order r: full discrete Fourier
// transform on the dual grid versus the partial transform.
inline std::vector<std::pair<double, double>> sobolev_norms(const PartialSpaceField& u, const PartialGrid& g,
                                                            const std::vector<double>& orders) {
  const auto& sp = u.space;
  auto uhat = flow_fourier(u);
  GridSpec fr = dual_grid(sp.trans);
  auto y = GridSpec{1, sp.trans.half_width, sp.trans.n}.axis_nodes();
  auto k = GridSpec{1, fr.half_width, fr.n}.axis_nodes();
  Mat Fm(k.size(), y.size());
  for (std::size_t a = 0; a < k.size(); ++a)
    for (std::size_t b = 0; b < y.size(); ++b)
      Fm(a, b) = std::exp(cd(0, -k[a] * y[b])) * sp.trans.spacing() / std::sqrt(2 * kPi);
  std::vector<const Mat*> f(sp.trans.dim, &Fm);
  const std::size_t R = orders.size();
  std::vector<double> fourier(R, 0.0), partial(R, 0.0);
  for (int m = 0; m < sp.n0; ++m) {
    auto w = apply_kron(f, uhat[m], std::vector<std::size_t>(sp.trans.dim, sp.trans.n));
    const double xi0 = sp.frequency(m);
    for (std::size_t j = 0; j < w.size(); ++j) {
      RVec kk = fr.point(j);
      double b = bracket(std::sqrt(xi0 * xi0 + kk.squaredNorm()));
      for (std::size_t i = 0; i < R; ++i) fourier[i] += std::norm(w[j]) * std::pow(b, 2 * orders[i]);
    }
  }
  auto v = pfbi_forward(u, g);
  for (int m = 0; m < g.n0(); ++m) {
    const auto& sl = g.slices[m];
    const double xi0 = g.frequency(m), cell = g.slice_weight(m);
    for (std::size_t j = 0; j < sl.size(); ++j) {
      double b = bracket(slice_node_xi(xi0, sl.point(j).xi).norm()), a = std::norm(v.slices[m][j]);
      for (std::size_t i = 0; i < R; ++i) partial[i] += a * std::pow(b, 2 * orders[i]) * cell;
    }
  }
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < R; ++i)
    out.emplace_back(std::sqrt(fourier[i] * sp.freq_step() * fr.weight()), std::sqrt(partial[i]));
  return out;
}

inline std::pair<double, double> sobolev_norms(const PartialSpaceField& u, const PartialGrid& g, double r) {
  return sobolev_norms(u, g, std::vector<double>{r}).front();
}

}  // namespace fbi
