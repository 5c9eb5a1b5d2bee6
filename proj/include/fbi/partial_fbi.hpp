#pragma once
// Partial transform on R^{2d+1}: exact DFT in the periodized flow coordinate
// y0, and in each frequency slice xi0 a transversal wave-packet transform whose
// packets have inverse width <xi0>. Phase data are stored slice by slice.

#include "fbi/cutoff.hpp"
#include "fbi/fbi_core.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fbi {

struct PartialPacketIndex {
  RVec x_dag;
  double xi0 = 0;
  RVec xi_dag;
};

// Packet on R^{2d+1}; y = (y0, y_dag).
inline std::function<cd(const RVec&)> partial_packet(const PartialPacketIndex& idx) {
  if (idx.x_dag.size() != idx.xi_dag.size() || idx.x_dag.size() % 2 != 0)
    throw std::invalid_argument("partial packet: x_dag and xi_dag must lie in R^{2d}");
  return [idx](const RVec& y) {
    const double s = bracket(idx.xi0);
    cd v = std::exp(cd(0, idx.xi0 * y[0])) / std::sqrt(2.0 * kPi);
    for (Eigen::Index a = 0; a < idx.x_dag.size(); ++a)
      v *= packet_factor(idx.x_dag[a], idx.xi_dag[a], y[a + 1], s);
    return v;
  };
}

// Periodic flow axis [-L0, L0) with n0 nodes times a transversal midpoint grid.
struct PartialSpace {
  double L0 = kPi;
  int n0 = 4;
  GridSpec trans;

  int d() const { return trans.dim / 2; }
  double h0() const { return 2 * L0 / n0; }
  double flow_node(int j) const { return -L0 + j * h0(); }
  double freq_step() const { return kPi / L0; }
  double frequency(int m) const { return (m - n0 / 2) * freq_step(); }
  std::size_t size() const { return static_cast<std::size_t>(n0) * trans.size(); }
  double weight() const { return h0() * trans.weight(); }
  RVec point(std::size_t flat) const {
    RVec p(trans.dim + 1);
    p[0] = flow_node(static_cast<int>(flat / trans.size()));
    p.tail(trans.dim) = trans.point(flat % trans.size());
    return p;
  }
  bool operator==(const PartialSpace& o) const { return L0 == o.L0 && n0 == o.n0 && trans == o.trans; }
};

inline PartialSpace make_partial_space(int d, double L0, int n0, double trans_half_width, int trans_n) {
  if (n0 < 2 || n0 % 2 != 0) throw std::invalid_argument("flow points must be even and at least 2");
  if (!(L0 > 0)) throw std::invalid_argument("flow half period must be positive");
  return {L0, n0, make_grid(2 * d, trans_half_width, trans_n)};
}

struct PartialSpaceField {
  PartialSpace space;
  std::vector<cd> values;
};

inline PartialSpaceField sample(const std::function<cd(const RVec&)>& f, const PartialSpace& sp) {
  PartialSpaceField out{sp, std::vector<cd>(sp.size())};
  for (std::size_t j = 0; j < out.values.size(); ++j) {
    cd v = f(sp.point(j));
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
      throw std::domain_error("sampled function is not finite at node " + std::to_string(j));
    out.values[j] = v;
  }
  return out;
}

inline double l2_norm(const PartialSpaceField& u) { return l2_norm(u.values, u.space.weight()); }

// One transversal phase grid per flow frequency.
struct PartialGrid {
  PartialSpace space;
  std::vector<PhaseGrid> slices;

  int n0() const { return space.n0; }
  double frequency(int m) const { return space.frequency(m); }
  double slice_weight(int m) const { return space.freq_step() * slices[m].weight(); }
  std::size_t size() const {
    std::size_t s = 0;
    for (auto& g : slices) s += g.size();
    return s;
  }
};

// Slices obtained from one reference grid by x -> x/sqrt(s), xi -> xi*sqrt(s), s = <xi0>.
inline PartialGrid make_partial_grid_scaled(const PartialSpace& sp, const PhaseGrid& ref) {
  if (ref.dim() != sp.trans.dim) throw std::invalid_argument("reference grid must be transversal");
  PartialGrid g{sp, {}};
  for (int m = 0; m < sp.n0; ++m) {
    double r = std::sqrt(bracket(sp.frequency(m)));
    g.slices.push_back({GridSpec{ref.x.dim, ref.x.half_width / r, ref.x.n},
                        GridSpec{ref.xi.dim, ref.xi.half_width * r, ref.xi.n}});
    check_nyquist(sp.trans.spacing(), max_frequency(g.slices.back().xi), "partial grid slice");
  }
  return g;
}

// Slices on which the discrete transform is an isometry: x spacing
// x_step/sqrt(s) over the transversal box plus margin/sqrt(s), frequencies on
// the full dual band of the transversal grid.
inline PartialGrid make_partial_grid_exact(const PartialSpace& sp, double x_step = 0.5,
                                           double margin = 6.0) {
  PartialGrid g{sp, {}};
  for (int m = 0; m < sp.n0; ++m) {
    double r = std::sqrt(bracket(sp.frequency(m)));
    double Lx = sp.trans.half_width + margin / r;
    int n = static_cast<int>(std::ceil(2 * Lx * r / x_step));
    n += n % 2;
    g.slices.push_back({make_grid(sp.trans.dim, Lx, std::max(n, 4)), dual_grid(sp.trans)});
  }
  return g;
}

struct PartialPhaseField {
  PartialGrid grid;
  std::vector<std::vector<cd>> slices;
};

inline double l2_norm(const PartialPhaseField& v) {
  double s = 0;
  for (int m = 0; m < v.grid.n0(); ++m) {
    double t = l2_norm(v.slices[m], v.grid.slice_weight(m));
    s += t * t;
  }
  return std::sqrt(s);
}

inline cd partial_inner(const PartialPhaseField& a, const PartialPhaseField& b) {
  cd s = 0;
  for (int m = 0; m < a.grid.n0(); ++m) {
    cd t = 0;
    for (std::size_t j = 0; j < a.slices[m].size(); ++j) t += std::conj(a.slices[m][j]) * b.slices[m][j];
    s += t * a.grid.slice_weight(m);
  }
  return s;
}

// u(y0, .) -> (2 pi)^{-1/2} sum_j h0 e^{-i xi0 y0_j} u(y0_j, .), one vector per frequency.
inline std::vector<std::vector<cd>> flow_fourier(const PartialSpaceField& u) {
  const auto& sp = u.space;
  const std::size_t nt = sp.trans.size();
  std::vector<std::vector<cd>> out(sp.n0, std::vector<cd>(nt));
  const double c = sp.h0() / std::sqrt(2 * kPi);
  for (int m = 0; m < sp.n0; ++m)
    for (int j = 0; j < sp.n0; ++j) {
      cd e = std::exp(cd(0, -sp.frequency(m) * sp.flow_node(j))) * c;
      for (std::size_t t = 0; t < nt; ++t) out[m][t] += e * u.values[j * nt + t];
    }
  return out;
}

inline PartialSpaceField flow_fourier_inverse(const std::vector<std::vector<cd>>& v, const PartialSpace& sp) {
  const std::size_t nt = sp.trans.size();
  PartialSpaceField u{sp, std::vector<cd>(sp.size())};
  const double c = sp.freq_step() / std::sqrt(2 * kPi);
  for (int j = 0; j < sp.n0; ++j)
    for (int m = 0; m < sp.n0; ++m) {
      cd e = std::exp(cd(0, sp.frequency(m) * sp.flow_node(j))) * c;
      for (std::size_t t = 0; t < nt; ++t) u.values[j * nt + t] += e * v[m][t];
    }
  return u;
}

namespace detail {
inline void check_partial(const PartialSpace& sp, const PartialGrid& g) {
  if (!(sp == g.space)) throw std::invalid_argument("partial transform: space and phase grid differ");
  for (int m = 0; m < g.n0(); ++m)
    check_nyquist(sp.trans.spacing(), max_frequency(g.slices[m].xi), "partial transform");
}
}  // namespace detail

inline std::vector<cd> slice_forward(const std::vector<cd>& uhat, const GridSpec& trans,
                                     const PhaseGrid& slice, double s) {
  Mat A = axis_analysis(slice.plane_nodes(), trans, s);
  std::vector<const Mat*> f(trans.dim, &A);
  return apply_kron(f, uhat, std::vector<std::size_t>(trans.dim, trans.n));
}

inline std::vector<cd> slice_adjoint(const std::vector<cd>& v, const GridSpec& trans,
                                     const PhaseGrid& slice, double s) {
  Mat S = axis_synthesis(slice.plane_nodes(), trans, slice.x.spacing() * slice.xi.spacing(), s);
  std::vector<const Mat*> f(trans.dim, &S);
  return apply_kron(f, v, slice.shape());
}

inline PartialPhaseField pfbi_forward(const PartialSpaceField& u, const PartialGrid& g) {
  detail::check_partial(u.space, g);
  auto uhat = flow_fourier(u);
  PartialPhaseField out{g, std::vector<std::vector<cd>>(g.n0())};
  for (int m = 0; m < g.n0(); ++m)
    out.slices[m] = slice_forward(uhat[m], u.space.trans, g.slices[m], bracket(g.frequency(m)));
  return out;
}

inline PartialSpaceField pfbi_adjoint(const PartialPhaseField& v, const PartialSpace& sp) {
  detail::check_partial(sp, v.grid);
  std::vector<std::vector<cd>> uhat(sp.n0);
  for (int m = 0; m < sp.n0; ++m)
    uhat[m] = slice_adjoint(v.slices[m], sp.trans, v.grid.slices[m], bracket(v.grid.frequency(m)));
  return flow_fourier_inverse(uhat, sp);
}

inline PartialPhaseField apply_partial_projection(const PartialPhaseField& v) {
  return pfbi_forward(pfbi_adjoint(v, v.grid.space), v.grid);
}

// Second route: flow Fourier transform, then in each slice the unit-width
// transform of u(./sqrt(s)) on the stretched grid, evaluated at
// (sqrt(s) x, xi / sqrt(s)) and multiplied by s^{-d/2}.
inline PartialPhaseField pfbi_forward_factorized(const PartialSpaceField& u, const PartialGrid& g) {
  detail::check_partial(u.space, g);
  auto uhat = flow_fourier(u);
  const auto& tr = u.space.trans;
  PartialPhaseField out{g, std::vector<std::vector<cd>>(g.n0())};
  for (int m = 0; m < g.n0(); ++m) {
    const double s = bracket(g.frequency(m)), r = std::sqrt(s);
    Field stretched{GridSpec{tr.dim, tr.half_width * r, tr.n}, uhat[m]};
    const auto& sl = g.slices[m];
    std::vector<std::vector<std::pair<double, double>>> axes(tr.dim, mapped_nodes(sl, r));
    out.slices[m] = fbi_forward_nodes(stretched, axes);
    const double c = std::pow(s, -0.25 * tr.dim);
    for (auto& v : out.slices[m]) v *= c;
  }
  return out;
}

}  // namespace fbi
