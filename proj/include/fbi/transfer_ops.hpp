#pragma once
// Transfer operators u -> g * (u o F), their lifts to the partial-transform
// phase space as block matrices, kernel bound audits, the compact / central /
// hyperbolic split and the Lambda, Delta quantities of the local bound.

#include "aniso_norm.hpp"
#include "contact_geometry.hpp"
#include "partial_fbi.hpp"

#include <Eigen/Dense>
#include <json.hpp>
#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fbi {

// 1 on |t| <= radius/2, 0 on |t| >= radius.
inline double bump_profile(double t, double radius) {
  return smooth_step(2.0 * (1.0 - std::abs(t) / radius));
}

struct Amplitude {
  std::function<cd(const RVec&)> value;  // on R^{2d+1}, y = (y0, y_dag)
  bool flow_constant = false;
  // g = height * prod_a profile_a(y_a) when set (implies flow_constant)
  std::vector<std::function<double(double)>> axis_profiles;
  double height = 1;
  double support_radius = std::numeric_limits<double>::infinity();  // sup-norm radius of supp in y_dag
  std::string label = "custom";

  bool separable() const { return !axis_profiles.empty(); }
  cd operator()(const RVec& y) const { return value(y); }
};

inline Amplitude amplitude_zero() {
  Amplitude g;
  g.value = [](const RVec&) { return cd(0); };
  g.flow_constant = true;
  g.height = 0;
  g.support_radius = 0;
  g.label = "zero";
  return g;
}

inline Amplitude make_separable_amplitude(double height, std::vector<std::function<double(double)>> prof,
                                          double support_radius, std::string label) {
  Amplitude g;
  g.flow_constant = true;
  g.axis_profiles = prof;
  g.height = height;
  g.support_radius = support_radius;
  g.label = std::move(label);
  g.value = [height, prof](const RVec& y) {
    double v = height;
    for (std::size_t a = 0; a < prof.size(); ++a) v *= prof[a](y[a + 1]);
    return cd(v);
  };
  return g;
}

inline Amplitude amplitude_bump(int d, double height, double radius) {
  std::vector<std::function<double(double)>> prof(2 * d, [radius](double t) { return bump_profile(t, radius); });
  return make_separable_amplitude(height, prof, radius, "bump");
}

inline Amplitude amplitude_custom(std::function<cd(const RVec&)> f, bool flow_constant,
                                  double support_radius = std::numeric_limits<double>::infinity()) {
  Amplitude g;
  g.value = std::move(f);
  g.flow_constant = flow_constant;
  g.support_radius = support_radius;
  return g;
}

struct TransferSpec {
  ContactMap map;
  Amplitude g;
};

// The amplitude must vanish at sampled transversal points outside the map's box.
inline void validate_support(const TransferSpec& spec, const PartialSpace& sp) {
  for (std::size_t j = 0; j < sp.size(); ++j) {
    RVec y = sp.point(j);
    if (y.tail(sp.trans.dim).cwiseAbs().maxCoeff() > spec.map.box && std::abs(spec.g(y)) > 0) {
      std::ostringstream os;
      os << "amplitude support leaves the map domain at " << y.transpose();
      throw std::domain_error(os.str());
    }
  }
}

inline RVec apply_full(const ContactMap& F, const RVec& y) { return F.apply(ContactPoint::from_full(y)).full(); }

// g(y) u(F(y)) for an analytic u.
inline PartialSpaceField transfer_apply(const TransferSpec& spec, const std::function<cd(const RVec&)>& u,
                                        const PartialSpace& sp) {
  return sample([&](const RVec& y) -> cd {
    cd gv = spec.g(y);
    if (gv == cd(0)) return 0;
    return gv * u(apply_full(spec.map, y));
  }, sp);
}

namespace detail {
// Four-point Lagrange weights at fractional offset t in [0,1) between nodes 1 and 2.
inline std::array<double, 4> cubic_weights(double t) {
  return {-t * (t - 1) * (t - 2) / 6, (t + 1) * (t - 1) * (t - 2) / 2, -(t + 1) * t * (t - 2) / 2,
          (t + 1) * t * (t - 1) / 6};
}
}  // namespace detail

// Sampled u: tensor cubic interpolation, periodic in y0. Throws when F(y)
// leaves the transversal box for y in supp g.
inline PartialSpaceField transfer_apply(const TransferSpec& spec, const PartialSpaceField& u) {
  const auto& sp = u.space;
  const int D = sp.trans.dim;
  const double h = sp.trans.spacing(), h0 = sp.h0();
  auto interp = [&](const RVec& z) -> cd {
    std::vector<int> base(D + 1);
    std::vector<std::array<double, 4>> w(D + 1);
    double s0 = (z[0] + sp.L0) / h0;
    int i0 = static_cast<int>(std::floor(s0));
    base[0] = i0 - 1;
    w[0] = detail::cubic_weights(s0 - i0);
    for (int a = 0; a < D; ++a) {
      double s = (z[a + 1] + sp.trans.half_width) / h - 0.5;
      int i = static_cast<int>(std::floor(s));
      if (i - 1 < 0 || i + 2 >= sp.trans.n) {
        std::ostringstream os;
        os << "transfer_apply: F(y) = " << z.transpose() << " escapes the sampled grid";
        throw std::domain_error(os.str());
      }
      base[a + 1] = i - 1;
      w[a + 1] = detail::cubic_weights(s - i);
    }
    cd acc = 0;
    const std::size_t total = static_cast<std::size_t>(std::pow(4, D + 1));
    for (std::size_t c = 0; c < total; ++c) {
      std::size_t cc = c, flat = 0;
      double wt = 1;
      for (int a = D; a >= 0; --a) {
        int o = static_cast<int>(cc % 4);
        cc /= 4;
        wt *= w[a][o];
      }
      cc = c;
      std::vector<int> idx(D + 1);
      for (int a = D; a >= 0; --a) {
        idx[a] = base[a] + static_cast<int>(cc % 4);
        cc /= 4;
      }
      int j0 = ((idx[0] % sp.n0) + sp.n0) % sp.n0;
      flat = j0;
      for (int a = 1; a <= D; ++a) flat = flat * sp.trans.n + idx[a];
      acc += wt * u.values[flat];
    }
    return acc;
  };
  return sample([&](const RVec& y) -> cd {
    cd gv = spec.g(y);
    if (gv == cd(0)) return 0;
    return gv * interp(apply_full(spec.map, y));
  }, sp);
}

inline TransferSpec compose(const TransferSpec& outer_first, const TransferSpec& then) {
  // (L2 L1) u = g1 * (g2 o F1) * u(F2 o F1)
  TransferSpec out;
  const auto& F1 = outer_first.map;
  const auto& F2 = then.map;
  if (F1.d != F2.d) throw std::invalid_argument("compose: dimension mismatch");
  if (F1.family == MapFamily::linear && F2.family == MapFamily::linear) {
    out.map = make_linear_contact(F2.B * F1.B, std::min(F1.box, F2.box), F1.f_base + F2.f_base);
  } else {
    ContactMap C;
    C.d = F1.d;
    C.box = std::min(F1.box, F2.box);
    C.family = MapFamily::custom;
    C.f_base = F1.f(RVec::Zero(2 * F1.d)) + F2.f(F1.F_dag(RVec::Zero(2 * F1.d)));
    auto a = F1.F_dag, b = F2.F_dag;
    auto da = F1.DF_dag, db = F2.DF_dag;
    C.F_dag = [a, b](const RVec& y) -> RVec { return b(a(y)); };
    C.DF_dag = [a, da, db](const RVec& y) -> RMat { return db(a(y)) * da(y); };
    out.map = C;
  }
  const auto& g1 = outer_first.g;
  const auto& g2 = then.g;
  if (g1.separable() && g2.separable() && F1.family == MapFamily::linear && is_diagonal(F1.B)) {
    std::vector<std::function<double(double)>> prof;
    for (std::size_t k = 0; k < g1.axis_profiles.size(); ++k) {
      auto p1 = g1.axis_profiles[k], p2 = g2.axis_profiles[k];
      double b = F1.B(k, k);
      prof.push_back([p1, p2, b](double t) { return p1(t) * p2(b * t); });
    }
    out.g = make_separable_amplitude(g1.height * g2.height, prof, g1.support_radius, "composed");
  } else {
    auto F1c = F1;
    out.g = amplitude_custom([g1, g2, F1c](const RVec& y) { return g1(y) * g2(apply_full(F1c, y)); },
                             g1.flow_constant && g2.flow_constant, g1.support_radius);
  }
  return out;
}

struct OperatorBlock {
  int out_slice = 0, in_slice = 0;
  std::vector<Mat> factors;  // Kronecker factors over transversal axes, if non-empty
  cd scale = 1;              // multiplies the Kronecker product
  Mat dense;

  bool is_kron() const { return !factors.empty(); }
  Mat to_dense() const {
    if (!is_kron()) return dense;
    Mat M = factors[0];
    for (std::size_t a = 1; a < factors.size(); ++a) M = Eigen::kroneckerProduct(M, factors[a]).eval();
    return scale * M;
  }
  Eigen::Index rows() const {
    if (!is_kron()) return dense.rows();
    Eigen::Index r = 1;
    for (auto& f : factors) r *= f.rows();
    return r;
  }
  Eigen::Index cols() const {
    if (!is_kron()) return dense.cols();
    Eigen::Index c = 1;
    for (auto& f : factors) c *= f.cols();
    return c;
  }
  Vec apply(const Vec& v) const {
    if (!is_kron()) return dense * v;
    std::vector<const Mat*> f;
    std::vector<std::size_t> shape;
    for (auto& m : factors) {
      f.push_back(&m);
      shape.push_back(m.cols());
    }
    auto out = apply_kron(f, std::vector<cd>(v.data(), v.data() + v.size()), shape);
    return scale * Eigen::Map<Vec>(out.data(), out.size());
  }
};

// Discretized lift on out-grid x in-grid phase nodes. Entry (p, q) carries the
// in-grid quadrature weight, so products with coefficient vectors apply the
// operator and eigenvalues are those of the operator.
struct OperatorMatrix {
  PartialGrid out, in;
  std::vector<OperatorBlock> blocks;
  std::string note;

  std::vector<std::size_t> offsets(const PartialGrid& g) const {
    std::vector<std::size_t> o(g.n0() + 1, 0);
    for (int m = 0; m < g.n0(); ++m) o[m + 1] = o[m] + g.slices[m].size();
    return o;
  }
  std::size_t rows() const { return out.size(); }
  std::size_t cols() const { return in.size(); }
  bool block_diagonal() const {
    for (auto& b : blocks)
      if (b.out_slice != b.in_slice) return false;
    return true;
  }
  Vec apply(const Vec& v) const {
    auto oi = offsets(in), oo = offsets(out);
    Vec y = Vec::Zero(rows());
    for (auto& b : blocks)
      y.segment(oo[b.out_slice], b.rows()) += b.apply(v.segment(oi[b.in_slice], b.cols()));
    return y;
  }
  Mat to_dense(std::size_t limit = 4000 * 4000) const {
    if (rows() * cols() > limit) throw std::length_error("operator matrix exceeds the dense limit");
    Mat M = Mat::Zero(rows(), cols());
    auto oi = offsets(in), oo = offsets(out);
    for (auto& b : blocks) M.block(oo[b.out_slice], oi[b.in_slice], b.rows(), b.cols()) = b.to_dense();
    return M;
  }
};

inline Vec flatten(const PartialPhaseField& v) {
  std::size_t n = 0;
  for (auto& s : v.slices) n += s.size();
  Vec out(n);
  std::size_t k = 0;
  for (auto& s : v.slices)
    for (auto& x : s) out[k++] = x;
  return out;
}

inline PartialPhaseField unflatten(const Vec& v, const PartialGrid& g) {
  PartialPhaseField out{g, std::vector<std::vector<cd>>(g.n0())};
  std::size_t k = 0;
  for (int m = 0; m < g.n0(); ++m) {
    out.slices[m].resize(g.slices[m].size());
    for (auto& x : out.slices[m]) x = v[k++];
  }
  return out;
}

// Values of a phase function at every node of a partial grid, flattened.
inline RVec phase_values(const PartialGrid& g, const std::function<double(const RVec&, const RVec&)>& f) {
  RVec out(g.size());
  std::size_t k = 0;
  for (int m = 0; m < g.n0(); ++m) {
    const auto& sl = g.slices[m];
    for (std::size_t j = 0; j < sl.size(); ++j) {
      auto p = sl.point(j);
      out[k++] = f(p.x, slice_node_xi(g.frequency(m), p.xi));
    }
  }
  return out;
}

// M diag(w) block by block; Kronecker blocks become dense.
inline OperatorMatrix right_scaled(const OperatorMatrix& M, const RVec& w) {
  OperatorMatrix R = M;
  auto oi = M.offsets(M.in);
  for (auto& b : R.blocks) {
    Mat D = b.to_dense();
    D = D * w.segment(oi[b.in_slice], D.cols()).cast<cd>().asDiagonal();
    b.factors.clear();
    b.scale = 1;
    b.dense = std::move(D);
  }
  return R;
}

// diag(wo) M diag(wi)^{-1}
inline OperatorMatrix conjugated(const OperatorMatrix& M, const RVec& wo, const RVec& wi) {
  OperatorMatrix R = M;
  auto oi = M.offsets(M.in), oo = M.offsets(M.out);
  for (auto& b : R.blocks) {
    Mat D = b.to_dense();
    D = wo.segment(oo[b.out_slice], D.rows()).cast<cd>().asDiagonal() * D *
        wi.segment(oi[b.in_slice], D.cols()).cwiseInverse().cast<cd>().asDiagonal();
    b.factors.clear();
    b.scale = 1;
    b.dense = std::move(D);
  }
  return R;
}

struct KernelOptions {
  GridSpec y_grid;  // transversal quadrature grid; defaults to the in-space grid
  bool has_y_grid = false;
  std::size_t max_entries = 40'000'000;
  bool allow_separable = true;
};

// Unitary Fourier coefficient in y0 on the periodic axis, for frequency offset delta.
inline cd flow_coefficient(const Amplitude& g, const PartialSpace& sp, double delta, const RVec& y_dag) {
  if (g.flow_constant) {
    if (std::abs(delta) > 1e-12) return 0;
    RVec y(y_dag.size() + 1);
    y << 0, y_dag;
    return g(y) * (2 * sp.L0) / std::sqrt(2 * kPi);
  }
  cd s = 0;
  RVec y(y_dag.size() + 1);
  y.tail(y_dag.size()) = y_dag;
  for (int j = 0; j < sp.n0; ++j) {
    y[0] = sp.flow_node(j);
    s += std::exp(cd(0, -delta * y[0])) * g(y);
  }
  return s * sp.h0() / std::sqrt(2 * kPi);
}

inline cd trans_packet(const RVec& x, const RVec& xi, const RVec& y, double s) {
  cd v = 1;
  for (Eigen::Index a = 0; a < y.size(); ++a) v *= packet_factor(x[a], xi[a], y[a], s);
  return v;
}

namespace detail {
inline void check_grids(const PartialGrid& out, const PartialGrid& in) {
  if (!(out.space == in.space)) throw std::invalid_argument("lift: in and out grids use different spaces");
  for (const auto* g : {&out, &in})
    for (int m = 0; m < g->n0(); ++m)
      check_nyquist(g->space.trans.spacing(), max_frequency(g->slices[m].xi), "lift kernel");
}
}  // namespace detail

// Auxiliary functions of the y0-integrated kernel form.
inline double kernel_gauss_factor(const RVec& x_dag, double xi0, const RVec& z_dag, double eta0,
                                  const RVec& y_dag, const ContactMap& F) {
  const int d = F.d;
  double a = bracket(xi0), b = bracket(eta0);
  return std::pow(a * b, 0.5 * d) / (std::pow(kPi, d) * std::pow(2 * kPi, 2 * d)) *
         std::exp(-0.5 * a * (x_dag - y_dag).squaredNorm() - 0.5 * b * (F.F_dag(y_dag) - z_dag).squaredNorm());
}

inline double kernel_phase(const RVec& x_dag, const RVec& xi_dag, const RVec& z_dag, const RVec& eta_dag,
                           double eta0, const RVec& y_dag, const ContactMap& F) {
  return xi_dag.dot(0.5 * x_dag - y_dag) + eta_dag.dot(F.F_dag(y_dag) - 0.5 * z_dag) + eta0 * F.f(y_dag);
}

// Kernel by the y0-integrated form; the unitary Fourier coefficient in y0
// requires the extra (2 pi)^{-1/2}.
inline cd kernel_entry_integrated(const TransferSpec& spec, const PartialSpace& sp, const GridSpec& yg,
                                  const RVec& x_dag, double xi0, const RVec& xi_dag, const RVec& z_dag,
                                  double eta0, const RVec& eta_dag) {
  cd s = 0;
  for (std::size_t j = 0; j < yg.size(); ++j) {
    RVec y = yg.point(j);
    cd G = flow_coefficient(spec.g, sp, xi0 - eta0, y);
    if (G == cd(0)) continue;
    s += G * kernel_gauss_factor(x_dag, xi0, z_dag, eta0, y, spec.map) *
         std::exp(cd(0, kernel_phase(x_dag, xi_dag, z_dag, eta_dag, eta0, y, spec.map)));
  }
  return s * yg.weight() / std::sqrt(2 * kPi);
}

// Kernel by direct quadrature over the full (2d+1)-dimensional grid.
inline cd kernel_entry_direct(const TransferSpec& spec, const PartialSpace& sp, const GridSpec& yg,
                              const PartialPacketIndex& out, const PartialPacketIndex& in) {
  auto po = partial_packet(out), pi = partial_packet(in);
  cd s = 0;
  RVec y(yg.dim + 1);
  for (int j0 = 0; j0 < sp.n0; ++j0) {
    y[0] = sp.flow_node(j0);
    for (std::size_t j = 0; j < yg.size(); ++j) {
      y.tail(yg.dim) = yg.point(j);
      cd gv = spec.g(y);
      if (gv == cd(0)) continue;
      s += std::conj(po(y)) * gv * pi(apply_full(spec.map, y));
    }
  }
  return s * sp.h0() * yg.weight();
}

// Transversal block sum_y conj(phi^so_p(y)) amp(y) phi^si_q(mapped(y)) h_y cell_in,
// with packets of inverse width so, si on the out and in slice grids.
inline Mat transversal_block(const PhaseGrid& out, double so, const PhaseGrid& in, double si,
                             const GridSpec& yg, const std::vector<RVec>& mapped, const std::vector<cd>& amp) {
  const int D = yg.dim;
  const auto y1 = GridSpec{1, yg.half_width, yg.n}.axis_nodes();
  Mat A = Mat::Ones(1, 1);
  {
    auto nodes = out.plane_nodes();
    Mat Aa(nodes.size(), y1.size());
    for (std::size_t p = 0; p < nodes.size(); ++p)
      for (std::size_t j = 0; j < y1.size(); ++j)
        Aa(p, j) = std::conj(packet_factor(nodes[p].first, nodes[p].second, y1[j], so));
    for (int a = 0; a < D; ++a) A = Eigen::kroneckerProduct(A, Aa).eval();
  }
  Mat Bm = Mat::Zero(yg.size(), in.size());
  const double c = yg.weight() * in.weight();
  for (std::size_t q = 0; q < in.size(); ++q) {
    auto pq = in.point(q);
    for (std::size_t j = 0; j < yg.size(); ++j)
      if (amp[j] != cd(0)) Bm(j, q) = amp[j] * trans_packet(pq.x, pq.xi, mapped[j], si) * c;
  }
  return A * Bm;
}

inline bool separable_case(const TransferSpec& spec) {
  return spec.g.separable() && spec.map.family == MapFamily::linear && is_diagonal(spec.map.B);
}

inline OperatorMatrix lift_kernel(const TransferSpec& spec, const PartialGrid& out, const PartialGrid& in,
                                  KernelOptions opt = {}) {
  detail::check_grids(out, in);
  const auto& sp = in.space;
  const GridSpec yg = opt.has_y_grid ? opt.y_grid : sp.trans;
  OperatorMatrix M{out, in, {}, ""};
  const int D = sp.trans.dim;

  std::size_t entries = 0;
  for (int mo = 0; mo < out.n0(); ++mo)
    for (int mi = 0; mi < in.n0(); ++mi)
      if (!spec.g.flow_constant || mo == mi) entries += out.slices[mo].size() * in.slices[mi].size();
  if (spec.g.height == 0 && spec.g.label == "zero") entries = 0;

  if (opt.allow_separable && separable_case(spec)) {
    M.note = "separable";
    const auto y1 = GridSpec{1, yg.half_width, yg.n}.axis_nodes();
    const double hy = yg.spacing();
    for (int m = 0; m < in.n0(); ++m) {
      const double xi0 = in.frequency(m), s = bracket(xi0);
      OperatorBlock b;
      b.out_slice = b.in_slice = m;
      const auto no = out.slices[m].plane_nodes(), ni = in.slices[m].plane_nodes();
      const double cell = in.slices[m].x.spacing() * in.slices[m].xi.spacing();
      for (int a = 0; a < D; ++a) {
        const double ba = spec.map.B(a, a);
        Mat A(no.size(), y1.size()), Bm(y1.size(), ni.size());
        for (std::size_t j = 0; j < y1.size(); ++j) {
          double gv = spec.g.axis_profiles[a](y1[j]);
          for (std::size_t p = 0; p < no.size(); ++p)
            A(p, j) = std::conj(packet_factor(no[p].first, no[p].second, y1[j], s)) * gv;
          for (std::size_t q = 0; q < ni.size(); ++q)
            Bm(j, q) = packet_factor(ni[q].first, ni[q].second, ba * y1[j], s) * hy * cell;
        }
        b.factors.push_back(A * Bm);
      }
      // (2 pi)^{-1} * 2 L0 * height * hxi0 = height, times the constant phase of f
      b.scale = spec.g.height * std::exp(cd(0, xi0 * spec.map.f_base));
      M.blocks.push_back(std::move(b));
    }
    return M;
  }

  if (entries > opt.max_entries) {
    std::ostringstream os;
    os << "lift kernel needs " << entries << " entries, above the limit " << opt.max_entries;
    throw std::length_error(os.str());
  }
  M.note = "generic";
  std::vector<RVec> ys(yg.size()), Fys(yg.size());
  std::vector<double> fy(yg.size());
  for (std::size_t j = 0; j < yg.size(); ++j) {
    ys[j] = yg.point(j);
    Fys[j] = spec.map.F_dag(ys[j]);
    fy[j] = spec.map.f(ys[j]);
  }
  for (int mo = 0; mo < out.n0(); ++mo) {
    const double xi0 = out.frequency(mo), so = bracket(xi0);
    for (int mi = 0; mi < in.n0(); ++mi) {
      const double eta0 = in.frequency(mi), si = bracket(eta0);
      const double delta = xi0 - eta0;
      if (spec.g.flow_constant && std::abs(delta) > 1e-12) continue;
      std::vector<cd> amp(yg.size());
      bool any = false;
      // (2 pi)^{-1/2} from the two flow factors beyond the unitary coefficient
      for (std::size_t j = 0; j < yg.size(); ++j) {
        cd G = flow_coefficient(spec.g, sp, delta, ys[j]);
        amp[j] = G == cd(0) ? cd(0) : G * std::exp(cd(0, eta0 * fy[j])) * sp.freq_step() / std::sqrt(2 * kPi);
        any = any || amp[j] != cd(0);
      }
      if (!any) continue;
      OperatorBlock b;
      b.out_slice = mo;
      b.in_slice = mi;
      b.dense = transversal_block(out.slices[mo], so, in.slices[mi], si, yg, Fys, amp);
      M.blocks.push_back(std::move(b));
    }
  }
  return M;
}

struct KernelAudit {
  double fitted_constant = 0;
  std::vector<double> ratios;
  std::vector<double> mismatch;  // |xi0 - eta0| of each sample
};

inline double kappa(const TransferSpec& spec, const RVec& x_dag, const RVec& xi, const RVec& z_dag,
                    const RVec& eta, const RVec& y_dag) {
  const auto& F = spec.map;
  RVec y(y_dag.size() + 1);
  y << 0, y_dag;
  RVec tD = F.jacobian(ContactPoint::from_full(y)).transpose() * eta;
  double a = bracket(xi[0] - eta[0]);
  double b = bracket((x_dag - y_dag).norm() * std::sqrt(bracket(xi[0])));
  double c = bracket((F.F_dag(y_dag) - z_dag).norm() * std::sqrt(bracket(eta[0])));
  double e = bracket((xi - tD).norm() / std::sqrt(bracket(eta.norm())));
  return a * b * c * e;
}

// Samples index pairs stratified by |xi0 - eta0| and fits the smallest C_rho
// with |K| <= C_rho <xi0>^{d/2} <eta0>^{d/2} int kappa^{-rho} dy on the sample.
inline KernelAudit kernel_bound_audit(const TransferSpec& spec, const PartialSpace& sp, const GridSpec& yg,
                                      double rho, int samples, double max_mismatch = 100,
                                      std::uint64_t seed = 23) {
  if (!(rho > 0)) throw std::invalid_argument("kernel audit needs rho > 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1, 1);
  const int d = spec.map.d, D = 2 * d;
  KernelAudit r;
  for (int s = 0; s < samples; ++s) {
    // stratum s % 4: mismatch 0, small, medium, up to max
    double level = (s % 4) / 3.0;
    int dm = static_cast<int>(std::round(level * max_mismatch / sp.freq_step()));
    int m_in = static_cast<int>((U(rng) * 0.5 + 0.5) * (sp.n0 - 1));
    double eta0 = sp.frequency(m_in), xi0 = eta0 + dm * sp.freq_step();
    RVec z(D), eta_d(D), x(D);
    for (int a = 0; a < D; ++a) {
      z[a] = 0.5 * spec.map.box * U(rng);
      eta_d[a] = 3 * U(rng);
    }
    RVec y0(D + 1);
    y0 << 0, RVec::Zero(D);
    // out center near the preimage of z, frequency near the pulled-back covector
    x = spec.map.B.size() ? RVec(spec.map.B.inverse() * z) : z;
    for (int a = 0; a < D; ++a) x[a] += 0.2 * U(rng);
    RVec eta(D + 1);
    eta << eta0, eta_d;
    RVec xi = spec.map.jacobian(ContactPoint::from_full(y0)).transpose() * eta;
    xi[0] = xi0;
    for (int a = 1; a <= D; ++a) xi[a] += 0.5 * U(rng);
    cd K = kernel_entry_integrated(spec, sp, yg, x, xi0, xi.tail(D), z, eta0, eta_d);
    double integral = 0;
    for (std::size_t j = 0; j < yg.size(); ++j) {
      RVec y = yg.point(j);
      RVec yy(D + 1);
      yy << 0, y;
      bool in_supp = false;
      for (int j0 = 0; j0 < sp.n0 && !in_supp; ++j0) {
        yy[0] = sp.flow_node(j0);
        in_supp = std::abs(spec.g(yy)) > 0;
      }
      if (in_supp) integral += std::pow(kappa(spec, x, xi, z, eta, y), -rho);
    }
    integral *= yg.weight() * 2 * sp.L0;
    double bound = std::pow(bracket(xi0) * bracket(eta0), 0.5 * d) * integral;
    double ratio = bound > 0 ? std::abs(K) / bound : (std::abs(K) > 0 ? std::numeric_limits<double>::infinity() : 0);
    r.ratios.push_back(ratio);
    r.mismatch.push_back(std::abs(xi0 - eta0));
    r.fitted_constant = std::max(r.fitted_constant, ratio);
  }
  return r;
}

struct Decomposition {
  OperatorMatrix cpt, ctr, hyp;
};

inline Decomposition decompose(const OperatorMatrix& M, const WeightSpec& spec) {
  RVec X0 = phase_values(M.in, [&](const RVec& x, const RVec& xi) { return cutoffs(x, xi, spec).X0; });
  RVec Xc = phase_values(M.in, [&](const RVec& x, const RVec& xi) {
    auto c = cutoffs(x, xi, spec);
    return c.Xctr * (1 - c.X0);
  });
  RVec Xh = phase_values(M.in, [&](const RVec& x, const RVec& xi) { return cutoffs(x, xi, spec).Xhyp; });
  return {right_scaled(M, X0), right_scaled(M, Xc), right_scaled(M, Xh)};
}

// Singular values of the operator in the weighted L^2 inner products of the grids.
inline std::vector<double> singular_values(const OperatorMatrix& M) {
  RVec so = phase_values(M.out, [](const RVec&, const RVec&) { return 1.0; });
  RVec si = so;
  {
    auto oo = M.offsets(M.out), oi = M.offsets(M.in);
    for (int m = 0; m < M.out.n0(); ++m)
      so.segment(oo[m], oo[m + 1] - oo[m]).setConstant(std::sqrt(M.out.slice_weight(m)));
    for (int m = 0; m < M.in.n0(); ++m)
      si.segment(oi[m], oi[m + 1] - oi[m]).setConstant(std::sqrt(M.in.slice_weight(m)));
  }
  Mat D = conjugated(M, so, si).to_dense();
  // zero columns (cut off by a right factor) carry no singular values
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < D.cols(); ++j)
    if (D.col(j).cwiseAbs().maxCoeff() > 0) keep.push_back(j);
  Mat R(D.rows(), keep.size());
  for (std::size_t j = 0; j < keep.size(); ++j) R.col(j) = D.col(keep[j]);
  Eigen::BDCSVD<Mat> svd(R);
  RVec s = svd.singularValues();
  return std::vector<double>(s.data(), s.data() + s.size());
}

struct LambdaDelta {
  double Lambda = 0, Delta = 0, sup_g = 0, bound = 0;
  RVec argmax;  // point of R^{2d+1} attaining Lambda
};

// Volume expansion of DF_dag restricted to E+ = {x- = 0}.
inline double unstable_jacobian(const ContactMap& F, const RVec& y_dag) {
  const int d = F.d;
  RMat M = F.DF_dag(y_dag).leftCols(d);
  double v = std::sqrt((M.transpose() * M).determinant());
  if (!(v > 1e-14)) throw std::domain_error("singular restricted Jacobian");
  return v;
}

inline LambdaDelta lambda_delta(const TransferSpec& spec, const PartialSpace& sp, double lambda, double r) {
  LambdaDelta out;
  out.argmax = RVec::Zero(sp.trans.dim + 1);
  for (std::size_t j = 0; j < sp.size(); ++j) {
    RVec y = sp.point(j);
    double ga = std::abs(spec.g(y));
    if (ga == 0) continue;
    double jac = unstable_jacobian(spec.map, y.tail(sp.trans.dim));
    double L = ga / std::sqrt(jac);
    // ties go to the point nearest the origin
    const double tie = 1e-12 * std::max(L, 1.0);
    if (L > out.Lambda + tie || (L > out.Lambda - tie && y.norm() < out.argmax.norm())) {
      out.Lambda = L;
      out.argmax = y;
    }
    out.Delta = std::max(out.Delta, std::sqrt(jac));
    out.sup_g = std::max(out.sup_g, ga);
  }
  out.bound = std::max(out.Lambda, out.sup_g * std::pow(lambda, -r) * out.Delta);
  return out;
}

// (sup |g^t| / sqrt(det DF^t|_Eu))^{1/t} from the log-rates of a model; the
// estimate at the largest time is returned.
inline double global_lambda(const std::function<double(double)>& log_sup_abs_g,
                            const std::function<double(double)>& log_det_unstable,
                            const std::vector<double>& times) {
  if (times.empty()) throw std::invalid_argument("global_lambda needs at least one time");
  double t = *std::max_element(times.begin(), times.end());
  if (!(t > 0)) throw std::invalid_argument("global_lambda needs a positive time");
  return std::exp((log_sup_abs_g(t) - 0.5 * log_det_unstable(t)) / t);
}

inline std::string grid_json(const PartialGrid& g) {
  nlohmann::json j;
  j["L0"] = g.space.L0;
  j["n0"] = g.space.n0;
  j["trans"] = {{"dim", g.space.trans.dim}, {"half_width", g.space.trans.half_width}, {"n", g.space.trans.n}};
  for (int m = 0; m < g.n0(); ++m)
    j["slices"].push_back({{"xi0", g.frequency(m)},
                           {"x", {{"half_width", g.slices[m].x.half_width}, {"n", g.slices[m].x.n}}},
                           {"xi", {{"half_width", g.slices[m].xi.half_width}, {"n", g.slices[m].xi.n}}}});
  return j.dump();
}

// Raw row-major complex doubles plus a JSON sidecar describing the grids.
inline void export_operator(const OperatorMatrix& M, const std::string& path, const std::string& spec_tag) {
  Mat D = M.to_dense();
  std::ofstream bin(path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + path);
  for (Eigen::Index i = 0; i < D.rows(); ++i)
    for (Eigen::Index j = 0; j < D.cols(); ++j) {
      double re = D(i, j).real(), im = D(i, j).imag();
      bin.write(reinterpret_cast<const char*>(&re), sizeof re);
      bin.write(reinterpret_cast<const char*>(&im), sizeof im);
    }
  nlohmann::json side;
  side["rows"] = D.rows();
  side["cols"] = D.cols();
  side["layout"] = "row-major complex128 (re, im)";
  side["out_grid"] = nlohmann::json::parse(grid_json(M.out));
  side["in_grid"] = nlohmann::json::parse(grid_json(M.in));
  side["spec"] = spec_tag;
  side["spec_hash"] = std::hash<std::string>{}(spec_tag);
  side["assembly"] = M.note;
  std::ofstream(path + ".json") << side.dump(2) << "\n";
}

inline void write_singular_values_csv(const std::vector<double>& s, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "index,singular_value\n";
  os.precision(17);
  for (std::size_t i = 0; i < s.size(); ++i) os << i << ',' << s[i] << '\n';
}

}  // namespace fbi
