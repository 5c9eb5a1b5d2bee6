#pragma once
// Norms of the linear model on weighted spaces, spectra of discretized lifts
// at two refinement levels, the lower-bound test family and the central block
// against its linearization.

#include "fbi/aniso_norm.hpp"
#include "fbi/fbi_core.hpp"
#include "fbi/transfer_ops.hpp"

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <complex>
#ifndef lapack_complex_float
#define lapack_complex_float std::complex<float>
#endif
#ifndef lapack_complex_double
#define lapack_complex_double std::complex<double>
#endif
#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fbi {

inline GridSpec default_norm_grid(int d) { return make_grid(2 * d, 8.0, 40); }

struct NormMeasurement {
  double value = 0;
  bool converged = false;
  int iterations = 0;
  double d_factor = 1;
  double lambda = 1;
  double s = 1, r = 0;
  double branch = 1;  // max{d^{-1/2}, d^{1/2} lambda^{-r}}
  ConeCertificate cone;
};

inline double lemma_branch(double dB, double lambda, double r) {
  return std::max(std::pow(dB, -0.5), std::pow(dB, 0.5) * std::pow(lambda, -r));
}

// Power-iteration norm of the linear model on L^2(V_s); r = 0 is the unweighted
// case. The cone certificate at aperture 1/10 is recorded, not enforced.
inline NormMeasurement weighted_norm_measure(const L0Hat& op, const RMat& B, double lambda, double s, double r,
                                             std::uint64_t seed = 1) {
  if (!(s >= 1)) throw std::invalid_argument("weighted norm: s must be >= 1");
  if (!(r >= 0)) throw std::invalid_argument("weighted norm: r must be >= 0");
  L0Hat w = op;
  const auto& g = op.grid();
  if (r > 0) {
    RVec v(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) v[j] = weight_vs(g.point(j), r, s);
    w.set_weight(v);
  }
  auto est = w.norm(seed, 300, 3);
  NormMeasurement m;
  m.value = est.value;
  m.converged = est.converged;
  m.iterations = est.iterations;
  m.d_factor = det_factor(B);
  m.lambda = lambda;
  m.s = s;
  m.r = r;
  m.branch = lemma_branch(m.d_factor, lambda, r);
  m.cone = check_linear_hyperbolic(B, lambda);
  return m;
}

inline NormMeasurement weighted_norm_measure(const RMat& B, double lambda, double s, double r,
                                             const GridSpec& grid, std::uint64_t seed = 1) {
  return weighted_norm_measure(L0Hat(B, grid), B, lambda, s, r, seed);
}

inline RMat hyperbolic_diag(int d, double lambda) {
  RMat B = RMat::Zero(2 * d, 2 * d);
  for (int i = 0; i < d; ++i) {
    B(i, i) = lambda;
    B(d + i, d + i) = 1 / lambda;
  }
  return B;
}

struct NormSweep {
  std::vector<NormMeasurement> rows;
  double fitted_constant = 0;
  // per s: least-squares slope of log norm and of log branch against log lambda
  std::vector<double> s_values, measured_slope, branch_slope;
};

inline double ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

inline NormSweep norm_sweep(int d, const std::vector<double>& lambdas, const std::vector<double>& ss, double r,
                            const GridSpec& grid, std::uint64_t seed = 1) {
  NormSweep out;
  for (double lam : lambdas) {
    RMat B = hyperbolic_diag(d, lam);
    L0Hat op(B, grid);
    for (double s : ss) out.rows.push_back(weighted_norm_measure(op, B, lam, s, r, seed));
  }
  for (auto& m : out.rows) out.fitted_constant = std::max(out.fitted_constant, m.value / m.branch);
  for (double s : ss) {
    std::vector<double> x, y, b;
    for (auto& m : out.rows)
      if (m.s == s) {
        x.push_back(std::log(m.lambda));
        y.push_back(std::log(m.value));
        b.push_back(std::log(m.branch));
      }
    out.s_values.push_back(s);
    out.measured_slope.push_back(ls_slope(x, y));
    out.branch_slope.push_back(ls_slope(x, b));
  }
  return out;
}

// All eigenvalues of a dense matrix (LAPACK zgeev, Schur based).
inline std::vector<cd> dense_eigenvalues(Mat A) {
  const lapack_int n = static_cast<lapack_int>(A.rows());
  if (A.cols() != A.rows()) throw std::invalid_argument("eigenvalues need a square matrix");
  std::vector<cd> w(n);
  if (n == 0) return w;
  lapack_int info = LAPACKE_zgeev(LAPACK_COL_MAJOR, 'N', 'N', n, A.data(), n, w.data(), nullptr, 1, nullptr, 1);
  if (info != 0) throw std::runtime_error("eigen-solver failed, info " + std::to_string(info));
  return w;
}

// Eigenvalues sorted by descending modulus; block-diagonal matrices are solved
// block by block.
inline std::vector<cd> sorted_eigenvalues(const OperatorMatrix& M, std::size_t dense_limit = 4000) {
  std::vector<cd> ev;
  auto solve = [&](const Mat& A) {
    if (static_cast<std::size_t>(A.rows()) > dense_limit)
      throw std::length_error("eigenproblem above the dense limit; use largest_eigenvalues");
    auto w = dense_eigenvalues(A);
    ev.insert(ev.end(), w.begin(), w.end());
  };
  if (M.block_diagonal() && M.rows() == M.cols()) {
    std::vector<bool> seen(M.in.n0(), false);
    for (auto& b : M.blocks) {
      solve(b.to_dense());
      seen[b.in_slice] = true;
    }
    for (int m = 0; m < M.in.n0(); ++m)
      if (!seen[m]) ev.insert(ev.end(), M.in.slices[m].size(), cd(0));
  } else {
    solve(M.to_dense(dense_limit * dense_limit));
  }
  std::sort(ev.begin(), ev.end(), [](cd a, cd b) { return std::abs(a) > std::abs(b); });
  return ev;
}

// Largest-modulus eigenvalues by Arnoldi iteration with Krylov dimension m.
inline std::vector<cd> largest_eigenvalues(const std::function<Vec(const Vec&)>& apply, Eigen::Index n, int count,
                                           int m = 120, std::uint64_t seed = 5) {
  m = static_cast<int>(std::min<Eigen::Index>(m, n));
  Mat V = Mat::Zero(n, m + 1), H = Mat::Zero(m + 1, m);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = cd(nd(rng), nd(rng));
  V.col(0) = v.normalized();
  int k = 0;
  for (; k < m; ++k) {
    Vec w = apply(V.col(k));
    for (int j = 0; j <= k; ++j) {
      H(j, k) = V.col(j).dot(w);
      w -= H(j, k) * V.col(j);
    }
    double h = w.norm();
    H(k + 1, k) = h;
    if (h < 1e-14) {
      ++k;
      break;
    }
    V.col(k + 1) = w / h;
  }
  Eigen::ComplexEigenSolver<Mat> es(H.topLeftCorner(k, k), false);
  std::vector<cd> ev(es.eigenvalues().data(), es.eigenvalues().data() + k);
  std::sort(ev.begin(), ev.end(), [](cd a, cd b) { return std::abs(a) > std::abs(b); });
  ev.resize(std::min<std::size_t>(ev.size(), count));
  return ev;
}

struct SpectrumReport {
  std::vector<cd> eigenvalues;
  std::string refinement_level;
  std::string grid_metadata;  // JSON
  double lambda_t_bound = 0;
  double margin = 0.1;
  std::size_t stable_count = 0;
  std::size_t inside_count = 0;
  std::size_t matrix_size = 0;

  double inside_fraction() const {
    return eigenvalues.empty() ? 1.0 : static_cast<double>(inside_count) / eigenvalues.size();
  }
  nlohmann::json to_json() const {
    nlohmann::json j;
    j["refinement_level"] = refinement_level;
    j["grid"] = nlohmann::json::parse(grid_metadata.empty() ? "{}" : grid_metadata);
    j["lambda_t_bound"] = lambda_t_bound;
    j["margin"] = margin;
    j["stable_count"] = stable_count;
    j["inside_count"] = inside_count;
    j["matrix_size"] = matrix_size;
    j["note"] = "radius proxy: modulus below which eigenvalues are refinement-unstable; not the true essential radius";
    for (auto& e : eigenvalues) j["eigenvalues"].push_back({{"re", e.real()}, {"im", e.imag()}, {"abs", std::abs(e)}});
    return j;
  }
};

inline void write_eigenvalues_csv(const SpectrumReport& r, const std::string& path, bool append = false) {
  std::ofstream os(path, append ? std::ios::app : std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  if (!append) os << "level,index,re,im,abs,bound\n";
  os.precision(17);
  for (std::size_t i = 0; i < r.eigenvalues.size(); ++i)
    os << r.refinement_level << ',' << i << ',' << r.eigenvalues[i].real() << ',' << r.eigenvalues[i].imag() << ','
       << std::abs(r.eigenvalues[i]) << ',' << r.lambda_t_bound << '\n';
}

inline RVec weight_values(const PartialGrid& g, const WeightSpec& w) {
  return phase_values(g, [&](const RVec& x, const RVec& xi) { return cal_w_aniso(x, xi, w.r, w.psi_plus); });
}

inline SpectrumReport spectrum_at(const TransferSpec& spec, const WeightSpec& weight, const PartialGrid& grid,
                                  const std::string& level, double margin = 0.1, KernelOptions opt = {}) {
  weight.validate();
  OperatorMatrix M = lift_kernel(spec, grid, grid, opt);
  RVec W = weight_values(grid, weight);
  OperatorMatrix C = conjugated(M, W, W);
  SpectrumReport r;
  r.eigenvalues = sorted_eigenvalues(C);
  r.refinement_level = level;
  r.grid_metadata = grid_json(grid);
  r.margin = margin;
  r.matrix_size = M.rows();
  r.lambda_t_bound = lambda_delta(spec, grid.space, 1.0, weight.r).Lambda;
  for (auto& e : r.eigenvalues) {
    if (std::abs(e) > r.lambda_t_bound * (1 + margin)) ++r.stable_count;
    else ++r.inside_count;
  }
  return r;
}

struct SpectrumPair {
  SpectrumReport coarse, fine;
  std::vector<cd> persistent;  // outliers of the fine level matched within 5% modulus at the coarse level
  bool counts_equal() const { return coarse.stable_count == fine.stable_count; }
};

inline std::vector<cd> match_outliers(const SpectrumReport& a, const SpectrumReport& b, double tol = 0.05) {
  std::vector<cd> out;
  std::vector<bool> used(a.eigenvalues.size(), false);
  const double cut = b.lambda_t_bound * (1 + b.margin);
  for (auto& e : b.eigenvalues) {
    if (std::abs(e) <= cut) break;
    for (std::size_t i = 0; i < a.eigenvalues.size(); ++i)
      if (!used[i] && std::abs(std::abs(a.eigenvalues[i]) - std::abs(e)) <= tol * std::abs(e)) {
        used[i] = true;
        out.push_back(e);
        break;
      }
  }
  return out;
}

inline SpectrumPair model_spectrum(const TransferSpec& spec, const WeightSpec& weight, const PartialGrid& coarse,
                                   const PartialGrid& fine, double margin = 0.1, KernelOptions opt = {}) {
  SpectrumPair p;
  p.coarse = spectrum_at(spec, weight, coarse, "1", margin, opt);
  p.fine = spectrum_at(spec, weight, fine, "2", margin, opt);
  p.persistent = match_outliers(p.coarse, p.fine);
  return p;
}

// Leading moduli of the squared map's lift against the squares of the lift's.
struct MultiplicativityCheck {
  std::vector<double> squared_of_single, of_squared;
  double worst_relative = 0;
};

inline MultiplicativityCheck multiplicativity_check(const TransferSpec& spec, const WeightSpec& weight,
                                                    const PartialGrid& grid, int count, KernelOptions opt = {}) {
  auto one = spectrum_at(spec, weight, grid, "single", 0.1, opt);
  auto two = spectrum_at(compose(spec, spec), weight, grid, "squared", 0.1, opt);
  MultiplicativityCheck c;
  for (int i = 0; i < count && i < static_cast<int>(std::min(one.eigenvalues.size(), two.eigenvalues.size())); ++i) {
    double a = std::norm(one.eigenvalues[i]), b = std::abs(two.eigenvalues[i]);
    c.squared_of_single.push_back(a);
    c.of_squared.push_back(b);
    c.worst_relative = std::max(c.worst_relative, std::abs(a - b) / std::max(a, 1e-300));
  }
  return c;
}

struct LowerBoundReport {
  RVec center;
  std::vector<double> frequencies, rayleigh;
  Mat gram_in, gram_out;  // normalized Gram matrices in the anisotropic norm
  double max_off_diagonal = 0;
  double fitted_c = 0;  // min Rayleigh ratio / Lambda
};

inline Mat normalized_gram(const std::vector<PartialPhaseField>& v) {
  const std::size_t n = v.size();
  Mat G(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) G(i, j) = partial_inner(v[i], v[j]);
  Mat N = G;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double den = std::sqrt(std::abs(G(i, i)) * std::abs(G(j, j)));
      N(i, j) = den > 0 ? G(i, j) / den : cd(0);
    }
  return N;
}

// Test functions c_k * packet(x*, n_k alpha0(x*)) * chi(m |y - x*|) at the point
// attaining Lambda, and the ratios ||L phi_k||_r / ||phi_k||_r.
inline LowerBoundReport lower_bound_family(const TransferSpec& spec, const WeightSpec& weight, const PartialGrid& grid,
                                           double m, const std::vector<double>& frequencies) {
  weight.validate();
  const auto& sp = grid.space;
  LambdaDelta ld = lambda_delta(spec, sp, 1.0, weight.r);
  LowerBoundReport r;
  r.center = ld.argmax;
  r.frequencies = frequencies;
  const int d = sp.d();
  ContactPoint c = ContactPoint::from_full(r.center);
  RVec a0 = alpha0_coeffs(c);
  auto weighted = [&](const PartialSpaceField& u) {
    auto v = pfbi_forward(u, grid);
    return multiply_phase(v, [&](const RVec& x, const RVec& xi) { return cal_w_aniso(x, xi, weight.r, weight.psi_plus); });
  };
  std::vector<PartialPhaseField> vin, vout;
  double min_ratio = std::numeric_limits<double>::infinity();
  for (double n : frequencies) {
    double top_flow = std::abs(n * a0[0]), top_trans = std::abs(n) * a0.tail(2 * d).cwiseAbs().maxCoeff();
    if (top_flow >= sp.freq_step() * (sp.n0 / 2) || top_trans * sp.trans.spacing() >= kPi)
      throw std::domain_error("lower-bound frequency exceeds the grid Nyquist limit");
    PartialPacketIndex idx{r.center.tail(2 * d), n * a0[0], n * RVec(a0.tail(2 * d))};
    auto packet = partial_packet(idx);
    RVec ctr = r.center;
    auto phi = [packet, ctr, m, &sp](const RVec& y) {
      RVec dy = y - ctr;
      dy[0] = std::remainder(dy[0], 2 * sp.L0);
      return packet(y) * chi(m * dy.norm());
    };
    auto u = sample(phi, sp);
    double nu = l2_norm(u);
    for (auto& x : u.values) x /= nu;
    auto Lu = transfer_apply(spec, [&](const RVec& y) { return phi(y) / nu; }, sp);
    auto wu = weighted(u), wl = weighted(Lu);
    double ratio = l2_norm(wl) / l2_norm(wu);
    r.rayleigh.push_back(ratio);
    min_ratio = std::min(min_ratio, ratio);
    vin.push_back(std::move(wu));
    vout.push_back(std::move(wl));
  }
  r.gram_in = normalized_gram(vin);
  r.gram_out = normalized_gram(vout);
  for (Eigen::Index i = 0; i < r.gram_in.rows(); ++i)
    for (Eigen::Index j = 0; j < r.gram_in.cols(); ++j)
      if (i != j) r.max_off_diagonal = std::max({r.max_off_diagonal, std::abs(r.gram_in(i, j)), std::abs(r.gram_out(i, j))});
  r.fitted_c = ld.Lambda > 0 ? min_ratio / ld.Lambda : 0;
  return r;
}

// Central block at slab k near the origin and its linearized surrogate. Slices
// are given by their flow frequencies; packet grids are reference grids scaled
// by <xi0>^{-1/2} in x and <xi0>^{1/2} in xi, the quadrature grid by 1/k.
struct CentralBlockSetup {
  int k = 6;
  std::vector<int> kk;  // slab index, zeros by default
  std::vector<double> frequencies;  // defaults to k^2 - k, k^2, k^2 + k
  PhaseGrid in_ref, out_ref;
  GridSpec y_ref;  // multiplied by 1/k
  WeightSpec weight;
};

struct CentralBlockReport {
  int k = 0;
  double difference = 0, approx_norm = 0, exact_norm = 0;
  double bound = 0;  // max{Lambda, |g|_inf lambda^{-r} Delta} at C0 = 1
  bool vanishes = false;
  std::vector<double> slice_difference;
};

inline PhaseGrid scaled_slice(const PhaseGrid& ref, double s) {
  double r = std::sqrt(s);
  return {GridSpec{ref.x.dim, ref.x.half_width / r, ref.x.n}, GridSpec{ref.xi.dim, ref.xi.half_width * r, ref.xi.n}};
}

inline CentralBlockReport central_block_audit(const TransferSpec& spec, const CentralBlockSetup& set, double lambda) {
  const auto& F = spec.map;
  const int d = F.d, D = 2 * d, k = set.k;
  set.weight.validate();
  if (set.in_ref.dim() != D || set.out_ref.dim() != D || set.y_ref.dim != D)
    throw std::invalid_argument("central block: grids must be transversal");
  if (!spec.g.flow_constant) throw std::invalid_argument("central block: amplitude must be constant along the flow");
  if (F.F_dag(RVec::Zero(D)).norm() > 1e-12 || std::abs(F.f(RVec::Zero(D))) > 1e-12)
    throw std::invalid_argument("central block: the map must fix the origin");
  std::vector<int> kk = set.kk.empty() ? std::vector<int>(D, 0) : set.kk;
  if (static_cast<int>(kk.size()) != D) throw std::invalid_argument("central block: slab index length");
  CentralBlockReport rep;
  rep.k = k;
  {
    PartialSpace sp = make_partial_space(d, kPi, 2, set.y_ref.half_width / k, set.y_ref.n);
    auto ld = lambda_delta(spec, sp, lambda, set.weight.r);
    rep.bound = ld.bound;
  }
  if (static_cast<double>(k) * k < set.weight.N / 2) {
    rep.vanishes = true;
    return rep;
  }
  std::vector<double> freqs = set.frequencies;
  if (freqs.empty()) freqs = {double(k) * k - k, double(k) * k, double(k) * k + k};
  const GridSpec yg{D, set.y_ref.half_width / k, set.y_ref.n};
  std::vector<RVec> ys(yg.size()), Fy(yg.size()), By(yg.size());
  std::vector<double> fy(yg.size());
  std::vector<cd> gy(yg.size());
  const RMat B = F.DF_dag(RVec::Zero(D));
  RVec zero_full = RVec::Zero(D + 1);
  const cd g0 = spec.g(zero_full);
  for (std::size_t j = 0; j < yg.size(); ++j) {
    ys[j] = yg.point(j);
    Fy[j] = F.F_dag(ys[j]);
    By[j] = B * ys[j];
    fy[j] = F.f(ys[j]);
    RVec y(D + 1);
    y << 0, ys[j];
    gy[j] = spec.g(y);
  }
  const double ks = double(k) * k;
  for (double eta0 : freqs) {
    const double s = bracket(eta0);
    PhaseGrid in = scaled_slice(set.in_ref, s), out = scaled_slice(set.out_ref, s);
    check_nyquist(yg.spacing(), std::max(max_frequency(in.xi), max_frequency(out.xi)), "central block");
    const double slab = q_tilde(k, eta0);
    // input cutoffs and weight ratios
    RVec cin(in.size()), win(in.size()), win_frozen(in.size());
    for (std::size_t q = 0; q < in.size(); ++q) {
      auto p = in.point(q);
      RVec eta = slice_node_xi(eta0, p.xi);
      auto c = cutoffs(p.x, eta, set.weight);
      cin[q] = slab * Q_block(k, kk, p.x, set.weight.delta) * c.Xctr * (1 - c.X0);
      win[q] = cal_w_aniso(p.x, eta, set.weight.r, set.weight.psi_plus);
      win_frozen[q] = cal_w_aniso(p.x, slice_node_xi(ks, p.xi), set.weight.r, set.weight.psi_plus);
    }
    RVec wout(out.size()), wout_frozen(out.size());
    for (std::size_t p = 0; p < out.size(); ++p) {
      auto pt = out.point(p);
      wout[p] = cal_w_aniso(pt.x, slice_node_xi(eta0, pt.xi), set.weight.r, set.weight.psi_plus);
      wout_frozen[p] = cal_w_aniso(pt.x, slice_node_xi(ks, pt.xi), set.weight.r, set.weight.psi_plus);
    }
    std::vector<cd> amp(yg.size()), amp_lin(yg.size(), g0);
    for (std::size_t j = 0; j < yg.size(); ++j) amp[j] = gy[j] * std::exp(cd(0, eta0 * fy[j]));
    Mat K = transversal_block(out, s, in, s, yg, Fy, amp);
    Mat Kl = transversal_block(out, ks, in, ks, yg, By, amp_lin);
    // L^2 normalization of the phase cells: conjugate by the square roots of cell weights
    const double cw = std::sqrt(out.weight() / in.weight());
    Mat L = cw * wout.cast<cd>().asDiagonal() * K * (cin.cwiseQuotient(win)).cast<cd>().asDiagonal();
    Mat Ll = cw * wout_frozen.cast<cd>().asDiagonal() * Kl * (cin.cwiseQuotient(win_frozen)).cast<cd>().asDiagonal();
    auto nrm = [](const Mat& A) {
      return operator_norm([&](const Vec& v) { return Vec(A * v); }, [&](const Vec& v) { return Vec(A.adjoint() * v); },
                           A.cols(), 3, 300, 2).value;
    };
    double diff = nrm(L - Ll);
    rep.slice_difference.push_back(diff);
    rep.difference = std::max(rep.difference, diff);
    rep.approx_norm = std::max(rep.approx_norm, nrm(Ll));
    rep.exact_norm = std::max(rep.exact_norm, nrm(L));
  }
  return rep;
}

}  // namespace fbi
