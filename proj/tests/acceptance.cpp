// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "fbi/spectra.hpp"
#include "fbi/suite.hpp"

#include <Eigen/SVD>
#include <unsupported/Eigen/KroneckerProduct>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>

using namespace fbi;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] %2d %-28s %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3g", v);
  return b;
}

double spectral_norm(const Mat& A) { return Eigen::BDCSVD<Mat>(A).singularValues()(0); }

// ||X (x) ... (x) X - Y (x) ... (x) Y|| <= ||X - Y|| sum_j ||X||^j ||Y||^(k-1-j), k-fold powers.
double kron_power_gap(const Mat& X, const Mat& Y, int k) {
  if (k == 1) return spectral_norm(X - Y);
  double e = spectral_norm(X - Y), nx = spectral_norm(X), ny = spectral_norm(Y), s = 0;
  for (int j = 0; j < k; ++j) s += std::pow(nx, j) * std::pow(ny, k - 1 - j);
  return e * s;
}

double rel_defect(const std::vector<cd>& a, const std::vector<cd>& b) {
  double num = 0, den = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    num += std::norm(a[j] - b[j]);
    den += std::norm(b[j]);
  }
  return std::sqrt(num / den);
}

struct IdentityGrid {
  GridSpec space;
  PhaseGrid phase;
};

std::vector<IdentityGrid> identity_grids() {
  GridSpec s1 = make_grid(1, 8, 64), s2 = make_grid(2, 6, 40);
  return {{s1, phase_grid_for(s1, 14, 56)}, {s2, phase_grid_for(s2, 12, 48)}};
}

void identity_and_isometry() {
  auto t0 = Clock::now();
  double id_worst = 0, iso_worst = 0;
  for (auto& g : identity_grids())
    for (auto& tf : function_suite(g.space.dim)) {
      auto u = sample(tf.f, g.space);
      auto Tu = fbi_forward(u, g.phase);
      id_worst = std::max(id_worst, rel_defect(fbi_adjoint(Tu, g.space).values, u.values));
      iso_worst = std::max(iso_worst, std::abs(l2_norm(Tu) - l2_norm(u)) / l2_norm(u));
    }
  double t = seconds_since(t0);
  report(1, "resolution of identity", id_worst <= 1e-6 && t < 30,
         "max rel defect " + fmt(id_worst) + " over 20 functions, D=1,2 (" + fmt(t) + " s)");

  auto sp = make_partial_space(1, kPi, 8, 5, 24);
  auto pg = make_partial_grid_exact(sp, 0.5, 5.0);
  double piso = 0, pid = 0;
  for (auto& tf : partial_suite(1)) {
    auto u = sample(tf.f, sp);
    auto v = pfbi_forward(u, pg);
    pid = std::max(pid, rel_defect(pfbi_adjoint(v, sp).values, u.values));
    piso = std::max(piso, std::abs(l2_norm(v) - l2_norm(u)) / l2_norm(u));
  }
  report(2, "isometry", iso_worst <= 1e-6 && piso <= 1e-6,
         "full " + fmt(iso_worst) + ", partial d=1 " + fmt(piso) + " (partial identity " + fmt(pid) + ")");
}

void projection_algebra() {
  // full transform: D=1 dense, D=2 through the Kronecker structure
  double idem = 0, sa = 0;
  for (auto& g : identity_grids()) {
    Mat P1 = projection_axis_matrix(g.phase, g.space);
    Mat P1sq = P1 * P1;
    Mat P1h = P1.adjoint();
    idem = std::max(idem, kron_power_gap(P1sq, P1, g.space.dim));
    sa = std::max(sa, kron_power_gap(P1, P1h, g.space.dim));
  }
  // partial transform: block diagonal in the flow frequency, Kronecker power of one
  // scaled axis factor on each block
  auto sp = make_partial_space(1, kPi, 8, 5, 24);
  auto pg = make_partial_grid_exact(sp, 0.5, 5.0);
  double pidem = 0, psa = 0;
  for (int m = 0; m < pg.n0(); ++m) {
    const auto& sl = pg.slices[m];
    double s = bracket(pg.frequency(m));
    auto nodes = sl.plane_nodes();
    Mat Q = axis_analysis(nodes, sp.trans, s) * axis_synthesis(nodes, sp.trans, sl.x.spacing() * sl.xi.spacing(), s);
    Mat Qsq = Q * Q;
    Mat Qh = Q.adjoint();
    pidem = std::max(pidem, kron_power_gap(Qsq, Q, sp.trans.dim));
    psa = std::max(psa, kron_power_gap(Q, Qh, sp.trans.dim));
  }
  bool pass = std::max(idem, pidem) <= 1e-6 && std::max(sa, psa) <= 1e-10;
  report(3, "projection algebra", pass,
         "P: |P^2-P| " + fmt(idem) + " |P-P*| " + fmt(sa) + "; partial: " + fmt(pidem) + ", " + fmt(psa));
}

void lift_and_tensor() {
  GridSpec space = make_grid(2, 10, 160);
  PhaseGrid g = make_phase_grid(make_grid(2, 12, 48), make_grid(2, 11, 44));
  RMat B(2, 2);
  B << 2, 0, 0, 0.5;
  auto u = sample([](const RVec& y) { return cd(std::exp(-0.5 * y.squaredNorm())); }, space);
  auto uB = sample([&](const RVec& y) { return cd(std::exp(-0.5 * (B * y).squaredNorm())); }, space);
  auto lhs = fbi_forward(uB, g);
  auto rhs = lift_linear(B, fbi_forward(u, g), space);
  double num = 0, den = 0;
  for (std::size_t j = 0; j < lhs.values.size(); ++j) {
    num += std::norm(lhs.values[j] - rhs.values[j]);
    den += std::norm(lhs.values[j]);
  }
  double abs_err = std::sqrt(num * g.weight()), rel = std::sqrt(num / den);
  double dB = det_factor(B);
  report(4, "lift identity", abs_err <= 1e-5 && std::abs(dB - 1.25) < 1e-14,
         "abs " + fmt(abs_err) + " rel " + fmt(rel) + ", d(B) = " + fmt(dB));

  auto V1 = [](const RVec& z) { return std::exp(cd(-0.5 * (z - RVec::Constant(2, 0.5)).squaredNorm(), 0.3 * z[0])); };
  auto V2 = [](const RVec& w) { return std::exp(cd(-0.5 * w.squaredNorm(), -0.2 * w[1])); };
  auto td = l0_tensor_defect(B, V1, V2, g, space, make_grid(2, 12, 48), 5000);
  report(5, "tensor factorization", td.relative <= 1e-5,
         "relative " + fmt(td.relative) + " at " + std::to_string(td.samples) + " phase points");
}

void model_norms() {
  GridSpec grid = default_norm_grid(1);
  double worst = 0;
  std::string vals;
  for (double lam : {4.0, 8.0, 16.0}) {
    auto m = weighted_norm_measure(hyperbolic_diag(1, lam), lam, 1, 0, grid);
    worst = std::max(worst, std::abs(m.value - 1));
    vals += fmt(m.value) + " ";
  }
  report(6, "unweighted model norm", worst <= 0.02, "norms " + vals + "(grid [-8,8]^2 n=40)");

  auto t0 = Clock::now();
  auto sweep = norm_sweep(1, {4, 8, 16, 32}, {1, 16, 256}, 4, grid);
  double t = seconds_since(t0);
  double slope_gap = 0;
  std::ostringstream os;
  for (std::size_t i = 0; i < sweep.s_values.size(); ++i) {
    slope_gap = std::max(slope_gap, std::abs(sweep.measured_slope[i] - sweep.branch_slope[i]));
    os << "s=" << sweep.s_values[i] << " slope " << fmt(sweep.measured_slope[i]) << " vs " << fmt(sweep.branch_slope[i])
       << "; ";
  }
  bool bounded = true;
  for (auto& m : sweep.rows) bounded = bounded && m.value <= sweep.fitted_constant * m.branch * (1 + 1e-12);
  report(7, "weighted norm bound", bounded && slope_gap <= 0.15 && t < 300,
         "C = " + fmt(sweep.fitted_constant) + "; " + os.str() + "(" + fmt(t) + " s)");
}

void partitions() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> U(-1, 1);
  WeightSpec w = make_weight_spec(1, 4);
  double chi_sum = 0, psi_sum = 0, q_sum = 0, triple = 0;
  for (int s = 0; s < 1000; ++s) {
    double t = 300 * U(rng), sc = 0;
    for (int n = 0; n < 20; ++n) sc += chi_n(n, t);
    chi_sum = std::max(chi_sum, std::abs(sc - 1));
    double tq = 20 * U(rng), sq = 0;
    for (int k = -25; k <= 25; ++k) sq += q_k(k, tq);
    q_sum = std::max(q_sum, std::abs(sq - 1));
    RVec x(2), xi(3);
    for (auto& v : x) v = 3 * U(rng);
    double scale = std::pow(10.0, 1.5 * (U(rng) + 1));
    for (auto& v : xi) v = scale * U(rng);
    double sp = 0;
    for (int m : lp_active(x, xi, w.psi_plus)) sp += lp_partition(m, x, xi, w.psi_plus);
    psi_sum = std::max(psi_sum, std::abs(sp - 1));
    auto c = cutoffs(x, xi, w);
    triple = std::max(triple, std::abs(c.X0 + c.Xctr * (1 - c.X0) + c.Xhyp - 1));
  }
  double sep = fit_slab_separation(40);
  bool pass = std::max({chi_sum, psi_sum, q_sum, triple}) <= 1e-10 && sep > 0;
  report(8, "partition audits", pass,
         "chi " + fmt(chi_sum) + " Psi " + fmt(psi_sum) + " q " + fmt(q_sum) + " cutoffs " + fmt(triple) +
             ", separation c = " + fmt(sep));
}

void sobolev_equivalence() {
  auto t0 = Clock::now();
  const std::vector<double> orders{1, 2};
  std::vector<std::vector<double>> C;  // [level][order]
  for (int n : {18, 24}) {
    auto sp = make_partial_space(1, kPi, 8, 4.5, n);
    auto g = make_partial_grid_exact(sp, 0.5, 3.0);
    std::vector<double> c(orders.size(), 1.0);
    for (auto& tf : partial_suite(1)) {
      auto norms = sobolev_norms(sample(tf.f, sp), g, orders);
      for (std::size_t i = 0; i < orders.size(); ++i)
        c[i] = std::max({c[i], norms[i].first / norms[i].second, norms[i].second / norms[i].first});
    }
    C.push_back(c);
  }
  double change = 0;
  std::string detail;
  for (std::size_t i = 0; i < orders.size(); ++i) {
    change = std::max(change, std::abs(C[1][i] - C[0][i]) / C[0][i]);
    detail += "r=" + fmt(orders[i]) + " C " + fmt(C[0][i]) + " -> " + fmt(C[1][i]) + "; ";
  }
  report(9, "sobolev equivalence", change < 0.1, detail + "(" + fmt(seconds_since(t0)) + " s)");
}

TransferSpec linear_model() {
  return {make_linear_contact(hyperbolic_diag(1, 4), 3.0), amplitude_bump(1, 1.0, 0.75)};
}

PartialGrid model_grid(double hw, int nx, int nxi) {
  auto sp = make_partial_space(1, kPi, 2, 3.0, 48);
  return make_partial_grid_scaled(sp, make_phase_grid(make_grid(2, hw, nx), make_grid(2, hw, nxi)));
}

void toy_spectrum() {
  auto t0 = Clock::now();
  auto spec = linear_model();
  auto p = model_spectrum(spec, make_weight_spec(1, 4, 32), model_grid(2.4, 6, 6), model_grid(2.8, 8, 6));
  double t = seconds_since(t0);
  bool pass = p.counts_equal() && p.fine.inside_fraction() >= 0.95 && std::abs(p.fine.lambda_t_bound - 0.5) < 1e-12 &&
              p.fine.matrix_size <= 4000 * 2 && t < 300;
  report(10, "toy spectrum", pass,
         "Lambda " + fmt(p.fine.lambda_t_bound) + ", outliers " + std::to_string(p.coarse.stable_count) + "/" +
             std::to_string(p.fine.stable_count) + ", inside " + fmt(p.fine.inside_fraction()) + ", size " +
             std::to_string(p.coarse.matrix_size) + "/" + std::to_string(p.fine.matrix_size) + " (" + fmt(t) + " s)");
}

void compactness() {
  auto spec = linear_model();
  auto g = model_grid(2.4, 6, 6);
  auto M = lift_kernel(spec, g, g);
  bool pass = true;
  std::string detail;
  for (double N : {2.0, 4.0, 32.0}) {
    auto sv = singular_values(decompose(M, make_weight_spec(1, 4, N)).cpt);
    std::size_t i = std::min<std::size_t>(49, sv.size() - 1);
    double orders = std::log10(sv[0] / std::max(sv[i], 1e-300));
    pass = pass && orders >= 3;
    detail += "N=" + fmt(N) + ": " + fmt(orders) + " orders; ";
  }
  report(11, "compactness proxy", pass, detail);
}

void normal_form() {
  auto F = make_shear_contact(1, 4.0, 0.5, 3.0);
  auto a = second_order_audit(F);
  report(12, "contact normal form", a.max_gradient <= 1e-6 && a.max_hessian <= 1e-6,
         "grad " + fmt(a.max_gradient) + " hess " + fmt(a.max_hessian) + " fitted C " + fmt(a.fitted_constant));
}

void lambda_anchors() {
  double worst = 0;
  for (double lam : {4.0, 9.0}) {
    TransferSpec spec{make_linear_contact(hyperbolic_diag(1, lam), 3.0), amplitude_bump(1, 1.0, 0.75)};
    auto ld = lambda_delta(spec, make_partial_space(1, kPi, 2, 3.0, 48), lam, 4);
    worst = std::max({worst, std::abs(ld.Lambda - 1 / std::sqrt(lam)), std::abs(ld.Delta - std::sqrt(lam))});
  }
  double gl = global_lambda([](double) { return 0.0; }, [](double t) { return t; }, {1.0});
  report(13, "Lambda anchors", worst <= 1e-9 && std::abs(gl - std::exp(-0.5)) <= 1e-9,
         "linear model defect " + fmt(worst) + ", global " + std::to_string(gl));
}

void central_block() {
  TransferSpec spec{make_shear_contact(1, 4.0, 0.5, 3.0), amplitude_bump(1, 1.0, 2.0)};
  CentralBlockSetup set;
  set.in_ref = make_phase_grid(make_grid(2, 0.8, 4), make_grid(2, 2.1, 6));
  set.out_ref = make_phase_grid(make_grid(2, 3.6, 6), make_grid(2, 6.4, 8));
  set.y_ref = make_grid(2, 5.0, 32);
  set.weight = make_weight_spec(1, 1, 16);
  double prev = std::numeric_limits<double>::infinity(), c0 = 0;
  bool monotone = true;
  std::string detail;
  for (int k : {6, 8, 12}) {
    set.k = k;
    auto r = central_block_audit(spec, set, 4.0);
    monotone = monotone && r.difference <= prev;
    prev = r.difference;
    c0 = std::max(c0, r.approx_norm / r.bound);
    detail += "k=" + std::to_string(k) + " diff " + fmt(r.difference) + " |L'| " + fmt(r.approx_norm) + "; ";
  }
  report(14, "central block", monotone && std::isfinite(c0), detail + "fitted C0 " + fmt(c0));
}

}  // namespace

int main() {
  const std::pair<const char*, void (*)()> steps[] = {
      {"identity", identity_and_isometry}, {"projection", projection_algebra}, {"lift", lift_and_tensor},
      {"norms", model_norms},              {"partitions", partitions},         {"sobolev", sobolev_equivalence},
      {"spectrum", toy_spectrum},          {"compactness", compactness},       {"normal form", normal_form},
      {"anchors", lambda_anchors},         {"central", central_block}};
  for (auto& [name, fn] : steps) {
    try {
      fn();
    } catch (const std::exception& e) {
      std::printf("[FAIL] %s raised: %s\n", name, e.what());
      ++failures;
    }
  }
  std::printf("%d failing\n", failures);
  return failures == 0 ? 0 : 1;
}
