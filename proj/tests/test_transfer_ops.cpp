#include "fbi/suite.hpp"
#include "fbi/transfer_ops.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace fbi;

namespace {

RVec vec(std::initializer_list<double> a) {
  RVec v(a.size());
  int i = 0;
  for (double x : a) v[i++] = x;
  return v;
}

RMat diag(double lambda) {
  RMat B = RMat::Zero(2, 2);
  B(0, 0) = lambda;
  B(1, 1) = 1 / lambda;
  return B;
}

Amplitude unit_amplitude(int d) {
  std::vector<std::function<double(double)>> prof(2 * d, [](double) { return 1.0; });
  return make_separable_amplitude(1.0, prof, std::numeric_limits<double>::infinity(), "one");
}

double gap_norm(const PartialPhaseField& a, const PartialPhaseField& b) {
  double s = 0;
  for (int m = 0; m < a.grid.n0(); ++m) {
    double t = 0;
    for (std::size_t j = 0; j < a.slices[m].size(); ++j) t += std::norm(a.slices[m][j] - b.slices[m][j]);
    s += t * a.grid.slice_weight(m);
  }
  return std::sqrt(s);
}

double max_abs(const std::vector<cd>& v) {
  double m = 0;
  for (auto x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

TEST(TransferApply, ZeroAmplitude) {
  auto sp = make_partial_space(1, kPi, 4, 3, 24);
  TransferSpec spec{make_linear_contact(diag(2), 3), amplitude_zero()};
  auto out = transfer_apply(spec, [](const RVec&) { return cd(1); }, sp);
  EXPECT_EQ(max_abs(out.values), 0.0);
}

TEST(TransferApply, IdentityMapReturnsInput) {
  auto sp = make_partial_space(1, kPi, 4, 3, 24);
  TransferSpec spec{make_linear_contact(RMat::Identity(2, 2), 10), unit_amplitude(1)};
  auto f = partial_suite(1)[4].f;
  auto u = sample(f, sp);
  auto analytic = transfer_apply(spec, f, sp);
  for (std::size_t j = 0; j < u.values.size(); ++j) EXPECT_EQ(analytic.values[j], u.values[j]);
  // cubic interpolation at the nodes themselves is exact; outermost rows lack a stencil
  TransferSpec inner{make_linear_contact(RMat::Identity(2, 2), 2), amplitude_bump(1, 1.0, 2.0)};
  auto v = transfer_apply(inner, u);
  auto ref = transfer_apply(inner, f, sp);
  for (std::size_t j = 0; j < u.values.size(); ++j) EXPECT_NEAR(std::abs(v.values[j] - ref.values[j]), 0.0, 1e-14);
}

TEST(TransferApply, EscapingImageIsAnError) {
  auto sp = make_partial_space(1, kPi, 4, 3, 24);
  TransferSpec spec{make_linear_contact(diag(4), 3), amplitude_bump(1, 1.0, 2.0)};
  auto u = sample([](const RVec&) { return cd(1); }, sp);
  EXPECT_THROW(transfer_apply(spec, u), std::domain_error);
}

TEST(TransferApplyProperty, ContractionLinearityAndPointwiseBound) {
  auto sp = make_partial_space(1, kPi, 4, 6, 96);
  TransferSpec spec{make_linear_contact(diag(2), 3), amplitude_bump(1, 0.8, 1.5)};
  // det DF = 1 for a symplectic linear part, so the bound is sup|g| ||u||
  auto suite = partial_suite(1);
  for (auto& tf : suite) {
    auto Lu = transfer_apply(spec, tf.f, sp);
    EXPECT_LE(l2_norm(Lu), 0.8 * l2_norm(sample(tf.f, sp)) * (1 + 1e-6)) << tf.name;
  }
  auto f1 = suite[1].f, f2 = suite[9].f;
  const cd a(0.3, -1.2);
  auto sum = transfer_apply(spec, [&](const RVec& y) { return f1(y) + a * f2(y); }, sp);
  auto L1 = transfer_apply(spec, f1, sp), L2 = transfer_apply(spec, f2, sp);
  for (std::size_t j = 0; j < sum.values.size(); ++j) {
    EXPECT_NEAR(std::abs(sum.values[j] - L1.values[j] - a * L2.values[j]), 0.0, 1e-13);
    EXPECT_LE(std::abs(L1.values[j]), 0.8 * std::abs(f1(apply_full(spec.map, sp.point(j)))) + 1e-15);
  }
}

TEST(LiftKernel, ZeroAmplitudeGivesZeroMatrix) {
  auto sp = make_partial_space(1, kPi, 2, 3, 12);
  auto g = make_partial_grid_scaled(sp, make_phase_grid(make_grid(2, 2, 4), make_grid(2, 2, 4)));
  TransferSpec spec{make_linear_contact(diag(2), 3), amplitude_zero()};
  auto M = lift_kernel(spec, g, g);
  EXPECT_EQ(M.to_dense().cwiseAbs().maxCoeff(), 0.0);
}

TEST(LiftKernel, KernelFormsAgree) {
  auto sp = make_partial_space(1, kPi, 8, 3, 24);
  auto bump = amplitude_bump(1, 1.0, 2.0);
  auto g = amplitude_custom([bump](const RVec& y) { return bump(y) * std::exp(cd(0.4 * std::cos(y[0]), 0)); },
                            false, 2.0);
  TransferSpec spec{make_shear_contact(1, 2.0, 0.5, 3.0), g};
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> U(-1, 1);
  std::uniform_int_distribution<int> M(0, sp.n0 - 1);
  double scale = 0, worst = 0;
  std::vector<std::pair<cd, cd>> vals;
  for (int s = 0; s < 40; ++s) {
    RVec x = vec({1.5 * U(rng), 1.5 * U(rng)}), z = vec({1.5 * U(rng), 1.5 * U(rng)});
    RVec xi = vec({2 * U(rng), 2 * U(rng)}), eta = vec({2 * U(rng), 2 * U(rng)});
    double xi0 = sp.frequency(M(rng)), eta0 = sp.frequency(M(rng));
    cd a = kernel_entry_integrated(spec, sp, sp.trans, x, xi0, xi, z, eta0, eta);
    cd b = kernel_entry_direct(spec, sp, sp.trans, {x, xi0, xi}, {z, eta0, eta});
    vals.emplace_back(a, b);
    scale = std::max(scale, std::abs(b));
  }
  for (auto& [a, b] : vals) worst = std::max(worst, std::abs(a - b) / scale);
  EXPECT_GT(scale, 0.0);
  EXPECT_LE(worst, 1e-5);
}

TEST(LiftKernel, CommutesWithTransform) {
  auto sp = make_partial_space(1, kPi, 2, 5, 24);
  auto g = make_partial_grid_exact(sp, 0.5, 5.0);
  TransferSpec spec{make_linear_contact(diag(2), 3), amplitude_bump(1, 1.0, 2.0)};
  auto u = [](const RVec& y) { return std::exp(cd(-0.5 * (y[1] * y[1] + y[2] * y[2]), 0.3 * y[1])); };
  auto M = lift_kernel(spec, g, g);
  ASSERT_EQ(M.note, "separable");
  auto lhs = unflatten(M.apply(flatten(pfbi_forward(sample(u, sp), g))), g);
  auto rhs = pfbi_forward(transfer_apply(spec, u, sp), g);
  EXPECT_LE(gap_norm(lhs, rhs), 1e-4);
}

TEST(LiftKernelProperty, IdentityLiftIsTheProjection) {
  auto sp = make_partial_space(1, kPi, 2, 3, 12);
  auto g = make_partial_grid_exact(sp, 0.5, 3.0);
  TransferSpec spec{make_linear_contact(RMat::Identity(2, 2), 100), unit_amplitude(1)};
  auto M = lift_kernel(spec, g, g);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  PartialPhaseField v{g, std::vector<std::vector<cd>>(g.n0())};
  for (int m = 0; m < g.n0(); ++m) {
    v.slices[m].resize(g.slices[m].size());
    for (auto& x : v.slices[m]) x = {nd(rng), nd(rng)};
  }
  auto lhs = unflatten(M.apply(flatten(v)), g);
  auto rhs = apply_partial_projection(v);
  EXPECT_LE(gap_norm(lhs, rhs) / l2_norm(v), 1e-5);
}

TEST(KernelBound, DiagonalPairHasUnitKappa) {
  TransferSpec spec{make_linear_contact(diag(4), 3), amplitude_bump(1, 1.0, 2.0)};
  RVec z = vec({0.8, -0.1}), x = spec.map.B.inverse() * z;
  RVec eta = vec({7, 1.5, -2});
  RVec y0 = RVec::Zero(3);
  RVec xi = spec.map.jacobian(ContactPoint::from_full(y0)).transpose() * eta;
  EXPECT_NEAR(kappa(spec, x, xi, z, eta, x), 1.0, 1e-12);
}

TEST(KernelBound, ZeroAmplitudeAndValidation) {
  auto sp = make_partial_space(1, kPi, 8, 3, 12);
  TransferSpec spec{make_linear_contact(diag(4), 3), amplitude_zero()};
  auto a = kernel_bound_audit(spec, sp, sp.trans, 2, 8, 3);
  EXPECT_EQ(a.fitted_constant, 0.0);
  EXPECT_THROW(kernel_bound_audit(spec, sp, sp.trans, 0, 8), std::invalid_argument);
}

TEST(KernelBound, FrequencyMismatchDecaysFast) {
  auto sp = make_partial_space(1, kPi, 256, 3, 24);
  auto bump = amplitude_bump(1, 1.0, 2.0);
  auto g = amplitude_custom([bump](const RVec& y) { return bump(y) * std::exp(std::cos(y[0])); }, false, 2.0);
  TransferSpec spec{make_linear_contact(diag(2), 3), g};
  RVec x = vec({0.2, 0.1}), xi = vec({0.4, 0}), z = vec({0.4, 0.05}), eta = vec({0.2, 0});
  cd near = kernel_entry_integrated(spec, sp, sp.trans, x, 10, xi, z, 10, eta);
  cd far = kernel_entry_integrated(spec, sp, sp.trans, x, 110, xi, z, 10, eta);
  ASSERT_GT(std::abs(near), 0.0);
  for (double rho : {2.0, 4.0}) EXPECT_LE(std::abs(far) / std::abs(near), std::pow(100.0, -rho));
}

TEST(KernelBound, FittedConstantOnShear) {
  auto sp = make_partial_space(1, kPi, 16, 3, 16);
  TransferSpec spec{make_shear_contact(1, 2.0, 0.5, 3.0), amplitude_bump(1, 1.0, 2.0)};
  auto a = kernel_bound_audit(spec, sp, sp.trans, 2, 16, 4);
  std::cout << "fitted C_rho = " << a.fitted_constant << "\n";
  EXPECT_TRUE(std::isfinite(a.fitted_constant));
  EXPECT_GT(a.fitted_constant, 0.0);
}

namespace {

struct SmallLift {
  PartialGrid grid =
      make_partial_grid_scaled(make_partial_space(1, kPi, 2, 3, 24),
                               make_phase_grid(make_grid(2, 2.4, 6), make_grid(2, 2.4, 6)));
  TransferSpec spec{make_linear_contact(diag(4), 3), amplitude_bump(1, 1.0, 0.75)};
  OperatorMatrix M = lift_kernel(spec, grid, grid);
};

}  // namespace

TEST(Decompose, PartsSumToLift) {
  SmallLift s;
  auto dec = decompose(s.M, make_weight_spec(1, 4, 4));
  Mat full = s.M.to_dense();
  EXPECT_LE((dec.cpt.to_dense() + dec.ctr.to_dense() + dec.hyp.to_dense() - full).cwiseAbs().maxCoeff(), 1e-12);
  auto w = make_weight_spec(1, 4, 4);
  RVec total = phase_values(s.grid, [&](const RVec& x, const RVec& xi) {
    auto c = cutoffs(x, xi, w);
    return c.X0 + c.Xctr * (1 - c.X0) + c.Xhyp;
  });
  EXPECT_LE((total.array() - 1).abs().maxCoeff(), 1e-14);
}

TEST(Decompose, LargeCutoffLeavesOnlyCompactPart) {
  SmallLift s;
  auto dec = decompose(s.M, make_weight_spec(1, 4, 1e6));
  EXPECT_EQ(dec.ctr.to_dense().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(dec.hyp.to_dense().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Decompose, CompactPartSingularValuesDecay) {
  SmallLift s;
  auto sv = singular_values(decompose(s.M, make_weight_spec(1, 4, 4)).cpt);
  ASSERT_GT(sv.size(), 10u);
  EXPECT_TRUE(std::is_sorted(sv.rbegin(), sv.rend()));
  std::cout << "sigma_k+1/sigma_k:";
  for (int k = 0; k < 10; ++k) std::cout << ' ' << sv[k + 1] / sv[k];
  std::cout << "\n";
  EXPECT_LT(sv.back() / sv.front(), 1e-3);
}

TEST(LambdaDelta, LinearModel) {
  auto sp = make_partial_space(1, kPi, 2, 3, 48);
  TransferSpec spec{make_linear_contact(diag(4), 3), amplitude_bump(1, 1.0, 0.75)};
  auto ld = lambda_delta(spec, sp, 4, 4);
  EXPECT_NEAR(ld.Lambda, 0.5, 1e-12);
  EXPECT_NEAR(ld.Delta, 2.0, 1e-12);
  EXPECT_NEAR(ld.bound, 0.5, 1e-12);
  TransferSpec scaled{spec.map, amplitude_bump(1, -3.0, 0.75)};
  auto ls = lambda_delta(scaled, sp, 4, 4);
  EXPECT_NEAR(ls.Lambda, 3 * ld.Lambda, 1e-12);
  EXPECT_NEAR(ls.sup_g * ls.Delta, 3 * ld.sup_g * ld.Delta, 1e-12);
}

TEST(LambdaDelta, SingularRestrictionIsAnError) {
  auto sp = make_partial_space(1, kPi, 2, 3, 12);
  TransferSpec spec{make_linear_contact(diag(4), 3), amplitude_bump(1, 1.0, 0.75)};
  spec.map.DF_dag = [](const RVec&) { return RMat::Zero(2, 2).eval(); };
  EXPECT_THROW(lambda_delta(spec, sp, 4, 4), std::domain_error);
}

TEST(LambdaDelta, GeodesicFlowAnchor) {
  double gl = global_lambda([](double) { return 0.0; }, [](double t) { return t; }, {1.0});
  EXPECT_NEAR(gl, std::exp(-0.5), 1e-15);
  EXPECT_THROW(global_lambda([](double) { return 0.0; }, [](double t) { return t; }, {}), std::invalid_argument);
}

TEST(Export, OperatorAndSidecar) {
  SmallLift s;
  auto dir = std::filesystem::temp_directory_path() / "fbi_export_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "lift.bin").string();
  export_operator(s.M, path, "linear lambda=4");
  EXPECT_EQ(std::filesystem::file_size(path), s.M.rows() * s.M.cols() * 16);
  nlohmann::json side;
  std::ifstream(path + ".json") >> side;
  EXPECT_EQ(side["rows"].get<std::size_t>(), s.M.rows());
  EXPECT_EQ(side["assembly"], "separable");
  auto sv = singular_values(s.M);
  write_singular_values_csv(sv, (dir / "sv.csv").string());
  std::ifstream in(dir / "sv.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "index,singular_value");
  std::filesystem::remove_all(dir);
}
