#include "fbi/contact_geometry.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace fbi;

namespace {

RVec vec(std::initializer_list<double> a) {
  RVec v(a.size());
  int i = 0;
  for (double x : a) v[i++] = x;
  return v;
}

ContactPoint random_point(std::mt19937_64& rng, int d, double scale = 2.0) {
  std::uniform_real_distribution<double> U(-scale, scale);
  RVec v(2 * d + 1);
  for (auto& x : v) x = U(rng);
  return ContactPoint::from_full(v);
}

RMat diag4() {
  RMat B(2, 2);
  B << 4, 0, 0, 0.25;
  return B;
}

}  // namespace

TEST(Alpha0, Examples) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    auto p = random_point(rng, 2);
    EXPECT_DOUBLE_EQ(alpha0_pair(vec({1, 0, 0, 0, 0}), p), 1.0);
  }
  ContactPoint o = ContactPoint::from_full(vec({0, 0, 0}));
  EXPECT_DOUBLE_EQ(alpha0_pair(vec({0.7, -3, 5}), o), 0.7);
  ContactPoint p = ContactPoint::from_full(vec({0, 1, 0}));
  EXPECT_DOUBLE_EQ(alpha0_pair(vec({0, 0, 1}), p), 1.0);
}

TEST(Alpha0Property, ContactPlaneIsKernel) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    auto p = random_point(rng, 2);
    RMat K = contact_plane(p);
    for (int i = 0; i < K.cols(); ++i) EXPECT_NEAR(alpha0_pair(K.col(i), p), 0.0, 1e-12);
    EXPECT_EQ(Eigen::FullPivLU<RMat>(K).rank(), 4);
  }
}

TEST(Affine, OriginImageAndPullback) {
  std::mt19937_64 rng(3);
  auto c = random_point(rng, 1);
  auto img = affine_apply({c}, ContactPoint::from_full(vec({0, 0, 0})));
  EXPECT_NEAR((img.full() - c.full()).norm(), 0.0, 1e-15);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 100; ++t) {
    auto A = AffineContactMap{random_point(rng, 2)};
    auto p = random_point(rng, 2);
    RVec v(5);
    for (auto& x : v) x = nd(rng);
    // (A*alpha0)_p(v) = alpha0_{A p}(DA v)
    double pulled = alpha0_pair(affine_jacobian(A) * v, affine_apply(A, p));
    EXPECT_NEAR(pulled, alpha0_pair(v, p), 1e-12);
  }
}

TEST(Affine, CotangentAction) {
  RVec x = vec({0.5, -1.5});
  RVec xi = vec({2.0, 0.3, 0.4});
  RVec out = cotangent_action(x, xi);
  // J(x) = (x-, -x+) = (-1.5, -0.5)
  EXPECT_NEAR((out - vec({2.0, 0.3 - 3.0, 0.4 - 1.0})).norm(), 0.0, 1e-15);
  // agrees with the transpose Jacobian of the translation by (0, x)
  AffineContactMap A{{0, x.head(1), x.tail(1)}};
  EXPECT_NEAR((affine_jacobian(A).transpose() * xi - out).norm(), 0.0, 1e-15);
}

TEST(AffineProperty, GroupLaw) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    AffineContactMap A{random_point(rng, 2)}, B{random_point(rng, 2)};
    auto p = random_point(rng, 2);
    auto lhs = affine_apply(A, affine_apply(B, p));
    auto rhs = affine_apply(affine_compose(A, B), p);
    EXPECT_NEAR((lhs.full() - rhs.full()).norm(), 0.0, 1e-12);
    auto back = affine_apply(affine_inverse(A), affine_apply(A, p));
    EXPECT_NEAR((back.full() - p.full()).norm(), 0.0, 1e-12);
  }
}

TEST(Cones, Membership) {
  EXPECT_TRUE(cone_member(vec({0, 1, 0}), Cone::plus, 1e-6));
  EXPECT_TRUE(cone_member(vec({0, 0, 0}), Cone::plus, 0.1));
  EXPECT_TRUE(cone_member(vec({0, 0, 0}), Cone::minus, 0.1));
  EXPECT_FALSE(cone_member(vec({0, 1, 0.2}), Cone::plus, 0.1));
  EXPECT_TRUE(cone_member(vec({0, 1, 0.2}), Cone::plus, 1.0 / 3));
  EXPECT_TRUE(cone_member(vec({1, 0.2}), Cone::plus, 1.0 / 3));  // transversal vector
  EXPECT_THROW(cone_member(vec({0, 1, 0}), Cone::plus, 0), std::invalid_argument);
}

TEST(CheckHyperbolic, LinearModel) {
  auto F = make_linear_contact(diag4(), 1.0);
  auto cert = check_hyperbolic(F, 1.25, 1.0 / 3);
  EXPECT_TRUE(cert.ok) << cert.violation;
  // with literal cones the transversal direction breaks invariance at this aperture
  auto narrow = check_hyperbolic(F, 4, 0.1);
  EXPECT_FALSE(narrow.ok);
}

TEST(CheckHyperbolic, IdentityAndRotationFail) {
  auto Id = make_linear_contact(RMat::Identity(2, 2));
  EXPECT_FALSE(check_hyperbolic(Id, 2).ok);
  RMat R(2, 2);
  R << 0, -1, 1, 0;
  auto rot = check_hyperbolic(make_linear_contact(R), 1.0, 1.0 / 3);
  EXPECT_FALSE(rot.ok);
  EXPECT_GT(rot.cone_ratio, 1.0);
}

TEST(SecondOrder, LinearMapHasZeroF) {
  auto F = make_linear_contact(diag4(), 1.0);
  auto a = second_order_audit(F);
  EXPECT_EQ(a.max_gradient, 0.0);
  EXPECT_EQ(a.max_hessian, 0.0);
}

TEST(SecondOrder, ShearExampleVanishesToSecondOrder) {
  auto F = make_shear_contact(1, 4.0, 0.5, 3.0);
  auto a = second_order_audit(F);
  EXPECT_LE(a.max_gradient, 1e-6);
  EXPECT_LE(a.max_hessian, 1e-6);
  EXPECT_GT(a.fitted_constant, 0.0);
  EXPECT_TRUE(std::isfinite(a.fitted_constant));
}

TEST(SecondOrder, NonContactPerturbationIsReported) {
  auto F = make_linear_contact(diag4(), 1.0);
  F.family = MapFamily::custom;
  F.f_override = [](const RVec& y) { return y[0] * y[0]; };
  auto a = second_order_audit(F);
  EXPECT_NEAR(a.max_hessian, 2.0, 1e-6);
  EXPECT_GT(contact_defect(F), 1e-3);
}

TEST(SecondOrder, RequiresFixedPointAtOrigin) {
  auto F = make_linear_contact(diag4(), 1.0, 0.5);
  EXPECT_THROW(second_order_audit(F), std::invalid_argument);
}

TEST(ContactMapProperty, ConstructorsPreserveForms) {
  for (int d : {1, 2}) {
    auto shear = make_shear_contact(d, 3.0, 0.4, 1.5);
    EXPECT_LE(symplectic_defect(shear), 1e-8);
    EXPECT_LE(contact_defect(shear), 1e-6);
  }
  auto lin = make_linear_contact(diag4(), 2.0, 0.3);
  EXPECT_LE(symplectic_defect(lin), 1e-8);
  EXPECT_LE(contact_defect(lin), 1e-12);
}

TEST(ContactMapProperty, DifferentialOfReconstructedF) {
  auto F = make_shear_contact(1, 4.0, 0.5, 3.0);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> U(-1, 1);
  const double h = 1e-4;
  for (int t = 0; t < 20; ++t) {
    RVec y = vec({U(rng), U(rng)});
    RVec fd(2);
    for (int i = 0; i < 2; ++i) {
      RVec e = RVec::Zero(2);
      e[i] = h;
      fd[i] = (F.f(y + e) - F.f(y - e)) / (2 * h);
    }
    EXPECT_LE((fd - F.df(y)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(ContactMap, RejectsNonSymplecticMatrix) {
  RMat B(2, 2);
  B << 2, 0, 0, 2;
  EXPECT_THROW(make_linear_contact(B), std::invalid_argument);
}

TEST(ContactMap, SerializationRoundTrip) {
  for (const auto& F : {make_linear_contact(diag4(), 2.0, 0.1), make_shear_contact(1, 4.0, 0.5, 3.0)}) {
    std::stringstream ss;
    write_contact_map(ss, F);
    auto G = read_contact_map(ss);
    EXPECT_EQ(G.d, F.d);
    EXPECT_EQ(G.family, F.family);
    RVec y = vec({0.3, -0.6});
    EXPECT_NEAR((G.F_dag(y) - F.F_dag(y)).norm(), 0.0, 1e-12);
    EXPECT_NEAR(G.f(y), F.f(y), 1e-12);
  }
  std::stringstream bad("d = 1\nfamily = linear\nmatrix = 1 2 3\n");
  EXPECT_THROW(read_contact_map(bad), std::invalid_argument);
}
