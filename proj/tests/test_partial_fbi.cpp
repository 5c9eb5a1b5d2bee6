#include "fbi/partial_fbi.hpp"
#include "fbi/suite.hpp"

#include <gtest/gtest.h>

using namespace fbi;

namespace {

RVec vec(std::initializer_list<double> a) {
  RVec v(a.size());
  int i = 0;
  for (double x : a) v[i++] = x;
  return v;
}

double relative_gap(const PartialPhaseField& a, const PartialPhaseField& b) {
  double num = 0, den = 0;
  for (int m = 0; m < a.grid.n0(); ++m) {
    const double w = a.grid.slice_weight(m);
    for (std::size_t j = 0; j < a.slices[m].size(); ++j) {
      num += w * std::norm(a.slices[m][j] - b.slices[m][j]);
      den += w * std::norm(a.slices[m][j]);
    }
  }
  return std::sqrt(num / den);
}

PartialPhaseField random_phase(const PartialGrid& g, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  PartialPhaseField v{g, std::vector<std::vector<cd>>(g.n0())};
  for (int m = 0; m < g.n0(); ++m) {
    v.slices[m].resize(g.slices[m].size());
    for (auto& x : v.slices[m]) x = {nd(rng), nd(rng)};
  }
  return v;
}

struct PartialCase {
  PartialSpace space = make_partial_space(1, kPi, 8, 5, 24);
  PartialGrid grid = make_partial_grid_exact(space, 0.5, 5.0);
};

}  // namespace

TEST(PartialPacket, ValueAtOrigin) {
  auto phi = partial_packet({vec({0, 0}), 0.0, vec({0, 0})});
  const double a2 = 1.0 / (2 * kPi) / std::sqrt(kPi);
  EXPECT_NEAR(std::abs(phi(vec({0, 0, 0})) - a2 / std::sqrt(2 * kPi)), 0.0, 1e-12);
}

TEST(PartialPacket, TransversalWidthShrinksWithFrequency) {
  auto g = make_grid(2, 8.0, 160);
  auto moment = [&](double xi0) {
    auto phi = partial_packet({vec({0.4, -0.2}), xi0, vec({1, 2})});
    double m2 = 0, mass = 0;
    for (std::size_t j = 0; j < g.size(); ++j) {
      RVec yd = g.point(j);
      RVec y(3);
      y << 0.3, yd;
      double w = std::norm(phi(y));
      m2 += w * (yd - vec({0.4, -0.2})).squaredNorm();
      mass += w;
    }
    return m2 / mass;
  };
  const double unit = moment(0);
  for (double xi0 : {2.0, 5.0, 9.0}) EXPECT_NEAR(moment(xi0) * bracket(xi0) / unit, 1.0, 1e-8);
}

TEST(PartialPacket, FlowFactorHasConstantModulus) {
  auto phi = partial_packet({vec({0.1, 0.2}), 3.5, vec({-1, 0.5})});
  const double ref = std::abs(phi(vec({0, 0.3, -0.1})));
  for (double y0 : {-2.0, -0.7, 1.1, 3.0}) EXPECT_NEAR(std::abs(phi(vec({y0, 0.3, -0.1}))), ref, 1e-14);
}

TEST(PartialPacket, RejectsMismatchedDimensions) {
  EXPECT_THROW(partial_packet({vec({0}), 0, vec({0})}), std::invalid_argument);
}

TEST(PfbiForward, ZeroMapsToZero) {
  PartialCase s;
  PartialSpaceField z{s.space, std::vector<cd>(s.space.size())};
  auto v = pfbi_forward(z, s.grid);
  for (auto& sl : v.slices)
    for (auto x : sl) EXPECT_EQ(x, cd(0));
  auto back = pfbi_adjoint(v, s.space);
  for (auto x : back.values) EXPECT_EQ(x, cd(0));
}

TEST(PfbiForward, NyquistGuard) {
  auto sp = make_partial_space(1, kPi, 8, 5, 8);
  auto ref = make_phase_grid(make_grid(2, 3, 8), make_grid(2, 20, 8));
  EXPECT_THROW(make_partial_grid_scaled(sp, ref), std::domain_error);
}

TEST(PfbiForward, RejectsForeignGrid) {
  PartialCase s;
  auto other = make_partial_grid_exact(make_partial_space(1, kPi, 4, 5, 24));
  auto u = sample([](const RVec&) { return cd(0); }, s.space);
  EXPECT_THROW(pfbi_forward(u, other), std::invalid_argument);
}

TEST(PfbiForward, FactorizationMatchesDirectQuadrature) {
  PartialCase s;
  auto suite = partial_suite(1);
  for (int i : {0, 5, 9, 14}) {
    auto u = sample(suite[i].f, s.space);
    EXPECT_LE(relative_gap(pfbi_forward(u, s.grid), pfbi_forward_factorized(u, s.grid)), 1e-5)
        << suite[i].name;
  }
}

TEST(PfbiProperty, IsometryAndInversionAcrossResolutions) {
  auto suite = partial_suite(1);
  for (int n : {20, 24, 32}) {
    auto sp = make_partial_space(1, kPi, 8, 5, n);
    auto g = make_partial_grid_exact(sp, 0.5, 5.0);
    for (auto& tf : suite) {
      auto u = sample(tf.f, sp);
      auto v = pfbi_forward(u, g);
      const double nu = l2_norm(u);
      EXPECT_LE(std::abs(l2_norm(v) - nu) / nu, 1e-5) << tf.name << " n=" << n;
      auto back = pfbi_adjoint(v, sp);
      double err = 0;
      for (std::size_t j = 0; j < u.values.size(); ++j) err += std::norm(back.values[j] - u.values[j]);
      EXPECT_LE(std::sqrt(err * sp.weight()) / nu, 1e-5) << tf.name << " n=" << n;
    }
  }
}

TEST(PfbiProperty, ProjectionIsIdempotentAndSelfAdjoint) {
  PartialCase s;
  std::mt19937_64 rng(17);
  auto v = random_phase(s.grid, rng), w = random_phase(s.grid, rng);
  auto pv = apply_partial_projection(v);
  auto ppv = apply_partial_projection(pv);
  EXPECT_LE(relative_gap(pv, ppv), 1e-5);
  auto pw = apply_partial_projection(w);
  cd a = partial_inner(pv, w), b = partial_inner(v, pw);
  EXPECT_LE(std::abs(a - b) / (l2_norm(v) * l2_norm(w)), 1e-5);
}

TEST(PfbiProperty, SingleFlowModeStaysOnItsSlice) {
  PartialCase s;
  for (int k : {-2, 0, 3}) {
    auto u = sample(
        [k](const RVec& y) {
          return std::exp(cd(-0.5 * (y[1] * y[1] + y[2] * y[2]), k * y[0] + 0.5 * y[2]));
        },
        s.space);
    auto v = pfbi_forward(u, s.grid);
    double on = 0, off = 0;
    for (int m = 0; m < s.grid.n0(); ++m) {
      double mass = std::pow(l2_norm(v.slices[m], s.grid.slice_weight(m)), 2);
      (std::abs(s.grid.frequency(m) - k) < 1e-12 ? on : off) += mass;
    }
    EXPECT_GT(on, 0.0);
    EXPECT_LE(off / (on + off), 1e-8) << "mode " << k;
  }
}
