#pragma once
// Fixed test-function families used by the identity, isometry and norm checks:
// Gaussians (shifted, stretched, modulated), Hermite functions of orders 1-3
// and compactly supported smooth bumps.

#include "fbi/cutoff.hpp"
#include "fbi/numerics.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace fbi {

struct TestFunction {
  std::string name;
  std::function<cd(const RVec&)> f;
};

// Normalized one-dimensional Hermite function of order n.
inline double hermite_function(int n, double t) {
  double h0 = std::pow(kPi, -0.25) * std::exp(-0.5 * t * t);
  if (n == 0) return h0;
  double hm = h0, h = std::sqrt(2.0) * t * h0;
  for (int k = 1; k < n; ++k) {
    double next = std::sqrt(2.0 / (k + 1)) * t * h - std::sqrt(double(k) / (k + 1)) * hm;
    hm = h;
    h = next;
  }
  return h;
}

// Compactly supported bump: 1 near c, 0 outside the ball of radius R.
inline double smooth_bump(const RVec& y, const RVec& c, double R) {
  return smooth_step(2.0 * (1.0 - (y - c).norm() / R));
}

// Twenty functions on R^D; all are concentrated in [-3.5, 3.5]^D.
inline std::vector<TestFunction> function_suite(int D) {
  std::vector<TestFunction> s;
  auto vec = [D](std::initializer_list<double> a) {
    RVec v = RVec::Zero(D);
    int i = 0;
    for (double x : a) {
      if (i < D) v[i] = x;
      ++i;
    }
    return v;
  };
  struct G { double c0, c1, width, k0, k1; };
  const G gs[] = {{0, 0, 1, 0, 0},     {1, -0.5, 1, 0, 0},   {0, 0, 0.6, 0, 0},   {-1, 1, 1.4, 0, 0},
                  {0, 0, 1, 2, -1},     {0.5, 0.5, 0.8, -3, 1.5}, {-0.8, 0, 1.2, 4, 0}, {0, 0.7, 0.7, 1, 3}};
  for (const auto& g : gs) {
    RVec c = vec({g.c0, g.c1}), k = vec({g.k0, g.k1});
    double w = g.width;
    s.push_back({"gauss", [c, k, w](const RVec& y) {
                   return std::exp(cd(-0.5 * (y - c).squaredNorm() / (w * w), k.dot(y)));
                 }});
  }
  for (int n = 1; n <= 3; ++n) {
    s.push_back({"hermite" + std::to_string(n), [n](const RVec& y) {
                   double v = hermite_function(n, y[0]);
                   for (Eigen::Index a = 1; a < y.size(); ++a) v *= hermite_function(0, y[a]);
                   return cd(v);
                 }});
    s.push_back({"hermite" + std::to_string(n) + "_mixed", [n](const RVec& y) {
                   double v = 1;
                   for (Eigen::Index a = 0; a < y.size(); ++a) v *= hermite_function(a == 0 ? n : 1, y[a]);
                   return cd(v);
                 }});
  }
  struct Bp { double c0, c1, R, k0; };
  const Bp bs[] = {{0, 0, 3, 0}, {0.5, -0.5, 2.5, 0}, {0, 0, 2, 0}, {-0.5, 0.5, 3, 2}, {0, 0, 3.5, -1.5}, {1, 0, 2.5, 3}};
  for (const auto& b : bs) {
    RVec c = vec({b.c0, b.c1});
    double R = b.R, k = b.k0;
    s.push_back({"bump", [c, R, k](const RVec& y) { return smooth_bump(y, c, R) * std::exp(cd(0, k * y[0])); }});
  }
  return s;
}

// Functions on the periodic partial space R/(2 L0) x R^{2d}: flow factors are
// trigonometric polynomials in y0 with frequencies on the DFT grid of step 1.
inline std::vector<TestFunction> partial_suite(int d) {
  std::vector<TestFunction> s;
  auto trans = function_suite(2 * d);
  const std::function<cd(double)> flows[] = {
      [](double) { return cd(1); },
      [](double t) { return std::exp(cd(0, t)); },
      [](double t) { return cd(std::cos(2 * t)); },
      [](double t) { return 1.0 + 0.5 * std::exp(cd(0, -3 * t)); },
  };
  for (std::size_t i = 0; i < trans.size(); ++i) {
    auto f = trans[i].f;
    auto g = flows[i % 4];
    s.push_back({trans[i].name, [f, g](const RVec& y) { return g(y[0]) * f(y.tail(y.size() - 1)); }});
  }
  return s;
}

}  // namespace fbi
