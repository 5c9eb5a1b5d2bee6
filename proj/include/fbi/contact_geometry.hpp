#pragma once
// Standard contact form on R^{2d+1}, the affine group A_c preserving it, and
// contact maps in the normal form F(x0, y) = (x0 + f(y), F_dag(y)).
// Coordinates are ordered (x0, x+, x-); transversal vectors are (x+, x-).

#include "fbi/cones.hpp"
#include "fbi/fbi_core.hpp"

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss.hpp>

#include <cmath>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace fbi {

struct ContactPoint {
  double x0 = 0;
  RVec xp, xm;

  int d() const { return static_cast<int>(xp.size()); }
  RVec dag() const {
    RVec v(2 * d());
    v << xp, xm;
    return v;
  }
  RVec full() const {
    RVec v(2 * d() + 1);
    v << x0, xp, xm;
    return v;
  }
  static ContactPoint from_full(const RVec& v) {
    if (v.size() % 2 != 1) throw std::invalid_argument("contact point needs odd length 2d+1");
    const Eigen::Index d = (v.size() - 1) / 2;
    return {v[0], v.segment(1, d), v.segment(1 + d, d)};
  }
  static ContactPoint from_dag(double x0, const RVec& y) {
    const Eigen::Index d = y.size() / 2;
    return {x0, y.head(d), y.tail(d)};
  }
};

// J(x+, x-) = (x-, -x+)
inline RVec apply_J(const RVec& y) {
  const Eigen::Index d = y.size() / 2;
  RVec out(y.size());
  out << y.tail(d), -y.head(d);
  return out;
}

// Coefficients of alpha_dag at y: (-y-, y+) = -J y.
inline RVec alpha_dag(const RVec& y) { return -apply_J(y); }

// Coefficients of alpha_0 at p: (1, -x-, x+).
inline RVec alpha0_coeffs(const ContactPoint& p) {
  RVec a(2 * p.d() + 1);
  a << 1.0, -p.xm, p.xp;
  return a;
}

inline double alpha0_pair(const RVec& v, const ContactPoint& at) {
  RVec a = alpha0_coeffs(at);
  if (v.size() != a.size()) throw std::invalid_argument("alpha0_pair: dimension mismatch");
  return a.dot(v);
}

// Basis of ker alpha_0 at p: e_i - a_i e_0 for i = 1..2d.
inline RMat contact_plane(const ContactPoint& p) {
  RVec a = alpha0_coeffs(p);
  const Eigen::Index n = a.size();
  RMat K = RMat::Zero(n, n - 1);
  for (Eigen::Index i = 1; i < n; ++i) {
    K(i, i - 1) = 1.0;
    K(0, i - 1) = -a[i];
  }
  return K;
}

struct AffineContactMap {
  ContactPoint c;
};

inline ContactPoint affine_apply(const AffineContactMap& A, const ContactPoint& p) {
  const auto& c = A.c;
  if (c.d() != p.d()) throw std::invalid_argument("affine_apply: dimension mismatch");
  return {p.x0 + c.x0 - c.xp.dot(p.xm) + c.xm.dot(p.xp), p.xp + c.xp, p.xm + c.xm};
}

// A_c o A_c'
inline AffineContactMap affine_compose(const AffineContactMap& A, const AffineContactMap& B) {
  const auto& c = A.c;
  const auto& e = B.c;
  return {{c.x0 + e.x0 - c.xp.dot(e.xm) + c.xm.dot(e.xp), c.xp + e.xp, c.xm + e.xm}};
}

inline AffineContactMap affine_inverse(const AffineContactMap& A) {
  // A_c o A_{-c} shifts x0 by -c+.(-c-) + c-.(-c+) = 0
  return {{-A.c.x0, -A.c.xp, -A.c.xm}};
}

inline RMat affine_jacobian(const AffineContactMap& A) {
  const int d = A.c.d();
  RMat M = RMat::Identity(2 * d + 1, 2 * d + 1);
  M.block(0, 1, 1, d) = A.c.xm.transpose();
  M.block(0, 1 + d, 1, d) = -A.c.xp.transpose();
  return M;
}

// Transpose of DA at the translation by (0, x_dag) acting on a covector:
// (xi0, xi_dag) -> (xi0, xi_dag + xi0 J(x_dag)).
inline RVec cotangent_action(const RVec& x_dag, const RVec& xi) {
  if (xi.size() != x_dag.size() + 1) throw std::invalid_argument("cotangent_action: dimension mismatch");
  RVec out = xi;
  out.tail(x_dag.size()) += xi[0] * apply_J(x_dag);
  return out;
}

// xi_dag + xi0 J(x_dag), i.e. the transversal part of xi - xi0 alpha_0(x_dag).
inline RVec twisted_dag(const RVec& x_dag, const RVec& xi) {
  return xi.tail(x_dag.size()) + xi[0] * apply_J(x_dag);
}

enum class MapFamily { linear, shear, custom };

struct ContactMap {
  int d = 1;
  double box = 1.0;
  double f_base = 0;  // value of f at the origin of R^{2d}
  MapFamily family = MapFamily::linear;
  RMat B;             // linear family
  double lambda = 1, epsilon = 0;  // shear family
  std::function<RVec(const RVec&)> F_dag;
  std::function<RMat(const RVec&)> DF_dag;
  // replaces the reconstructed f; used for deliberately non-contact maps
  std::function<double(const RVec&)> f_override;

  // beta = alpha_dag - F_dag^* alpha_dag, the differential of f
  RVec df(const RVec& y) const { return alpha_dag(y) - DF_dag(y).transpose() * alpha_dag(F_dag(y)); }

  double f(const RVec& y) const {
    if (f_override) return f_override(y);
    auto integrand = [&](double t) { return df(t * y).dot(y); };
    return f_base + boost::math::quadrature::gauss<double, 20>::integrate(integrand, 0.0, 1.0);
  }

  ContactPoint apply(const ContactPoint& p) const {
    RVec y = p.dag();
    return ContactPoint::from_dag(p.x0 + f(y), F_dag(y));
  }

  RMat jacobian(const ContactPoint& p) const {
    RVec y = p.dag();
    const int n = 2 * d;
    RMat M = RMat::Zero(n + 1, n + 1);
    M(0, 0) = 1;
    if (f_override) {
      const double h = 1e-6;
      for (int i = 0; i < n; ++i) {
        RVec e = RVec::Zero(n);
        e[i] = h;
        M(0, 1 + i) = (f_override(y + e) - f_override(y - e)) / (2 * h);
      }
    } else {
      M.block(0, 1, 1, n) = df(y).transpose();
    }
    M.block(1, 1, n, n) = DF_dag(y);
    return M;
  }
};

inline ContactMap make_linear_contact(const RMat& B, double box = 1.0, double f_base = 0) {
  check_symplectic(B, 1e-8);
  ContactMap F;
  F.d = static_cast<int>(B.rows() / 2);
  F.box = box;
  F.f_base = f_base;
  F.family = MapFamily::linear;
  F.B = B;
  F.F_dag = [B](const RVec& y) -> RVec { return B * y; };
  F.DF_dag = [B](const RVec&) -> RMat { return B; };
  return F;
}

// F_dag(x+, x-) = (lambda x+ + eps (x-)^2, x- / lambda), componentwise squares.
inline ContactMap make_shear_contact(int d, double lambda, double eps, double box = 1.0,
                                     double f_base = 0) {
  if (d < 1 || !(lambda > 0)) throw std::invalid_argument("shear family needs d >= 1, lambda > 0");
  ContactMap F;
  F.d = d;
  F.box = box;
  F.f_base = f_base;
  F.family = MapFamily::shear;
  F.lambda = lambda;
  F.epsilon = eps;
  F.F_dag = [d, lambda, eps](const RVec& y) -> RVec {
    RVec out(2 * d);
    out.head(d) = lambda * y.head(d) + eps * y.tail(d).cwiseAbs2();
    out.tail(d) = y.tail(d) / lambda;
    return out;
  };
  F.DF_dag = [d, lambda, eps](const RVec& y) -> RMat {
    RMat M = RMat::Zero(2 * d, 2 * d);
    M.topLeftCorner(d, d) = lambda * RMat::Identity(d, d);
    M.topRightCorner(d, d) = (2 * eps * y.tail(d)).asDiagonal();
    M.bottomRightCorner(d, d) = RMat::Identity(d, d) / lambda;
    return M;
  };
  return F;
}

inline double symplectic_defect(const ContactMap& F, int samples = 64, std::uint64_t seed = 11) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-F.box, F.box);
  RMat J = standard_symplectic(F.d);
  double worst = 0;
  for (int s = 0; s < samples; ++s) {
    RVec y(2 * F.d);
    for (auto& v : y) v = U(rng);
    RMat D = F.DF_dag(y);
    worst = std::max(worst, (D.transpose() * J * D - J).norm());
  }
  return worst;
}

// Pullback of alpha_0 by F compared with alpha_0 at sampled points.
inline double contact_defect(const ContactMap& F, int samples = 64, std::uint64_t seed = 13) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-F.box, F.box);
  double worst = 0;
  for (int s = 0; s < samples; ++s) {
    RVec v(2 * F.d + 1);
    for (auto& c : v) c = U(rng);
    auto p = ContactPoint::from_full(v);
    RVec pulled = F.jacobian(p).transpose() * alpha0_coeffs(F.apply(p));
    worst = std::max(worst, (pulled - alpha0_coeffs(p)).cwiseAbs().maxCoeff());
  }
  return worst;
}

// Samples unit vectors outside C_-(theta) at grid points of the box and checks
// DF v in C_+(theta), |DF pi v| >= lambda |pi v|, and the reverse for DF^{-1}.
inline ConeCertificate check_hyperbolic(const ContactMap& F, double lambda, double theta = 0.1,
                                        int points_per_axis = 3, int directions = 64,
                                        std::uint64_t seed = 17) {
  const int n = 2 * F.d;
  ConeCertificate total;
  total.expansion = std::numeric_limits<double>::infinity();
  GridSpec g{n, F.box, points_per_axis};
  for (std::size_t j = 0; j < g.size(); ++j) {
    RVec y = g.point(j);
    RMat D = F.DF_dag(y);
    if (std::abs(D.determinant()) < 1e-12) {
      std::ostringstream os;
      os << "non-invertible Jacobian at sample point " << y.transpose();
      throw std::domain_error(os.str());
    }
    // the x0 row of DF does not enter the cones, which ignore the flow coordinate
    auto c = check_linear_hyperbolic(D, lambda, theta, directions, seed + j);
    total.cone_ratio = std::max(total.cone_ratio, c.cone_ratio);
    total.expansion = std::min(total.expansion, c.expansion);
    total.samples += c.samples;
  }
  std::ostringstream os;
  if (total.cone_ratio > 1.0) os << "cone condition violated (worst ratio " << total.cone_ratio << "); ";
  if (total.expansion < lambda) os << "expansion " << total.expansion << " below " << lambda << "; ";
  total.violation = os.str();
  total.ok = total.violation.empty();
  return total;
}

struct SecondOrderAudit {
  double max_gradient = 0;
  double max_hessian = 0;
  double fitted_constant = 0;  // distortion constant fitted over the samples
  std::size_t samples = 0;
};

inline SecondOrderAudit second_order_audit(const ContactMap& F, double step = 1e-3,
                                           int samples = 400, std::uint64_t seed = 19) {
  const int n = 2 * F.d;
  ContactPoint o{0, RVec::Zero(F.d), RVec::Zero(F.d)};
  if (F.apply(o).full().norm() > 1e-12)
    throw std::invalid_argument("second_order_audit: origin is not a fixed point; conjugate by A_c first");
  SecondOrderAudit r;
  auto f = [&](const RVec& y) { return F.f(y); };
  const double h = step;
  RVec z = RVec::Zero(n);
  for (int i = 0; i < n; ++i) {
    RVec e = RVec::Zero(n);
    e[i] = h;
    r.max_gradient = std::max(r.max_gradient, std::abs((f(z + e) - f(z - e)) / (2 * h)));
    for (int j = 0; j < n; ++j) {
      RVec e2 = RVec::Zero(n);
      e2[j] = h;
      double hij = (f(e + e2) - f(e - e2) - f(-e + e2) + f(-e - e2)) / (4 * h * h);
      r.max_hessian = std::max(r.max_hessian, std::abs(hij));
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  const double rad = 0.5 * F.box;
  for (int s = 0; s < samples; ++s) {
    RVec y(n + 1), y2(n + 1), xi(n + 1);
    for (int i = 0; i <= n; ++i) {
      y[i] = rad * U(rng);
      y2[i] = rad * U(rng);
      xi[i] = 10 * U(rng);
    }
    auto p = ContactPoint::from_full(y), p2 = ContactPoint::from_full(y2);
    double lhs = (F.jacobian(p).transpose() * xi - F.jacobian(p2).transpose() * xi).norm();
    double dy = (p.dag() - p2.dag()).norm();
    double twist = (xi - xi[0] * alpha0_coeffs(F.apply(p))).norm();
    double rhs = std::abs(xi[0]) * dy * dy + twist * dy;
    if (rhs > 1e-12) r.fitted_constant = std::max(r.fitted_constant, lhs / rhs);
    ++r.samples;
  }
  return r;
}

// Text form: one "key = value" per line, '#' comments.
inline void write_contact_map(std::ostream& os, const ContactMap& F) {
  os << "d = " << F.d << "\nbox = " << F.box << "\nf_base = " << F.f_base << "\n";
  switch (F.family) {
    case MapFamily::linear: {
      os << "family = linear\nmatrix =";
      for (Eigen::Index i = 0; i < F.B.rows(); ++i)
        for (Eigen::Index j = 0; j < F.B.cols(); ++j) os << ' ' << F.B(i, j);
      os << "\n";
      break;
    }
    case MapFamily::shear:
      os << "family = shear\nlambda = " << F.lambda << "\nepsilon = " << F.epsilon << "\n";
      break;
    case MapFamily::custom:
      throw std::invalid_argument("custom contact maps cannot be serialized");
  }
}

inline ContactMap read_contact_map(std::istream& is) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto eq = line.find('=');
    auto trim = [](std::string s) {
      auto a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos)
      throw std::invalid_argument("contact map line " + std::to_string(lineno) + ": expected key = value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto need = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw std::invalid_argument("contact map: missing key '" + k + "'");
    return it->second;
  };
  int d = std::stoi(need("d"));
  double box = kv.count("box") ? std::stod(kv["box"]) : 1.0;
  double f0 = kv.count("f_base") ? std::stod(kv["f_base"]) : 0.0;
  std::string fam = need("family");
  if (fam == "linear") {
    std::istringstream ms(need("matrix"));
    RMat B(2 * d, 2 * d);
    for (int i = 0; i < 2 * d; ++i)
      for (int j = 0; j < 2 * d; ++j)
        if (!(ms >> B(i, j))) throw std::invalid_argument("contact map: matrix needs (2d)^2 entries");
    return make_linear_contact(B, box, f0);
  }
  if (fam == "shear")
    return make_shear_contact(d, std::stod(need("lambda")), std::stod(need("epsilon")), box, f0);
  throw std::invalid_argument("contact map: unknown family '" + fam + "'");
}

}  // namespace fbi
