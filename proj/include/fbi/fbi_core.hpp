#pragma once
// Gaussian wave-packet transform T on R^D, its adjoint, the phase-space
// projection P = T T*, the projection P_omega for a compatible symplectic form,
// linear lifts d(B) P L~_B P and the coordinate change Z.
//
// Phase-space layout: for each axis a the pair (x_a, xi_a) forms a "plane"
// index ix*n_xi + ixi; the flat index is row-major over the D planes. With
// this layout T is a tensor product of per-axis matrices.

#include "fbi/cones.hpp"
#include "fbi/numerics.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fbi {

inline constexpr std::size_t kDenseLimit = 20000;

struct PhaseSpacePoint {
  RVec x, xi;
};

inline double packet_constant(int dim) {
  return std::pow(2.0 * kPi, -0.5 * dim) * std::pow(kPi, -0.25 * dim);
}

struct WavePacketParams {
  int dim = 1;
  double normalization = packet_constant(1);
  static WavePacketParams make(int dim) {
    if (dim < 1) throw std::invalid_argument("packet dimension must be positive");
    return {dim, packet_constant(dim)};
  }
};

// One-dimensional factor with inverse width s: s^{1/4} a_1 e^{i xi (y - x/2) - s (y-x)^2 / 2}.
inline cd packet_factor(double x, double xi, double y, double s = 1.0) {
  static const double a1 = packet_constant(1);
  double dy = y - x;
  return std::pow(s, 0.25) * a1 * std::exp(cd(-0.5 * s * dy * dy, xi * (y - 0.5 * x)));
}

inline cd packet_value(const PhaseSpacePoint& p, const RVec& y) {
  cd v = 1.0;
  for (Eigen::Index a = 0; a < y.size(); ++a) v *= packet_factor(p.x[a], p.xi[a], y[a]);
  return v;
}

inline std::function<cd(const RVec&)> wave_packet(const PhaseSpacePoint& p) {
  if (p.x.size() != p.xi.size()) throw std::invalid_argument("packet: x and xi differ in length");
  if (!p.x.allFinite() || !p.xi.allFinite()) throw std::invalid_argument("packet: non-finite center");
  return [p](const RVec& y) { return packet_value(p, y); };
}

struct PhaseGrid {
  GridSpec x, xi;

  int dim() const { return x.dim; }
  std::size_t plane() const { return static_cast<std::size_t>(x.n) * xi.n; }
  std::size_t size() const {
    std::size_t s = 1;
    for (int a = 0; a < dim(); ++a) s *= plane();
    return s;
  }
  double weight() const { return x.weight() * xi.weight(); }
  std::vector<std::size_t> shape() const { return std::vector<std::size_t>(dim(), plane()); }
  std::vector<std::pair<double, double>> plane_nodes() const {
    std::vector<std::pair<double, double>> v;
    v.reserve(plane());
    for (int i = 0; i < x.n; ++i)
      for (int j = 0; j < xi.n; ++j) v.emplace_back(x.node(i), xi.node(j));
    return v;
  }
  PhaseSpacePoint point(std::size_t flat) const {
    PhaseSpacePoint p{RVec(dim()), RVec(dim())};
    const std::size_t m = plane();
    for (int a = dim() - 1; a >= 0; --a) {
      std::size_t q = flat % m;
      flat /= m;
      p.x[a] = x.node(static_cast<int>(q / xi.n));
      p.xi[a] = xi.node(static_cast<int>(q % xi.n));
    }
    return p;
  }
  bool operator==(const PhaseGrid& o) const { return x == o.x && xi == o.xi; }
};

inline PhaseGrid make_phase_grid(const GridSpec& x, const GridSpec& xi) {
  if (x.dim != xi.dim) throw std::invalid_argument("phase grid: x and xi dimensions differ");
  return {x, xi};
}

// Frequencies default to the full dual band of the space grid.
inline PhaseGrid phase_grid_for(const GridSpec& space, double x_half_width, int x_points) {
  return {make_grid(space.dim, x_half_width, x_points), dual_grid(space)};
}

struct PhaseField {
  PhaseGrid grid;
  std::vector<cd> values;
};

inline double l2_norm(const PhaseField& v) { return l2_norm(v.values, v.grid.weight()); }

inline PhaseField sample_phase(const std::function<cd(const PhaseSpacePoint&)>& f,
                               const PhaseGrid& g) {
  PhaseField out{g, std::vector<cd>(g.size())};
  for (std::size_t j = 0; j < out.values.size(); ++j) out.values[j] = f(g.point(j));
  return out;
}

inline double max_frequency(const GridSpec& xi) { return xi.half_width - 0.5 * xi.spacing(); }

inline void check_nyquist(double spacing, double max_freq, const std::string& where) {
  if (spacing * max_freq >= kPi) {
    std::ostringstream os;
    os << where << ": grid spacing " << spacing << " too coarse for frequency " << max_freq
       << " (spacing*|xi| must stay below pi)";
    throw std::domain_error(os.str());
  }
}

// rows: (x, xi) nodes; cols: space nodes; entry conj(packet) * h.
inline Mat axis_analysis(const std::vector<std::pair<double, double>>& nodes, const GridSpec& space,
                         double s = 1.0) {
  const auto y = GridSpec{1, space.half_width, space.n}.axis_nodes();
  const double h = space.spacing();
  Mat A(nodes.size(), y.size());
  for (std::size_t p = 0; p < nodes.size(); ++p)
    for (std::size_t j = 0; j < y.size(); ++j)
      A(p, j) = std::conj(packet_factor(nodes[p].first, nodes[p].second, y[j], s)) * h;
  return A;
}

// rows: space nodes; cols: (x, xi) nodes; entry packet * (hx * hxi).
inline Mat axis_synthesis(const std::vector<std::pair<double, double>>& nodes, const GridSpec& space,
                          double cell, double s = 1.0) {
  const auto y = GridSpec{1, space.half_width, space.n}.axis_nodes();
  Mat S(y.size(), nodes.size());
  for (std::size_t p = 0; p < nodes.size(); ++p)
    for (std::size_t j = 0; j < y.size(); ++j)
      S(j, p) = packet_factor(nodes[p].first, nodes[p].second, y[j], s) * cell;
  return S;
}

inline std::vector<std::pair<double, double>> mapped_nodes(const PhaseGrid& g, double b) {
  auto v = g.plane_nodes();
  for (auto& [x, xi] : v) {
    x *= b;
    xi /= b;
  }
  return v;
}

namespace detail {
inline void check_dims(const GridSpec& space, const PhaseGrid& g) {
  if (space.dim != g.dim()) throw std::invalid_argument("space and phase grid dimensions differ");
  check_nyquist(space.spacing(), max_frequency(g.xi), "fbi transform");
}
inline std::vector<std::size_t> space_shape(const GridSpec& s) {
  return std::vector<std::size_t>(s.dim, static_cast<std::size_t>(s.n));
}
}  // namespace detail

// Tu evaluated at per-axis node lists (one list per axis, tensor layout).
inline std::vector<cd> fbi_forward_nodes(const Field& u,
                                         const std::vector<std::vector<std::pair<double, double>>>& axes) {
  std::vector<Mat> mats;
  mats.reserve(axes.size());
  for (auto& nodes : axes) mats.push_back(axis_analysis(nodes, u.grid));
  std::vector<const Mat*> f;
  for (auto& m : mats) f.push_back(&m);
  return apply_kron(f, u.values, detail::space_shape(u.grid));
}

inline PhaseField fbi_forward(const Field& u, const PhaseGrid& g) {
  detail::check_dims(u.grid, g);
  Mat A = axis_analysis(g.plane_nodes(), u.grid);
  std::vector<const Mat*> f(g.dim(), &A);
  return {g, apply_kron(f, u.values, detail::space_shape(u.grid))};
}

inline Field fbi_adjoint(const PhaseField& v, const GridSpec& space) {
  detail::check_dims(space, v.grid);
  if (v.values.size() != v.grid.size()) throw std::invalid_argument("phase field size mismatch");
  Mat S = axis_synthesis(v.grid.plane_nodes(), space, v.grid.x.spacing() * v.grid.xi.spacing());
  std::vector<const Mat*> f(space.dim, &S);
  return {space, apply_kron(f, v.values, v.grid.shape())};
}

// Direct quadrature at arbitrary phase points.
inline std::vector<cd> fbi_forward_at(const Field& u, const std::vector<PhaseSpacePoint>& pts) {
  std::vector<cd> out(pts.size());
  const double w = u.grid.weight();
  for (std::size_t p = 0; p < pts.size(); ++p) {
    check_nyquist(u.grid.spacing(), pts[p].xi.cwiseAbs().maxCoeff(), "fbi_forward_at");
    cd s = 0;
    for (std::size_t j = 0; j < u.values.size(); ++j)
      s += std::conj(packet_value(pts[p], u.grid.point(j))) * u.values[j];
    out[p] = s * w;
  }
  return out;
}

inline PhaseField apply_projection(const PhaseField& v, const GridSpec& space) {
  return fbi_forward(fbi_adjoint(v, space), v.grid);
}

// Per-axis factor of the discretized P; the full matrix is its D-fold Kronecker power.
inline Mat projection_axis_matrix(const PhaseGrid& g, const GridSpec& space) {
  detail::check_dims(space, g);
  auto nodes = g.plane_nodes();
  return axis_analysis(nodes, space) * axis_synthesis(nodes, space, g.x.spacing() * g.xi.spacing());
}

inline Mat projection_matrix(const PhaseGrid& g, const GridSpec& space) {
  if (g.size() > kDenseLimit)
    throw std::length_error("projection matrix exceeds dense limit; use apply_projection");
  Mat P1 = projection_axis_matrix(g, space);
  Mat P = P1;
  for (int a = 1; a < g.dim(); ++a) P = Eigen::kroneckerProduct(P, P1).eval();
  return P;
}

inline double symplectic_pairing(const RVec& x, const RVec& xi, const RVec& x2, const RVec& xi2) {
  return x.dot(xi2) - xi.dot(x2);
}

// Closed form of <phi_p, phi_q> for the packets above: constant (2 pi)^{-D} on
// R^D and phase +i Omega/2 with Omega(p, q) = x.xi' - xi.x'.
inline cd projection_kernel(const PhaseSpacePoint& p, const PhaseSpacePoint& q) {
  if (p.x.size() != q.x.size()) throw std::invalid_argument("projection_kernel: dimension mismatch");
  const double D = static_cast<double>(p.x.size());
  double om = symplectic_pairing(p.x, p.xi, q.x, q.xi);
  double r2 = (p.x - q.x).squaredNorm() + (p.xi - q.xi).squaredNorm();
  return std::pow(2.0 * kPi, -D) * std::exp(cd(-0.25 * r2, 0.5 * om));
}

// Standard form on R^{2m} = R^m (+) R^m: omega(z, z') = z^T J z' with J(a, b) = (b, -a).
inline RMat standard_symplectic(int m) {
  RMat J = RMat::Zero(2 * m, 2 * m);
  J.topRightCorner(m, m).setIdentity();
  J.bottomLeftCorner(m, m) = -RMat::Identity(m, m);
  return J;
}

inline void check_compatible(const RMat& omega) {
  if (omega.rows() != omega.cols() || omega.rows() % 2 != 0)
    throw std::invalid_argument("symplectic form must be square of even size");
  if ((omega + omega.transpose()).norm() > 1e-12)
    throw std::invalid_argument("symplectic form must be antisymmetric");
  double defect = (omega * omega + RMat::Identity(omega.rows(), omega.rows())).norm();
  if (defect > 1e-8) {
    std::ostringstream os;
    os << "symplectic form not compatible with the Euclidean norm: |J^2+I| = " << defect;
    throw std::invalid_argument(os.str());
  }
}

inline cd p_omega_kernel(const RVec& z, const RVec& z2, const RMat& omega) {
  const double m = 0.5 * static_cast<double>(z.size());
  double om = z.dot(omega * z2);
  return std::pow(2.0 * kPi, -m) * std::exp(cd(-0.25 * (z - z2).squaredNorm(), -0.5 * om));
}

// Dense matrix of P_omega on a grid of E, quadrature weight included.
inline Mat p_omega_matrix(const GridSpec& grid, const RMat& omega) {
  check_compatible(omega);
  if (omega.rows() != grid.dim) throw std::invalid_argument("P_omega: form and grid dimension differ");
  if (grid.size() > kDenseLimit) throw std::length_error("P_omega matrix exceeds dense limit");
  const std::size_t n = grid.size();
  std::vector<RVec> pts(n);
  for (std::size_t i = 0; i < n; ++i) pts[i] = grid.point(i);
  Mat K(n, n);
  const double w = grid.weight();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) K(i, j) = p_omega_kernel(pts[i], pts[j], omega) * w;
  return K;
}

inline Field apply_p_omega(const Field& v, const RMat& omega) {
  Mat K = p_omega_matrix(v.grid, omega);
  Eigen::Map<const Vec> x(v.values.data(), v.values.size());
  Vec y = K * x;
  return {v.grid, std::vector<cd>(y.data(), y.data() + y.size())};
}

inline double det_factor(const RMat& B) {
  if (B.rows() != B.cols()) throw std::invalid_argument("det_factor: matrix must be square");
  RMat M = 0.5 * (RMat::Identity(B.rows(), B.cols()) + B.transpose() * B);
  return std::sqrt(M.determinant());
}

struct LinearHyperbolicMap {
  RMat matrix;
  double lambda = 1.0;
};

struct ConeCertificate {
  bool ok = false;
  double cone_ratio = 0;      // worst |image component off the target cone axis| / aperture
  double expansion = 0;       // worst |Bv|/|v| (and |B^{-1}v|/|v|) over the sampled set
  std::size_t samples = 0;
  std::string violation;
};

// Samples unit vectors outside C*_-(theta) (resp. C*_+(theta)) and checks that
// B (resp. B^{-1}) maps them into the opposite cone expanding by lambda. Besides
// random directions, vectors on the cone boundaries are included since the
// worst case sits there.
inline ConeCertificate check_linear_hyperbolic(const RMat& B, double lambda, double theta = 0.1,
                                               int samples = 4096, std::uint64_t seed = 7) {
  if (B.rows() != B.cols() || B.rows() % 2 != 0)
    throw std::invalid_argument("linear hyperbolic map must act on an even-dimensional space");
  const Eigen::Index n = B.rows(), d = n / 2;
  Eigen::FullPivLU<RMat> lu(B);
  if (!lu.isInvertible()) throw std::domain_error("linear map is not invertible");
  RMat Binv = lu.inverse();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  ConeCertificate c;
  c.cone_ratio = 0;
  c.expansion = std::numeric_limits<double>::infinity();
  auto test = [&](const RVec& v, const RMat& M, Cone from_excluded, Cone target) {
    if (cone_member(v, from_excluded, theta)) return;
    RVec w = M * v;
    double np, nm;
    split_pm(w, np, nm);
    double ratio = target == Cone::plus ? nm / std::max(theta * np, 1e-300)
                                        : np / std::max(theta * nm, 1e-300);
    c.cone_ratio = std::max(c.cone_ratio, ratio);
    c.expansion = std::min(c.expansion, w.norm() / v.norm());
    ++c.samples;
  };
  for (int s = 0; s < samples; ++s) {
    RVec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = nd(rng);
    RVec bp = v, bm = v;
    // push onto the cone boundaries
    double np, nm;
    split_pm(v, np, nm);
    if (nm > 0 && np > 0) {
      bp.head(d) *= (1.0 + 1e-9) * theta * nm / np;
      bm.tail(d) *= (1.0 + 1e-9) * theta * np / nm;
    }
    for (const RVec* u : {&v, &bp, &bm}) {
      RVec un = *u / u->norm();
      test(un, B, Cone::minus, Cone::plus);
      test(un, Binv, Cone::plus, Cone::minus);
    }
  }
  std::ostringstream os;
  if (c.cone_ratio > 1.0) os << "cone condition violated (worst ratio " << c.cone_ratio << "); ";
  if (c.expansion < lambda) os << "expansion " << c.expansion << " below " << lambda << "; ";
  c.violation = os.str();
  c.ok = c.violation.empty();
  return c;
}

inline LinearHyperbolicMap make_linear_hyperbolic(const RMat& B, double lambda, double theta = 0.1) {
  auto cert = check_linear_hyperbolic(B, lambda, theta);
  if (!cert.ok) throw std::invalid_argument("linear map not hyperbolic: " + cert.violation);
  return {B, lambda};
}

inline bool is_diagonal(const RMat& B) {
  return (B - RMat(B.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0;
}

// d(B) P L~_B P w with L~_B w(x, xi) = w(Bx, B^{-T} xi). Diagonal B uses the
// separable path; otherwise the mapped transform is evaluated point by point.
inline PhaseField lift_linear(const RMat& B, const PhaseField& w, const GridSpec& space,
                              double edge_tolerance = 1e-4) {
  const PhaseGrid& g = w.grid;
  if (B.rows() != g.dim() || B.cols() != g.dim())
    throw std::invalid_argument("lift_linear: matrix size does not match phase grid");
  Eigen::FullPivLU<RMat> lu(B);
  if (!lu.isInvertible()) throw std::domain_error("lift_linear: matrix not invertible");
  Field u = fbi_adjoint(w, space);
  std::vector<cd> mapped;
  if (is_diagonal(B)) {
    std::vector<std::vector<std::pair<double, double>>> axes;
    for (int a = 0; a < g.dim(); ++a) {
      double b = B(a, a);
      auto nodes = mapped_nodes(g, b);
      for (auto& nd : nodes) check_nyquist(space.spacing(), std::abs(nd.second), "lift_linear");
      axes.push_back(std::move(nodes));
    }
    mapped = fbi_forward_nodes(u, axes);
  } else {
    if (g.size() * space.size() > 4e8) throw std::length_error("lift_linear: direct path too large");
    RMat BinvT = lu.inverse().transpose();
    std::vector<PhaseSpacePoint> pts(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) {
      auto p = g.point(j);
      pts[j] = {B * p.x, BinvT * p.xi};
    }
    mapped = fbi_forward_at(u, pts);
  }
  PhaseField out = apply_projection(PhaseField{g, std::move(mapped)}, space);
  const double dB = det_factor(B);
  for (auto& v : out.values) v *= dB;

  // mass on the outer layer of the phase box signals that the image escapes it
  double total = 0, edge = 0;
  for (std::size_t j = 0; j < out.values.size(); ++j) {
    double m = std::norm(out.values[j]);
    total += m;
    auto p = g.point(j);
    double lim_x = g.x.half_width - g.x.spacing(), lim_xi = g.xi.half_width - g.xi.spacing();
    if (p.x.cwiseAbs().maxCoeff() > lim_x || p.xi.cwiseAbs().maxCoeff() > lim_xi) edge += m;
  }
  if (total > 0 && std::sqrt(edge / total) > edge_tolerance) {
    std::ostringstream os;
    os << "lift_linear: image escapes the phase grid (relative edge mass "
       << std::sqrt(edge / total) << ")";
    throw std::domain_error(os.str());
  }
  return out;
}

// Z(x, xi) = ((xi + Jx)/sqrt2, (xi - Jx)/sqrt2) on R^{2d} (+) R^{2d}.
inline std::pair<RVec, RVec> z_change(const PhaseSpacePoint& p) {
  if (p.x.size() % 2 != 0 || p.x.size() != p.xi.size())
    throw std::invalid_argument("z_change needs x, xi in R^{2d}");
  RMat J = standard_symplectic(static_cast<int>(p.x.size() / 2));
  RVec Jx = J * p.x;
  const double r = 1.0 / std::sqrt(2.0);
  return {r * (p.xi + Jx), r * (p.xi - Jx)};
}

inline PhaseSpacePoint z_change_inverse(const RVec& z, const RVec& w) {
  RMat J = standard_symplectic(static_cast<int>(z.size() / 2));
  const double r = 1.0 / std::sqrt(2.0);
  // Jx = (z - w)/sqrt2 and J^{-1} = -J
  return {-J * (r * (z - w)), r * (z + w)};
}

inline void check_symplectic(const RMat& B, double tol = 1e-10) {
  if (B.rows() != B.cols() || B.rows() % 2 != 0)
    throw std::invalid_argument("symplectic check needs an even square matrix");
  RMat J = standard_symplectic(static_cast<int>(B.rows() / 2));
  double defect = (B.transpose() * J * B - J).norm();
  if (defect > tol) {
    std::ostringstream os;
    os << "matrix does not preserve the symplectic form (defect " << defect << ")";
    throw std::invalid_argument(os.str());
  }
}

// Kernel of P_0 L_0 P_0, L_0 u(z) = u(A z): the z' integral is Gaussian and
// done in closed form, so no quadrature on the stretched points A z'.
inline cd composed_projection_kernel(const RVec& z, const RVec& z2, const RMat& A, const RMat& J,
                                     const Eigen::LLT<RMat>& Q, double sqrt_det_q) {
  const Eigen::Index m = z.size();
  Vec b = 0.5 * z.cast<cd>() - cd(0, 0.5) * (J.transpose() * z).cast<cd>() +
          0.5 * (A.transpose() * z2).cast<cd>() - cd(0, 0.5) * (A.transpose() * (J * z2)).cast<cd>();
  Vec qb(m);
  qb.real() = Q.solve(RVec(b.real()));
  qb.imag() = Q.solve(RVec(b.imag()));
  cd e = -0.25 * (z.squaredNorm() + z2.squaredNorm()) + 0.5 * (b.transpose() * qb)(0, 0);
  return std::pow(2 * kPi, -0.5 * static_cast<double>(m)) / sqrt_det_q * std::exp(e);
}

// d(B)^{1/2} P_0 L_0 P_0 on a grid of R^{2d}, with L_0 u(z) = u(B^{-T} z) and
// P_0 the projection for the standard form. Optional weight V acts as the
// similarity V M V^{-1}, i.e. the operator on L^2(V).
class L0Hat {
 public:
  L0Hat(const RMat& B, const GridSpec& grid) : B_(B), grid_(grid) {
    check_symplectic(B);
    if (B.rows() != grid.dim) throw std::invalid_argument("L0Hat: matrix and grid dimension differ");
    if (grid.size() > kDenseLimit) throw std::length_error("L0Hat: grid exceeds dense limit");
    J_ = standard_symplectic(grid.dim / 2);
    A_ = B.inverse().transpose();
    RMat Q = 0.5 * (RMat::Identity(grid.dim, grid.dim) + A_.transpose() * A_);
    Q_.compute(Q);
    sqrt_det_q_ = std::sqrt(Q.determinant());
    sqrt_d_ = std::sqrt(det_factor(B));
    const std::size_t n = grid.size();
    pts_.resize(n);
    for (std::size_t i = 0; i < n; ++i) pts_[i] = grid.point(i);
    const double w = grid.weight() * sqrt_d_;
    K_.resize(n, n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < n; ++i) K_(i, j) = kernel(pts_[i], pts_[j]) * w;
    weight_ = RVec::Ones(n);
  }

  void set_weight(const RVec& v) {
    if (v.size() != static_cast<Eigen::Index>(grid_.size()) || (v.array() <= 0).any())
      throw std::invalid_argument("L0Hat: weight must be positive on every node");
    weight_ = v;
  }

  const GridSpec& grid() const { return grid_; }
  const std::vector<RVec>& points() const { return pts_; }
  cd kernel(const RVec& z, const RVec& z2) const { return composed_projection_kernel(z, z2, A_, J_, Q_, sqrt_det_q_); }

  Vec apply(const Vec& v) const {
    Vec u = v.cwiseQuotient(weight_.cast<cd>());
    return (K_ * u).cwiseProduct(weight_.cast<cd>());
  }
  Vec adjoint(const Vec& v) const {
    Vec u = v.cwiseProduct(weight_.cast<cd>());
    return (K_.adjoint() * u).cwiseQuotient(weight_.cast<cd>());
  }
  // Unweighted operator evaluated at arbitrary targets.
  std::vector<cd> apply_at(const Vec& v, const std::vector<RVec>& targets) const {
    const double w = grid_.weight() * sqrt_d_;
    std::vector<cd> out(targets.size());
    for (std::size_t t = 0; t < targets.size(); ++t) {
      cd s = 0;
      for (std::size_t j = 0; j < pts_.size(); ++j) s += kernel(targets[t], pts_[j]) * v[j];
      out[t] = s * w;
    }
    return out;
  }
  NormEstimate norm(std::uint64_t seed = 1, int iterations = 200, int restarts = 3) const {
    return operator_norm([this](const Vec& v) { return apply(v); },
                         [this](const Vec& v) { return adjoint(v); },
                         static_cast<Eigen::Index>(grid_.size()), seed, iterations, restarts);
  }

 private:
  RMat B_, A_, J_;
  Eigen::LLT<RMat> Q_;
  double sqrt_det_q_ = 1;
  GridSpec grid_;
  double sqrt_d_ = 1;
  std::vector<RVec> pts_;
  Mat K_;
  RVec weight_;
};

inline Field l0_hat(const RMat& B, const Field& u) {
  L0Hat op(B, u.grid);
  Eigen::Map<const Vec> x(u.values.data(), u.values.size());
  Vec y = op.apply(x);
  return {u.grid, std::vector<cd>(y.data(), y.data() + y.size())};
}

struct TensorDefect {
  double relative = 0;
  std::size_t samples = 0;
};

// Compares d(B) P L~_B P (V1 (x) V2 o Z) on a phase grid of R^{2D} with
// conj(L0 conj V1)(z) * (L0 V2)(w) at sampled phase nodes, where (z, w) = Z(x, xi).
// Under Z the kernel of P splits as conj K_0(z, z') * K_0(w, w').
inline TensorDefect l0_tensor_defect(const RMat& B, const std::function<cd(const RVec&)>& V1,
                                     const std::function<cd(const RVec&)>& V2,
                                     const PhaseGrid& phase, const GridSpec& space,
                                     const GridSpec& zgrid, std::size_t samples,
                                     std::uint64_t seed = 3) {
  auto field = sample_phase(
      [&](const PhaseSpacePoint& p) {
        auto [z, w] = z_change(p);
        return V1(z) * V2(w);
      },
      phase);
  PhaseField lhs = lift_linear(B, field, space);

  L0Hat op(B, zgrid);
  const std::size_t nz = zgrid.size();
  Vec v1c(nz), v2(nz);
  for (std::size_t i = 0; i < nz; ++i) {
    v1c[i] = std::conj(V1(op.points()[i]));
    v2[i] = V2(op.points()[i]);
  }
  // sample among nodes carrying non-negligible mass
  double mx = 0;
  for (auto& v : lhs.values) mx = std::max(mx, std::abs(v));
  std::vector<std::size_t> cand;
  for (std::size_t j = 0; j < lhs.values.size(); ++j)
    if (std::abs(lhs.values[j]) > 1e-3 * mx) cand.push_back(j);
  std::mt19937_64 rng(seed);
  std::shuffle(cand.begin(), cand.end(), rng);
  if (cand.size() > samples) cand.resize(samples);
  std::vector<RVec> zs, ws;
  for (auto j : cand) {
    auto [z, w] = z_change(phase.point(j));
    zs.push_back(z);
    ws.push_back(w);
  }
  auto a = op.apply_at(v1c, zs);
  auto b = op.apply_at(v2, ws);
  double num = 0, den = 0;
  for (std::size_t t = 0; t < cand.size(); ++t) {
    cd rhs = std::conj(a[t]) * b[t];
    num += std::norm(lhs.values[cand[t]] - rhs);
    den += std::norm(rhs);
  }
  return {den > 0 ? std::sqrt(num / den) : std::sqrt(num), cand.size()};
}

}  // namespace fbi
