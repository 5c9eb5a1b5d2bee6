#pragma once
// Uniform midpoint grids, sampled fields, quadrature, tensor mode products
// and a power-iteration operator norm. Axis ordering is row-major: the first
// axis varies slowest.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fbi {

using cd = std::complex<double>;
using Vec = Eigen::VectorXcd;
using Mat = Eigen::MatrixXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;

inline constexpr double kPi = std::numbers::pi;

struct GridSpec {
  int dim = 1;
  double half_width = 1.0;
  int n = 4;

  double spacing() const { return 2.0 * half_width / n; }
  double weight() const { return std::pow(spacing(), dim); }
  std::size_t size() const {
    std::size_t s = 1;
    for (int i = 0; i < dim; ++i) s *= static_cast<std::size_t>(n);
    return s;
  }
  double node(int j) const { return -half_width + (j + 0.5) * spacing(); }
  std::vector<double> axis_nodes() const {
    std::vector<double> v(n);
    for (int j = 0; j < n; ++j) v[j] = node(j);
    return v;
  }
  RVec point(std::size_t flat) const {
    RVec p(dim);
    for (int a = dim - 1; a >= 0; --a) {
      p[a] = node(static_cast<int>(flat % n));
      flat /= n;
    }
    return p;
  }
  bool operator==(const GridSpec& o) const {
    return dim == o.dim && n == o.n && half_width == o.half_width;
  }
};

inline GridSpec make_grid(int dim, double half_width, int points_per_axis) {
  if (dim < 1) throw std::invalid_argument("grid dimension must be positive");
  if (!(half_width > 0) || !std::isfinite(half_width))
    throw std::invalid_argument("grid half width must be positive");
  if (points_per_axis < 4 || points_per_axis % 2 != 0)
    throw std::invalid_argument("points per axis must be even and at least 4, got " +
                                std::to_string(points_per_axis));
  return GridSpec{dim, half_width, points_per_axis};
}

// Frequency grid dual to a space grid: the full DFT band [-pi/h, pi/h) with
// spacing 2*pi/(n*h). On this grid the discrete exponential sums are exact.
inline GridSpec dual_grid(const GridSpec& space) {
  return make_grid(space.dim, kPi / space.spacing(), space.n);
}

struct Field {
  GridSpec grid;
  std::vector<cd> values;
};

inline Field sample(const std::function<cd(const RVec&)>& f, const GridSpec& grid) {
  Field out{grid, std::vector<cd>(grid.size())};
  for (std::size_t j = 0; j < out.values.size(); ++j) {
    cd v = f(grid.point(j));
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
      throw std::domain_error("sampled function is not finite at node " + std::to_string(j));
    out.values[j] = v;
  }
  return out;
}

inline cd quad_inner(const Field& u, const Field& v) {
  if (!(u.grid == v.grid)) throw std::invalid_argument("quad_inner: grid mismatch");
  cd s = 0;
  for (std::size_t j = 0; j < u.values.size(); ++j) s += std::conj(u.values[j]) * v.values[j];
  return s * u.grid.weight();
}

inline double l2_norm(const Field& u) { return std::sqrt(std::max(0.0, quad_inner(u, u).real())); }

inline double l2_norm(const std::vector<cd>& v, double weight) {
  double s = 0;
  for (auto& x : v) s += std::norm(x);
  return std::sqrt(s * weight);
}

// Apply M (rows x shape[axis]) along one axis of a row-major tensor.
inline std::vector<cd> mode_product(const Mat& M, const std::vector<cd>& in,
                                    std::vector<std::size_t>& shape, std::size_t axis) {
  if (static_cast<std::size_t>(M.cols()) != shape[axis])
    throw std::invalid_argument("mode_product: size mismatch");
  std::size_t pre = 1, post = 1;
  for (std::size_t a = 0; a < axis; ++a) pre *= shape[a];
  for (std::size_t a = axis + 1; a < shape.size(); ++a) post *= shape[a];
  const std::size_t n = shape[axis], m = M.rows();
  std::vector<cd> out(pre * m * post);
  for (std::size_t p = 0; p < pre; ++p) {
    Eigen::Map<const Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(
        in.data() + p * n * post, n, post);
    Eigen::Map<Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Y(
        out.data() + p * m * post, m, post);
    Y.noalias() = M * X;
  }
  shape[axis] = m;
  return out;
}

// Tensor product of per-axis operators applied to a row-major tensor.
inline std::vector<cd> apply_kron(const std::vector<const Mat*>& factors, std::vector<cd> v,
                                  std::vector<std::size_t> shape) {
  for (std::size_t a = 0; a < factors.size(); ++a) v = mode_product(*factors[a], v, shape, a);
  return v;
}

struct NormEstimate {
  double value = 0;
  int iterations = 0;
  bool converged = false;
};

// Largest singular value of A via power iteration on A*A, several random
// restarts, maximum reported. apply/adjoint act on plain coefficient vectors
// in the (unweighted) Euclidean inner product.
inline NormEstimate operator_norm(const std::function<Vec(const Vec&)>& apply,
                                  const std::function<Vec(const Vec&)>& adjoint, Eigen::Index n,
                                  std::uint64_t seed = 1, int iterations = 200, int restarts = 3,
                                  double tol = 1e-10) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  NormEstimate best;
  for (int r = 0; r < restarts; ++r) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = cd(nd(rng), nd(rng));
    v.normalize();
    double est = 0;
    bool conv = false;
    int it = 0;
    for (; it < iterations; ++it) {
      Vec w = adjoint(apply(v));
      double nw = w.norm();
      if (nw == 0) { est = 0; conv = true; break; }
      double next = std::sqrt(nw);
      v = w / nw;
      if (it > 2 && std::abs(next - est) <= tol * std::max(next, 1e-300)) { est = next; conv = true; break; }
      est = next;
    }
    if (est >= best.value) best = NormEstimate{est, it, conv};
  }
  return best;
}

inline NormEstimate matrix_norm(const Mat& A, std::uint64_t seed = 1, int iterations = 200,
                                int restarts = 3) {
  return operator_norm([&](const Vec& v) -> Vec { return A * v; },
                       [&](const Vec& v) -> Vec { return A.adjoint() * v; }, A.cols(), seed,
                       iterations, restarts);
}

}  // namespace fbi
