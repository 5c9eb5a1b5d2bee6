#pragma once
// Cones around the x+ and x- coordinate planes. A vector of odd length 2d+1
// carries the flow coordinate first; even length 2d means a transversal vector.

#include <Eigen/Dense>

#include <stdexcept>

namespace fbi {

enum class Cone { plus, minus };

struct ConeSpec {
  double theta = 0.1;
};

inline void split_pm(const Eigen::VectorXd& v, double& np, double& nm) {
  const Eigen::Index len = v.size();
  const Eigen::Index off = len % 2;
  const Eigen::Index d = (len - off) / 2;
  if (d < 1) throw std::invalid_argument("cone test needs at least one transversal pair");
  np = v.segment(off, d).norm();
  nm = v.segment(off + d, d).norm();
}

inline bool cone_member(const Eigen::VectorXd& v, Cone which, double theta) {
  if (!(theta > 0)) throw std::invalid_argument("cone aperture must be positive");
  double np, nm;
  split_pm(v, np, nm);
  return which == Cone::plus ? nm <= theta * np : np <= theta * nm;
}

}  // namespace fbi
