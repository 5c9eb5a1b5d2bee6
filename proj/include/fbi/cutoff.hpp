#pragma once
// The plateau bump chi and the bracket <s> built from it.

#include <cmath>

namespace fbi {

// g(t)/(g(t)+g(1-t)) with g(t)=exp(-1/t): 0 for t<=0, 1 for t>=1, smooth.
inline double smooth_step(double t) {
  if (t <= 0) return 0.0;
  if (t >= 1) return 1.0;
  double a = std::exp(-1.0 / t), b = std::exp(-1.0 / (1.0 - t));
  return a / (a + b);
}

// 1 on s <= 4/3, 0 on s >= 5/3, monotone in between.
inline double chi(double s) { return smooth_step((5.0 / 3.0 - s) * 3.0); }

inline double bracket(double s) {
  double a = std::abs(s), c = chi(a);
  return a * (1.0 - c) + c;
}

}  // namespace fbi
