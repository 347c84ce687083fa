#pragma once

// Independent finite-difference oracles and small random generators shared by the tests.

#include <Eigen/Core>

#include <functional>
#include <random>
#include <vector>

namespace pmpsafe::test {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline Mat fd_jacobian(const std::function<Vec(const Vec &)> & fn, const Vec & x, double rel_step = 1e-6)
{
  const Vec f0 = fn(x);
  Mat J(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = rel_step * std::max(1.0, std::abs(x[j]));
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    J.col(j) = (fn(xp) - fn(xm)) / (2.0 * h);
  }
  return J;
}

inline Vec fd_gradient(const std::function<double(const Vec &)> & fn, const Vec & x, double rel_step = 1e-6)
{
  Vec g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = rel_step * std::max(1.0, std::abs(x[j]));
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    g[j] = (fn(xp) - fn(xm)) / (2.0 * h);
  }
  return g;
}

inline double rel_err(const Mat & a, const Mat & ref, double floor = 1e-8)
{
  return (a - ref).norm() / std::max(ref.norm(), floor);
}

inline Vec uniform_in_box(std::mt19937_64 & rng, const Vec & lo, const Vec & hi)
{
  Vec x(lo.size());
  for (Eigen::Index i = 0; i < lo.size(); ++i) {
    std::uniform_real_distribution<double> d(lo[i], hi[i]);
    x[i] = d(rng);
  }
  return x;
}

inline Vec vec(std::initializer_list<double> v)
{
  Vec x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x[i++] = d;
  return x;
}

/// Classic RK4 on xdot = f(x) + g(x) u with u held over the step.
inline Vec rk4(const std::function<Vec(const Vec &)> & f, const std::function<Mat(const Vec &)> & g, const Vec & x,
               const Vec & u, double h)
{
  auto rhs = [&](const Vec & z) -> Vec { return f(z) + g(z) * u; };
  const Vec k1 = rhs(x);
  const Vec k2 = rhs(x + 0.5 * h * k1);
  const Vec k3 = rhs(x + 0.5 * h * k2);
  const Vec k4 = rhs(x + h * k3);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace pmpsafe::test
