#pragma once

/**
 * @file
 * @brief Forward-mode dual numbers with a fixed number of tangent directions.
 *
 * Used to differentiate the vehicle dynamics exactly (to rounding) without
 * hand-written Jacobians. Only the operations the models need are provided.
 */

#include <array>
#include <cmath>

namespace pmpsafe {

template<int N>
struct Dual
{
  double v{0};
  std::array<double, N> d{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit promotion of constants

  static Dual variable(double value, int direction)
  {
    Dual r(value);
    r.d[direction] = 1.0;
    return r;
  }

  Dual & operator+=(const Dual & o)
  {
    v += o.v;
    for (int i = 0; i < N; ++i) d[i] += o.d[i];
    return *this;
  }
  Dual & operator-=(const Dual & o)
  {
    v -= o.v;
    for (int i = 0; i < N; ++i) d[i] -= o.d[i];
    return *this;
  }
  Dual & operator*=(const Dual & o)
  {
    for (int i = 0; i < N; ++i) d[i] = d[i] * o.v + v * o.d[i];
    v *= o.v;
    return *this;
  }
  Dual & operator/=(const Dual & o)
  {
    const double inv = 1.0 / o.v;
    for (int i = 0; i < N; ++i) d[i] = (d[i] - v * inv * o.d[i]) * inv;
    v *= inv;
    return *this;
  }
};

namespace detail {
// chain rule: value f, derivative df applied to every tangent
template<int N>
Dual<N> apply(const Dual<N> & x, double f, double df)
{
  Dual<N> r(f);
  for (int i = 0; i < N; ++i) r.d[i] = df * x.d[i];
  return r;
}
}  // namespace detail

template<int N> Dual<N> operator+(Dual<N> a, const Dual<N> & b) { return a += b; }
template<int N> Dual<N> operator-(Dual<N> a, const Dual<N> & b) { return a -= b; }
template<int N> Dual<N> operator*(Dual<N> a, const Dual<N> & b) { return a *= b; }
template<int N> Dual<N> operator/(Dual<N> a, const Dual<N> & b) { return a /= b; }
template<int N> Dual<N> operator+(Dual<N> a, double b) { return a += Dual<N>(b); }
template<int N> Dual<N> operator+(double a, Dual<N> b) { return b += Dual<N>(a); }
template<int N> Dual<N> operator-(Dual<N> a, double b) { return a -= Dual<N>(b); }
template<int N> Dual<N> operator-(double a, const Dual<N> & b) { return Dual<N>(a) -= b; }
template<int N> Dual<N> operator*(Dual<N> a, double b) { return a *= Dual<N>(b); }
template<int N> Dual<N> operator*(double a, Dual<N> b) { return b *= Dual<N>(a); }
template<int N> Dual<N> operator/(Dual<N> a, double b) { return a /= Dual<N>(b); }
template<int N> Dual<N> operator/(double a, const Dual<N> & b) { return Dual<N>(a) /= b; }
template<int N> Dual<N> operator-(const Dual<N> & a) { return detail::apply(a, -a.v, -1.0); }

template<int N> bool operator<(const Dual<N> & a, const Dual<N> & b) { return a.v < b.v; }
template<int N> bool operator>(const Dual<N> & a, const Dual<N> & b) { return a.v > b.v; }
template<int N> bool operator<(const Dual<N> & a, double b) { return a.v < b; }
template<int N> bool operator>(const Dual<N> & a, double b) { return a.v > b; }
template<int N> bool operator<=(const Dual<N> & a, double b) { return a.v <= b; }
template<int N> bool operator>=(const Dual<N> & a, double b) { return a.v >= b; }

template<int N> Dual<N> sin(const Dual<N> & x) { return detail::apply(x, std::sin(x.v), std::cos(x.v)); }
template<int N> Dual<N> cos(const Dual<N> & x) { return detail::apply(x, std::cos(x.v), -std::sin(x.v)); }
template<int N> Dual<N> tan(const Dual<N> & x)
{
  const double t = std::tan(x.v);
  return detail::apply(x, t, 1.0 + t * t);
}
template<int N> Dual<N> tanh(const Dual<N> & x)
{
  const double t = std::tanh(x.v);
  return detail::apply(x, t, 1.0 - t * t);
}
template<int N> Dual<N> atan(const Dual<N> & x) { return detail::apply(x, std::atan(x.v), 1.0 / (1.0 + x.v * x.v)); }
template<int N> Dual<N> sqrt(const Dual<N> & x)
{
  const double s = std::sqrt(x.v);
  return detail::apply(x, s, 0.5 / s);
}
template<int N> Dual<N> abs(const Dual<N> & x) { return detail::apply(x, std::abs(x.v), x.v < 0 ? -1.0 : 1.0); }
template<int N> Dual<N> atan2(const Dual<N> & y, const Dual<N> & x)
{
  const double r2 = x.v * x.v + y.v * y.v;
  Dual<N> r(std::atan2(y.v, x.v));
  for (int i = 0; i < N; ++i) r.d[i] = (x.v * y.d[i] - y.v * x.d[i]) / r2;
  return r;
}

inline double value_of(double x) { return x; }
template<int N> double value_of(const Dual<N> & x) { return x.v; }

}  // namespace pmpsafe
