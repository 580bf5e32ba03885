#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>

namespace rcsl_lab {

// Exact positive rational, used for the per-MDP reward quantum.
struct Rational {
  std::int64_t num{1};
  std::int64_t den{1};

  Rational() = default;
  Rational(std::int64_t n, std::int64_t d) : num(n), den(d) {
    if (d <= 0 || n <= 0) throw std::invalid_argument("Rational: must be positive");
    const std::int64_t g = std::gcd(n, d);
    num /= g;
    den /= g;
  }

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }

  // Value of `units` quanta as a double.
  double scale(std::int64_t units) const {
    return static_cast<double>(units * num) / static_cast<double>(den);
  }

  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }

  static Rational parse(const std::string& s) {
    const auto slash = s.find('/');
    if (slash == std::string::npos) {
      return Rational(std::stoll(s), 1);
    }
    return Rational(std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1)));
  }

  bool operator==(const Rational& o) const { return num == o.num && den == o.den; }
};

// Nearest rational p/q to x with q <= max_den (continued fractions). Used by
// gallery constructors that must place values like 1-eps on an exact grid.
inline Rational rationalize(double x, std::int64_t max_den = 1000000) {
  if (x <= 0.0) throw std::invalid_argument("rationalize: expected positive value");
  std::int64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double frac = x;
  for (int iter = 0; iter < 64; ++iter) {
    const auto a = static_cast<std::int64_t>(frac);
    const std::int64_t p2 = a * p1 + p0;
    const std::int64_t q2 = a * q1 + q0;
    if (q2 > max_den) break;
    p0 = p1; q0 = q1; p1 = p2; q1 = q2;
    const double rem = frac - static_cast<double>(a);
    if (rem < 1e-12) break;
    frac = 1.0 / rem;
  }
  if (p1 <= 0) throw std::invalid_argument("rationalize: no positive approximation");
  return Rational(p1, q1);
}

}  // namespace rcsl_lab
