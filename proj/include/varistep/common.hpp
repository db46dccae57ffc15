// Small shared pieces: 2-vectors, 2x2 matrices, error types, hashing.
// Everything numeric here is plain double; loops elsewhere keep fixed
// iteration order so that reruns are bit-identical.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace varistep {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Vec2 {
  double x = 0.0, y = 0.0;
  Vec2() = default;
  Vec2(double x_, double y_) : x(x_), y(y_) {}
  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
  Vec2& operator-=(const Vec2& o) { x -= o.x; y -= o.y; return *this; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm2() const { return x * x + y * y; }
  double norm() const { return std::sqrt(norm2()); }
};
inline Vec2 operator*(double s, const Vec2& v) { return v * s; }

// Row-major 2x2 matrix; m(r,c).
struct Mat2 {
  double m00 = 0.0, m01 = 0.0, m10 = 0.0, m11 = 0.0;
  Mat2() = default;
  Mat2(double a, double b, double c, double d) : m00(a), m01(b), m10(c), m11(d) {}
  static Mat2 identity() { return {1.0, 0.0, 0.0, 1.0}; }
  double det() const { return m00 * m11 - m01 * m10; }
  double trace() const { return m00 + m11; }
  // Cofactor matrix: d(det)/dM. For 2x2, cof(M) = [[m11, -m10], [-m01, m00]].
  Mat2 cof() const { return {m11, -m10, -m01, m00}; }
  Mat2 transpose() const { return {m00, m10, m01, m11}; }
  Mat2 operator+(const Mat2& o) const { return {m00 + o.m00, m01 + o.m01, m10 + o.m10, m11 + o.m11}; }
  Mat2 operator-(const Mat2& o) const { return {m00 - o.m00, m01 - o.m01, m10 - o.m10, m11 - o.m11}; }
  Mat2 operator*(double s) const { return {m00 * s, m01 * s, m10 * s, m11 * s}; }
  Mat2 operator*(const Mat2& o) const {
    return {m00 * o.m00 + m01 * o.m10, m00 * o.m01 + m01 * o.m11,
            m10 * o.m00 + m11 * o.m10, m10 * o.m01 + m11 * o.m11};
  }
  Vec2 operator*(const Vec2& v) const { return {m00 * v.x + m01 * v.y, m10 * v.x + m11 * v.y}; }
  Mat2& operator+=(const Mat2& o) { m00 += o.m00; m01 += o.m01; m10 += o.m10; m11 += o.m11; return *this; }
  // Frobenius inner product and norm.
  double ddot(const Mat2& o) const { return m00 * o.m00 + m01 * o.m01 + m10 * o.m10 + m11 * o.m11; }
  double frob2() const { return ddot(*this); }
};
inline Mat2 operator*(double s, const Mat2& m) { return m * s; }

// ---------------------------------------------------------------------------
// Error taxonomy. Scheme *stops* (collision etc.) are not exceptions; they are
// stop reasons on the trajectory. Exceptions are programming/contract errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct ValidationError : Error { using Error::Error; };     // bad config / parameters
struct LineSearchStall : Error { using Error::Error; };     // no finite decrease found
struct NonFiniteGradient : Error { using Error::Error; };   // gradient NaN/inf at finite point
struct SingularSystem : Error { using Error::Error; };      // saddle solve impossible
struct DegenerateElement : Error { using Error::Error; };   // element with non-positive area
struct MarkerEscaped : Error { using Error::Error; };       // transported point left the box
struct SchemaMismatch : Error { using Error::Error; };      // ledger file malformed
struct InequalityViolation : Error { using Error::Error; }; // runtime energy-bound failure

// ---------------------------------------------------------------------------
// FNV-1a 64-bit, used for config and ledger hashing.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}
inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(std::uint64_t v);

// printf-style %.17g formatting; round-trips doubles exactly and keeps ledger
// files byte-stable across reruns.
std::string fmt_g17(double v);

inline bool is_finite(double v) { return std::isfinite(v); }

}  // namespace varistep
