#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "fovreg/common.hpp"

namespace fovreg {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::sqrt(dot(a, a)); }

/// Angle reduced into [0, 2*pi).
inline double normalize_angle(double a) {
  double r = std::fmod(a, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  if (r >= kTwoPi) r = 0.0;
  return r;
}

/// Circular absolute difference of two headings, in [0, pi].
inline double heading_difference(double a, double b) {
  double d = std::fabs(normalize_angle(a) - normalize_angle(b));
  return std::min(d, kTwoPi - d);
}

/// A camera on the ground plane. heading is the view direction in [0, 2*pi),
/// fov_angle the full opening angle in (0, pi), range the sensing distance.
struct CameraPose {
  std::uint32_t id = 0;
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double fov_angle = kPi / 2.0;
  double range = 1.0;
};

/// Validating constructor for CameraPose; normalizes the heading and rejects
/// degenerate frustums so downstream geometry never sees them.
inline CameraPose make_pose(std::uint32_t id, double x, double y, double heading,
                            double fov_angle, double range) {
  if (!(range > 0.0) || !std::isfinite(range))
    throw std::invalid_argument("pose " + std::to_string(id) + ": range must be > 0");
  if (!(fov_angle > 0.0 && fov_angle < kPi))
    throw std::invalid_argument("pose " + std::to_string(id) + ": fov_angle must be in (0, pi)");
  if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(heading))
    throw std::invalid_argument("pose " + std::to_string(id) + ": non-finite coordinate");
  return CameraPose{id, x, y, normalize_angle(heading), fov_angle, range};
}

/// Convex counter-clockwise polygon; the first vertex is the camera apex.
struct FrustumPolygon {
  std::vector<Vec2> vertices;
};

/// Isoceles triangle with apex at the camera position and two rays of length
/// range at heading +- fov_angle/2. CCW since sin(fov_angle) > 0.
inline FrustumPolygon frustum_polygon(const CameraPose& pose) {
  const Vec2 apex{pose.x, pose.y};
  const double a0 = pose.heading - pose.fov_angle / 2.0;
  const double a1 = pose.heading + pose.fov_angle / 2.0;
  const Vec2 p0 = apex + pose.range * Vec2{std::cos(a0), std::sin(a0)};
  const Vec2 p1 = apex + pose.range * Vec2{std::cos(a1), std::sin(a1)};
  return FrustumPolygon{{apex, p0, p1}};
}

/// Shoelace area of a CCW polygon.
inline double polygon_area(const std::vector<Vec2>& poly) {
  double acc = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    acc += cross(p, q);
  }
  return 0.5 * acc;
}

inline double polygon_area(const FrustumPolygon& f) { return polygon_area(f.vertices); }

/// Intersection area of two convex CCW polygons via successive half-plane
/// clipping (Sutherland-Hodgman). Points on a clip edge count as inside.
inline double convex_intersection_area(const std::vector<Vec2>& a,
                                       const std::vector<Vec2>& b) {
  std::vector<Vec2> poly = a;
  std::vector<Vec2> next;
  const std::size_t nb = b.size();
  for (std::size_t e = 0; e < nb && !poly.empty(); ++e) {
    const Vec2 e1 = b[e];
    const Vec2 e2 = b[(e + 1) % nb];
    const Vec2 edge = e2 - e1;
    next.clear();
    const std::size_t np = poly.size();
    for (std::size_t i = 0; i < np; ++i) {
      const Vec2 s = poly[i];
      const Vec2 p = poly[(i + 1) % np];
      const double ds = cross(edge, s - e1);
      const double dp = cross(edge, p - e1);
      const bool s_in = ds >= 0.0;
      const bool p_in = dp >= 0.0;
      if (s_in != p_in) {
        const double t = ds / (ds - dp);  // ds != dp since signs differ
        next.push_back(s + t * (p - s));
      }
      if (p_in) next.push_back(p);
    }
    poly.swap(next);
  }
  if (poly.size() < 3) return 0.0;
  return std::max(0.0, polygon_area(poly));
}

inline double convex_polygon_intersection_area(const FrustumPolygon& a,
                                               const FrustumPolygon& b) {
  return convex_intersection_area(a.vertices, b.vertices);
}

/// Membership test for a convex CCW polygon; boundary points count as inside.
inline bool point_in_convex_polygon(const std::vector<Vec2>& poly, Vec2 p) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 e1 = poly[i];
    const Vec2 e2 = poly[(i + 1) % n];
    if (cross(e2 - e1, p - e1) < 0.0) return false;
  }
  return true;
}

inline bool point_in_frustum(const FrustumPolygon& f, Vec2 p) {
  return point_in_convex_polygon(f.vertices, p);
}

namespace detail {
inline auto pose_order_key(const CameraPose& p) {
  return std::tie(p.x, p.y, p.heading, p.fov_angle, p.range, p.id);
}
}  // namespace detail

/// Graded similarity psi in [0, 1]: intersection-over-union of the two view
/// frustums. Arguments are evaluated in a canonical order so the result is
/// bit-identical under swapped arguments; identical poses short-circuit to 1.
inline double fov_overlap(const CameraPose& a, const CameraPose& b) {
  if (a.x == b.x && a.y == b.y && a.heading == b.heading &&
      a.fov_angle == b.fov_angle && a.range == b.range) {
    return 1.0;
  }
  const CameraPose* first = &a;
  const CameraPose* second = &b;
  if (detail::pose_order_key(b) < detail::pose_order_key(a)) std::swap(first, second);
  const FrustumPolygon fa = frustum_polygon(*first);
  const FrustumPolygon fb = frustum_polygon(*second);
  const double inter = convex_polygon_intersection_area(fa, fb);
  const double uni = polygon_area(fa) + polygon_area(fb) - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// MSLS-style binary positive rule: position distance within dist_thresh
/// (inclusive) and circular heading difference below angle_thresh (exclusive).
inline bool is_positive(const CameraPose& a, const CameraPose& b, double dist_thresh,
                        double angle_thresh) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dist = std::sqrt(dx * dx + dy * dy);
  return dist <= dist_thresh && heading_difference(a.heading, b.heading) < angle_thresh;
}

}  // namespace fovreg
