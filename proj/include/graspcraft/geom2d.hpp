#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "graspcraft/rng.hpp"

namespace graspcraft::geom2d {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2() = default;
  Vec2(double x_, double y_) : x(x_), y(y_) {}

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator-() const { return {-x, -y}; }
  Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
  Vec2& operator-=(const Vec2& o) { x -= o.x; y -= o.y; return *this; }

  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double cross(const Vec2& o) const { return x * o.y - y * o.x; }
  double norm2() const { return x * x + y * y; }
  double norm() const;
  // counter-clockwise quarter turn
  Vec2 perp() const { return {-y, x}; }
  Vec2 normalized() const;
  bool finite() const;
};

inline Vec2 operator*(double s, const Vec2& v) { return {s * v.x, s * v.y}; }

// Planar rigid transform: rotation by `angle` then translation by `position`.
struct Pose2 {
  Vec2 position;
  double angle = 0.0;  // wrapped to (-pi, pi]

  static Pose2 identity() { return {}; }
  Vec2 apply(const Vec2& local) const;
  Vec2 rotate(const Vec2& local) const;
};

double wrap_angle(double a);

// Simple CCW polygon with physical attributes. Derived quantities (centroid,
// area, second moment of area about the centroid) are computed once from the
// vertices and kept consistent with them.
struct Polygon {
  std::vector<Vec2> vertices;  // CCW, body frame
  double friction = 0.7;
  double mass = 0.1;  // kg

  Vec2 centroid;
  double area = 0.0;           // m^2
  double second_moment = 0.0;  // area moment about centroid, m^4

  static Polygon from_vertices(std::vector<Vec2> verts, double friction, double mass);

  double perimeter() const;
  // max pairwise vertex distance
  double diameter() const;
  bool contains(const Vec2& p) const;
  // >= 0 inside, measured to the boundary; meaningless for outside points
  double interior_depth(const Vec2& p) const;
  bool is_convex() const;
  // rotational inertia (kg m^2) about the centroid, mass spread uniformly over the area
  double inertia() const { return area > 0.0 ? mass * second_moment / area : 0.0; }
};

enum class CloudSource { FullBoundary, SingleView };

struct PointCloud {
  std::vector<Vec2> points;  // world frame
  CloudSource source = CloudSource::FullBoundary;
};

// distance from p to segment [a,b] plus the closest point on the segment
struct SegmentDistance {
  double distance;
  Vec2 closest;
};
SegmentDistance point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b);

struct NearestResult {
  int index;
  Vec2 offset;  // cloud.points[index] - query
};

// Uniform-grid accelerated nearest-neighbor over a fixed cloud. Results are
// identical to a linear scan, ties broken by lowest index.
class NearestIndex {
 public:
  explicit NearestIndex(const PointCloud& cloud);
  NearestResult query(const Vec2& q) const;

 private:
  const std::vector<Vec2> points_;
  Vec2 origin_;
  double cell_ = 1.0;
  int nx_ = 1, ny_ = 1;
  std::vector<std::vector<int>> cells_;
};

NearestResult nearest_point(const PointCloud& cloud, const Vec2& query);

PointCloud sample_boundary(const Polygon& poly, const Pose2& pose, int n);

PointCloud visible_points(const PointCloud& cloud, const Polygon& object, const Pose2& pose,
                          const Vec2& viewpoint);

enum class SizeClass { Small, Medium, Large };

const char* size_class_name(SizeClass c);
SizeClass size_class_from_name(const std::string& name);

struct SizeClassBounds {
  double lo;  // min max-diameter, m
  double hi;
};
SizeClassBounds size_class_bounds(SizeClass c);

Polygon random_convex_polygon(Rng& rng, SizeClass size_class);

}  // namespace graspcraft::geom2d
