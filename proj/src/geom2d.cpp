#include "graspcraft/geom2d.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace graspcraft::geom2d {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kVisibilityEps = 1e-6;     // surface tolerance for occlusion tests, m
constexpr double kSurfaceDensity = 50.0;    // kg/m^2 for generated objects
}  // namespace

double Vec2::norm() const { return std::sqrt(x * x + y * y); }

Vec2 Vec2::normalized() const {
  double n = norm();
  if (n < 1e-300) return {0.0, 0.0};
  return {x / n, y / n};
}

bool Vec2::finite() const { return std::isfinite(x) && std::isfinite(y); }

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0) a += 2.0 * kPi;
  a -= kPi;
  if (a == -kPi) a = kPi;  // wrap to (-pi, pi]
  return a;
}

Vec2 Pose2::rotate(const Vec2& v) const {
  double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

Vec2 Pose2::apply(const Vec2& v) const { return rotate(v) + position; }

SegmentDistance point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  if (!p.finite() || !a.finite() || !b.finite()) {
    throw std::invalid_argument("point_segment_distance: non-finite input");
  }
  Vec2 ab = b - a;
  double len2 = ab.norm2();
  if (len2 == 0.0) {
    return {(p - a).norm(), a};
  }
  double t = (p - a).dot(ab) / len2;
  t = std::clamp(t, 0.0, 1.0);
  Vec2 closest = a + t * ab;
  return {(p - closest).norm(), closest};
}

// ---- Polygon ----

namespace {

double signed_area(const std::vector<Vec2>& v) {
  double a = 0.0;
  for (size_t i = 0; i < v.size(); ++i) {
    const Vec2& p = v[i];
    const Vec2& q = v[(i + 1) % v.size()];
    a += p.cross(q);
  }
  return 0.5 * a;
}

bool segments_properly_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  Vec2 ab = b - a, cd = d - c;
  double d1 = ab.cross(c - a);
  double d2 = ab.cross(d - a);
  double d3 = cd.cross(a - c);
  double d4 = cd.cross(b - c);
  return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0));
}

}  // namespace

Polygon Polygon::from_vertices(std::vector<Vec2> verts, double friction, double mass) {
  if (verts.size() < 3) throw std::invalid_argument("Polygon: fewer than 3 vertices");
  for (const Vec2& v : verts) {
    if (!v.finite()) throw std::invalid_argument("Polygon: non-finite vertex");
  }
  double a = signed_area(verts);
  if (a <= 0.0) throw std::invalid_argument("Polygon: vertices must wind counter-clockwise with positive area");
  // simplicity: no two non-adjacent edges may cross
  size_t n = verts.size();
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      if (j == i || (j + 1) % n == i || (i + 1) % n == j) continue;
      if (segments_properly_intersect(verts[i], verts[(i + 1) % n], verts[j], verts[(j + 1) % n])) {
        throw std::invalid_argument("Polygon: self-intersecting boundary");
      }
    }
  }

  Polygon poly;
  poly.vertices = std::move(verts);
  poly.friction = friction;
  poly.mass = mass;
  poly.area = a;

  // centroid and polar second moment of area via the shoelace decomposition
  double cx = 0.0, cy = 0.0, jo = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Vec2& p = poly.vertices[i];
    const Vec2& q = poly.vertices[(i + 1) % n];
    double cr = p.cross(q);
    cx += (p.x + q.x) * cr;
    cy += (p.y + q.y) * cr;
    jo += cr * (p.x * p.x + p.x * q.x + q.x * q.x + p.y * p.y + p.y * q.y + q.y * q.y);
  }
  poly.centroid = {cx / (6.0 * a), cy / (6.0 * a)};
  jo /= 12.0;  // about the origin
  poly.second_moment = jo - a * poly.centroid.norm2();
  return poly;
}

double Polygon::perimeter() const {
  double p = 0.0;
  for (size_t i = 0; i < vertices.size(); ++i) {
    p += (vertices[(i + 1) % vertices.size()] - vertices[i]).norm();
  }
  return p;
}

double Polygon::diameter() const {
  double best = 0.0;
  for (size_t i = 0; i < vertices.size(); ++i) {
    for (size_t j = i + 1; j < vertices.size(); ++j) {
      best = std::max(best, (vertices[i] - vertices[j]).norm());
    }
  }
  return best;
}

bool Polygon::contains(const Vec2& p) const {
  // even-odd ray crossing
  bool inside = false;
  size_t n = vertices.size();
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2& a = vertices[i];
    const Vec2& b = vertices[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      double x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
      if (p.x < x) inside = !inside;
    }
  }
  return inside;
}

double Polygon::interior_depth(const Vec2& p) const {
  double best = std::numeric_limits<double>::infinity();
  size_t n = vertices.size();
  for (size_t i = 0; i < n; ++i) {
    best = std::min(best, point_segment_distance(p, vertices[i], vertices[(i + 1) % n]).distance);
  }
  return best;
}

bool Polygon::is_convex() const {
  size_t n = vertices.size();
  for (size_t i = 0; i < n; ++i) {
    Vec2 e1 = vertices[(i + 1) % n] - vertices[i];
    Vec2 e2 = vertices[(i + 2) % n] - vertices[(i + 1) % n];
    if (e1.cross(e2) < -1e-12) return false;
  }
  return true;
}

// ---- nearest neighbor ----

NearestIndex::NearestIndex(const PointCloud& cloud) : points_(cloud.points) {
  if (points_.empty()) throw std::invalid_argument("NearestIndex: empty cloud");
  Vec2 lo = points_[0], hi = points_[0];
  for (const Vec2& p : points_) {
    lo.x = std::min(lo.x, p.x);
    lo.y = std::min(lo.y, p.y);
    hi.x = std::max(hi.x, p.x);
    hi.y = std::max(hi.y, p.y);
  }
  origin_ = lo;
  double span = std::max(hi.x - lo.x, hi.y - lo.y);
  double target_cells = std::sqrt(static_cast<double>(points_.size()));
  cell_ = std::max(span / std::max(target_cells, 1.0), 1e-9);
  nx_ = std::max(1, static_cast<int>(std::floor((hi.x - lo.x) / cell_)) + 1);
  ny_ = std::max(1, static_cast<int>(std::floor((hi.y - lo.y) / cell_)) + 1);
  cells_.assign(static_cast<size_t>(nx_) * ny_, {});
  for (size_t i = 0; i < points_.size(); ++i) {
    int cx = std::min(nx_ - 1, static_cast<int>((points_[i].x - origin_.x) / cell_));
    int cy = std::min(ny_ - 1, static_cast<int>((points_[i].y - origin_.y) / cell_));
    cells_[static_cast<size_t>(cy) * nx_ + cx].push_back(static_cast<int>(i));
  }
}

NearestResult NearestIndex::query(const Vec2& q) const {
  // ring search around the query's (clamped) cell; a cell at Chebyshev ring r
  // holds no point closer than (r-1)*cell, which bounds when the scan may
  // stop. Clamping keeps the bound valid: along a clamped axis the query lies
  // beyond the grid edge, so its distance to ring-r cells only grows.
  double fx = std::floor((q.x - origin_.x) / cell_);
  double fy = std::floor((q.y - origin_.y) / cell_);
  int qx = static_cast<int>(std::clamp(fx, 0.0, static_cast<double>(nx_ - 1)));
  int qy = static_cast<int>(std::clamp(fy, 0.0, static_cast<double>(ny_ - 1)));
  double best_d2 = std::numeric_limits<double>::infinity();
  int best_idx = -1;

  int max_ring = std::max(nx_, ny_);
  for (int r = 0; r <= max_ring; ++r) {
    if (best_idx >= 0) {
      double lb = (r - 1) * cell_;
      if (lb > 0 && lb * lb > best_d2) break;
    }
    int x0 = qx - r, x1 = qx + r, y0 = qy - r, y1 = qy + r;
    for (int cy = y0; cy <= y1; ++cy) {
      if (cy < 0 || cy >= ny_) continue;
      for (int cx = x0; cx <= x1; ++cx) {
        if (cx < 0 || cx >= nx_) continue;
        if (r > 0 && cx != x0 && cx != x1 && cy != y0 && cy != y1) continue;  // ring interior already seen
        for (int idx : cells_[static_cast<size_t>(cy) * nx_ + cx]) {
          double d2 = (points_[static_cast<size_t>(idx)] - q).norm2();
          if (d2 < best_d2 || (d2 == best_d2 && idx < best_idx)) {
            best_d2 = d2;
            best_idx = idx;
          }
        }
      }
    }
  }
  return {best_idx, points_[static_cast<size_t>(best_idx)] - q};
}

NearestResult nearest_point(const PointCloud& cloud, const Vec2& query) {
  if (cloud.points.empty()) throw std::invalid_argument("nearest_point: empty cloud");
  NearestIndex index(cloud);
  return index.query(query);
}

// ---- boundary sampling ----

PointCloud sample_boundary(const Polygon& poly, const Pose2& pose, int n) {
  int nv = static_cast<int>(poly.vertices.size());
  if (n < nv) throw std::invalid_argument("sample_boundary: n smaller than vertex count");
  double perim = poly.perimeter();
  PointCloud cloud;
  cloud.source = CloudSource::FullBoundary;
  cloud.points.reserve(static_cast<size_t>(n));

  // edge cumulative lengths
  std::vector<double> cum(static_cast<size_t>(nv) + 1, 0.0);
  for (int i = 0; i < nv; ++i) {
    cum[static_cast<size_t>(i) + 1] =
        cum[static_cast<size_t>(i)] + (poly.vertices[(i + 1) % nv] - poly.vertices[i]).norm();
  }

  int edge = 0;
  for (int k = 0; k < n; ++k) {
    double s = perim * static_cast<double>(k) / n;
    while (edge + 1 < nv && cum[static_cast<size_t>(edge) + 1] <= s) ++edge;
    double seg_len = cum[static_cast<size_t>(edge) + 1] - cum[static_cast<size_t>(edge)];
    double t = seg_len > 0 ? (s - cum[static_cast<size_t>(edge)]) / seg_len : 0.0;
    Vec2 local = poly.vertices[static_cast<size_t>(edge)] +
                 t * (poly.vertices[(static_cast<size_t>(edge) + 1) % nv] - poly.vertices[static_cast<size_t>(edge)]);
    cloud.points.push_back(pose.apply(local));
  }
  return cloud;
}

// ---- visibility ----

namespace {

// world-frame copy of the polygon under `pose`
Polygon transformed(const Polygon& poly, const Pose2& pose) {
  Polygon world = poly;
  for (Vec2& v : world.vertices) v = pose.apply(v);
  world.centroid = pose.apply(poly.centroid);
  return world;
}

// parameters t in (0,1) where segment v->p crosses a polygon edge
void collect_crossings(const Vec2& v, const Vec2& p, const Polygon& poly, std::vector<double>& ts) {
  ts.clear();
  Vec2 d1 = p - v;
  size_t n = poly.vertices.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& a = poly.vertices[i];
    const Vec2& b = poly.vertices[(i + 1) % n];
    Vec2 d2 = b - a;
    double denom = d1.cross(d2);
    if (std::abs(denom) < 1e-15) continue;  // parallel or grazing
    double t = (a - v).cross(d2) / denom;
    double u = (a - v).cross(d1) / denom;
    if (t > 1e-12 && t < 1.0 - 1e-9 && u > -1e-12 && u < 1.0 + 1e-12) {
      ts.push_back(t);
    }
  }
  std::sort(ts.begin(), ts.end());
}

}  // namespace

PointCloud visible_points(const PointCloud& cloud, const Polygon& object, const Pose2& pose,
                          const Vec2& viewpoint) {
  Polygon world = transformed(object, pose);
  if (world.contains(viewpoint)) {
    throw std::invalid_argument("visible_points: viewpoint inside the object");
  }

  PointCloud out;
  out.source = CloudSource::SingleView;
  std::vector<double> ts;
  for (const Vec2& p : cloud.points) {
    collect_crossings(viewpoint, p, world, ts);
    bool occluded = false;
    double prev = 0.0;
    for (size_t i = 0; i <= ts.size() && !occluded; ++i) {
      double next = (i < ts.size()) ? ts[i] : 1.0;
      if (next - prev > 1e-12) {
        double mid = 0.5 * (prev + next);
        Vec2 x = viewpoint + mid * (p - viewpoint);
        if (world.contains(x) && world.interior_depth(x) > kVisibilityEps) occluded = true;
      }
      prev = next;
    }
    if (!occluded) out.points.push_back(p);
  }
  return out;
}

// ---- random convex objects ----

const char* size_class_name(SizeClass c) {
  switch (c) {
    case SizeClass::Small: return "small";
    case SizeClass::Medium: return "medium";
    case SizeClass::Large: return "large";
  }
  return "medium";
}

SizeClass size_class_from_name(const std::string& name) {
  if (name == "small") return SizeClass::Small;
  if (name == "medium") return SizeClass::Medium;
  if (name == "large") return SizeClass::Large;
  throw std::invalid_argument("unknown size class: " + name);
}

SizeClassBounds size_class_bounds(SizeClass c) {
  switch (c) {
    case SizeClass::Small: return {0.02, 0.04};
    case SizeClass::Medium: return {0.04, 0.08};
    case SizeClass::Large: return {0.08, 0.14};
  }
  return {0.04, 0.08};
}

namespace {

// Andrew monotone chain, CCW output
std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  size_t n = pts.size();
  std::vector<Vec2> hull(2 * n);
  size_t k = 0;
  for (size_t i = 0; i < n; ++i) {
    while (k >= 2 && (hull[k - 1] - hull[k - 2]).cross(pts[i] - hull[k - 2]) <= 0) --k;
    hull[k++] = pts[i];
  }
  size_t lower = k + 1;
  for (size_t i = n - 1; i-- > 0;) {
    while (k >= lower && (hull[k - 1] - hull[k - 2]).cross(pts[i] - hull[k - 2]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

}  // namespace

Polygon random_convex_polygon(Rng& rng, SizeClass size_class) {
  SizeClassBounds bounds = size_class_bounds(size_class);
  while (true) {
    int k = 5 + rng.uniform_int(6);
    std::vector<double> angles(static_cast<size_t>(k));
    for (double& a : angles) a = rng.uniform(0.0, 2.0 * kPi);
    std::sort(angles.begin(), angles.end());
    std::vector<Vec2> pts;
    pts.reserve(angles.size());
    for (double a : angles) {
      double r = rng.uniform(0.45, 1.0);
      pts.push_back({r * std::cos(a), r * std::sin(a)});
    }
    std::vector<Vec2> hull = convex_hull(pts);
    if (hull.size() < 3) continue;

    double target = rng.uniform(bounds.lo, bounds.hi);
    double diam = 0.0;
    for (size_t i = 0; i < hull.size(); ++i) {
      for (size_t j = i + 1; j < hull.size(); ++j) {
        diam = std::max(diam, (hull[i] - hull[j]).norm());
      }
    }
    if (diam < 1e-6) continue;
    double scale = target / diam;
    for (Vec2& v : hull) v = scale * v;

    Polygon poly = Polygon::from_vertices(hull, 0.7, 1.0);
    // recenter so the body frame origin is the centroid
    for (Vec2& v : poly.vertices) v -= poly.centroid;
    double mass = kSurfaceDensity * poly.area;
    return Polygon::from_vertices(poly.vertices, 0.7, mass);
  }
}

}  // namespace graspcraft::geom2d
