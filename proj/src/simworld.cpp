#include "graspcraft/simworld.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace graspcraft::sim {

namespace {
constexpr double kMargin = 0.05;      // contact candidate distance, m; must exceed the
                                      // fastest plausible approach speed times dt so the
                                      // speculative constraint sees a crossing coming
constexpr double kSlop = 1e-4;        // allowed penetration before positional correction
constexpr double kBeta = 0.2;         // fraction of residual penetration healed per pass
constexpr double kMaxCorr = 0.005;    // m cap on one contact's positional correction
constexpr int kSolverIters = 16;
constexpr int kShockIters = 4;
constexpr int kPosIters = 8;

Vec2 unit(double angle) { return {std::cos(angle), std::sin(angle)}; }
}  // namespace

const char* link_name(int link) {
  static const char* names[kNumLinks] = {"arm1", "arm2",  "arm3",  "mount", "palm", "fAprox",
                                         "fAmid", "fAdist", "fBprox", "fBmid", "fBdist"};
  return names[link];
}

std::string body_name(int id) {
  if (id == kBodyObject) return "object";
  if (id == kBodyTable) return "table";
  return link_name(id);
}

const char* contact_class_name(ContactClass c) {
  switch (c) {
    case ContactClass::Desired: return "desired";
    case ContactClass::UndesiredSelf: return "undesired-self";
    case ContactClass::UndesiredTable: return "undesired-table";
    case ContactClass::UndesiredArmObject: return "undesired-arm-object";
  }
  return "desired";
}

PDGains PDGains::nominal() { return scaled(1.0, 1.0, 1.0, 1.0); }

PDGains PDGains::scaled(double hand_kp_scale, double hand_kd_scale, double arm_kp_scale,
                        double arm_kd_scale) {
  PDGains g;
  for (int j = 0; j < 3; ++j) {
    g.kp[static_cast<size_t>(j)] = 16000.0 * arm_kp_scale;
    g.kd[static_cast<size_t>(j)] = 600.0 * arm_kd_scale;
  }
  for (int j = 3; j < kNumJoints; ++j) {
    g.kp[static_cast<size_t>(j)] = 600.0 * hand_kp_scale;
    g.kd[static_cast<size_t>(j)] = 20.0 * hand_kd_scale;
  }
  return g;
}

Kinematics forward_kinematics(const RobotModel& m, const Joint9& q) {
  Kinematics k;
  double a1 = q[0], a2 = q[0] + q[1], a3 = q[0] + q[1] + q[2];
  Vec2 p0 = m.base;
  Vec2 p1 = p0 + m.arm_lengths[0] * unit(a1);
  Vec2 p2 = p1 + m.arm_lengths[1] * unit(a2);
  Vec2 pw = p2 + m.arm_lengths[2] * unit(a3);
  Vec2 u3 = unit(a3);
  Vec2 n3 = u3.perp();
  Vec2 pc = pw + m.mount_length * u3;
  Vec2 eA = pc + m.palm_half_width * n3;
  Vec2 eB = pc - m.palm_half_width * n3;

  // finger A mirrors its joint angles so positive q closes both fingers
  double fa1 = a3 - q[3], fa2 = fa1 - q[4], fa3 = fa2 - q[5];
  double fb1 = a3 + q[6], fb2 = fb1 + q[7], fb3 = fb2 + q[8];
  Vec2 jA1 = eA + m.finger_lengths[0] * unit(fa1);
  Vec2 jA2 = jA1 + m.finger_lengths[1] * unit(fa2);
  Vec2 tipA = jA2 + m.finger_lengths[2] * unit(fa3);
  Vec2 jB1 = eB + m.finger_lengths[0] * unit(fb1);
  Vec2 jB2 = jB1 + m.finger_lengths[1] * unit(fb2);
  Vec2 tipB = jB2 + m.finger_lengths[2] * unit(fb3);

  k.frames = {Pose2{p0, geom2d::wrap_angle(a1)},  Pose2{p1, geom2d::wrap_angle(a2)},
              Pose2{p2, geom2d::wrap_angle(a3)},  Pose2{pw, geom2d::wrap_angle(a3)},
              Pose2{eB, geom2d::wrap_angle(a3 + 1.57079632679489661923)},
              Pose2{eA, geom2d::wrap_angle(fa1)}, Pose2{jA1, geom2d::wrap_angle(fa2)},
              Pose2{jA2, geom2d::wrap_angle(fa3)}, Pose2{eB, geom2d::wrap_angle(fb1)},
              Pose2{jB1, geom2d::wrap_angle(fb2)}, Pose2{jB2, geom2d::wrap_angle(fb3)}};

  k.capsules = {Capsule{p0, p1, m.link_radius[0]},   Capsule{p1, p2, m.link_radius[1]},
                Capsule{p2, pw, m.link_radius[2]},   Capsule{pw, pc, m.link_radius[3]},
                Capsule{eB, eA, m.link_radius[4]},   Capsule{eA, jA1, m.link_radius[5]},
                Capsule{jA1, jA2, m.link_radius[6]}, Capsule{jA2, tipA, m.link_radius[7]},
                Capsule{eB, jB1, m.link_radius[8]},  Capsule{jB1, jB2, m.link_radius[9]},
                Capsule{jB2, tipB, m.link_radius[10]}};

  k.joint_points = {pw, eA, jA1, jA2, tipA, eB, jB1, jB2, tipB};
  k.wrist = Pose2{pw, geom2d::wrap_angle(a3)};

  auto arm_chain = [&](Chain& c, int upto) {
    Vec2 pivots[3] = {p0, p1, p2};
    for (int j = 0; j <= upto; ++j) c.e[static_cast<size_t>(c.n++)] = {j, 1.0, pivots[j]};
  };
  arm_chain(k.chains[0], 0);
  arm_chain(k.chains[1], 1);
  for (int link = 2; link <= 4; ++link) arm_chain(k.chains[link], 2);
  Vec2 pivA[3] = {eA, jA1, jA2};
  Vec2 pivB[3] = {eB, jB1, jB2};
  for (int seg = 0; seg < 3; ++seg) {
    Chain& ca = k.chains[static_cast<size_t>(5 + seg)];
    arm_chain(ca, 2);
    for (int j = 0; j <= seg; ++j) ca.e[static_cast<size_t>(ca.n++)] = {3 + j, -1.0, pivA[j]};
    Chain& cb = k.chains[static_cast<size_t>(8 + seg)];
    arm_chain(cb, 2);
    for (int j = 0; j <= seg; ++j) cb.e[static_cast<size_t>(cb.n++)] = {6 + j, 1.0, pivB[j]};
  }
  return k;
}

Joint9 pd_torques(const RobotModel& m, const Joint9& q, const Joint9& qdot,
                  const Joint9& targets, const PDGains& gains) {
  Joint9 tau;
  for (size_t j = 0; j < kNumJoints; ++j) {
    double t = gains.kp[j] * (targets[j] - q[j]) - gains.kd[j] * qdot[j];
    tau[j] = std::clamp(t, -m.torque_limit[j], m.torque_limit[j]);
  }
  return tau;
}

namespace {

// per-joint effective inertia: reflected rotor plus downstream link terms
Joint9 joint_inertias(const RobotModel& m, const Kinematics& kin) {
  static const int downstream_first[kNumJoints] = {0, 1, 2, 5, 6, 7, 8, 9, 10};
  static const int downstream_last[kNumJoints] = {10, 10, 10, 7, 7, 7, 10, 10, 10};
  Vec2 pivots[kNumJoints] = {kin.capsules[0].a, kin.capsules[1].a, kin.capsules[2].a,
                             kin.capsules[5].a, kin.capsules[6].a, kin.capsules[7].a,
                             kin.capsules[8].a, kin.capsules[9].a, kin.capsules[10].a};
  Joint9 inertia;
  for (int j = 0; j < kNumJoints; ++j) {
    double total = m.rotor_inertia[static_cast<size_t>(j)];
    for (int link = downstream_first[j]; link <= downstream_last[j]; ++link) {
      const Capsule& c = kin.capsules[static_cast<size_t>(link)];
      Vec2 com = 0.5 * (c.a + c.b);
      double len = (c.b - c.a).norm();
      double mk = m.link_mass[static_cast<size_t>(link)];
      total += mk * (com - pivots[j]).norm2() + mk * len * len / 12.0;
    }
    inertia[static_cast<size_t>(j)] = total;
  }
  return inertia;
}

struct SegClosest {
  Vec2 p1, p2;
  double d;
};

// closest points between segments [a1,b1] and [a2,b2] (Ericson style)
SegClosest closest_segment_segment(const Vec2& a1, const Vec2& b1, const Vec2& a2,
                                   const Vec2& b2) {
  Vec2 d1 = b1 - a1, d2 = b2 - a2, r = a1 - a2;
  double a = d1.norm2(), e = d2.norm2(), f = d2.dot(r);
  double s = 0.0, t = 0.0;
  if (a <= 1e-18 && e <= 1e-18) {
  } else if (a <= 1e-18) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    double c = d1.dot(r);
    if (e <= 1e-18) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      double b = d1.dot(d2);
      double denom = a * e - b * b;
      if (denom > 1e-18) s = std::clamp((b * f - c * e) / denom, 0.0, 1.0);
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  Vec2 p1 = a1 + s * d1;
  Vec2 p2 = a2 + t * d2;
  return {p1, p2, (p1 - p2).norm()};
}

// non-adjacent link pairs eligible for self-collision
bool adjacent_links(int i, int j) {
  if (j < i) std::swap(i, j);
  static const int pairs[][2] = {{0, 1}, {1, 2}, {2, 3}, {2, 4}, {3, 4}, {4, 5},
                                 {4, 8}, {5, 6}, {6, 7}, {8, 9}, {9, 10}};
  for (auto& p : pairs) {
    if (p[0] == i && p[1] == j) return true;
  }
  return false;
}

struct Contact {
  int body_a, body_b;
  Vec2 point;
  Vec2 normal;  // unit, a -> b
  double gap;
  double mu;
  double target_vn;
  double lambda_n = 0.0;
  double lambda_t = 0.0;
  // extra impulse from the shock pass; acts on the link side only and is
  // never warm started, so it cannot launch the object
  double lambda_ns = 0.0;
  double lambda_ts = 0.0;
  bool recorded;
  ContactClass classification;
  uint64_t key;  // persistent identity for warm starting
};

uint64_t contact_key(int body_a, int body_b, int feature) {
  return (static_cast<uint64_t>(body_a + 4) << 40) | (static_cast<uint64_t>(body_b + 4) << 20) |
         static_cast<uint64_t>(feature);
}

// world-frame view of the object's polygon (rigid transform, no revalidation)
Polygon world_polygon(const ObjectState& obj) {
  Polygon p = obj.shape;
  for (Vec2& v : p.vertices) v = obj.pose.apply(v);
  p.centroid = obj.pose.apply(obj.shape.centroid);
  return p;
}

double contact_target(double gap, double dt) {
  // a separated pair may approach, but not cross, this substep; an
  // overlapping pair must stop. Every target is <= 0, so the velocity solve
  // only ever removes kinetic energy; overlap itself heals in the positional
  // pass after integration.
  return gap > 0.0 ? -gap / dt : 0.0;
}

struct PolyDist {
  double dist;    // signed, negative inside
  Vec2 boundary;  // nearest boundary point
  Vec2 outward;   // direction that moves the query point out of the polygon
};

PolyDist polygon_signed_distance(const Polygon& poly, const Vec2& p) {
  size_t n = poly.vertices.size();
  double bd = std::numeric_limits<double>::infinity();
  size_t edge = 0;
  Vec2 bp{0.0, 0.0};
  for (size_t i = 0; i < n; ++i) {
    auto sd = geom2d::point_segment_distance(p, poly.vertices[i], poly.vertices[(i + 1) % n]);
    if (sd.distance < bd) {
      bd = sd.distance;
      bp = sd.closest;
      edge = i;
    }
  }
  bool in = poly.contains(p);
  Vec2 outward;
  if (bd > 1e-12) {
    outward = in ? (1.0 / bd) * (bp - p) : (1.0 / bd) * (p - bp);
  } else {
    // exactly on the boundary: take the nearest edge's outward normal
    Vec2 e = poly.vertices[(edge + 1) % n] - poly.vertices[edge];
    outward = Vec2{e.y, -e.x}.normalized();
  }
  return {in ? -bd : bd, bp, outward};
}

// Contact features for one capsule-polygon pair. In speculative mode each
// nearby capsule endpoint is constrained against every nearby polygon edge
// line and polygon vertex circle: a fast tangential sweep rotates the
// nearest-feature normal around a corner quicker than one constraint can
// follow, so every face the endpoint could reach this substep must already
// be represented. In exact mode each endpoint contributes one true
// signed-distance contact instead, so the positional healing pass never acts
// on a virtual line gap. Polygon vertices are tested against the capsule in
// both modes (the capsule boundary is smooth, one constraint per vertex
// suffices), and a deepest-sample contact recovers from the axis sinking
// fully inside. Normals always push the link out of the object so a sunk
// contact cannot trap it.
void capsule_polygon_contact(const Capsule& cap, const Polygon& poly, int link, double mu,
                             double dt, bool speculative, std::vector<Contact>& out) {
  auto push = [&](const Vec2& point, const Vec2& outward, double gap, int feature) {
    Contact c;
    c.body_a = kBodyObject;
    c.body_b = link;
    c.point = point;
    c.normal = outward;
    c.gap = gap;
    c.mu = mu;
    c.target_vn = contact_target(gap, dt);
    c.recorded = true;
    c.classification =
        link >= kFirstHandLink ? ContactClass::Desired : ContactClass::UndesiredArmObject;
    c.key = contact_key(kBodyObject, link, feature);
    out.push_back(c);
  };

  size_t n = poly.vertices.size();
  auto edge_normal = [&](size_t k) {
    Vec2 e = poly.vertices[(k + 1) % n] - poly.vertices[k];
    return Vec2{e.y, -e.x}.normalized();
  };

  for (int ep = 0; ep < 2; ++ep) {
    const Vec2& e = ep ? cap.b : cap.a;
    PolyDist pd = polygon_signed_distance(poly, e);
    if (!speculative || pd.dist <= 0.0) {
      double gap = pd.dist - cap.r;
      if (gap < kMargin) push(pd.boundary, pd.outward, gap, ep);
      continue;
    }
    for (size_t k = 0; k < n; ++k) {
      const Vec2& v0 = poly.vertices[k];
      Vec2 nk = edge_normal(k);
      double line_gap = (e - v0).dot(nk) - cap.r;
      // the lower cutoff keeps a face the endpoint legitimately lives beyond
      // (the far side of a thin polygon) from blocking separation
      if (line_gap < kMargin && line_gap > -cap.r) {
        Vec2 dir = poly.vertices[(k + 1) % n] - v0;
        double len = dir.norm();
        double s = len > 1e-12 ? (e - v0).dot(dir) / len : -1.0;
        if (s >= 0.0 && s <= len)
          push(e - (line_gap + cap.r) * nk, nk, line_gap, 0x100 * (1 + ep) + 2 * static_cast<int>(k));
      }
      double dv = (e - v0).norm();
      if (dv - cap.r < kMargin && dv > 1e-9)
        push(v0, (1.0 / dv) * (e - v0), dv - cap.r,
             0x100 * (1 + ep) + 2 * static_cast<int>(k) + 1);
    }
  }

  for (size_t k = 0; k < n; ++k) {
    const Vec2& v = poly.vertices[k];
    auto sd = geom2d::point_segment_distance(v, cap.a, cap.b);
    if (sd.distance - cap.r >= kMargin) continue;
    Vec2 n_avg = (edge_normal((k + n - 1) % n) + edge_normal(k)).normalized();
    Vec2 ap = sd.closest;
    int feat = 3 + static_cast<int>(k);
    if (poly.contains(ap)) {
      // the axis slipped past this corner: measure how far the capsule
      // surface reaches beyond it and push back out through the corner
      double depth = (v - ap).dot(n_avg) + cap.r;
      push(v, n_avg, -depth, feat);
      continue;
    }
    // only a vertex whose exterior cone holds the nearest axis point is a
    // real feature; for any other vertex the nearest feature is an edge, and
    // pushing along a made-up corner normal would drag the object sideways
    Vec2 rel = ap - v;
    if (rel.dot(v - poly.vertices[(k + n - 1) % n]) >= 0.0 &&
        rel.dot(poly.vertices[(k + 1) % n] - v) <= 0.0) {
      Vec2 nrm = sd.distance > 1e-9 ? (1.0 / sd.distance) * rel : n_avg;
      push(v, nrm, sd.distance - cap.r, feat);
    }
  }

  // axis fully inside: push the deepest sample out
  Vec2 samples[3] = {cap.a, 0.5 * (cap.a + cap.b), cap.b};
  double deepest = -1.0;
  Vec2 deep_pt{0.0, 0.0};
  for (const Vec2& s : samples) {
    if (poly.contains(s)) {
      double d = poly.interior_depth(s);
      if (d > deepest) {
        deepest = d;
        deep_pt = s;
      }
    }
  }
  if (deepest >= 0.0) {
    PolyDist pd = polygon_signed_distance(poly, deep_pt);
    push(pd.boundary, pd.outward, pd.dist - cap.r, 2);
  }
}

void collect_contacts(const WorldState& w, const Kinematics& kin, const Polygon& wpoly,
                      double dt, bool speculative, std::vector<Contact>& out) {
  out.clear();

  // self collisions; one contact per capsule endpoint, not just the single
  // closest pair, so two capsules scissoring shut are pinned at both ends
  for (int i = 0; i < kNumLinks; ++i) {
    for (int j = i + 1; j < kNumLinks; ++j) {
      if (adjacent_links(i, j)) continue;
      const Capsule& ci = kin.capsules[static_cast<size_t>(i)];
      const Capsule& cj = kin.capsules[static_cast<size_t>(j)];
      auto push_self = [&](const Vec2& p_i, const Vec2& p_j, double d, int feat) {
        if (d <= 1e-12) return;
        double gap = d - ci.r - cj.r;
        if (gap >= kMargin) return;
        Contact c{i, j, 0.5 * (p_i + p_j), (1.0 / d) * (p_j - p_i), gap, w.robot_friction,
                  contact_target(gap, dt), 0.0, 0.0, 0.0, 0.0, true, ContactClass::UndesiredSelf,
                  contact_key(i, j, feat)};
        out.push_back(c);
      };
      auto s1 = geom2d::point_segment_distance(ci.a, cj.a, cj.b);
      push_self(ci.a, s1.closest, s1.distance, 1);
      auto s2 = geom2d::point_segment_distance(ci.b, cj.a, cj.b);
      push_self(ci.b, s2.closest, s2.distance, 2);
      auto s3 = geom2d::point_segment_distance(cj.a, ci.a, ci.b);
      push_self(s3.closest, cj.a, s3.distance, 3);
      auto s4 = geom2d::point_segment_distance(cj.b, ci.a, ci.b);
      push_self(s4.closest, cj.b, s4.distance, 4);
      SegClosest sc = closest_segment_segment(ci.a, ci.b, cj.a, cj.b);
      if (sc.d <= 1e-12) {
        // crossed axes: every endpoint normal points through the other body,
        // so separate the capsules center to center
        Vec2 nrm = (0.5 * (cj.a + cj.b) - 0.5 * (ci.a + ci.b)).normalized();
        Contact c{i, j, 0.5 * (sc.p1 + sc.p2), nrm, -ci.r - cj.r, w.robot_friction,
                  contact_target(-ci.r - cj.r, dt), 0.0, 0.0, 0.0, 0.0, true,
                  ContactClass::UndesiredSelf, contact_key(i, j, 0)};
        out.push_back(c);
      }
    }
  }

  // link capsules against the object
  for (int link = 0; link < kNumLinks; ++link) {
    capsule_polygon_contact(kin.capsules[static_cast<size_t>(link)], wpoly, link,
                            w.object.shape.friction, dt, speculative, out);
  }

  // link capsules against the table
  for (int link = 0; link < kNumLinks; ++link) {
    const Capsule& cap = kin.capsules[static_cast<size_t>(link)];
    int endpoint = 0;
    for (const Vec2& e : {cap.a, cap.b}) {
      double gap = e.y - cap.r - w.table_height;
      if (gap < kMargin) {
        Contact c{kBodyTable, link, Vec2{e.x, e.y - cap.r}, Vec2{0.0, 1.0}, gap,
                  w.robot_friction, contact_target(gap, dt), 0.0, 0.0, 0.0, 0.0, true,
                  ContactClass::UndesiredTable, contact_key(kBodyTable, link, endpoint)};
        out.push_back(c);
      }
      ++endpoint;
    }
  }

  // object vertices against the table: solved last so the support constraint
  // wins the Gauss-Seidel ordering when the object is squeezed
  int vertex = 0;
  for (const Vec2& v : wpoly.vertices) {
    double gap = v.y - w.table_height;
    if (gap < kMargin) {
      Contact c{kBodyTable, kBodyObject, v, {0.0, 1.0}, gap, w.object.shape.friction,
                contact_target(gap, dt), 0.0, 0.0, 0.0, 0.0, false, ContactClass::Desired,
                contact_key(kBodyTable, kBodyObject, vertex)};
      out.push_back(c);
    }
    ++vertex;
  }
}

struct Solver {
  WorldState& w;
  const Kinematics& kin;
  const Joint9& inertia;
  Vec2 obj_com;
  double obj_inertia;

  Vec2 velocity_at(int body, const Vec2& p) const {
    if (body == kBodyTable) return {0.0, 0.0};
    if (body == kBodyObject) {
      Vec2 r = p - obj_com;
      return w.object.linvel + w.object.angvel * r.perp();
    }
    const Chain& ch = kin.chains[static_cast<size_t>(body)];
    Vec2 v{0.0, 0.0};
    for (int i = 0; i < ch.n; ++i) {
      const ChainEntry& e = ch.e[static_cast<size_t>(i)];
      v += (w.joints.qdot[static_cast<size_t>(e.joint)] * e.sign) * (p - e.pivot).perp();
    }
    return v;
  }

  double inv_mass(int body, const Vec2& p, const Vec2& dir) const {
    if (body == kBodyTable) return 0.0;
    if (body == kBodyObject) {
      Vec2 r = p - obj_com;
      double cr = r.cross(dir);
      return 1.0 / w.object.shape.mass + cr * cr / obj_inertia;
    }
    const Chain& ch = kin.chains[static_cast<size_t>(body)];
    double sum = 0.0;
    for (int i = 0; i < ch.n; ++i) {
      const ChainEntry& e = ch.e[static_cast<size_t>(i)];
      double cr = (p - e.pivot).cross(dir);
      sum += cr * cr / inertia[static_cast<size_t>(e.joint)];
    }
    return sum;
  }

  // effective mass of a contact as one system. For two chain links the
  // chains overlap: a joint shared by both sides swings the coincident
  // contact points together and contributes nothing, so summing the two
  // per-chain masses would overcount exactly those joints
  double inv_mass_pair(const Contact& c, const Vec2& dir) const {
    if (c.body_a < 0 || c.body_b < 0)
      return inv_mass(c.body_a, c.point, dir) + inv_mass(c.body_b, c.point, dir);
    double jac[kNumJoints] = {};
    const Chain& cb = kin.chains[static_cast<size_t>(c.body_b)];
    for (int i = 0; i < cb.n; ++i) {
      const ChainEntry& e = cb.e[static_cast<size_t>(i)];
      jac[e.joint] += e.sign * (c.point - e.pivot).cross(dir);
    }
    const Chain& ca = kin.chains[static_cast<size_t>(c.body_a)];
    for (int i = 0; i < ca.n; ++i) {
      const ChainEntry& e = ca.e[static_cast<size_t>(i)];
      jac[e.joint] -= e.sign * (c.point - e.pivot).cross(dir);
    }
    double sum = 0.0;
    for (size_t j = 0; j < kNumJoints; ++j) sum += jac[j] * jac[j] / inertia[j];
    return sum;
  }

  void apply(int body, const Vec2& p, const Vec2& impulse) {
    if (body == kBodyTable) return;
    if (body == kBodyObject) {
      w.object.linvel += (1.0 / w.object.shape.mass) * impulse;
      w.object.angvel += (p - obj_com).cross(impulse) / obj_inertia;
      w.object_impulse_accum += impulse;
      return;
    }
    const Chain& ch = kin.chains[static_cast<size_t>(body)];
    for (int i = 0; i < ch.n; ++i) {
      const ChainEntry& e = ch.e[static_cast<size_t>(i)];
      w.joints.qdot[static_cast<size_t>(e.joint)] +=
          e.sign * (p - e.pivot).cross(impulse) / inertia[static_cast<size_t>(e.joint)];
    }
  }

  // re-apply last substep's impulses so the iteration refines an already
  // converged solution instead of rebuilding it from zero
  void warm_start(std::vector<Contact>& contacts) {
    for (Contact& c : contacts) {
      if (c.lambda_n == 0.0 && c.lambda_t == 0.0) continue;
      Vec2 p = c.lambda_n * c.normal + c.lambda_t * c.normal.perp();
      apply(c.body_b, c.point, p);
      apply(c.body_a, c.point, -p);
    }
  }

  // one Gauss-Seidel update, normal then friction, with accumulated clamping
  void pair_update(Contact& c) {
    Vec2 vrel = velocity_at(c.body_b, c.point) - velocity_at(c.body_a, c.point);
    double kn = inv_mass_pair(c, c.normal);
    if (kn > 1e-12) {
      double dl = -(vrel.dot(c.normal) - c.target_vn) / kn;
      double new_l = std::max(0.0, c.lambda_n + dl);
      dl = new_l - c.lambda_n;
      c.lambda_n = new_l;
      if (dl != 0.0) {
        Vec2 p = dl * c.normal;
        apply(c.body_b, c.point, p);
        apply(c.body_a, c.point, -p);
      }
    }

    Vec2 tan = c.normal.perp();
    vrel = velocity_at(c.body_b, c.point) - velocity_at(c.body_a, c.point);
    double kt = inv_mass_pair(c, tan);
    if (kt > 1e-12) {
      double dl = -vrel.dot(tan) / kt;
      double max_t = c.mu * c.lambda_n;
      double new_l = std::clamp(c.lambda_t + dl, -max_t, max_t);
      dl = new_l - c.lambda_t;
      c.lambda_t = new_l;
      if (dl != 0.0) {
        Vec2 p = dl * tan;
        apply(c.body_b, c.point, p);
        apply(c.body_a, c.point, -p);
      }
    }
  }

  // same update with the object held static; the impulse lands on the link
  // chain alone and is tracked separately so warm starting never replays it
  // onto the object
  void static_update(Contact& c) {
    double kn = inv_mass(c.body_b, c.point, c.normal);
    if (kn <= 1e-12) return;
    Vec2 vrel = velocity_at(c.body_b, c.point) - velocity_at(c.body_a, c.point);
    double dl = -(vrel.dot(c.normal) - c.target_vn) / kn;
    double new_l = std::max(0.0, c.lambda_ns + dl);
    dl = new_l - c.lambda_ns;
    c.lambda_ns = new_l;
    if (dl != 0.0) apply(c.body_b, c.point, dl * c.normal);

    Vec2 tan = c.normal.perp();
    double kt = inv_mass(c.body_b, c.point, tan);
    if (kt <= 1e-12) return;
    vrel = velocity_at(c.body_b, c.point) - velocity_at(c.body_a, c.point);
    double dt_l = -vrel.dot(tan) / kt;
    double max_t = c.mu * (c.lambda_n + c.lambda_ns);
    double new_t = std::clamp(c.lambda_ts + dt_l, -max_t, max_t);
    dt_l = new_t - c.lambda_ts;
    c.lambda_ts = new_t;
    if (dt_l != 0.0) apply(c.body_b, c.point, dt_l * tan);
  }

  void solve(std::vector<Contact>& contacts) {
    warm_start(contacts);
    for (int iter = 0; iter < kSolverIters; ++iter) {
      for (Contact& c : contacts) pair_update(c);
    }

    // a link pressing the object into a support (table or an opposing link)
    // barely decelerates in the sweeps above: each transfer is sized by the
    // light object's inverse mass, so stopping an arm sweep would need
    // hundreds of iterations. Final sweeps with the object held static let
    // the chain absorb the full stopping impulse; all other contacts keep
    // their normal updates so the shocked links still respect the table and
    // each other. A contact already at its target gains nothing here, so a
    // freely pushed object is unaffected.
    for (int iter = 0; iter < kShockIters; ++iter) {
      for (Contact& c : contacts) {
        if (c.body_a == kBodyObject && c.body_b >= 0) {
          static_update(c);
        } else {
          pair_update(c);
        }
      }
    }
  }
};

void shift_position(WorldState& w, const Kinematics& kin, const Joint9& inertia, const Vec2& com,
                    int body, const Vec2& p, const Vec2& impulse) {
  if (body == kBodyTable) return;
  if (body == kBodyObject) {
    w.object.pose.position += (1.0 / w.object.shape.mass) * impulse;
    w.object.pose.angle = geom2d::wrap_angle(w.object.pose.angle +
                                             (p - com).cross(impulse) / w.object.shape.inertia());
    return;
  }
  const Chain& ch = kin.chains[static_cast<size_t>(body)];
  for (int i = 0; i < ch.n; ++i) {
    const ChainEntry& e = ch.e[static_cast<size_t>(i)];
    w.joints.q[static_cast<size_t>(e.joint)] +=
        e.sign * (p - e.pivot).cross(impulse) / inertia[static_cast<size_t>(e.joint)];
  }
}

// heals residual overlap by moving positions directly; velocities are never
// touched, so stacked corrections cannot pump kinetic energy the way a
// velocity-level bias would
void position_correct(WorldState& w) {
  std::vector<Contact> contacts;
  for (int it = 0; it < kPosIters; ++it) {
    Kinematics kin = forward_kinematics(w.model, w.joints.q);
    Joint9 inertia = joint_inertias(w.model, kin);
    Polygon wpoly = world_polygon(w.object);
    contacts.clear();
    collect_contacts(w, kin, wpoly, 1.0, false, contacts);
    Vec2 com = w.object.pose.position;
    Solver s{w, kin, inertia, com, w.object.shape.inertia()};
    bool grounded = false;
    for (const Contact& c : contacts) {
      if (c.body_a == kBodyTable && c.body_b == kBodyObject && c.gap < kSlop) grounded = true;
    }
    bool corrected = false;
    for (const Contact& c : contacts) {
      double pen = -c.gap - kSlop;
      if (pen <= 0.0) continue;
      // healing a link-object overlap by moving the light object would just
      // press it into the table when it is resting there; back the link's
      // joints off instead
      bool link_only = c.body_a == kBodyObject && c.body_b >= 0 && grounded && c.normal.y > 0.0;
      double k = link_only ? s.inv_mass(c.body_b, c.point, c.normal) : s.inv_mass_pair(c, c.normal);
      if (k <= 1e-12) continue;
      Vec2 p = (std::min(kBeta * pen, kMaxCorr) / k) * c.normal;
      shift_position(w, kin, inertia, com, c.body_b, c.point, p);
      if (!link_only) shift_position(w, kin, inertia, com, c.body_a, c.point, -p);
      corrected = true;
    }
    if (!corrected) break;
  }
}

void check_finite(const WorldState& w) {
  for (size_t j = 0; j < kNumJoints; ++j) {
    if (!std::isfinite(w.joints.q[j]) || !std::isfinite(w.joints.qdot[j])) {
      throw std::runtime_error("simulation diverged: joint" + std::to_string(j));
    }
  }
  if (!w.object.pose.position.finite() || !std::isfinite(w.object.pose.angle) ||
      !w.object.linvel.finite() || !std::isfinite(w.object.angvel)) {
    throw std::runtime_error("simulation diverged: object");
  }
}

}  // namespace

WorldState make_world(const RobotModel& model, const Polygon& shape, const Pose2& object_pose) {
  std::vector<Vec2> centered = shape.vertices;
  for (Vec2& v : centered) v -= shape.centroid;
  WorldState w;
  w.model = model;
  w.object.shape = Polygon::from_vertices(centered, shape.friction, shape.mass);
  w.object.pose = object_pose;
  w.gains = PDGains::nominal();
  return w;
}

void step(WorldState& w, const Joint9& targets, int substeps, double dt) {
  if (substeps < 1 || dt <= 0.0) throw std::invalid_argument("step: bad substeps or dt");
  w.contacts.clear();
  w.object_impulse_accum = {0.0, 0.0};
  std::vector<Contact> contacts;

  for (int s = 0; s < substeps; ++s) {
    check_finite(w);  // catch bad state before it spreads through the solver
    Kinematics kin = forward_kinematics(w.model, w.joints.q);
    Joint9 inertia = joint_inertias(w.model, kin);

    Joint9 tau = pd_torques(w.model, w.joints.q, w.joints.qdot, targets, w.gains);
    for (size_t j = 0; j < kNumJoints; ++j) {
      w.joints.qdot[j] += tau[j] / inertia[j] * dt;
    }

    w.object.linvel.y -= w.gravity * dt;
    Vec2 obj_com = w.object.pose.position;
    if (w.ext.remaining > 0.0) {
      Vec2 impulse = std::min(dt, w.ext.remaining) * w.ext.force;
      w.object.linvel += (1.0 / w.object.shape.mass) * impulse;
      w.object.angvel += w.ext.offset.cross(impulse) / w.object.shape.inertia();
      w.object_impulse_accum += impulse;
      w.ext.remaining = std::max(0.0, w.ext.remaining - dt);
    }

    Polygon wpoly = world_polygon(w.object);
    collect_contacts(w, kin, wpoly, dt, true, contacts);
    for (Contact& c : contacts) {
      for (const CachedImpulse& ci : w.contact_cache) {
        if (ci.key == c.key) {
          c.lambda_n = ci.lambda_n;
          c.lambda_t = ci.lambda_t;
          break;
        }
      }
    }
    Solver solver{w, kin, inertia, obj_com, w.object.shape.inertia()};
    solver.solve(contacts);
    w.contact_cache.clear();
    for (const Contact& c : contacts) {
      if (c.lambda_n != 0.0 || c.lambda_t != 0.0)
        w.contact_cache.push_back({c.key, c.lambda_n, c.lambda_t});
    }

    w.object.pose.position += dt * w.object.linvel;
    w.object.pose.angle = geom2d::wrap_angle(w.object.pose.angle + dt * w.object.angvel);
    for (size_t j = 0; j < kNumJoints; ++j) w.joints.q[j] += w.joints.qdot[j] * dt;
    position_correct(w);
    for (size_t j = 0; j < kNumJoints; ++j) {
      if (w.joints.q[j] < w.model.q_lo[j]) {
        w.joints.q[j] = w.model.q_lo[j];
        if (w.joints.qdot[j] < 0.0) w.joints.qdot[j] = 0.0;
      } else if (w.joints.q[j] > w.model.q_hi[j]) {
        w.joints.q[j] = w.model.q_hi[j];
        if (w.joints.qdot[j] > 0.0) w.joints.qdot[j] = 0.0;
      }
    }
    w.time += dt;
    check_finite(w);

    for (const Contact& c : contacts) {
      if (!c.recorded) continue;
      if (c.lambda_n + c.lambda_ns <= 0.0 && c.gap > 0.0) continue;
      w.contacts.push_back(
          {c.body_a, c.body_b, c.point, c.normal, c.lambda_n + c.lambda_ns, c.classification});
    }
  }
}

void apply_external_force(WorldState& w, const Vec2& force, const Vec2& point, double duration) {
  if (duration <= 0.0) throw std::invalid_argument("apply_external_force: non-positive duration");
  Polygon wpoly = world_polygon(w.object);
  Vec2 lo = wpoly.vertices[0], hi = wpoly.vertices[0];
  for (const Vec2& v : wpoly.vertices) {
    lo.x = std::min(lo.x, v.x);
    lo.y = std::min(lo.y, v.y);
    hi.x = std::max(hi.x, v.x);
    hi.y = std::max(hi.y, v.y);
  }
  if (point.x < lo.x - 0.01 || point.x > hi.x + 0.01 || point.y < lo.y - 0.01 ||
      point.y > hi.y + 0.01) {
    throw std::invalid_argument("apply_external_force: point outside the object neighborhood");
  }
  w.ext.force = force;
  w.ext.offset = point - w.object.pose.position;
  w.ext.remaining = duration;
}

std::array<double, kNumLinks> link_table_heights(const RobotModel& model, const Joint9& q,
                                                 double table_height) {
  Kinematics kin = forward_kinematics(model, q);
  std::array<double, kNumLinks> h;
  for (int i = 0; i < kNumLinks; ++i) {
    const Capsule& c = kin.capsules[static_cast<size_t>(i)];
    h[static_cast<size_t>(i)] = std::min(c.a.y, c.b.y) - c.r - table_height;
  }
  return h;
}

Vec2 point_velocity(const Kinematics& kin, int link, const Vec2& point, const Joint9& qdot) {
  const Chain& ch = kin.chains[static_cast<size_t>(link)];
  Vec2 v{0.0, 0.0};
  for (int i = 0; i < ch.n; ++i) {
    const ChainEntry& e = ch.e[static_cast<size_t>(i)];
    v += (qdot[static_cast<size_t>(e.joint)] * e.sign) * (point - e.pivot).perp();
  }
  return v;
}

double link_angular_velocity(const Kinematics& kin, int link, const Joint9& qdot) {
  const Chain& ch = kin.chains[static_cast<size_t>(link)];
  double w = 0.0;
  for (int i = 0; i < ch.n; ++i) {
    const ChainEntry& e = ch.e[static_cast<size_t>(i)];
    w += qdot[static_cast<size_t>(e.joint)] * e.sign;
  }
  return w;
}

}  // namespace graspcraft::sim
