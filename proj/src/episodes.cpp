#include "graspcraft/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace graspcraft::ep {

namespace {

constexpr double kPi = 3.14159265358979323846;

Vec2 unit(double a) { return {std::cos(a), std::sin(a)}; }

// arm parked near vertical, clear of the spawn region
const Joint9 kParkQ{1.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};

SizeClass classify_diameter(double d) {
  if (d <= geom2d::size_class_bounds(geom2d::SizeClass::Small).hi) return SizeClass::Small;
  if (d <= geom2d::size_class_bounds(geom2d::SizeClass::Medium).hi) return SizeClass::Medium;
  return SizeClass::Large;
}

}  // namespace

void EpisodeConfig::validate() const {
  if (steps <= 0) throw std::invalid_argument("episodes: steps must be positive");
  if (grasp_phase_steps <= 0 || grasp_phase_steps >= steps)
    throw std::invalid_argument("episodes: grasp_phase_steps must lie in (0, steps)");
  if (lift_height <= 0.0) throw std::invalid_argument("episodes: lift_height must be positive");
  if (lift_duration <= 0.0)
    throw std::invalid_argument("episodes: lift_duration must be positive");
  if (!(spawn.x_lo < spawn.x_hi))
    throw std::invalid_argument("episodes: spawn region must have x_lo < x_hi");
  double mix_sum = 0.0;
  for (double m : size_class_mix) {
    if (m < 0.0) throw std::invalid_argument("episodes: size_class_mix must be nonnegative");
    mix_sum += m;
  }
  if (mix_sum <= 0.0) throw std::invalid_argument("episodes: size_class_mix sums to zero");
  if (cloud_points < 8) throw std::invalid_argument("episodes: cloud_points must be at least 8");
}

void SuccessCriterion::validate() const {
  if (lift_threshold <= 0.0)
    throw std::invalid_argument("episodes: lift_threshold must be positive");
  if (hold_duration <= 0.0)
    throw std::invalid_argument("episodes: hold_duration must be positive");
}

void DisturbanceSpec::validate() const {
  if (magnitude < 0.0) throw std::invalid_argument("episodes: magnitude must be nonnegative");
  if (duration <= 0.0) throw std::invalid_argument("episodes: duration must be positive");
}

IkSolutions arm_ik(const sim::RobotModel& model, const Pose2& wrist) {
  IkSolutions out;
  double l1 = model.arm_lengths[0], l2 = model.arm_lengths[1], l3 = model.arm_lengths[2];
  Vec2 p2 = wrist.position - l3 * unit(wrist.angle);
  Vec2 r = p2 - model.base;
  double d2 = r.norm2();
  double c2 = (d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
  {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "wrist (%.4f, %.4f, %.4f): mid target %.4f m from base, annulus [%.4f, %.4f]",
                  wrist.position.x, wrist.position.y, wrist.angle, std::sqrt(d2),
                  std::abs(l1 - l2), l1 + l2);
    out.diagnostic = buf;
  }
  if (std::abs(c2) > 1.0 + 1e-9) {
    out.diagnostic += "; out of reach";
    return out;
  }
  c2 = std::clamp(c2, -1.0, 1.0);
  double phi = std::atan2(r.y, r.x);

  auto branch = [&](double sgn) {
    IkBranch b;
    double s2 = sgn * std::sqrt(std::max(0.0, 1.0 - c2 * c2));
    b.q[1] = std::atan2(s2, c2);
    b.q[0] = phi - std::atan2(l2 * s2, l1 + l2 * c2);
    b.q[2] = geom2d::wrap_angle(wrist.angle - b.q[0] - b.q[1]);
    b.feasible = true;
    for (int j = 0; j < 3; ++j)
      if (b.q[j] < model.q_lo[static_cast<size_t>(j)] ||
          b.q[j] > model.q_hi[static_cast<size_t>(j)])
        b.feasible = false;
    return b;
  };
  IkBranch a = branch(1.0), b = branch(-1.0);
  double ya = model.base.y + l1 * std::sin(a.q[0]);
  double yb = model.base.y + l1 * std::sin(b.q[0]);
  out.elbow_up = ya >= yb ? a : b;
  out.elbow_down = ya >= yb ? b : a;
  if (!out.any()) out.diagnostic += "; both elbow branches violate joint limits";
  return out;
}

InitialPose compute_initial_pose(const PointCloud& cloud, const sim::RobotModel& model) {
  if (cloud.points.empty())
    throw std::invalid_argument("compute_initial_pose: empty point cloud");
  Vec2 c{0.0, 0.0};
  for (const Vec2& p : cloud.points) c += p;
  c = c * (1.0 / static_cast<double>(cloud.points.size()));

  InitialPose out;
  out.wrist = Pose2{c + Vec2{0.0, kWristStandoff}, -kPi / 2.0};
  IkSolutions ik = arm_ik(model, out.wrist);
  const IkBranch& pick = ik.elbow_up.feasible ? ik.elbow_up : ik.elbow_down;
  if (!pick.feasible)
    throw std::runtime_error("compute_initial_pose: " + ik.diagnostic);
  for (int j = 0; j < 3; ++j) out.q[static_cast<size_t>(j)] = pick.q[static_cast<size_t>(j)];
  for (int f = 0; f < 2; ++f)
    for (int j = 0; j < 3; ++j) out.q[static_cast<size_t>(3 + 3 * f + j)] = kFingerInit[j];
  return out;
}

Pose2 settle_pose(const Polygon& shape, double angle0, double x_centroid, double table_height) {
  int n = static_cast<int>(shape.vertices.size());
  if (n < 3) throw std::invalid_argument("settle_pose: degenerate polygon");
  double a = geom2d::wrap_angle(angle0);

  // centroid-centered rotated vertices; the centroid is the origin here, so
  // edge support is stable exactly when the span straddles x = 0
  std::vector<Vec2> pts(static_cast<size_t>(n));
  auto rotate_all = [&]() {
    double ca = std::cos(a), sa = std::sin(a);
    for (int i = 0; i < n; ++i) {
      Vec2 v = shape.vertices[static_cast<size_t>(i)] - shape.centroid;
      pts[static_cast<size_t>(i)] = {ca * v.x - sa * v.y, sa * v.x + ca * v.y};
    }
  };

  for (int iter = 0; iter < 4 * n + 8; ++iter) {
    rotate_all();
    double miny = pts[0].y;
    for (const Vec2& p : pts) miny = std::min(miny, p.y);
    std::vector<int> support;
    for (int i = 0; i < n; ++i)
      if (pts[static_cast<size_t>(i)].y <= miny + 1e-12) support.push_back(i);

    int pivot;
    if (support.size() >= 2) {
      double minx = pts[static_cast<size_t>(support[0])].x, maxx = minx;
      int imin = support[0], imax = support[0];
      for (int i : support) {
        double x = pts[static_cast<size_t>(i)].x;
        if (x < minx) { minx = x; imin = i; }
        if (x > maxx) { maxx = x; imax = i; }
      }
      if (minx <= 0.0 && 0.0 <= maxx) break;  // centroid above the support span
      pivot = minx > 0.0 ? imin : imax;
    } else {
      pivot = support[0];
      if (std::abs(pts[static_cast<size_t>(pivot)].x) < 1e-12) break;  // balanced
    }

    // gravity torque about the pivot: positive pivot.x tips counter-clockwise
    double dir = pts[static_cast<size_t>(pivot)].x > 0.0 ? 1.0 : -1.0;
    double best = kPi;
    for (int nb : {(pivot + 1) % n, (pivot + n - 1) % n}) {
      Vec2 w = pts[static_cast<size_t>(nb)] - pts[static_cast<size_t>(pivot)];
      if (w.norm2() < 1e-20) continue;
      double ang = std::atan2(w.y, w.x);  // in (0, pi): neighbors sit above
      double phi = dir > 0.0 ? kPi - ang : ang;
      if (phi > 1e-12 && phi < best) best = phi;
    }
    a = geom2d::wrap_angle(a + dir * best);
  }

  rotate_all();
  double miny = pts[0].y;
  for (const Vec2& p : pts) miny = std::min(miny, p.y);
  return Pose2{{x_centroid, table_height - miny}, a};
}

sim::ObjectState spawn_object(Rng& rng, const Polygon& shape, const SpawnRegion& region,
                              const sim::RobotModel& model, double table_height) {
  double x = rng.uniform(region.x_lo, region.x_hi);
  double angle0 = rng.uniform(-kPi, kPi);
  Pose2 pose = settle_pose(shape, angle0, x, table_height);

  sim::WorldState world = sim::make_world(model, shape, pose);
  world.table_height = table_height;
  world.joints.q = kParkQ;
  sim::step(world, kParkQ, 50, kSimDt);

  double residual = world.object.linvel.norm() +
                    std::abs(world.object.angvel) * 0.5 * shape.diameter();
  if (residual > 1e-3) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "spawn_object: settling failed, residual %.6f m/s",
                  residual);
    throw std::runtime_error(buf);
  }
  sim::ObjectState st = world.object;
  st.linvel = {0.0, 0.0};
  st.angvel = 0.0;
  return st;
}

double bottom_height(const sim::WorldState& world) {
  double lo = std::numeric_limits<double>::infinity();
  for (const Vec2& v : world.object.shape.vertices)
    lo = std::min(lo, world.object.pose.apply(v).y);
  return lo - world.table_height;
}

bool evaluate_success(const std::vector<double>& hold_bottoms, const SuccessCriterion& c) {
  size_t need = static_cast<size_t>(std::llround(c.hold_duration / kSimDt));
  if (hold_bottoms.size() < need) return false;
  for (double b : hold_bottoms)
    if (b < c.lift_threshold) return false;
  return true;
}

void GraspEnvConfig::validate() const {
  episode.validate();
  success.validate();
  disturbance.validate();
  if (object_mass <= 0.0) throw std::invalid_argument("episodes: object_mass must be positive");

  // Initial poses must exist across the region plus slack for cloud-center
  // offsets; the nominal lift must stay reachable across the region itself.
  // (The lift ramp tolerates transient IK failure by holding its last
  // offset, so only the nominal case is a hard requirement.)
  double slack = 0.08;
  auto sweep = [&](double margin, double o) {
    double lo = episode.spawn.x_lo - margin, hi = episode.spawn.x_hi + margin;
    for (int i = 0; i <= 32; ++i) {
      double cx = lo + (hi - lo) * i / 32.0;
      for (double cy : {0.005, 0.04, 0.08, 0.12}) {
        Pose2 wrist{{cx, table_height + cy + kWristStandoff + o}, -kPi / 2.0};
        IkSolutions ik = arm_ik(model, wrist);
        if (!ik.any())
          throw std::invalid_argument("episodes: spawn region unreachable; " + ik.diagnostic);
      }
    }
  };
  sweep(slack, 0.0);
  sweep(0.0, episode.lift_height);
}

GraspEnv::GraspEnv(const GraspEnvConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  camera_ = {0.5 * (cfg_.episode.spawn.x_lo + cfg_.episode.spawn.x_hi),
             cfg_.table_height + kCameraHeight};
}

Vec GraspEnv::action_lo() const {
  Vec lo(sim::kNumJoints);
  for (int j = 0; j < sim::kNumJoints; ++j) lo(j) = cfg_.model.q_lo[static_cast<size_t>(j)];
  return lo;
}

Vec GraspEnv::action_hi() const {
  Vec hi(sim::kNumJoints);
  for (int j = 0; j < sim::kNumJoints; ++j) hi(j) = cfg_.model.q_hi[static_cast<size_t>(j)];
  return hi;
}

void GraspEnv::set_fixed_object(const Polygon& shape, const Pose2& pose) {
  fixed_object_ = std::make_pair(shape, pose);
}

void GraspEnv::tag(uint64_t seed, int object_id) {
  traj_.seed = seed;
  traj_.object_id = object_id;
  result_.seed = seed;
  result_.object_id = object_id;
}

Vec GraspEnv::reset(const train::EnvParams& params, Rng& rng) {
  params_ = params;
  traj_ = Trajectory{};
  result_ = EpisodeResult{};
  traj_.params = params;
  result_.params = params;

  Polygon shape;
  Pose2 object_pose;
  if (fixed_object_) {
    shape = fixed_object_->first;
    object_pose = fixed_object_->second;
  } else {
    double u = rng.uniform();
    double mix_sum = cfg_.episode.size_class_mix[0] + cfg_.episode.size_class_mix[1] +
                     cfg_.episode.size_class_mix[2];
    SizeClass cls = SizeClass::Large;
    double acc = 0.0;
    for (int k = 0; k < 3; ++k) {
      acc += cfg_.episode.size_class_mix[static_cast<size_t>(k)] / mix_sum;
      if (u < acc) {
        cls = static_cast<SizeClass>(k);
        break;
      }
    }
    shape = geom2d::random_convex_polygon(rng, cls);
    shape.friction = params.friction;
    shape.mass = cfg_.object_mass;
    object_pose = spawn_object(rng, shape, cfg_.episode.spawn, cfg_.model,
                               cfg_.table_height)
                      .pose;
  }
  noise_rng_ = rng.split(11);
  disturb_rng_ = rng.split(12);

  traj_.size_class = classify_diameter(shape.diameter());
  result_.size_class = traj_.size_class;

  world_ = sim::make_world(cfg_.model, shape, object_pose);
  world_.table_height = cfg_.table_height;
  world_.gains = sim::PDGains::scaled(params.hand_kp_scale, params.hand_kd_scale,
                                      params.arm_kp_scale, params.arm_kd_scale);

  PointCloud full = geom2d::sample_boundary(world_.object.shape, world_.object.pose,
                                            cfg_.episode.cloud_points);
  PointCloud pose_cloud = cfg_.kind == rep::ObsKind::Student
                              ? geom2d::visible_points(full, world_.object.shape,
                                                       world_.object.pose, camera_)
                              : full;
  InitialPose init = compute_initial_pose(pose_cloud, cfg_.model);
  world_.joints.q = init.q;
  initial_q_ = init.q;
  a_prev_ = init.q;
  summary_ = rep::ContactSummary{};
  start_pos_ = world_.object.pose.position;
  step_ = 0;
  done_ = false;
  lift_armed_ = false;
  lift_delta_ = {0.0, 0.0, 0.0};
  result_.max_height = std::max(0.0, bottom_height(world_));
  return observe();
}

bool GraspEnv::divergence(std::string* what) const {
  const sim::JointState& js = world_.joints;
  for (int j = 0; j < sim::kNumJoints; ++j) {
    if (!std::isfinite(js.q[static_cast<size_t>(j)]) ||
        !std::isfinite(js.qdot[static_cast<size_t>(j)]) ||
        std::abs(js.qdot[static_cast<size_t>(j)]) > 200.0) {
      *what = "joint state diverged";
      return true;
    }
  }
  const sim::ObjectState& ob = world_.object;
  if (!ob.pose.position.finite() || !std::isfinite(ob.pose.angle) || !ob.linvel.finite() ||
      !std::isfinite(ob.angvel) || ob.linvel.norm() > 50.0 || std::abs(ob.angvel) > 500.0) {
    *what = "object state diverged";
    return true;
  }
  return false;
}

Vec GraspEnv::observe() {
  PointCloud full = geom2d::sample_boundary(world_.object.shape, world_.object.pose,
                                            cfg_.episode.cloud_points);
  Joint9 q = world_.joints.q;
  rep::ContactSlot slot = rep::ContactSlot::from(summary_);
  rep::Observation o;
  if (cfg_.kind == rep::ObsKind::Student) {
    PointCloud view =
        geom2d::visible_points(full, world_.object.shape, world_.object.pose, camera_);
    if (params_.sensor_noise) {
      q = rep::inject_noise(q, cfg_.noise, noise_rng_);
      o = rep::assemble_observation(rep::ObsKind::Student, a_prev_, q, view, slot, cfg_.model,
                                    cfg_.table_height, &cfg_.noise, &noise_rng_);
    } else {
      o = rep::assemble_observation(rep::ObsKind::Student, a_prev_, q, view, slot, cfg_.model,
                                    cfg_.table_height);
    }
  } else {
    o = rep::assemble_observation(rep::ObsKind::Teacher, a_prev_, q, full, slot, cfg_.model,
                                  cfg_.table_height);
  }
  Vec v(rep::kObsDim);
  for (int i = 0; i < rep::kObsDim; ++i) v(i) = o.v[static_cast<size_t>(i)];
  return v;
}

Vec GraspEnv::privileged_obs() const {
  PointCloud full = geom2d::sample_boundary(world_.object.shape, world_.object.pose,
                                            cfg_.episode.cloud_points);
  rep::Observation o =
      rep::assemble_observation(rep::ObsKind::Teacher, a_prev_, world_.joints.q, full,
                                rep::ContactSlot::from(summary_), cfg_.model, cfg_.table_height);
  Vec v(rep::kObsDim);
  for (int i = 0; i < rep::kObsDim; ++i) v(i) = o.v[static_cast<size_t>(i)];
  return v;
}

void GraspEnv::contact_targets(double* b8, double* f8) const {
  for (int k = 0; k < sim::kNumHandLinks; ++k) {
    b8[k] = summary_.b[static_cast<size_t>(k)] ? 1.0 : 0.0;
    f8[k] = summary_.f[static_cast<size_t>(k)] / rep::kImpulseScale;
  }
}

void GraspEnv::run_hold(const Joint9& held_targets) {
  int ticks = static_cast<int>(std::llround(cfg_.success.hold_duration / kSimDt));
  traj_.hold_bottoms.reserve(static_cast<size_t>(ticks));
  for (int t = 0; t < ticks; ++t) {
    sim::step(world_, held_targets, 1, kSimDt);
    std::string what;
    if (divergence(&what)) {
      result_.diverged = true;
      result_.diagnostic = "hold: " + what;
      return;
    }
    double b = bottom_height(world_);
    traj_.hold_bottoms.push_back(b);
    result_.max_height = std::max(result_.max_height, b);
    if (b < cfg_.success.lift_threshold) return;  // already failed
  }
}

train::StepOut GraspEnv::step(const Vec& action) {
  if (done_) throw std::logic_error("GraspEnv::step: episode finished");

  StepRecord rec;
  Joint9 act{};
  for (int j = 0; j < sim::kNumJoints; ++j)
    act[static_cast<size_t>(j)] =
        std::clamp(action(j), cfg_.model.q_lo[static_cast<size_t>(j)],
                   cfg_.model.q_hi[static_cast<size_t>(j)]);
  rec.action = act;

  Joint9 targets = act;
  if (cfg_.episode.scripted_lift && step_ >= cfg_.episode.grasp_phase_steps) {
    if (!lift_armed_) {
      lift_armed_ = true;
      wrist_ref_ = sim::forward_kinematics(cfg_.model, world_.joints.q).wrist;
      IkSolutions ik = arm_ik(cfg_.model, wrist_ref_);
      auto closest = [&](const IkSolutions& s, const std::array<double, 3>& ref,
                         std::array<double, 3>* q) {
        double best = std::numeric_limits<double>::infinity();
        bool ok = false;
        for (const IkBranch* b : {&s.elbow_up, &s.elbow_down}) {
          if (!b->feasible) continue;
          double dist = 0.0;
          for (int j = 0; j < 3; ++j)
            dist += (b->q[static_cast<size_t>(j)] - ref[static_cast<size_t>(j)]) *
                    (b->q[static_cast<size_t>(j)] - ref[static_cast<size_t>(j)]);
          if (dist < best) {
            best = dist;
            *q = b->q;
            ok = true;
          }
        }
        return ok;
      };
      std::array<double, 3> here{world_.joints.q[0], world_.joints.q[1], world_.joints.q[2]};
      lift_feasible_ = closest(ik, here, &ik_ref_);
    }
    if (lift_feasible_) {
      int k = step_ - cfg_.episode.grasp_phase_steps;
      double o = cfg_.episode.lift_height *
                 std::min(1.0, (k + 1) * kControlDt / cfg_.episode.lift_duration);
      Pose2 target = wrist_ref_;
      target.position.y += o;
      IkSolutions ik = arm_ik(cfg_.model, target);
      double best = std::numeric_limits<double>::infinity();
      bool found = false;
      std::array<double, 3> qsol{};
      for (const IkBranch* b : {&ik.elbow_up, &ik.elbow_down}) {
        if (!b->feasible) continue;
        double dist = 0.0;
        for (int j = 0; j < 3; ++j)
          dist += (b->q[static_cast<size_t>(j)] - ik_ref_[static_cast<size_t>(j)]) *
                  (b->q[static_cast<size_t>(j)] - ik_ref_[static_cast<size_t>(j)]);
        if (dist < best) {
          best = dist;
          qsol = b->q;
          found = true;
        }
      }
      if (found)
        for (int j = 0; j < 3; ++j)
          lift_delta_[static_cast<size_t>(j)] =
              qsol[static_cast<size_t>(j)] - ik_ref_[static_cast<size_t>(j)];
      for (int j = 0; j < 3; ++j) {
        targets[static_cast<size_t>(j)] += lift_delta_[static_cast<size_t>(j)];
        targets[static_cast<size_t>(j)] =
            std::clamp(targets[static_cast<size_t>(j)], cfg_.model.q_lo[static_cast<size_t>(j)],
                       cfg_.model.q_hi[static_cast<size_t>(j)]);
      }
    }
  }

  int onset = cfg_.episode.grasp_phase_steps +
              static_cast<int>(std::ceil(cfg_.episode.lift_duration / kControlDt));
  if (cfg_.disturb && step_ == onset && !traj_.disturbed &&
      bottom_height(world_) >= cfg_.success.lift_threshold) {
    double th = disturb_rng_.uniform(-kPi, kPi);
    double s = disturb_rng_.uniform(0.0, world_.object.shape.perimeter());
    const std::vector<Vec2>& verts = world_.object.shape.vertices;
    Vec2 point = world_.object.pose.apply(verts[0]);
    double acc = 0.0;
    for (size_t i = 0; i < verts.size(); ++i) {
      Vec2 a = world_.object.pose.apply(verts[i]);
      Vec2 b = world_.object.pose.apply(verts[(i + 1) % verts.size()]);
      double len = (b - a).norm();
      if (s <= acc + len || i + 1 == verts.size()) {
        double t = len > 0.0 ? std::clamp((s - acc) / len, 0.0, 1.0) : 0.0;
        point = a + t * (b - a);
        break;
      }
      acc += len;
    }
    Vec2 force = cfg_.disturbance.magnitude * unit(th);
    sim::apply_external_force(world_, force, point, cfg_.disturbance.duration);
    traj_.disturbed = true;
    traj_.disturb_force = force;
    traj_.disturb_point = point;
    rec.disturbed = true;
    result_.disturbed = true;
  }

  sim::step(world_, targets, kSubsteps, kSimDt);

  std::string what;
  if (divergence(&what)) {
    done_ = true;
    result_.diverged = true;
    result_.diagnostic = "step " + std::to_string(step_) + ": " + what;
    rec.reward = 0.0;
    rec.q = world_.joints.q;
    rec.object_pose = world_.object.pose;
    traj_.steps.push_back(rec);
    train::StepOut out;
    out.obs = Vec::Zero(rep::kObsDim);
    out.reward = 0.0;
    out.done = true;
    out.success = false;
    return out;
  }

  summary_ = rep::summarize_contacts(world_.contacts);
  PointCloud full = geom2d::sample_boundary(world_.object.shape, world_.object.pose,
                                            cfg_.episode.cloud_points);
  rep::FeatureSet feats = rep::extract_features(cfg_.model, a_prev_, world_.joints.q, full,
                                                cfg_.table_height);
  reward::RewardBreakdown rb =
      reward::total_reward(world_, feats.d, summary_, start_pos_, cfg_.weights);

  rec.reward = rb.total;
  rec.breakdown = rb;
  rec.q = world_.joints.q;
  rec.object_pose = world_.object.pose;

  result_.reward_sum += rb.total;
  result_.sums.r_dis += rb.r_dis;
  result_.sums.r_contact += rb.r_contact;
  result_.sums.r_height += rb.r_height;
  result_.sums.r_reg += rb.r_reg;
  result_.sums.total += rb.total;
  double bh = bottom_height(world_);
  result_.max_height = std::max(result_.max_height, bh);
  if (summary_.b[4] || summary_.b[7]) result_.fingertip_contact_steps += 1;
  for (int k = 0; k < sim::kNumHandLinks; ++k)
    result_.desired_impulse_sum += summary_.f[static_cast<size_t>(k)];

  a_prev_ = act;
  step_ += 1;
  done_ = step_ >= cfg_.episode.steps;

  bool success = false;
  if (done_) {
    run_hold(targets);
    success = !result_.diverged && evaluate_success(traj_.hold_bottoms, cfg_.success);
    result_.success = success;
    if (result_.success && result_.max_height < cfg_.success.lift_threshold)
      throw std::logic_error("GraspEnv: success without reaching the lift threshold");
  }
  traj_.steps.push_back(rec);

  train::StepOut out;
  out.obs = observe();
  out.reward = rb.total;
  out.done = done_;
  out.success = success;
  return out;
}

PolicyActor::PolicyActor(const neural::Policy& policy, const neural::GruEncoder* encoder)
    : policy_(policy), encoder_(encoder) {
  if (encoder_) h_ = Mat::Zero(encoder_->hidden_dim(), 1);
}

void PolicyActor::begin_episode() {
  if (encoder_) h_.setZero();
}

Vec PolicyActor::act(const Vec& obs) {
  Vec o = obs;
  if (encoder_) {
    Mat x = train::encoder_obs_input(o);
    Mat h_next;
    std::vector<Mat> raw = neural::gru_forward(*encoder_, {x}, h_, nullptr, &h_next);
    Mat bh, fh;
    neural::decode_contacts(raw[0], &bh, &fh);
    train::patch_contact_slots(o, bh, fh);
    h_ = h_next;
  }
  return policy_.mean(Mat(o)).col(0);
}

Vec ScriptActor::act(const Vec&) {
  const Joint9& a = actions_.empty()
                        ? kParkQ
                        : actions_[std::min(k_, actions_.size() - 1)];
  if (k_ + 1 < actions_.size()) k_ += 1;
  Vec v(sim::kNumJoints);
  for (int j = 0; j < sim::kNumJoints; ++j) v(j) = a[static_cast<size_t>(j)];
  return v;
}

EpisodeResult run_episode(GraspEnv& env, Actor& actor, const train::EnvParams& params,
                          uint64_t seed, int object_id, Trajectory* traj_out) {
  Rng rng(seed);
  Vec obs = env.reset(params, rng);
  env.tag(seed, object_id);
  actor.begin_episode();
  while (!env.done()) {
    Vec a = actor.act(obs);
    train::StepOut out = env.step(a);
    obs = out.obs;
  }
  if (traj_out) *traj_out = env.trajectory();
  return env.result();
}

void EvalConfig::validate() const {
  if (episodes <= 0) throw std::invalid_argument("eval: episodes must be positive");
}

namespace {

train::EnvParams episode_params(uint64_t seed, const train::RandomizationRanges* ranges) {
  if (!ranges) return train::nominal_params();
  Rng rng = Rng(seed).split(1);
  return train::sample_randomization(*ranges, rng);
}

}  // namespace

std::vector<EvalRow> run_eval(const GraspEnvConfig& env_cfg, const ActorFactory& make_actor,
                              const EvalConfig& cfg, const train::RandomizationRanges* ranges) {
  cfg.validate();
  env_cfg.validate();
  if (ranges) ranges->validate();

  std::vector<EvalRow> rows(static_cast<size_t>(cfg.episodes));
  int threads = train::worker_thread_count(cfg.episodes);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  std::mutex error_mu;
  std::string error;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t]() {
      try {
        GraspEnv env(env_cfg);
        std::unique_ptr<Actor> actor = make_actor();
        for (int i = t; i < cfg.episodes; i += threads) {
          uint64_t seed = cfg.base_seed + static_cast<uint64_t>(i);
          train::EnvParams p = episode_params(seed, ranges);
          EpisodeResult r = run_episode(env, *actor, p, seed, i, nullptr);
          rows[static_cast<size_t>(i)] =
              EvalRow{seed,      r.size_class, i,          r.success,
                      r.max_height, r.disturbed, p.friction, p.hand_kp_scale};
        }
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (error.empty()) error = e.what();
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (!error.empty()) throw std::runtime_error("run_eval: " + error);
  std::sort(rows.begin(), rows.end(),
            [](const EvalRow& a, const EvalRow& b) { return a.seed < b.seed; });
  return rows;
}

void write_eval_csv(std::ostream& out, const std::vector<EvalRow>& rows) {
  out << "seed,size_class,object_id,success,max_height,disturbed,friction,kp_scale\n";
  char buf[192];
  for (const EvalRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%llu,%s,%d,%d,%.9g,%d,%.9g,%.9g\n",
                  static_cast<unsigned long long>(r.seed), geom2d::size_class_name(r.size_class),
                  r.object_id, r.success ? 1 : 0, r.max_height, r.disturbed ? 1 : 0, r.friction,
                  r.kp_scale);
    out << buf;
  }
}

std::string size_class_summary(const std::vector<EvalRow>& rows) {
  std::ostringstream out;
  auto line = [&](const char* name, int n, int wins) {
    out << name << ": episodes " << n << ", success rate "
        << (n > 0 ? static_cast<double>(wins) / n : 0.0) << "\n";
  };
  int total = 0, total_wins = 0;
  for (SizeClass c : {SizeClass::Small, SizeClass::Medium, SizeClass::Large}) {
    int n = 0, wins = 0;
    for (const EvalRow& r : rows)
      if (r.size_class == c) {
        n += 1;
        wins += r.success ? 1 : 0;
      }
    line(geom2d::size_class_name(c), n, wins);
    total += n;
    total_wins += wins;
  }
  line("overall", total, total_wins);
  return out.str();
}

DisturbanceReport run_disturbance_eval(const GraspEnvConfig& env_cfg,
                                       const ActorFactory& make_actor,
                                       const DisturbanceSpec& spec, int n_episodes,
                                       uint64_t base_seed,
                                       const train::RandomizationRanges* ranges) {
  if (n_episodes <= 0) throw std::invalid_argument("disturbance eval: episodes must be positive");
  spec.validate();

  GraspEnvConfig quiet = env_cfg;
  quiet.disturb = false;
  GraspEnvConfig noisy = env_cfg;
  noisy.disturb = true;
  noisy.disturbance = spec;
  quiet.validate();
  noisy.validate();

  DisturbanceReport report;
  report.episodes = n_episodes;
  report.rows.resize(static_cast<size_t>(n_episodes));

  int threads = train::worker_thread_count(n_episodes);
  std::vector<std::thread> pool;
  std::mutex error_mu;
  std::string error;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t]() {
      try {
        GraspEnv env_quiet(quiet);
        GraspEnv env_noisy(noisy);
        std::unique_ptr<Actor> actor = make_actor();
        for (int i = t; i < n_episodes; i += threads) {
          uint64_t seed = base_seed + static_cast<uint64_t>(i);
          train::EnvParams p = episode_params(seed, ranges);

          Trajectory ref;
          run_episode(env_quiet, *actor, p, seed, i, &ref);
          std::vector<Joint9> actions;
          actions.reserve(ref.steps.size());
          for (const StepRecord& s : ref.steps) actions.push_back(s.action);

          EpisodeResult closed = run_episode(env_noisy, *actor, p, seed, i, nullptr);
          ScriptActor replay(actions);
          EpisodeResult open = run_episode(env_noisy, replay, p, seed, i, nullptr);

          report.rows[static_cast<size_t>(i)] =
              PairedRow{seed, closed.success, open.success, closed.disturbed};
        }
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (error.empty()) error = e.what();
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (!error.empty()) throw std::runtime_error("run_disturbance_eval: " + error);

  std::sort(report.rows.begin(), report.rows.end(),
            [](const PairedRow& a, const PairedRow& b) { return a.seed < b.seed; });
  int cw = 0, ow = 0;
  for (const PairedRow& r : report.rows) {
    cw += r.closed ? 1 : 0;
    ow += r.open ? 1 : 0;
  }
  report.closed_rate = static_cast<double>(cw) / n_episodes;
  report.open_rate = static_cast<double>(ow) / n_episodes;
  return report;
}

void write_trajectory_jsonl(std::ostream& out, const Trajectory& traj,
                            const EpisodeResult& result) {
  nlohmann::ordered_json h;
  h["seed"] = traj.seed;
  h["object_id"] = traj.object_id;
  h["size_class"] = geom2d::size_class_name(traj.size_class);
  h["friction"] = traj.params.friction;
  h["hand_kp_scale"] = traj.params.hand_kp_scale;
  h["hand_kd_scale"] = traj.params.hand_kd_scale;
  h["arm_kp_scale"] = traj.params.arm_kp_scale;
  h["arm_kd_scale"] = traj.params.arm_kd_scale;
  h["sensor_noise"] = traj.params.sensor_noise;
  h["steps"] = traj.steps.size();
  h["success"] = result.success;
  h["max_height"] = result.max_height;
  h["disturbed"] = traj.disturbed;
  out << h.dump() << "\n";
  for (size_t k = 0; k < traj.steps.size(); ++k) {
    const StepRecord& s = traj.steps[k];
    nlohmann::ordered_json j;
    j["k"] = k;
    j["action"] = std::vector<double>(s.action.begin(), s.action.end());
    j["reward"] = s.reward;
    out << j.dump() << "\n";
  }
}

ReplayCheck replay_verify(std::istream& jsonl, const GraspEnvConfig& env_cfg) {
  ReplayCheck check;
  std::string line;
  if (!std::getline(jsonl, line)) {
    check.diagnostic = "empty trajectory file";
    return check;
  }
  nlohmann::json h = nlohmann::json::parse(line);
  train::EnvParams p;
  p.friction = h.at("friction").get<double>();
  p.hand_kp_scale = h.at("hand_kp_scale").get<double>();
  p.hand_kd_scale = h.at("hand_kd_scale").get<double>();
  p.arm_kp_scale = h.at("arm_kp_scale").get<double>();
  p.arm_kd_scale = h.at("arm_kd_scale").get<double>();
  p.sensor_noise = h.at("sensor_noise").get<bool>();
  uint64_t seed = h.at("seed").get<uint64_t>();
  bool logged_success = h.at("success").get<bool>();

  std::vector<Joint9> actions;
  std::vector<double> rewards;
  while (std::getline(jsonl, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    std::vector<double> a = j.at("action").get<std::vector<double>>();
    if (a.size() != sim::kNumJoints) {
      check.diagnostic = "bad action width at step " + std::to_string(actions.size());
      return check;
    }
    Joint9 act{};
    std::copy(a.begin(), a.end(), act.begin());
    actions.push_back(act);
    rewards.push_back(j.at("reward").get<double>());
  }
  check.steps = static_cast<int>(actions.size());

  GraspEnv env(env_cfg);
  Rng rng(seed);
  env.reset(p, rng);
  env.tag(seed, h.at("object_id").get<int>());
  ScriptActor replay(actions);
  replay.begin_episode();
  Vec obs;
  int k = 0;
  while (!env.done() && k < check.steps) {
    train::StepOut out = env.step(replay.act(obs));
    double err = std::abs(out.reward - rewards[static_cast<size_t>(k)]);
    check.max_abs_err = std::max(check.max_abs_err, err);
    if (err > 1e-9 && check.first_mismatch < 0) check.first_mismatch = k;
    k += 1;
  }
  check.ok = check.first_mismatch < 0 && k == check.steps && env.done();
  if (env.result().success != logged_success) {
    check.ok = false;
    check.diagnostic = "success flag mismatch";
  } else if (check.first_mismatch >= 0) {
    check.diagnostic = "reward mismatch at step " + std::to_string(check.first_mismatch);
  } else if (!check.ok) {
    check.diagnostic = "step count mismatch";
  }
  return check;
}

}  // namespace graspcraft::ep
