#include "graspcraft/handrep.hpp"

#include <stdexcept>

namespace graspcraft::rep {

HandCentricRep distance_vectors(const std::array<Vec2, sim::kNumJointPoints>& joint_points,
                                const PointCloud& cloud) {
  if (cloud.points.empty()) throw std::invalid_argument("distance_vectors: empty cloud");
  HandCentricRep rep;
  geom2d::NearestIndex index(cloud);
  for (size_t i = 0; i < joint_points.size(); ++i) rep.d[i] = index.query(joint_points[i]).offset;
  return rep;
}

FeatureSet extract_features(const RobotModel& model, const Joint9& a_prev, const Joint9& q,
                            const PointCloud& cloud, double table_height) {
  sim::Kinematics kin = sim::forward_kinematics(model, q);
  FeatureSet fs;
  fs.d = distance_vectors(kin.joint_points, cloud);
  fs.h = sim::link_table_heights(model, q, table_height);
  fs.T = kin.wrist;
  for (size_t j = 0; j < sim::kNumJoints; ++j) fs.dq[j] = q[j] - a_prev[j];
  return fs;
}

ContactSummary summarize_contacts(const std::vector<sim::ContactRecord>& records) {
  ContactSummary s;
  for (const sim::ContactRecord& r : records) {
    if (r.classification != sim::ContactClass::Desired) continue;
    if (r.body_b < sim::kFirstHandLink) continue;
    size_t slot = static_cast<size_t>(r.body_b - sim::kFirstHandLink);
    s.f[slot] += r.impulse;
  }
  for (size_t i = 0; i < sim::kNumHandLinks; ++i) s.b[i] = s.f[i] > 0.0;
  return s;
}

ContactSlot ContactSlot::from(const ContactSummary& s) {
  ContactSlot slot;
  for (size_t i = 0; i < sim::kNumHandLinks; ++i) {
    slot.b[i] = s.b[i] ? 1.0 : 0.0;
    slot.f[i] = s.f[i];
  }
  return slot;
}

Joint9 inject_noise(const Joint9& q_true, const NoiseModel& noise, Rng& rng) {
  Joint9 q = q_true;
  for (size_t j = 0; j < sim::kNumJoints; ++j) {
    double bound = j < 3 ? noise.arm_q_noise : noise.hand_q_noise;
    q[j] += rng.uniform(-bound, bound);
  }
  return q;
}

Pose2 perturb_pose(const Pose2& pose, const NoiseModel& noise, Rng& rng) {
  Pose2 p = pose;
  p.position.x += rng.uniform(-noise.link_pos_noise, noise.link_pos_noise);
  p.position.y += rng.uniform(-noise.link_pos_noise, noise.link_pos_noise);
  p.angle = geom2d::wrap_angle(p.angle + rng.uniform(-noise.link_rot_noise, noise.link_rot_noise));
  return p;
}

Observation assemble_observation(ObsKind kind, const Joint9& a_prev, const Joint9& q_obs,
                                 const PointCloud& cloud, const ContactSlot& contacts,
                                 const RobotModel& model, double table_height,
                                 const NoiseModel* pose_noise, Rng* rng) {
  if (kind == ObsKind::Teacher && cloud.source != geom2d::CloudSource::FullBoundary)
    throw std::invalid_argument("assemble_observation: teacher needs a full-boundary cloud");
  if (kind == ObsKind::Student && cloud.source != geom2d::CloudSource::SingleView)
    throw std::invalid_argument("assemble_observation: student needs a single-view cloud");

  FeatureSet fs = extract_features(model, a_prev, q_obs, cloud, table_height);
  if (pose_noise && rng) fs.T = perturb_pose(fs.T, *pose_noise, *rng);

  Observation obs;
  obs.kind = kind;
  for (size_t j = 0; j < sim::kNumJoints; ++j) {
    obs.v[kObsAPrev + j] = a_prev[j] / kAngleScale;
    obs.v[kObsQ + j] = q_obs[j] / kAngleScale;
    obs.v[kObsDq + j] = fs.dq[j] / kAngleScale;
  }
  for (size_t i = 0; i < sim::kNumJointPoints; ++i) {
    obs.v[kObsD + 2 * i] = fs.d.d[i].x / kDistScale;
    obs.v[kObsD + 2 * i + 1] = fs.d.d[i].y / kDistScale;
  }
  for (size_t i = 0; i < sim::kNumLinks; ++i) obs.v[kObsH + i] = fs.h[i] / kDistScale;
  obs.v[kObsT + 0] = fs.T.position.x / kDistScale;
  obs.v[kObsT + 1] = fs.T.position.y / kDistScale;
  obs.v[kObsT + 2] = fs.T.angle / kAngleScale;
  for (size_t i = 0; i < sim::kNumHandLinks; ++i) {
    obs.v[kObsB + i] = contacts.b[i];
    obs.v[kObsF + i] = contacts.f[i] / kImpulseScale;
  }
  return obs;
}

}  // namespace graspcraft::rep
