#pragma once

#include <array>
#include <vector>

#include "graspcraft/geom2d.hpp"
#include "graspcraft/rng.hpp"
#include "graspcraft/simworld.hpp"

namespace graspcraft::rep {

using geom2d::PointCloud;
using geom2d::Pose2;
using geom2d::Vec2;
using sim::Joint9;
using sim::RobotModel;

// Offsets from each joint point to its nearest cloud point, in joint_points
// order: wrist, then finger A base to tip, then finger B base to tip.
struct HandCentricRep {
  std::array<Vec2, sim::kNumJointPoints> d;
};

HandCentricRep distance_vectors(const std::array<Vec2, sim::kNumJointPoints>& joint_points,
                                const PointCloud& cloud);

struct FeatureSet {
  HandCentricRep d;
  std::array<double, sim::kNumLinks> h;  // link clearances above the table
  Pose2 T;                               // wrist pose
  Joint9 dq;                             // tracking error q - a_prev
};

FeatureSet extract_features(const RobotModel& model, const Joint9& a_prev, const Joint9& q,
                            const PointCloud& cloud, double table_height);

// Per hand link, aggregated over one action window: f sums the hand-object
// contact impulses, b = f > 0 so the two fields never disagree.
struct ContactSummary {
  std::array<bool, sim::kNumHandLinks> b{};
  std::array<double, sim::kNumHandLinks> f{};
};

ContactSummary summarize_contacts(const std::vector<sim::ContactRecord>& records);

// The observation's contact block: ground truth for the teacher, the
// encoder's reconstruction for the student.
struct ContactSlot {
  std::array<double, sim::kNumHandLinks> b{};
  std::array<double, sim::kNumHandLinks> f{};
  static ContactSlot from(const ContactSummary& s);
};

// normalization scales applied at assembly
constexpr double kAngleScale = 3.14159265358979323846;
constexpr double kDistScale = 0.3;      // m
constexpr double kImpulseScale = 0.05;  // N s

enum class ObsKind { Teacher, Student };

// Fixed layout, identical for both kinds so a student network can start from
// teacher weights. Offsets of each block in the flat vector:
constexpr int kObsAPrev = 0;
constexpr int kObsQ = 9;
constexpr int kObsD = 18;
constexpr int kObsH = 36;
constexpr int kObsT = 47;
constexpr int kObsDq = 50;
constexpr int kObsB = 59;
constexpr int kObsF = 67;
constexpr int kObsDim = 75;

struct Observation {
  ObsKind kind = ObsKind::Teacher;
  std::array<double, kObsDim> v{};
};

// observation-side sensor noise bounds, all uniform and symmetric
struct NoiseModel {
  double hand_q_noise = 0.02;    // rad
  double arm_q_noise = 0.005;    // rad
  double link_pos_noise = 0.01;  // m
  double link_rot_noise = 0.02;  // rad
  static NoiseModel none() { return {0.0, 0.0, 0.0, 0.0}; }
};

Joint9 inject_noise(const Joint9& q_true, const NoiseModel& noise, Rng& rng);

Pose2 perturb_pose(const Pose2& pose, const NoiseModel& noise, Rng& rng);

// Builds the normalized 75-dim observation. Teacher kind requires a
// full-boundary cloud, student kind a single-view cloud. When pose_noise is
// given the wrist pose block is perturbed within the link noise bounds
// (student path; joint noise is injected upstream via inject_noise).
Observation assemble_observation(ObsKind kind, const Joint9& a_prev, const Joint9& q_obs,
                                 const PointCloud& cloud, const ContactSlot& contacts,
                                 const RobotModel& model, double table_height,
                                 const NoiseModel* pose_noise = nullptr, Rng* rng = nullptr);

}  // namespace graspcraft::rep
