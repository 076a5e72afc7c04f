#pragma once

#include <array>
#include <string>
#include <vector>

#include "graspcraft/geom2d.hpp"

namespace graspcraft::sim {

using geom2d::Polygon;
using geom2d::Pose2;
using geom2d::Vec2;

constexpr int kNumJoints = 9;   // 3 arm + 2 fingers x 3
constexpr int kNumLinks = 11;   // 3 arm links, mount, palm, 6 phalanges
constexpr int kNumHandLinks = 8;
constexpr int kNumJointPoints = 9;  // wrist + per finger: MCP, PIP, DIP, tip

using Joint9 = std::array<double, kNumJoints>;

// Link order everywhere: arm1 arm2 arm3 mount palm fAprox fAmid fAdist
// fBprox fBmid fBdist. Hand links are the last 8.
const char* link_name(int link);
constexpr int kFirstHandLink = 3;

// Planar arm+hand chain. Base is fixed; three arm joints, then a rigid
// mount and palm bar; two mirrored fingers of three joints each hang off
// the palm ends. Positive finger angles close both fingers toward the
// centerline. All parameters are plain data so tests can build degenerate
// variants.
struct RobotModel {
  Vec2 base{0.0, 0.40};
  std::array<double, 3> arm_lengths{0.30, 0.25, 0.10};
  double mount_length = 0.03;
  double palm_half_width = 0.07;
  std::array<double, 3> finger_lengths{0.05, 0.04, 0.03};

  std::array<double, kNumLinks> link_radius{0.020, 0.020, 0.018, 0.015, 0.015,
                                            0.008, 0.007, 0.006, 0.008, 0.007, 0.006};
  std::array<double, kNumLinks> link_mass{1.5, 1.0, 0.5, 0.05, 0.10,
                                          0.030, 0.025, 0.020, 0.030, 0.025, 0.020};

  // reflected actuator inertia dominates the joint-space diagonal and keeps
  // the stiff PD gains stable at dt = 0.01
  Joint9 rotor_inertia{4.5, 4.0, 3.5, 0.15, 0.15, 0.15, 0.15, 0.15, 0.15};
  Joint9 torque_limit{30, 30, 30, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6};
  Joint9 q_lo{-1.6, -2.6, -2.6, -0.35, -0.35, -0.35, -0.35, -0.35, -0.35};
  Joint9 q_hi{1.6, 2.6, 2.6, 1.6, 1.6, 1.6, 1.6, 1.6, 1.6};

  static RobotModel standard() { return {}; }
};

struct PDGains {
  Joint9 kp;
  Joint9 kd;

  // hand 600/20, arm 16000/600
  static PDGains nominal();
  static PDGains scaled(double hand_kp_scale, double hand_kd_scale, double arm_kp_scale,
                        double arm_kd_scale);
};

struct JointState {
  Joint9 q{};
  Joint9 qdot{};
};

struct ObjectState {
  Pose2 pose;        // body frame origin at the centroid
  Vec2 linvel;       // of the centroid
  double angvel = 0.0;
  Polygon shape;
};

struct Capsule {
  Vec2 a, b;
  double r;
};

// one revolute joint's influence on a link: world pivot and the sign of
// d(link angle)/d(joint angle) (finger A angles run mirrored)
struct ChainEntry {
  int joint;
  double sign;
  Vec2 pivot;
};

struct Chain {
  int n = 0;
  std::array<ChainEntry, 6> e{};
};

struct Kinematics {
  std::array<Pose2, kNumLinks> frames;       // origin at proximal end, angle = link direction
  std::array<Capsule, kNumLinks> capsules;
  std::array<Vec2, kNumJointPoints> joint_points;
  Pose2 wrist;
  std::array<Chain, kNumLinks> chains;
};

Kinematics forward_kinematics(const RobotModel& model, const Joint9& q);

Joint9 pd_torques(const RobotModel& model, const Joint9& q, const Joint9& qdot,
                  const Joint9& targets, const PDGains& gains);

enum class ContactClass { Desired, UndesiredSelf, UndesiredTable, UndesiredArmObject };
const char* contact_class_name(ContactClass c);

// body ids: 0..10 = links, -1 = object, -2 = table
constexpr int kBodyObject = -1;
constexpr int kBodyTable = -2;

struct ContactRecord {
  int body_a;  // impulse -lambda*n applied here
  int body_b;  // impulse +lambda*n applied here
  Vec2 point;
  Vec2 normal;     // unit, a -> b
  double impulse;  // accumulated normal impulse magnitude over one substep, N s
  ContactClass classification;
};

std::string body_name(int id);

struct ExternalForce {
  Vec2 force;       // N, world frame
  Vec2 offset;      // application point relative to the centroid, held fixed in world
  double remaining = 0.0;  // s
};

// accumulated impulses of one persistent contact, carried across substeps as
// the solver's warm start
struct CachedImpulse {
  uint64_t key;
  double lambda_n;
  double lambda_t;
};

struct WorldState {
  RobotModel model;
  ObjectState object;
  JointState joints;
  PDGains gains;
  std::vector<ContactRecord> contacts;  // accumulated over the last step() call
  double table_height = 0.0;
  double gravity = 9.81;
  double robot_friction = 0.6;  // used for pairs not involving the object
  double time = 0.0;
  ExternalForce ext;
  Vec2 object_impulse_accum;  // contact + external impulses on the object, last step() call
  std::vector<CachedImpulse> contact_cache;
};

// object shape is recentered so its body origin is the centroid
WorldState make_world(const RobotModel& model, const Polygon& shape, const Pose2& object_pose);

// Advances `substeps` substeps of length dt. Per substep: PD torques, joint
// and object velocity updates, contact detection and sequential-impulse
// resolution (Coulomb friction, zero restitution, speculative near-contacts),
// position integration, joint-limit clamping. Contact records and the object
// impulse accumulator are reset at entry and accumulated over the call.
void step(WorldState& world, const Joint9& targets, int substeps, double dt);

void apply_external_force(WorldState& world, const Vec2& force, const Vec2& point,
                          double duration);

// lowest point of each link capsule above the table plane; negative inside it
std::array<double, kNumLinks> link_table_heights(const RobotModel& model, const Joint9& q,
                                                 double table_height);

// world velocity of a point rigidly attached to a link, from the joint rates
Vec2 point_velocity(const Kinematics& kin, int link, const Vec2& point, const Joint9& qdot);
double link_angular_velocity(const Kinematics& kin, int link, const Joint9& qdot);

}  // namespace graspcraft::sim
