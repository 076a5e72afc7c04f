#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "graspcraft/reward.hpp"
#include "graspcraft/trainer.hpp"

namespace graspcraft::ep {

using geom2d::PointCloud;
using geom2d::Polygon;
using geom2d::Pose2;
using geom2d::SizeClass;
using geom2d::Vec2;
using neural::Mat;
using neural::Vec;
using sim::Joint9;

// 5 Hz control over 0.01 s substeps
constexpr double kControlDt = 0.2;
constexpr int kSubsteps = 20;
constexpr double kSimDt = 0.01;
// wrist standoff from the cloud center along the straight-down heading
constexpr double kWristStandoff = 0.25;
// partially open fingers: MCP, PIP, DIP
constexpr double kFingerInit[3] = {0.2, 0.6, 0.4};
// camera height for single-view visibility; the heading itself is orthographic
constexpr double kCameraHeight = 2.0;

struct SpawnRegion {
  double x_lo = 0.28;
  double x_hi = 0.42;
};

struct EpisodeConfig {
  int steps = 63;             // policy steps per episode
  int grasp_phase_steps = 45; // scripted lift starts after these
  double lift_height = 0.15;  // m
  double lift_duration = 2.0; // s, linear ramp
  SpawnRegion spawn;
  std::array<double, 3> size_class_mix{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  int cloud_points = 64;
  bool scripted_lift = true;
  void validate() const;
};

struct SuccessCriterion {
  double lift_threshold = 0.1;  // m above the table, object bottom
  double hold_duration = 5.0;   // s
  void validate() const;
};

struct DisturbanceSpec {
  double magnitude = 2.5;  // N
  double duration = 0.5;   // s
  void validate() const;
};

// ---- arm inverse kinematics ----

struct IkBranch {
  bool feasible = false;
  std::array<double, 3> q{};
};

// Closed-form planar 3-joint pose IK. Both elbow branches are reported;
// feasibility covers reach and joint limits. elbow_up has the higher mid
// joint.
struct IkSolutions {
  IkBranch elbow_up, elbow_down;
  std::string diagnostic;
  bool any() const { return elbow_up.feasible || elbow_down.feasible; }
};

IkSolutions arm_ik(const sim::RobotModel& model, const Pose2& wrist);

// Wrist 0.25 m straight above the cloud center, pointing down, fingers
// partially open, elbow up.
struct InitialPose {
  Joint9 q{};
  Pose2 wrist;
};

InitialPose compute_initial_pose(const PointCloud& cloud, const sim::RobotModel& model);

// ---- object spawning ----

// Orientation the shape comes to rest at when tipped from `angle0`, plus the
// centroid height that puts its lowest point on the table.
Pose2 settle_pose(const Polygon& shape, double angle0, double x_centroid, double table_height);

// Random horizontal position and orientation inside the region, rolled to
// rest analytically and then verified by a 50-substep pre-roll with the arm
// parked clear of the object. Residual boundary speed above 1e-3 m/s throws.
sim::ObjectState spawn_object(Rng& rng, const Polygon& shape, const SpawnRegion& region,
                              const sim::RobotModel& model, double table_height);

// min world vertex height above the table plane
double bottom_height(const sim::WorldState& world);

// true iff the bottom trace covers the hold and never dips below threshold
bool evaluate_success(const std::vector<double>& hold_bottoms, const SuccessCriterion& c);

// ---- episode environment ----

struct GraspEnvConfig {
  EpisodeConfig episode;
  SuccessCriterion success;
  DisturbanceSpec disturbance;
  bool disturb = false;  // arm the disturbance protocol
  reward::RewardWeights weights;
  rep::NoiseModel noise;  // applied only when EnvParams.sensor_noise
  rep::ObsKind kind = rep::ObsKind::Teacher;
  sim::RobotModel model = sim::RobotModel::standard();
  double object_mass = 0.1;
  double table_height = 0.0;
  // validates fields and sweeps the spawn region (plus cloud-center slack and
  // the lift offset) for IK feasibility
  void validate() const;
};

struct StepRecord {
  Joint9 action{};  // the policy's action, before the scripted lift offset
  double reward = 0.0;
  reward::RewardBreakdown breakdown;
  Pose2 object_pose;
  Joint9 q{};
  bool disturbed = false;  // disturbance fired at the start of this step
};

struct Trajectory {
  uint64_t seed = 0;
  train::EnvParams params;
  SizeClass size_class = SizeClass::Medium;
  int object_id = 0;
  std::vector<StepRecord> steps;
  std::vector<double> hold_bottoms;
  bool disturbed = false;
  Vec2 disturb_force;
  Vec2 disturb_point;
};

struct EpisodeResult {
  bool success = false;
  double reward_sum = 0.0;
  reward::RewardBreakdown sums;
  double max_height = 0.0;  // object bottom above the table, episode and hold
  int fingertip_contact_steps = 0;
  double desired_impulse_sum = 0.0;
  bool disturbed = false;
  train::EnvParams params;
  uint64_t seed = 0;
  SizeClass size_class = SizeClass::Medium;
  int object_id = 0;
  bool diverged = false;
  std::string diagnostic;
};

// One grasping episode as a policy environment: spawn, initial pose, 63
// policy steps with the scripted lift ramp, then a 5 s hold simulated inside
// the final step to decide success. Divergence fails the episode without
// throwing.
class GraspEnv : public train::Env {
 public:
  explicit GraspEnv(const GraspEnvConfig& cfg);

  int obs_dim() const override { return rep::kObsDim; }
  int act_dim() const override { return sim::kNumJoints; }
  Vec action_lo() const override;
  Vec action_hi() const override;
  Vec reset(const train::EnvParams& params, Rng& rng) override;
  train::StepOut step(const Vec& action) override;
  Vec privileged_obs() const override;
  void contact_targets(double* b8, double* f8) const override;

  // next reset places this exact object instead of sampling one
  void set_fixed_object(const Polygon& shape, const Pose2& pose);
  void tag(uint64_t seed, int object_id);

  const Trajectory& trajectory() const { return traj_; }
  const EpisodeResult& result() const { return result_; }
  const sim::WorldState& world() const { return world_; }
  sim::WorldState& world_mutable() { return world_; }
  Joint9 initial_q() const { return initial_q_; }
  bool done() const { return done_; }
  const GraspEnvConfig& config() const { return cfg_; }

 private:
  Vec observe();
  void run_hold(const Joint9& held_targets);
  bool divergence(std::string* what) const;

  GraspEnvConfig cfg_;
  Vec2 camera_;
  sim::WorldState world_;
  train::EnvParams params_;
  Rng noise_rng_{0};
  Rng disturb_rng_{0};
  rep::ContactSummary summary_;
  Joint9 a_prev_{};
  Joint9 initial_q_{};
  Vec2 start_pos_;
  int step_ = 0;
  bool done_ = true;
  // scripted lift state
  bool lift_armed_ = false;
  bool lift_feasible_ = false;
  Pose2 wrist_ref_;
  std::array<double, 3> ik_ref_{};
  std::array<double, 3> lift_delta_{};
  std::optional<std::pair<Polygon, Pose2>> fixed_object_;
  Trajectory traj_;
  EpisodeResult result_;
};

// ---- actors and episode running ----

struct Actor {
  virtual ~Actor() = default;
  virtual void begin_episode() {}
  virtual Vec act(const Vec& obs) = 0;
};

// Deterministic mean policy. With an encoder the contact slots are patched
// from the recurrent reconstruction, mirroring training-time collection.
class PolicyActor : public Actor {
 public:
  PolicyActor(const neural::Policy& policy, const neural::GruEncoder* encoder);
  void begin_episode() override;
  Vec act(const Vec& obs) override;

 private:
  const neural::Policy& policy_;
  const neural::GruEncoder* encoder_;
  Mat h_;
};

class ScriptActor : public Actor {
 public:
  explicit ScriptActor(std::vector<Joint9> actions) : actions_(std::move(actions)) {}
  void begin_episode() override { k_ = 0; }
  Vec act(const Vec& obs) override;

 private:
  std::vector<Joint9> actions_;
  size_t k_ = 0;
};

// Runs one full episode; rng seeds every random choice inside reset.
EpisodeResult run_episode(GraspEnv& env, Actor& actor, const train::EnvParams& params,
                          uint64_t seed, int object_id, Trajectory* traj_out = nullptr);

// ---- evaluation ----

struct EvalConfig {
  int episodes = 100;
  uint64_t base_seed = 1;
  void validate() const;
};

struct EvalRow {
  uint64_t seed = 0;
  SizeClass size_class = SizeClass::Medium;
  int object_id = 0;
  bool success = false;
  double max_height = 0.0;
  bool disturbed = false;
  double friction = 0.0;
  double kp_scale = 0.0;
};

using ActorFactory = std::function<std::unique_ptr<Actor>()>;

// Episodes are independent; each one derives everything from base_seed +
// index. Rows come back sorted by seed regardless of thread schedule. With
// ranges the per-episode physics are randomized, otherwise nominal.
std::vector<EvalRow> run_eval(const GraspEnvConfig& env_cfg, const ActorFactory& make_actor,
                              const EvalConfig& cfg, const train::RandomizationRanges* ranges);

void write_eval_csv(std::ostream& out, const std::vector<EvalRow>& rows);

// success rates grouped by size class
std::string size_class_summary(const std::vector<EvalRow>& rows);

struct PairedRow {
  uint64_t seed = 0;
  bool closed = false;
  bool open = false;
  bool disturbed = false;
};

struct DisturbanceReport {
  int episodes = 0;
  double closed_rate = 0.0;
  double open_rate = 0.0;
  std::vector<PairedRow> rows;
};

// Paired protocol per seed: a reference run records the closed-loop actions
// without disturbance; then the same seed runs closed-loop and as an
// open-loop replay of the recorded actions, both under the same disturbance
// draw. Pre-onset trajectories are identical by construction.
DisturbanceReport run_disturbance_eval(const GraspEnvConfig& env_cfg,
                                       const ActorFactory& make_actor,
                                       const DisturbanceSpec& spec, int n_episodes,
                                       uint64_t base_seed,
                                       const train::RandomizationRanges* ranges);

// ---- trajectory files ----

// header line then one line per step; enough to rebuild and re-check
void write_trajectory_jsonl(std::ostream& out, const Trajectory& traj,
                            const EpisodeResult& result);

struct ReplayCheck {
  bool ok = false;
  int steps = 0;
  int first_mismatch = -1;
  double max_abs_err = 0.0;
  std::string diagnostic;
};

// Re-runs the logged episode from its seed and compares per-step rewards
// against the log at 1e-9.
ReplayCheck replay_verify(std::istream& jsonl, const GraspEnvConfig& env_cfg);

}  // namespace graspcraft::ep
