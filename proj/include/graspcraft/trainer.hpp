#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "graspcraft/handrep.hpp"
#include "graspcraft/neural.hpp"
#include "graspcraft/rng.hpp"

namespace graspcraft::train {

using neural::Mat;
using neural::Vec;

// Per-episode environment parameters drawn by domain randomization. Gains are
// relative scales on the robot's nominal PD table; friction is absolute.
struct EnvParams {
  double friction = 0.7;
  double hand_kp_scale = 1.0;
  double hand_kd_scale = 1.0;
  double arm_kp_scale = 1.0;
  double arm_kd_scale = 1.0;
  bool sensor_noise = false;
};

EnvParams nominal_params();

struct StepOut {
  Vec obs;
  double reward = 0.0;
  bool done = false;
  bool success = false;  // meaningful only on terminal steps
};

// Control surface the optimizer needs from an environment. Workers own one
// instance each; episode state persists across epoch boundaries.
class Env {
 public:
  virtual ~Env() = default;
  virtual int obs_dim() const = 0;
  virtual int act_dim() const = 0;
  virtual Vec action_lo() const = 0;
  virtual Vec action_hi() const = 0;
  // starts a new episode; the env draws whatever it needs from rng
  virtual Vec reset(const EnvParams& params, Rng& rng) = 0;
  virtual StepOut step(const Vec& action) = 0;

  // Student-phase extras, aligned with the current observation. The
  // privileged view feeds the frozen teacher; the targets are the true
  // contact block in normalized units. Plain PPO envs keep the defaults.
  virtual Vec privileged_obs() const { return Vec(); }
  virtual void contact_targets(double* b8, double* f8) const {
    for (int i = 0; i < sim::kNumHandLinks; ++i) {
      b8[i] = 0.0;
      f8[i] = 0.0;
    }
  }
};

struct TrainConfig {
  int epochs = 15000;
  int steps_per_epoch = 70;  // env steps per worker per epoch
  int episode_length = 63;
  int batch_size = 2000;
  int updates_per_epoch = 20;
  double gamma = 0.996;
  double max_grad_norm = 0.5;
  double value_coef = 0.5;
  double entropy_coef = 0.0;
  double clip_eps = 0.2;
  double gae_lambda = 0.95;
  int workers = 64;
  uint64_t seed = 0;
  double lr = 3e-4;
  int hidden = 128;      // policy / value MLP width
  int enc_hidden = 128;  // contact encoder GRU width
  bool randomize_student = true;
  bool transfer_init = true;  // student starts from teacher weights

  void validate() const;  // throws std::invalid_argument
};

struct CurriculumSchedule {
  double w_re = 1.0;
  double w_act = 1.0;
  double lambda_horizon = 2000.0;

  double lambda(double iter) const {
    double v = 1.0 - iter / lambda_horizon;
    return std::max(0.0, std::min(1.0, v));
  }
  void validate() const;
};

struct RandomizationRanges {
  std::array<double, 5> friction{0.5, 0.6, 0.7, 0.8, 0.9};
  double hand_kp_lo = 0.9, hand_kp_hi = 1.1;
  double hand_kd_lo = 0.9, hand_kd_hi = 1.1;
  double arm_kp_lo = 0.5, arm_kp_hi = 1.05;
  double arm_kd_lo = 0.5, arm_kd_hi = 1.05;

  void validate() const;
};

// Independent uniform draws in a fixed order: friction, hand kp, hand kd,
// arm kp, arm kd.
EnvParams sample_randomization(const RandomizationRanges& ranges, Rng& rng);

// Contiguous column run belonging to one episode (or the piece of it that
// fits in the epoch), with the encoder state snapshot at its first step.
struct Segment {
  int col0 = 0;
  int len = 0;
  Mat h0;
};

// One epoch of experience, column index = worker * steps + t.
struct RolloutBuffer {
  int workers = 0, steps = 0, obs_dim = 0, act_dim = 0;
  Mat obs;       // obs_dim x N, contact slots already patched for the student
  Mat actions;   // act_dim x N, as sampled (pre-clamp)
  Vec rewards, values, logprobs;
  std::vector<uint8_t> done;  // 1 where the episode ended on this step
  Vec bootstrap;              // per worker, V(s_T) when the tail is mid-episode

  // student phase
  bool has_teacher = false;
  Mat teacher_actions;  // act_dim x N
  Mat enc_inputs;       // 18 x N: normalized q then previous action
  Mat target_b;         // 8 x N, {0,1}
  Mat target_f;         // 8 x N, normalized impulse sums
  std::vector<Segment> segments;

  int size() const { return workers * steps; }
  void allocate(int workers_, int steps_, int obs_dim_, int act_dim_, bool student);
};

// A_t = sum_k (gamma lambda)^k delta_{t+k} within episodes; returns = A + V.
void gae_advantages(const RolloutBuffer& buffer, double gamma, double gae_lambda,
                    Vec* advantages, Vec* returns);

// zero mean, unit variance in place (population std); constant input is only
// centered
void normalize_advantages(Vec& adv);

struct PassStats {
  double surrogate = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double ppo = 0.0;  // surrogate + value_coef term + entropy term
  double il = 0.0;
  double re = 0.0;
  double lambda = 0.0;
  double total = 0.0;
  double pre_clip_norm = 0.0;
};

struct PassGrads {
  neural::MlpGrads policy;
  Mat dlog_std;
  neural::MlpGrads value;
  neural::GruGrads encoder;
  bool has_encoder = false;
  std::vector<Mat*> list();
};

// One minibatch objective evaluation over the given columns. Advantages are
// normalized over exactly this batch. Grads are optional so tests can probe
// the objective with finite differences. Teacher phase: encoder == nullptr,
// lambda = 0, no teacher targets. Student phase: segments carry the episode
// slices whose union is cols, for the reconstruction BPTT.
PassStats mixed_pass(const neural::Policy& policy, const neural::ValueNet& value,
                     const neural::GruEncoder* encoder, const RolloutBuffer& buffer,
                     const std::vector<int>& cols, const std::vector<int>& segment_ids,
                     const Vec& advantages, const Vec& returns, double lambda,
                     const CurriculumSchedule& schedule, const TrainConfig& cfg,
                     PassGrads* grads);

// encoder input column for a layout observation: q block then a_prev block
Mat encoder_obs_input(const Vec& obs);

// overwrite the observation's contact slots with decoded estimates
void patch_contact_slots(Vec& obs, const Mat& b_hat, const Mat& f_hat);

struct EpochMetrics {
  int epoch = 0;
  double lambda = 0.0;
  double mean_reward = 0.0;
  double il_loss = 0.0;
  double re_loss = 0.0;
  double ppo_loss = 0.0;
  double success_rate = 0.0;
};

std::string metrics_json_line(const EpochMetrics& m);

struct TrainIO {
  std::string metrics_path;     // JSONL, appended per epoch; empty = off
  std::string checkpoint_path;  // final checkpoint; empty = off
  int checkpoint_every = 0;     // rolling checkpoint cadence, 0 = off
};

// worker thread cap honoring the GRASPCRAFT_THREADS environment variable
int worker_thread_count(int workers);

struct TeacherResult {
  neural::Policy policy;
  neural::ValueNet value;
  std::vector<EpochMetrics> metrics;
};

// PPO over privileged observations: nominal parameters, no noise.
TeacherResult train_teacher(const TrainConfig& cfg, const CurriculumSchedule& schedule,
                            std::vector<std::unique_ptr<Env>>& envs, const TrainIO& io);

struct StudentResult {
  neural::Policy policy;
  neural::ValueNet value;
  neural::GruEncoder encoder;
  std::vector<EpochMetrics> metrics;
};

// Mixed IL->RL curriculum: policy and value start from the teacher
// checkpoint (unless transfer_init is off), the contact encoder starts
// fresh, action targets are queried from the frozen teacher on the states
// the student visits, and domain randomization is sampled per episode.
StudentResult train_student(const TrainConfig& cfg, const CurriculumSchedule& schedule,
                            const RandomizationRanges& ranges,
                            const neural::Checkpoint& teacher_ckpt,
                            std::vector<std::unique_ptr<Env>>& envs, const TrainIO& io);

// tensor-table naming shared by both phases
std::vector<neural::NamedTensor> policy_tensors(neural::Policy& p);
std::vector<neural::NamedTensor> value_tensors(neural::ValueNet& v);
std::vector<neural::NamedTensor> encoder_tensors(neural::GruEncoder& g);

}  // namespace graspcraft::train
