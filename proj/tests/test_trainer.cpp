#include "doctest.h"
#include "graspcraft/trainer.hpp"

#include <cmath>
#include <cstdlib>
#include <map>

using namespace graspcraft;
using namespace graspcraft::train;

namespace {

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-6, std::abs(a) + std::abs(b)});
}

// two-sided Kolmogorov-Smirnov p-value against a uniform CDF
double ks_uniform_pvalue(std::vector<double> xs, double lo, double hi) {
  std::sort(xs.begin(), xs.end());
  double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    double f = (xs[i] - lo) / (hi - lo);
    d = std::max(d, std::abs((static_cast<double>(i) + 1.0) / n - f));
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
  }
  double lam = d * (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n));
  double p = 0.0;
  for (int k = 1; k <= 100; ++k)
    p += 2.0 * (k % 2 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lam * lam);
  return std::clamp(p, 0.0, 1.0);
}

// 1-D stateless environment with a quadratic reward peaked at 0.7
class BanditEnv : public Env {
 public:
  int obs_dim() const override { return 1; }
  int act_dim() const override { return 1; }
  Vec action_lo() const override { return Vec::Constant(1, -2.0); }
  Vec action_hi() const override { return Vec::Constant(1, 2.0); }
  Vec reset(const EnvParams&, Rng&) override { return Vec::Zero(1); }
  StepOut step(const Vec& a) override {
    StepOut out;
    out.obs = Vec::Zero(1);
    double e = a(0) - 0.7;
    out.reward = -e * e;
    out.done = true;
    out.success = std::abs(e) < 0.1;
    return out;
  }
};

// fixed-layout drifting observations, zero contacts; the privileged view is
// the same state with ground-truth (zero) contact slots
class SyntheticStudentEnv : public Env {
 public:
  explicit SyntheticStudentEnv(int episode_len) : episode_len_(episode_len) {}
  int obs_dim() const override { return rep::kObsDim; }
  int act_dim() const override { return 9; }
  Vec action_lo() const override { return Vec::Constant(9, -1.6); }
  Vec action_hi() const override { return Vec::Constant(9, 1.6); }
  Vec reset(const EnvParams&, Rng& rng) override {
    rng_ = rng.split(7);
    obs_ = Vec::Zero(rep::kObsDim);
    for (int i = 0; i < rep::kObsB; ++i) obs_(i) = 0.3 * rng_.normal();
    steps_ = 0;
    return obs_;
  }
  StepOut step(const Vec& a) override {
    for (int i = 0; i < 9; ++i) {
      obs_(rep::kObsAPrev + i) = a(i) / rep::kAngleScale;
      obs_(rep::kObsQ + i) += 0.02 * rng_.normal();
    }
    steps_ += 1;
    StepOut out;
    out.obs = obs_;
    out.reward = 0.0;
    out.done = steps_ >= episode_len_;
    return out;
  }
  Vec privileged_obs() const override { return obs_; }

 private:
  int episode_len_;
  int steps_ = 0;
  Rng rng_{0};
  Vec obs_;
};

std::vector<std::unique_ptr<Env>> make_envs(int n, int episode_len, bool bandit) {
  std::vector<std::unique_ptr<Env>> envs;
  for (int i = 0; i < n; ++i) {
    if (bandit)
      envs.push_back(std::make_unique<BanditEnv>());
    else
      envs.push_back(std::make_unique<SyntheticStudentEnv>(episode_len));
  }
  return envs;
}

neural::Checkpoint make_teacher_checkpoint(neural::Policy& teacher, neural::ValueNet& value) {
  neural::Checkpoint ckpt;
  for (auto& t : teacher.params("policy")) ckpt.tensors.emplace(t.name, *t.value);
  for (auto& t : value.params("value")) ckpt.tensors.emplace(t.name, *t.value);
  ckpt.meta["obs_dim"] = teacher.net.in_dim();
  ckpt.meta["act_dim"] = teacher.net.out_dim();
  return ckpt;
}

Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

// hand-assembled student buffer: w workers, fixed-length episodes
RolloutBuffer make_manual_buffer(Rng& rng, int workers, int steps, int ep_len, int obs_dim,
                                 int act_dim, int enc_hidden, bool student) {
  RolloutBuffer buf;
  buf.allocate(workers, steps, obs_dim, act_dim, student);
  int n = buf.size();
  buf.obs = random_mat(obs_dim, n, rng, 0.5);
  buf.actions = random_mat(act_dim, n, rng, 0.4);
  for (int i = 0; i < n; ++i) {
    buf.rewards(i) = rng.normal();
    buf.values(i) = 0.5 * rng.normal();
    buf.logprobs(i) = rng.normal();
  }
  for (int w = 0; w < workers; ++w) {
    for (int t = ep_len - 1; t < steps; t += ep_len) buf.done[static_cast<size_t>(w * steps + t)] = 1;
    buf.bootstrap(w) = 0.3 * rng.normal();
    if (student) {
      for (int t0 = 0; t0 < steps; t0 += ep_len) {
        Segment seg;
        seg.col0 = w * steps + t0;
        seg.len = std::min(ep_len, steps - t0);
        seg.h0 = Mat::Zero(enc_hidden, 1);
        buf.segments.push_back(seg);
      }
    }
  }
  if (student) {
    buf.teacher_actions = random_mat(act_dim, n, rng, 0.3);
    buf.enc_inputs = random_mat(18, n, rng, 0.5);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < sim::kNumHandLinks; ++k) {
        buf.target_b(k, i) = rng.uniform() < 0.3 ? 1.0 : 0.0;
        buf.target_f(k, i) = buf.target_b(k, i) * rng.uniform(0.0, 2.0);
      }
  }
  return buf;
}

}  // namespace

TEST_CASE("curriculum schedule hits the pinned values and never increases") {
  CurriculumSchedule s;
  CHECK(s.lambda(0) == 1.0);
  CHECK(s.lambda(1000) == 0.5);
  CHECK(s.lambda(2000) == 0.0);
  CHECK(s.lambda(3000) == 0.0);
  double prev = 2.0;
  for (int iter = 0; iter <= 4000; ++iter) {
    double v = s.lambda(iter);
    CHECK(v <= prev);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    prev = v;
  }
}

TEST_CASE("curriculum mixing identity is exact at every iteration") {
  CurriculumSchedule s;
  for (int iter = 0; iter <= 4000; ++iter) {
    double lambda = s.lambda(iter);
    double c_act = lambda * s.w_act;
    double c_ppo = 1.0 - lambda;
    CHECK(c_act / s.w_act + c_ppo == 1.0);
  }
}

TEST_CASE("gae single terminal step") {
  RolloutBuffer buf;
  buf.allocate(1, 1, 2, 1, false);
  buf.rewards(0) = 1.0;
  buf.done[0] = 1;
  Vec adv, ret;
  gae_advantages(buf, 0.99, 0.95, &adv, &ret);
  CHECK(adv(0) == 1.0);
  CHECK(ret(0) == 1.0);
}

TEST_CASE("gae two-step hand recursion") {
  RolloutBuffer buf;
  buf.allocate(1, 2, 2, 1, false);
  buf.rewards(0) = 1.0;
  buf.rewards(1) = 1.0;
  buf.done[1] = 1;
  Vec adv, ret;
  gae_advantages(buf, 0.5, 0.5, &adv, &ret);
  CHECK(adv(1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(adv(0) == doctest::Approx(1.25).epsilon(1e-15));
}

TEST_CASE("gae zero rewards and values give zero advantages") {
  RolloutBuffer buf;
  buf.allocate(3, 5, 2, 1, false);
  buf.done[4] = buf.done[9] = buf.done[14] = 1;
  Vec adv, ret;
  gae_advantages(buf, 0.996, 0.95, &adv, &ret);
  CHECK(adv.norm() == 0.0);
  CHECK(ret.norm() == 0.0);
}

TEST_CASE("gae bootstraps the epoch tail and respects worker boundaries") {
  RolloutBuffer buf;
  buf.allocate(2, 3, 2, 1, false);
  // worker 0: episode ends at t=1, new episode hangs at the tail
  double g = 0.9, l = 0.8;
  buf.rewards(0) = 1.0;
  buf.values(0) = 0.2;
  buf.rewards(1) = 2.0;
  buf.values(1) = 0.4;
  buf.done[1] = 1;
  buf.rewards(2) = 3.0;
  buf.values(2) = 0.6;
  buf.bootstrap(0) = 1.5;
  // worker 1: all mid-episode
  for (int t = 0; t < 3; ++t) {
    buf.rewards(3 + t) = 1.0;
    buf.values(3 + t) = 0.0;
  }
  buf.bootstrap(1) = 2.0;
  Vec adv, ret;
  gae_advantages(buf, g, l, &adv, &ret);

  double d2 = 3.0 + g * 1.5 - 0.6;
  double d1 = 2.0 + 0.0 - 0.4;
  double d0 = 1.0 + g * 0.4 - 0.2;
  CHECK(adv(2) == doctest::Approx(d2).epsilon(1e-15));
  CHECK(adv(1) == doctest::Approx(d1).epsilon(1e-15));
  CHECK(adv(0) == doctest::Approx(d0 + g * l * d1).epsilon(1e-15));

  double e2 = 1.0 + g * 2.0;
  double e1 = 1.0 + g * 0.0 + g * l * e2;
  double e0 = 1.0 + g * 0.0 + g * l * e1;
  CHECK(adv(5) == doctest::Approx(e2).epsilon(1e-15));
  CHECK(adv(4) == doctest::Approx(e1).epsilon(1e-15));
  CHECK(adv(3) == doctest::Approx(e0).epsilon(1e-15));
  for (int i = 0; i < 6; ++i) CHECK(ret(i) == doctest::Approx(adv(i) + buf.values(i)).epsilon(1e-15));
}

TEST_CASE("advantage normalization is zero mean unit variance") {
  Rng rng(61);
  Vec a(257);
  for (int i = 0; i < a.size(); ++i) a(i) = 3.0 + 2.5 * rng.normal();
  normalize_advantages(a);
  CHECK(std::abs(a.mean()) <= 1e-10);
  double sd = std::sqrt(a.squaredNorm() / static_cast<double>(a.size()));
  CHECK(std::abs(sd - 1.0) <= 1e-6);

  Vec c = Vec::Constant(8, 4.2);
  normalize_advantages(c);
  CHECK(c.norm() == 0.0);
}

TEST_CASE("randomization draws stay in range, friction stays discrete") {
  RandomizationRanges ranges;
  Rng rng(62);
  std::vector<double> kp;
  kp.reserve(20000);
  for (int i = 0; i < 20000; ++i) {
    EnvParams p = sample_randomization(ranges, rng);
    bool in_set = false;
    for (double f : ranges.friction) in_set = in_set || p.friction == f;
    CHECK(in_set);
    CHECK(p.hand_kp_scale >= 0.9);
    CHECK(p.hand_kp_scale <= 1.1);
    CHECK(p.hand_kd_scale >= 0.9);
    CHECK(p.hand_kd_scale <= 1.1);
    CHECK(p.arm_kp_scale >= 0.5);
    CHECK(p.arm_kp_scale <= 1.05);
    CHECK(p.arm_kd_scale >= 0.5);
    CHECK(p.arm_kd_scale <= 1.05);
    CHECK(p.sensor_noise);
    kp.push_back(p.hand_kp_scale);
  }
  CHECK(ks_uniform_pvalue(kp, 0.9, 1.1) > 0.01);

  Rng r1(63), r2(63);
  for (int i = 0; i < 100; ++i) {
    EnvParams a = sample_randomization(ranges, r1);
    EnvParams b = sample_randomization(ranges, r2);
    CHECK(a.friction == b.friction);
    CHECK(a.hand_kp_scale == b.hand_kp_scale);
    CHECK(a.arm_kd_scale == b.arm_kd_scale);
  }
}

TEST_CASE("clipped surrogate arithmetic on a crafted two-sample batch") {
  Rng rng(64);
  TrainConfig cfg;
  cfg.workers = 2;
  cfg.steps_per_epoch = 1;
  cfg.batch_size = 2;
  CurriculumSchedule sched;

  neural::Policy policy =
      neural::Policy::make(3, 2, 8, Vec::Constant(2, -1.0), Vec::Constant(2, 1.0), rng);
  neural::ValueNet value = neural::ValueNet::make(3, 8, rng);

  RolloutBuffer buf;
  buf.allocate(2, 1, 3, 2, false);
  buf.obs = random_mat(3, 2, rng, 0.5);
  buf.actions = random_mat(2, 2, rng, 0.3);
  buf.done[0] = buf.done[1] = 1;

  // stored logprobs chosen so the ratio is exactly 2 for both samples
  Mat mean = policy.mean(buf.obs);
  Vec sigma = neural::clamped_sigma(policy.log_std);
  Vec logp = neural::diag_logprob(mean, sigma, buf.actions);
  buf.logprobs(0) = logp(0) - std::log(2.0);
  buf.logprobs(1) = logp(1) - std::log(2.0);

  // advantages +-1 survive batch normalization unchanged
  Vec adv(2), ret(2);
  adv << 1.0, -1.0;
  Vec v = value.values(buf.obs);
  ret << v(0), v(1);  // zero value loss, isolates the surrogate

  PassStats st = mixed_pass(policy, value, nullptr, buf, {0, 1}, {}, adv, ret, 0.0, sched, cfg,
                            nullptr);
  // sample 0: min(2*1, 1.2*1) = 1.2 (clipped); sample 1: min(-2, -0.8) = -2
  CHECK(st.surrogate == doctest::Approx(-(1.2 - 2.0) / 2.0).epsilon(1e-12));
  CHECK(st.value_loss == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(st.total == doctest::Approx(st.ppo).epsilon(1e-12));
}

TEST_CASE("mixed pass requires teacher actions when lambda is positive") {
  Rng rng(65);
  TrainConfig cfg;
  CurriculumSchedule sched;
  neural::Policy policy =
      neural::Policy::make(3, 2, 8, Vec::Constant(2, -1.0), Vec::Constant(2, 1.0), rng);
  neural::ValueNet value = neural::ValueNet::make(3, 8, rng);
  RolloutBuffer buf = make_manual_buffer(rng, 1, 4, 2, 3, 2, 4, false);
  Vec adv = Vec::Ones(4), ret = Vec::Zero(4);
  CHECK_THROWS_AS(mixed_pass(policy, value, nullptr, buf, {0, 1, 2, 3}, {}, adv, ret, 0.5,
                             sched, cfg, nullptr),
                  std::invalid_argument);
}

TEST_CASE("teacher-phase objective gradients match finite differences") {
  Rng rng(66);
  TrainConfig cfg;
  cfg.clip_eps = 0.2;
  cfg.value_coef = 0.5;
  cfg.entropy_coef = 0.01;
  CurriculumSchedule sched;
  constexpr double kEps = 1e-5, kTol = 1e-4;

  for (int inst = 0; inst < 20; ++inst) {
    neural::Policy policy = neural::Policy::make(
        4, 3, 6, Vec::Constant(3, -1.5), Vec::Constant(3, 1.5), rng);
    policy.net.W.back() = neural::orthogonal(3, 6, 0.6, rng);
    neural::ValueNet value = neural::ValueNet::make(4, 6, rng);
    RolloutBuffer buf = make_manual_buffer(rng, 2, 6, 3, 4, 3, 4, false);
    // place ratios well clear of the clip kinks: ln rho in {0.15, -0.1, -0.3}
    {
      Mat mean = policy.mean(buf.obs);
      Vec sigma = neural::clamped_sigma(policy.log_std);
      Vec logp = neural::diag_logprob(mean, sigma, buf.actions);
      for (int i = 0; i < buf.size(); ++i) {
        double off = i % 3 == 0 ? 0.15 : (i % 3 == 1 ? -0.1 : -0.3);
        buf.logprobs(i) = logp(i) - off;
      }
    }
    Vec adv(buf.size()), ret(buf.size());
    for (int i = 0; i < buf.size(); ++i) {
      adv(i) = rng.normal();
      ret(i) = 0.5 * rng.normal();
    }
    std::vector<int> cols(static_cast<size_t>(buf.size()));
    std::iota(cols.begin(), cols.end(), 0);

    auto loss = [&]() {
      return mixed_pass(policy, value, nullptr, buf, cols, {}, adv, ret, 0.0, sched, cfg,
                        nullptr)
          .total;
    };
    PassGrads g;
    mixed_pass(policy, value, nullptr, buf, cols, {}, adv, ret, 0.0, sched, cfg, &g);

    std::vector<neural::NamedTensor> params = policy_tensors(policy);
    for (auto& t : value_tensors(value)) params.push_back(t);
    std::vector<Mat*> glist = g.list();
    REQUIRE(params.size() == glist.size());

    double worst = 0.0;
    for (size_t p = 0; p < params.size(); ++p) {
      Mat& w = *params[p].value;
      for (int i = 0; i < w.rows(); ++i)
        for (int j = 0; j < w.cols(); ++j) {
          double save = w(i, j);
          w(i, j) = save + kEps;
          double lp = loss();
          w(i, j) = save - kEps;
          double lm = loss();
          w(i, j) = save;
          worst = std::max(worst, rel_err((*glist[p])(i, j), (lp - lm) / (2.0 * kEps)));
        }
    }
    CHECK(worst <= kTol);
  }
}

TEST_CASE("student objective gradients match finite differences") {
  Rng rng(67);
  TrainConfig cfg;
  cfg.entropy_coef = 0.01;
  CurriculumSchedule sched;
  constexpr double kEps = 1e-5, kTol = 1e-4;

  for (int inst = 0; inst < 20; ++inst) {
    neural::Policy policy = neural::Policy::make(
        5, 3, 6, Vec::Constant(3, -1.5), Vec::Constant(3, 1.5), rng);
    policy.net.W.back() = neural::orthogonal(3, 6, 0.6, rng);
    neural::ValueNet value = neural::ValueNet::make(5, 6, rng);
    neural::GruEncoder enc = neural::GruEncoder::make(18, 4, 2 * sim::kNumHandLinks, rng);
    RolloutBuffer buf = make_manual_buffer(rng, 2, 6, 3, 5, 3, 4, true);
    {
      Mat mean = policy.mean(buf.obs);
      Vec sigma = neural::clamped_sigma(policy.log_std);
      Vec logp = neural::diag_logprob(mean, sigma, buf.actions);
      for (int i = 0; i < buf.size(); ++i) {
        double off = i % 3 == 0 ? 0.15 : (i % 3 == 1 ? -0.1 : -0.3);
        buf.logprobs(i) = logp(i) - off;
      }
    }
    Vec adv(buf.size()), ret(buf.size());
    for (int i = 0; i < buf.size(); ++i) {
      adv(i) = rng.normal();
      ret(i) = 0.5 * rng.normal();
    }
    std::vector<int> seg_ids = {0, 1, 2, 3};
    std::vector<int> cols(static_cast<size_t>(buf.size()));
    std::iota(cols.begin(), cols.end(), 0);
    double lambda = 0.5;

    auto loss = [&]() {
      return mixed_pass(policy, value, &enc, buf, cols, seg_ids, adv, ret, lambda, sched, cfg,
                        nullptr)
          .total;
    };
    PassGrads g;
    mixed_pass(policy, value, &enc, buf, cols, seg_ids, adv, ret, lambda, sched, cfg, &g);

    std::vector<neural::NamedTensor> params = policy_tensors(policy);
    for (auto& t : value_tensors(value)) params.push_back(t);
    for (auto& t : encoder_tensors(enc)) params.push_back(t);
    std::vector<Mat*> glist = g.list();
    REQUIRE(params.size() == glist.size());

    double worst = 0.0;
    for (size_t p = 0; p < params.size(); ++p) {
      Mat& w = *params[p].value;
      for (int i = 0; i < w.rows(); ++i)
        for (int j = 0; j < w.cols(); ++j) {
          double save = w(i, j);
          w(i, j) = save + kEps;
          double lp = loss();
          w(i, j) = save - kEps;
          double lm = loss();
          w(i, j) = save;
          worst = std::max(worst, rel_err((*glist[p])(i, j), (lp - lm) / (2.0 * kEps)));
        }
    }
    CHECK(worst <= kTol);
  }
}

TEST_CASE("mixing weights follow the curriculum inside the loss") {
  Rng rng(68);
  TrainConfig cfg;
  CurriculumSchedule sched;
  neural::Policy policy = neural::Policy::make(
      5, 3, 6, Vec::Constant(3, -1.5), Vec::Constant(3, 1.5), rng);
  neural::ValueNet value = neural::ValueNet::make(5, 6, rng);
  neural::GruEncoder enc = neural::GruEncoder::make(18, 4, 2 * sim::kNumHandLinks, rng);
  RolloutBuffer buf = make_manual_buffer(rng, 2, 6, 3, 5, 3, 4, true);
  Vec adv(buf.size()), ret(buf.size());
  for (int i = 0; i < buf.size(); ++i) {
    adv(i) = rng.normal();
    ret(i) = rng.normal();
  }
  std::vector<int> cols(static_cast<size_t>(buf.size()));
  std::iota(cols.begin(), cols.end(), 0);
  std::vector<int> segs = {0, 1, 2, 3};
  for (double lambda : {0.0, 0.25, 0.5, 1.0}) {
    PassStats st =
        mixed_pass(policy, value, &enc, buf, cols, segs, adv, ret, lambda, sched, cfg, nullptr);
    CHECK(st.total == doctest::Approx(lambda * sched.w_act * st.il + sched.w_re * st.re +
                                      (1.0 - lambda) * st.ppo)
                          .epsilon(1e-12));
  }
}

TEST_CASE("bandit policy converges to the reward peak") {
  TrainConfig cfg;
  cfg.epochs = 150;
  cfg.steps_per_epoch = 16;
  cfg.episode_length = 1;
  cfg.batch_size = 128;
  cfg.updates_per_epoch = 8;
  cfg.workers = 8;
  cfg.hidden = 16;
  cfg.lr = 0.01;
  cfg.seed = 11;
  CurriculumSchedule sched;
  auto envs = make_envs(8, 1, true);
  TeacherResult res = train_teacher(cfg, sched, envs, TrainIO{});
  double mean_action = res.policy.mean(Mat::Zero(1, 1))(0, 0);
  CHECK(std::abs(mean_action - 0.7) <= 0.05);
  // learning actually moved the needle
  CHECK(res.metrics.back().mean_reward > res.metrics.front().mean_reward);
  CHECK(res.metrics.back().success_rate > 0.5);
}

TEST_CASE("teacher training is bitwise deterministic and thread-count invariant") {
  auto run = [](const char* threads) {
    setenv("GRASPCRAFT_THREADS", threads, 1);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.steps_per_epoch = 8;
    cfg.episode_length = 1;
    cfg.batch_size = 16;
    cfg.updates_per_epoch = 2;
    cfg.workers = 4;
    cfg.hidden = 8;
    cfg.seed = 21;
    CurriculumSchedule sched;
    auto envs = make_envs(4, 1, true);
    TeacherResult r = train_teacher(cfg, sched, envs, TrainIO{});
    unsetenv("GRASPCRAFT_THREADS");
    return r;
  };
  TeacherResult a = run("1");
  TeacherResult b = run("1");
  TeacherResult c = run("3");
  for (size_t l = 0; l < a.policy.net.W.size(); ++l) {
    CHECK((a.policy.net.W[l] - b.policy.net.W[l]).norm() == 0.0);
    CHECK((a.policy.net.W[l] - c.policy.net.W[l]).norm() == 0.0);
  }
  CHECK((a.policy.log_std - c.policy.log_std).norm() == 0.0);
  for (size_t l = 0; l < a.value.net.W.size(); ++l)
    CHECK((a.value.net.W[l] - c.value.net.W[l]).norm() == 0.0);
  REQUIRE(a.metrics.size() == c.metrics.size());
  for (size_t e = 0; e < a.metrics.size(); ++e)
    CHECK(a.metrics[e].mean_reward == c.metrics[e].mean_reward);
}

TEST_CASE("pure distillation on frozen states decreases the action gap monotonically") {
  Rng rng(70);
  TrainConfig cfg;
  CurriculumSchedule sched;
  neural::Policy policy = neural::Policy::make(
      12, 4, 16, Vec::Constant(4, -1.6), Vec::Constant(4, 1.6), rng);
  neural::ValueNet value = neural::ValueNet::make(12, 16, rng);
  neural::GruEncoder enc = neural::GruEncoder::make(18, 8, 2 * sim::kNumHandLinks, rng);
  RolloutBuffer buf = make_manual_buffer(rng, 4, 9, 3, 12, 4, 8, true);
  Vec adv, ret;
  gae_advantages(buf, cfg.gamma, cfg.gae_lambda, &adv, &ret);

  std::vector<neural::NamedTensor> params = policy_tensors(policy);
  for (auto& t : value_tensors(value)) params.push_back(t);
  for (auto& t : encoder_tensors(enc)) params.push_back(t);
  neural::AdamState adam = neural::AdamState::init(params, 3e-4);

  std::vector<int> cols(static_cast<size_t>(buf.size()));
  std::iota(cols.begin(), cols.end(), 0);
  std::vector<int> segs(buf.segments.size());
  std::iota(segs.begin(), segs.end(), 0);

  double prev_il = 1e300, prev_re = 1e300;
  for (int update = 0; update < 20; ++update) {
    PassGrads g;
    PassStats st =
        mixed_pass(policy, value, &enc, buf, cols, segs, adv, ret, 1.0, sched, cfg, &g);
    CHECK(st.il < prev_il);
    CHECK(st.re <= prev_re);
    prev_il = st.il;
    prev_re = st.re;
    std::vector<Mat*> gl = g.list();
    neural::clip_global_norm(gl, cfg.max_grad_norm);
    adam.step(params, gl);
  }
}

TEST_CASE("student training distills the teacher and leaves the checkpoint untouched") {
  Rng rng(71);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.steps_per_epoch = 24;
  cfg.episode_length = 12;
  cfg.batch_size = 72;
  cfg.updates_per_epoch = 4;
  cfg.workers = 4;
  cfg.hidden = 24;
  cfg.enc_hidden = 12;
  cfg.lr = 3e-3;
  cfg.seed = 31;
  CurriculumSchedule sched;
  sched.lambda_horizon = 1e9;  // pinned full imitation
  RandomizationRanges ranges;

  // a teacher whose actions actually vary with state and sit off center
  neural::Policy teacher = neural::Policy::make(
      rep::kObsDim, 9, cfg.hidden, Vec::Constant(9, -1.6), Vec::Constant(9, 1.6), rng);
  teacher.net.W.back() = neural::orthogonal(9, cfg.hidden, 0.8, rng);
  for (int i = 0; i < 9; ++i) teacher.net.b.back()(i, 0) = 0.4 * rng.normal();
  neural::ValueNet tvalue = neural::ValueNet::make(rep::kObsDim, cfg.hidden, rng);
  neural::Checkpoint ckpt = make_teacher_checkpoint(teacher, tvalue);
  neural::Checkpoint before = ckpt;

  auto envs = make_envs(cfg.workers, cfg.episode_length, false);
  StudentResult res = train_student(cfg, sched, ranges, ckpt, envs, TrainIO{});

  for (auto& [name, mat] : before.tensors) {
    REQUIRE(ckpt.tensors.count(name) == 1);
    CHECK((ckpt.tensors.at(name) - mat).norm() == 0.0);
  }
  CHECK(res.metrics.front().lambda == 1.0);
  CHECK(res.metrics.back().il_loss < res.metrics.front().il_loss);
  CHECK(res.metrics.back().il_loss < 1e-2);

  // transfer init starts the student on top of the teacher, so the first
  // epoch's gap is only the contact-slot patching; from scratch it is the
  // full distance to the teacher policy
  TrainConfig scratch = cfg;
  scratch.transfer_init = false;
  auto envs2 = make_envs(cfg.workers, cfg.episode_length, false);
  StudentResult res2 = train_student(scratch, sched, ranges, ckpt, envs2, TrainIO{});
  CHECK(res.metrics.front().il_loss < 0.1);
  CHECK(res2.metrics.front().il_loss > 3.0 * res.metrics.front().il_loss);
}

TEST_CASE("student lambda metrics follow the schedule per epoch") {
  Rng rng(72);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.steps_per_epoch = 8;
  cfg.episode_length = 4;
  cfg.batch_size = 16;
  cfg.updates_per_epoch = 2;
  cfg.workers = 2;
  cfg.hidden = 8;
  cfg.enc_hidden = 6;
  cfg.seed = 41;
  CurriculumSchedule sched;
  sched.lambda_horizon = 4.0;
  RandomizationRanges ranges;
  neural::Policy teacher = neural::Policy::make(
      rep::kObsDim, 9, cfg.hidden, Vec::Constant(9, -1.6), Vec::Constant(9, 1.6), rng);
  neural::ValueNet tvalue = neural::ValueNet::make(rep::kObsDim, cfg.hidden, rng);
  neural::Checkpoint ckpt = make_teacher_checkpoint(teacher, tvalue);
  auto envs = make_envs(cfg.workers, cfg.episode_length, false);
  StudentResult res = train_student(cfg, sched, ranges, ckpt, envs, TrainIO{});
  REQUIRE(res.metrics.size() == 5);
  for (int e = 0; e < 5; ++e) CHECK(res.metrics[static_cast<size_t>(e)].lambda == sched.lambda(e));
}

TEST_CASE("configuration and layout guards") {
  TrainConfig cfg;
  cfg.batch_size = cfg.workers * cfg.steps_per_epoch + 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  TrainConfig ok;
  ok.workers = 2;
  ok.epochs = 1;
  ok.steps_per_epoch = 4;
  ok.batch_size = 4;
  ok.hidden = 8;
  CurriculumSchedule sched;
  auto too_few = make_envs(1, 1, true);
  CHECK_THROWS_AS(train_teacher(ok, sched, too_few, TrainIO{}), std::invalid_argument);

  // student refuses observations that are not in the shared layout
  Rng rng(73);
  RandomizationRanges ranges;
  neural::Policy teacher =
      neural::Policy::make(1, 1, 8, Vec::Constant(1, -2.0), Vec::Constant(1, 2.0), rng);
  neural::ValueNet tvalue = neural::ValueNet::make(1, 8, rng);
  neural::Checkpoint ckpt = make_teacher_checkpoint(teacher, tvalue);
  auto bandits = make_envs(2, 1, true);
  CHECK_THROWS_AS(train_student(ok, sched, ranges, ckpt, bandits, TrainIO{}),
                  std::invalid_argument);

  // checkpoint trained on different dimensions is rejected
  TrainConfig scfg = ok;
  scfg.enc_hidden = 6;
  auto synth = make_envs(2, 2, false);
  scfg.episode_length = 2;
  CHECK_THROWS_AS(train_student(scfg, sched, ranges, ckpt, synth, TrainIO{}),
                  std::invalid_argument);
}

TEST_CASE("metrics line uses the documented schema") {
  EpochMetrics m;
  m.epoch = 3;
  m.lambda = 0.5;
  m.mean_reward = 1.25;
  m.il_loss = 0.25;
  m.re_loss = 0.125;
  m.ppo_loss = -0.5;
  m.success_rate = 0.75;
  CHECK(metrics_json_line(m) ==
        "{\"epoch\":3,\"lambda\":0.5,\"mean_reward\":1.25,\"il_loss\":0.25,"
        "\"re_loss\":0.125,\"ppo_loss\":-0.5,\"success_rate\":0.75}");
}
