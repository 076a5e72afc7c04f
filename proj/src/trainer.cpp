#include "graspcraft/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace graspcraft::train {

EnvParams nominal_params() { return EnvParams{}; }

void TrainConfig::validate() const {
  if (epochs <= 0) throw std::invalid_argument("train_config: epochs must be positive");
  if (steps_per_epoch <= 0)
    throw std::invalid_argument("train_config: steps_per_epoch must be positive");
  if (episode_length <= 0)
    throw std::invalid_argument("train_config: episode_length must be positive");
  if (batch_size <= 0) throw std::invalid_argument("train_config: batch_size must be positive");
  if (batch_size > workers * steps_per_epoch)
    throw std::invalid_argument("train_config: batch_size exceeds workers * steps_per_epoch");
  if (updates_per_epoch <= 0)
    throw std::invalid_argument("train_config: updates_per_epoch must be positive");
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw std::invalid_argument("train_config: gamma must lie in (0,1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0))
    throw std::invalid_argument("train_config: gae_lambda must lie in [0,1]");
  if (clip_eps <= 0.0) throw std::invalid_argument("train_config: clip_eps must be positive");
  if (max_grad_norm <= 0.0)
    throw std::invalid_argument("train_config: max_grad_norm must be positive");
  if (value_coef < 0.0) throw std::invalid_argument("train_config: value_coef must be >= 0");
  if (entropy_coef < 0.0) throw std::invalid_argument("train_config: entropy_coef must be >= 0");
  if (workers <= 0) throw std::invalid_argument("train_config: workers must be positive");
  if (lr <= 0.0) throw std::invalid_argument("train_config: lr must be positive");
  if (hidden <= 0) throw std::invalid_argument("train_config: hidden must be positive");
  if (enc_hidden <= 0) throw std::invalid_argument("train_config: enc_hidden must be positive");
}

void CurriculumSchedule::validate() const {
  if (w_re < 0.0 || w_act < 0.0)
    throw std::invalid_argument("curriculum: loss weights must be >= 0");
  if (lambda_horizon <= 0.0)
    throw std::invalid_argument("curriculum: lambda_horizon must be positive");
}

void RandomizationRanges::validate() const {
  for (double f : friction)
    if (f <= 0.0) throw std::invalid_argument("randomization: friction must be positive");
  auto check = [](double lo, double hi, const char* what) {
    if (!(lo <= hi) || lo <= 0.0)
      throw std::invalid_argument(std::string("randomization: bad range for ") + what);
  };
  check(hand_kp_lo, hand_kp_hi, "hand kp");
  check(hand_kd_lo, hand_kd_hi, "hand kd");
  check(arm_kp_lo, arm_kp_hi, "arm kp");
  check(arm_kd_lo, arm_kd_hi, "arm kd");
}

EnvParams sample_randomization(const RandomizationRanges& ranges, Rng& rng) {
  EnvParams p;
  p.friction = ranges.friction[static_cast<size_t>(rng.uniform_int(5))];
  p.hand_kp_scale = rng.uniform(ranges.hand_kp_lo, ranges.hand_kp_hi);
  p.hand_kd_scale = rng.uniform(ranges.hand_kd_lo, ranges.hand_kd_hi);
  p.arm_kp_scale = rng.uniform(ranges.arm_kp_lo, ranges.arm_kp_hi);
  p.arm_kd_scale = rng.uniform(ranges.arm_kd_lo, ranges.arm_kd_hi);
  p.sensor_noise = true;
  return p;
}

void RolloutBuffer::allocate(int workers_, int steps_, int obs_dim_, int act_dim_,
                             bool student) {
  workers = workers_;
  steps = steps_;
  obs_dim = obs_dim_;
  act_dim = act_dim_;
  int n = workers * steps;
  obs = Mat::Zero(obs_dim, n);
  actions = Mat::Zero(act_dim, n);
  rewards = Vec::Zero(n);
  values = Vec::Zero(n);
  logprobs = Vec::Zero(n);
  done.assign(static_cast<size_t>(n), 0);
  bootstrap = Vec::Zero(workers);
  has_teacher = student;
  if (student) {
    teacher_actions = Mat::Zero(act_dim, n);
    enc_inputs = Mat::Zero(18, n);
    target_b = Mat::Zero(sim::kNumHandLinks, n);
    target_f = Mat::Zero(sim::kNumHandLinks, n);
  }
  segments.clear();
}

void gae_advantages(const RolloutBuffer& buffer, double gamma, double gae_lambda,
                    Vec* advantages, Vec* returns) {
  int n = buffer.size();
  if (n == 0) throw std::invalid_argument("gae_advantages: empty buffer");
  Vec adv = Vec::Zero(n);
  for (int w = 0; w < buffer.workers; ++w) {
    double running = 0.0;
    for (int t = buffer.steps - 1; t >= 0; --t) {
      int i = w * buffer.steps + t;
      bool terminal = buffer.done[static_cast<size_t>(i)] != 0;
      double next_v = 0.0;
      if (!terminal)
        next_v = t + 1 < buffer.steps ? buffer.values(w * buffer.steps + t + 1)
                                      : buffer.bootstrap(w);
      double delta = buffer.rewards(i) + gamma * next_v - buffer.values(i);
      running = terminal ? delta : delta + gamma * gae_lambda * running;
      adv(i) = running;
    }
  }
  *advantages = adv;
  *returns = adv + buffer.values;
}

void normalize_advantages(Vec& adv) {
  int n = static_cast<int>(adv.size());
  if (n == 0) throw std::invalid_argument("normalize_advantages: empty batch");
  double mean = adv.mean();
  adv.array() -= mean;
  double var = adv.squaredNorm() / n;
  double sd = std::sqrt(var);
  if (sd > 1e-12) adv /= sd;
}

std::vector<Mat*> PassGrads::list() {
  std::vector<Mat*> out = policy.list();
  out.push_back(&dlog_std);
  for (Mat* g : value.list()) out.push_back(g);
  if (has_encoder)
    for (Mat* g : encoder.list()) out.push_back(g);
  return out;
}

std::vector<neural::NamedTensor> policy_tensors(neural::Policy& p) { return p.params("policy"); }
std::vector<neural::NamedTensor> value_tensors(neural::ValueNet& v) { return v.params("value"); }
std::vector<neural::NamedTensor> encoder_tensors(neural::GruEncoder& g) {
  return g.params("encoder");
}

PassStats mixed_pass(const neural::Policy& policy, const neural::ValueNet& value,
                     const neural::GruEncoder* encoder, const RolloutBuffer& buffer,
                     const std::vector<int>& cols, const std::vector<int>& segment_ids,
                     const Vec& advantages, const Vec& returns, double lambda,
                     const CurriculumSchedule& schedule, const TrainConfig& cfg,
                     PassGrads* grads) {
  int b = static_cast<int>(cols.size());
  if (b == 0) throw std::invalid_argument("mixed_pass: empty minibatch");
  if (lambda > 0.0 && !buffer.has_teacher)
    throw std::invalid_argument("mixed_pass: teacher actions required when lambda > 0");

  int act_dim = buffer.act_dim;
  Mat o(buffer.obs_dim, b), a(act_dim, b);
  Vec adv(b), ret(b), logp_old(b);
  for (int i = 0; i < b; ++i) {
    int c = cols[static_cast<size_t>(i)];
    o.col(i) = buffer.obs.col(c);
    a.col(i) = buffer.actions.col(c);
    adv(i) = advantages(c);
    ret(i) = returns(c);
    logp_old(i) = buffer.logprobs(c);
  }
  normalize_advantages(adv);

  neural::MlpCache pcache;
  Mat raw;
  Mat mean = policy.mean(o, &pcache, &raw);
  Vec sigma = neural::clamped_sigma(policy.log_std);
  Vec logp = neural::diag_logprob(mean, sigma, a);

  PassStats stats;
  stats.lambda = lambda;
  double w_ppo = 1.0 - lambda;

  std::vector<uint8_t> active(static_cast<size_t>(b), 0);
  Vec rho(b);
  double surr = 0.0;
  for (int i = 0; i < b; ++i) {
    rho(i) = std::exp(logp(i) - logp_old(i));
    double clipped = std::clamp(rho(i), 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    double t1 = rho(i) * adv(i);
    double t2 = clipped * adv(i);
    if (t1 <= t2) {
      surr -= t1;
      active[static_cast<size_t>(i)] = 1;
    } else {
      surr -= t2;
    }
  }
  stats.surrogate = surr / b;
  stats.entropy = neural::diag_entropy(sigma);

  neural::MlpCache vcache;
  Vec v = value.values(o, &vcache);
  stats.value_loss = (v - ret).squaredNorm() / b;
  stats.ppo =
      stats.surrogate + cfg.value_coef * stats.value_loss - cfg.entropy_coef * stats.entropy;

  Mat teacher_a;
  if (lambda > 0.0 && buffer.has_teacher) {
    teacher_a.resize(act_dim, b);
    for (int i = 0; i < b; ++i) teacher_a.col(i) = buffer.teacher_actions.col(cols[static_cast<size_t>(i)]);
    stats.il = (mean - teacher_a).squaredNorm() / (static_cast<double>(b) * act_dim);
  }

  // reconstruction over whole episode slices, BPTT from the stored h0
  std::vector<neural::GruCache> caches;
  std::vector<std::vector<Mat>> raws;
  double entries = 0.0;
  double sse = 0.0;
  if (encoder) {
    caches.resize(segment_ids.size());
    raws.resize(segment_ids.size());
    for (size_t s = 0; s < segment_ids.size(); ++s) {
      const Segment& seg = buffer.segments[static_cast<size_t>(segment_ids[s])];
      std::vector<Mat> xs(static_cast<size_t>(seg.len));
      for (int t = 0; t < seg.len; ++t) xs[static_cast<size_t>(t)] = buffer.enc_inputs.col(seg.col0 + t);
      raws[s] = gru_forward(*encoder, xs, seg.h0, &caches[s]);
      for (int t = 0; t < seg.len; ++t) {
        Mat bh, fh;
        neural::decode_contacts(raws[s][static_cast<size_t>(t)], &bh, &fh);
        int c = seg.col0 + t;
        sse += (bh.col(0) - buffer.target_b.col(c)).squaredNorm();
        sse += (fh.col(0) - buffer.target_f.col(c)).squaredNorm();
        entries += sim::kNumHandLinks;
      }
    }
    if (entries > 0.0) stats.re = sse / entries;
  }

  stats.total = lambda * schedule.w_act * stats.il + schedule.w_re * stats.re + w_ppo * stats.ppo;

  if (!grads) return stats;

  Mat dmean = Mat::Zero(act_dim, b);
  Mat dlp_dmean = neural::dlogprob_dmean(mean, sigma, a);
  Mat dlp_dls = neural::dlogprob_dlogstd(mean, sigma, a);
  Vec dlstd = Vec::Zero(act_dim);
  for (int i = 0; i < b; ++i) {
    if (!active[static_cast<size_t>(i)]) continue;
    double w = -w_ppo * adv(i) * rho(i) / b;
    dmean.col(i) += w * dlp_dmean.col(i);
    dlstd += w * dlp_dls.col(i);
  }
  dlstd.array() += -w_ppo * cfg.entropy_coef;
  if (lambda > 0.0 && buffer.has_teacher)
    dmean += (lambda * schedule.w_act * 2.0 / (static_cast<double>(b) * act_dim)) *
             (mean - teacher_a);

  grads->policy = neural::mlp_backward(
      policy.net, pcache,
      neural::tanh_squash_backward(raw, policy.act_lo, policy.act_hi, dmean));
  grads->dlog_std =
      Mat(dlstd).cwiseProduct(Mat(neural::logstd_grad_mask(policy.log_std)));

  Mat dv = (w_ppo * cfg.value_coef * 2.0 / b) * (v - ret).transpose();
  grads->value = neural::mlp_backward(value.net, vcache, dv);

  grads->has_encoder = encoder != nullptr;
  if (encoder) {
    grads->encoder = neural::GruGrads::zeros_like(*encoder);
    double scale = schedule.w_re * 2.0 / std::max(entries, 1.0);
    for (size_t s = 0; s < segment_ids.size(); ++s) {
      const Segment& seg = buffer.segments[static_cast<size_t>(segment_ids[s])];
      std::vector<Mat> douts(static_cast<size_t>(seg.len));
      for (int t = 0; t < seg.len; ++t) {
        Mat bh, fh;
        neural::decode_contacts(raws[s][static_cast<size_t>(t)], &bh, &fh);
        int c = seg.col0 + t;
        Mat dout(encoder->out_dim(), 1);
        for (int k = 0; k < sim::kNumHandLinks; ++k) {
          double db = scale * (bh(k, 0) - buffer.target_b(k, c));
          dout(k, 0) = db * bh(k, 0) * (1.0 - bh(k, 0));
          double df = scale * (fh(k, 0) - buffer.target_f(k, c));
          double raw_f = raws[s][static_cast<size_t>(t)](k + sim::kNumHandLinks, 0);
          dout(k + sim::kNumHandLinks, 0) = df * neural::sigmoid(raw_f);
        }
        douts[static_cast<size_t>(t)] = dout;
      }
      grads->encoder.accumulate(neural::gru_backward(*encoder, caches[s], douts));
    }
  }
  return stats;
}

std::string metrics_json_line(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["lambda"] = m.lambda;
  j["mean_reward"] = m.mean_reward;
  j["il_loss"] = m.il_loss;
  j["re_loss"] = m.re_loss;
  j["ppo_loss"] = m.ppo_loss;
  j["success_rate"] = m.success_rate;
  return j.dump();
}

Mat encoder_obs_input(const Vec& obs) {
  Mat x(18, 1);
  for (int i = 0; i < 9; ++i) {
    x(i, 0) = obs(rep::kObsQ + i);
    x(9 + i, 0) = obs(rep::kObsAPrev + i);
  }
  return x;
}

void patch_contact_slots(Vec& obs, const Mat& b_hat, const Mat& f_hat) {
  for (int k = 0; k < sim::kNumHandLinks; ++k) {
    obs(rep::kObsB + k) = b_hat(k, 0);
    obs(rep::kObsF + k) = f_hat(k, 0);
  }
}

int worker_thread_count(int workers) {
  int cap = workers;
  if (const char* env = std::getenv("GRASPCRAFT_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) cap = v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  if (hw > 0) cap = std::min(cap, static_cast<int>(hw));
  return std::max(1, std::min(workers, cap));
}

namespace {

struct WorkerCtx {
  Env* env = nullptr;
  Rng rng{0};
  Vec obs;
  Mat h;
  bool episode_open = false;
  double episode_reward = 0.0;
  int completed = 0;
  int succeeded = 0;
  double completed_reward_sum = 0.0;
};

struct CollectSetup {
  const neural::Policy* policy = nullptr;
  const neural::ValueNet* value = nullptr;
  const neural::GruEncoder* encoder = nullptr;
  const neural::Policy* teacher = nullptr;
  const RandomizationRanges* ranges = nullptr;  // null -> nominal parameters
};

void collect_worker(WorkerCtx& ctx, const CollectSetup& setup, const TrainConfig& cfg,
                    RolloutBuffer& buffer, int w, std::vector<Segment>& seg_sink) {
  int base = w * cfg.steps_per_epoch;
  Vec sigma = neural::clamped_sigma(setup.policy->log_std);
  int act_dim = buffer.act_dim;
  Segment open;
  bool seg_live = false;
  auto close_segment = [&]() {
    if (seg_live && open.len > 0) seg_sink.push_back(open);
    seg_live = false;
  };

  for (int t = 0; t < cfg.steps_per_epoch; ++t) {
    int col = base + t;
    if (!ctx.episode_open) {
      EnvParams params =
          setup.ranges ? sample_randomization(*setup.ranges, ctx.rng) : nominal_params();
      ctx.obs = ctx.env->reset(params, ctx.rng);
      if (setup.encoder) ctx.h = Mat::Zero(setup.encoder->hidden_dim(), 1);
      ctx.episode_open = true;
      ctx.episode_reward = 0.0;
      close_segment();
      open = Segment{col, 0, ctx.h};
      seg_live = true;
    } else if (t == 0) {
      open = Segment{col, 0, ctx.h};
      seg_live = true;
    }

    Vec obs = ctx.obs;
    if (setup.encoder) {
      Mat x = encoder_obs_input(ctx.obs);
      Mat h_next;
      std::vector<Mat> raw = gru_forward(*setup.encoder, {x}, ctx.h, nullptr, &h_next);
      Mat bh, fh;
      neural::decode_contacts(raw[0], &bh, &fh);
      patch_contact_slots(obs, bh, fh);
      ctx.h = h_next;
      buffer.enc_inputs.col(col) = x;
      double b8[sim::kNumHandLinks], f8[sim::kNumHandLinks];
      ctx.env->contact_targets(b8, f8);
      for (int k = 0; k < sim::kNumHandLinks; ++k) {
        buffer.target_b(k, col) = b8[k];
        buffer.target_f(k, col) = f8[k];
      }
    }
    if (setup.teacher) buffer.teacher_actions.col(col) = setup.teacher->mean(Mat(ctx.env->privileged_obs())).col(0);

    buffer.obs.col(col) = obs;
    Mat mean = setup.policy->mean(Mat(obs));
    Mat action(act_dim, 1);
    for (int k = 0; k < act_dim; ++k) action(k, 0) = mean(k, 0) + sigma(k) * ctx.rng.normal();
    buffer.actions.col(col) = action.col(0);
    buffer.logprobs(col) = neural::diag_logprob(mean, sigma, action)(0);
    buffer.values(col) = setup.value->values(Mat(obs))(0);

    StepOut out = ctx.env->step(action.col(0));
    buffer.rewards(col) = out.reward;
    buffer.done[static_cast<size_t>(col)] = out.done ? 1 : 0;
    ctx.episode_reward += out.reward;
    open.len += 1;
    if (out.done) {
      ctx.episode_open = false;
      ctx.completed += 1;
      if (out.success) ctx.succeeded += 1;
      ctx.completed_reward_sum += ctx.episode_reward;
      close_segment();
    }
    ctx.obs = out.obs;
  }
  close_segment();

  if (ctx.episode_open) {
    Vec obs = ctx.obs;
    if (setup.encoder) {
      Mat x = encoder_obs_input(ctx.obs);
      std::vector<Mat> raw = gru_forward(*setup.encoder, {x}, ctx.h);
      Mat bh, fh;
      neural::decode_contacts(raw[0], &bh, &fh);
      patch_contact_slots(obs, bh, fh);
    }
    buffer.bootstrap(w) = setup.value->values(Mat(obs))(0);
  } else {
    buffer.bootstrap(w) = 0.0;
  }
}

std::vector<int> sample_cols(Rng& rng, int n, int batch) {
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  int take = std::min(batch, n);
  for (int i = 0; i < take; ++i) {
    int j = i + rng.uniform_int(n - i);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(take));
  return idx;
}

// whole-episode slices, shuffled, taken until the batch target is covered
void sample_segment_cols(Rng& rng, const RolloutBuffer& buffer, int batch,
                         std::vector<int>* seg_ids, std::vector<int>* cols) {
  int s = static_cast<int>(buffer.segments.size());
  std::vector<int> order(static_cast<size_t>(s));
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i + 1 < s; ++i) {
    int j = i + rng.uniform_int(s - i);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  seg_ids->clear();
  cols->clear();
  for (int i = 0; i < s && static_cast<int>(cols->size()) < batch; ++i) {
    int id = order[static_cast<size_t>(i)];
    seg_ids->push_back(id);
    const Segment& seg = buffer.segments[static_cast<size_t>(id)];
    for (int t = 0; t < seg.len; ++t) cols->push_back(seg.col0 + t);
  }
}

void save_phase_checkpoint(const std::string& path, neural::Policy& policy,
                           neural::ValueNet& value, neural::GruEncoder* encoder,
                           const TrainConfig& cfg, const char* phase, int epoch,
                           double lambda, uint64_t rng_state) {
  if (path.empty()) return;
  std::vector<neural::NamedTensor> tensors = policy_tensors(policy);
  for (auto& t : value_tensors(value)) tensors.push_back(t);
  if (encoder)
    for (auto& t : encoder_tensors(*encoder)) tensors.push_back(t);
  nlohmann::json meta;
  meta["phase"] = phase;
  meta["epoch"] = epoch;
  meta["lambda"] = lambda;
  meta["seed"] = cfg.seed;
  meta["rng_state"] = rng_state;
  meta["obs_dim"] = policy.net.in_dim();
  meta["act_dim"] = policy.net.out_dim();
  meta["hidden"] = cfg.hidden;
  meta["enc_hidden"] = cfg.enc_hidden;
  meta["act_lo"] = std::vector<double>(policy.act_lo.data(),
                                       policy.act_lo.data() + policy.act_lo.size());
  meta["act_hi"] = std::vector<double>(policy.act_hi.data(),
                                       policy.act_hi.data() + policy.act_hi.size());
  neural::save_checkpoint(path, tensors, meta);
}

struct EpochTally {
  int completed = 0;
  int succeeded = 0;
  double reward_sum = 0.0;
};

// Workers write disjoint column ranges; per-worker RNG streams make the
// result independent of the thread schedule.
EpochTally collect_epoch(std::vector<WorkerCtx>& ctxs, const CollectSetup& setup,
                         const TrainConfig& cfg, RolloutBuffer& buffer) {
  for (auto& c : ctxs) {
    c.completed = 0;
    c.succeeded = 0;
    c.completed_reward_sum = 0.0;
  }
  // workers write disjoint columns; segments land in per-worker sinks and are
  // merged in worker order so the layout never depends on the schedule
  std::vector<std::vector<Segment>> worker_segments(static_cast<size_t>(cfg.workers));
  buffer.segments.clear();

  int threads = worker_thread_count(cfg.workers);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (int tid = 0; tid < threads; ++tid) {
    pool.emplace_back([&, tid]() {
      for (int w = tid; w < cfg.workers; w += threads)
        collect_worker(ctxs[static_cast<size_t>(w)], setup, cfg, buffer, w,
                       worker_segments[static_cast<size_t>(w)]);
    });
  }
  for (auto& th : pool) th.join();

  EpochTally tally;
  for (int w = 0; w < cfg.workers; ++w) {
    for (auto& s : worker_segments[static_cast<size_t>(w)]) buffer.segments.push_back(s);
    tally.completed += ctxs[static_cast<size_t>(w)].completed;
    tally.succeeded += ctxs[static_cast<size_t>(w)].succeeded;
    tally.reward_sum += ctxs[static_cast<size_t>(w)].completed_reward_sum;
  }
  return tally;
}

std::ofstream open_metrics(const std::string& path) {
  std::ofstream out;
  if (!path.empty()) {
    out.open(path, std::ios::trunc);
    if (!out) throw std::runtime_error("train: cannot open metrics file " + path);
  }
  return out;
}

}  // namespace

TeacherResult train_teacher(const TrainConfig& cfg, const CurriculumSchedule& schedule,
                            std::vector<std::unique_ptr<Env>>& envs, const TrainIO& io) {
  cfg.validate();
  schedule.validate();
  if (static_cast<int>(envs.size()) != cfg.workers)
    throw std::invalid_argument("train_teacher: need exactly one env per worker");
  int obs_dim = envs[0]->obs_dim();
  int act_dim = envs[0]->act_dim();
  Vec lo = envs[0]->action_lo(), hi = envs[0]->action_hi();

  Rng master(cfg.seed);
  neural::Policy policy = neural::Policy::make(obs_dim, act_dim, cfg.hidden, lo, hi, master);
  neural::ValueNet value = neural::ValueNet::make(obs_dim, cfg.hidden, master);
  std::vector<neural::NamedTensor> params = policy_tensors(policy);
  for (auto& t : value_tensors(value)) params.push_back(t);
  neural::AdamState adam = neural::AdamState::init(params, cfg.lr);

  std::vector<WorkerCtx> ctxs(static_cast<size_t>(cfg.workers));
  for (int w = 0; w < cfg.workers; ++w) {
    ctxs[static_cast<size_t>(w)].env = envs[static_cast<size_t>(w)].get();
    ctxs[static_cast<size_t>(w)].rng = master.split(1000 + static_cast<uint64_t>(w));
  }

  CollectSetup setup;
  setup.policy = &policy;
  setup.value = &value;

  std::ofstream metrics_out = open_metrics(io.metrics_path);
  RolloutBuffer buffer;
  buffer.allocate(cfg.workers, cfg.steps_per_epoch, obs_dim, act_dim, false);

  std::vector<EpochMetrics> history;
  history.reserve(static_cast<size_t>(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochTally tally = collect_epoch(ctxs, setup, cfg, buffer);
    Vec adv, ret;
    gae_advantages(buffer, cfg.gamma, cfg.gae_lambda, &adv, &ret);
    double ppo_sum = 0.0;
    for (int pass = 0; pass < cfg.updates_per_epoch; ++pass) {
      std::vector<int> cols = sample_cols(master, buffer.size(), cfg.batch_size);
      PassGrads g;
      PassStats st =
          mixed_pass(policy, value, nullptr, buffer, cols, {}, adv, ret, 0.0, schedule, cfg, &g);
      if (!std::isfinite(st.total))
        throw std::runtime_error("train_teacher: non-finite loss at epoch " +
                                 std::to_string(epoch) + " pass " + std::to_string(pass));
      std::vector<Mat*> gl = g.list();
      neural::clip_global_norm(gl, cfg.max_grad_norm);
      adam.step(params, gl);
      ppo_sum += st.ppo;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.mean_reward = tally.completed > 0 ? tally.reward_sum / tally.completed : 0.0;
    m.ppo_loss = ppo_sum / cfg.updates_per_epoch;
    m.success_rate =
        tally.completed > 0 ? static_cast<double>(tally.succeeded) / tally.completed : 0.0;
    history.push_back(m);
    if (metrics_out.is_open()) metrics_out << metrics_json_line(m) << "\n" << std::flush;
    if (io.checkpoint_every > 0 && (epoch + 1) % io.checkpoint_every == 0)
      save_phase_checkpoint(io.checkpoint_path, policy, value, nullptr, cfg, "teacher",
                            epoch + 1, 0.0, master.state());
  }
  save_phase_checkpoint(io.checkpoint_path, policy, value, nullptr, cfg, "teacher", cfg.epochs,
                        0.0, master.state());
  return TeacherResult{std::move(policy), std::move(value), std::move(history)};
}

StudentResult train_student(const TrainConfig& cfg, const CurriculumSchedule& schedule,
                            const RandomizationRanges& ranges,
                            const neural::Checkpoint& teacher_ckpt,
                            std::vector<std::unique_ptr<Env>>& envs, const TrainIO& io) {
  cfg.validate();
  schedule.validate();
  ranges.validate();
  if (static_cast<int>(envs.size()) != cfg.workers)
    throw std::invalid_argument("train_student: need exactly one env per worker");
  int obs_dim = envs[0]->obs_dim();
  int act_dim = envs[0]->act_dim();
  if (obs_dim != rep::kObsDim)
    throw std::invalid_argument(
        "train_student: observations must use the shared fixed layout");
  if (teacher_ckpt.meta.contains("obs_dim") &&
      teacher_ckpt.meta.at("obs_dim").get<int>() != obs_dim)
    throw std::invalid_argument("train_student: teacher checkpoint observation dim mismatch");
  if (teacher_ckpt.meta.contains("act_dim") &&
      teacher_ckpt.meta.at("act_dim").get<int>() != act_dim)
    throw std::invalid_argument("train_student: teacher checkpoint action dim mismatch");
  Vec lo = envs[0]->action_lo(), hi = envs[0]->action_hi();

  Rng master(cfg.seed);
  neural::Policy policy = neural::Policy::make(obs_dim, act_dim, cfg.hidden, lo, hi, master);
  neural::ValueNet value = neural::ValueNet::make(obs_dim, cfg.hidden, master);
  neural::GruEncoder encoder =
      neural::GruEncoder::make(18, cfg.enc_hidden, 2 * sim::kNumHandLinks, master);
  neural::Policy teacher = neural::Policy::make(obs_dim, act_dim, cfg.hidden, lo, hi, master);
  neural::load_into(teacher_ckpt, teacher.params("policy"));
  if (cfg.transfer_init) {
    neural::load_into(teacher_ckpt, policy.params("policy"));
    neural::load_into(teacher_ckpt, value.params("value"));
  }

  std::vector<neural::NamedTensor> params = policy_tensors(policy);
  for (auto& t : value_tensors(value)) params.push_back(t);
  for (auto& t : encoder_tensors(encoder)) params.push_back(t);
  neural::AdamState adam = neural::AdamState::init(params, cfg.lr);

  std::vector<WorkerCtx> ctxs(static_cast<size_t>(cfg.workers));
  for (int w = 0; w < cfg.workers; ++w) {
    ctxs[static_cast<size_t>(w)].env = envs[static_cast<size_t>(w)].get();
    ctxs[static_cast<size_t>(w)].rng = master.split(1000 + static_cast<uint64_t>(w));
  }

  CollectSetup setup;
  setup.policy = &policy;
  setup.value = &value;
  setup.encoder = &encoder;
  setup.teacher = &teacher;
  setup.ranges = cfg.randomize_student ? &ranges : nullptr;

  std::ofstream metrics_out = open_metrics(io.metrics_path);
  RolloutBuffer buffer;
  buffer.allocate(cfg.workers, cfg.steps_per_epoch, obs_dim, act_dim, true);

  std::vector<EpochMetrics> history;
  history.reserve(static_cast<size_t>(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lambda = schedule.lambda(epoch);
    EpochTally tally = collect_epoch(ctxs, setup, cfg, buffer);
    Vec adv, ret;
    gae_advantages(buffer, cfg.gamma, cfg.gae_lambda, &adv, &ret);
    double ppo_sum = 0.0, il_sum = 0.0, re_sum = 0.0;
    for (int pass = 0; pass < cfg.updates_per_epoch; ++pass) {
      std::vector<int> seg_ids, cols;
      sample_segment_cols(master, buffer, cfg.batch_size, &seg_ids, &cols);
      PassGrads g;
      PassStats st = mixed_pass(policy, value, &encoder, buffer, cols, seg_ids, adv, ret,
                                lambda, schedule, cfg, &g);
      if (!std::isfinite(st.total))
        throw std::runtime_error("train_student: non-finite loss at epoch " +
                                 std::to_string(epoch) + " pass " + std::to_string(pass));
      std::vector<Mat*> gl = g.list();
      neural::clip_global_norm(gl, cfg.max_grad_norm);
      adam.step(params, gl);
      ppo_sum += st.ppo;
      il_sum += st.il;
      re_sum += st.re;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.lambda = lambda;
    m.mean_reward = tally.completed > 0 ? tally.reward_sum / tally.completed : 0.0;
    m.il_loss = il_sum / cfg.updates_per_epoch;
    m.re_loss = re_sum / cfg.updates_per_epoch;
    m.ppo_loss = ppo_sum / cfg.updates_per_epoch;
    m.success_rate =
        tally.completed > 0 ? static_cast<double>(tally.succeeded) / tally.completed : 0.0;
    history.push_back(m);
    if (metrics_out.is_open()) metrics_out << metrics_json_line(m) << "\n" << std::flush;
    if (io.checkpoint_every > 0 && (epoch + 1) % io.checkpoint_every == 0)
      save_phase_checkpoint(io.checkpoint_path, policy, value, &encoder, cfg, "student",
                            epoch + 1, lambda, master.state());
  }
  save_phase_checkpoint(io.checkpoint_path, policy, value, &encoder, cfg, "student",
                        cfg.epochs, schedule.lambda(cfg.epochs - 1), master.state());
  return StudentResult{std::move(policy), std::move(value), std::move(encoder),
                       std::move(history)};
}

}  // namespace graspcraft::train
