#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "graspcraft/rng.hpp"
#include "json.hpp"

namespace graspcraft::neural {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Parameter registry entry; every trainable tensor is reachable through one
// of these lists, which drives the optimizer, checkpoints, and the
// finite-difference checks.
struct NamedTensor {
  std::string name;
  Mat* value;
};

// Haar-orthogonal matrix scaled by gain (rows != cols handled by transposing).
Mat orthogonal(int rows, int cols, double gain, Rng& rng);

double sigmoid(double x);
double softplus(double x);

// ---- multilayer perceptron, tanh hidden activations ----

struct Mlp {
  std::vector<Mat> W;  // W[l] is out_l x in_l
  std::vector<Mat> b;  // out_l x 1
  bool tanh_hidden = true;  // identity config exists for the matmul oracle

  // orthogonal hidden init (gain sqrt 2), final layer scaled by final_scale
  static Mlp make(const std::vector<int>& sizes, Rng& rng, double final_scale = 1.0);
  int in_dim() const { return static_cast<int>(W.front().cols()); }
  int out_dim() const { return static_cast<int>(W.back().rows()); }
  std::vector<NamedTensor> params(const std::string& prefix);
};

struct MlpCache {
  Mat input;             // in x batch
  std::vector<Mat> act;  // post-activation per hidden layer
};

// columns are batch entries
Mat mlp_forward(const Mlp& m, const Mat& input, MlpCache* cache = nullptr);

struct MlpGrads {
  std::vector<Mat> dW;
  std::vector<Mat> db;
  Mat dinput;
  static MlpGrads zeros_like(const Mlp& m);
  void accumulate(const MlpGrads& other, double scale = 1.0);
  std::vector<Mat*> list();
};

MlpGrads mlp_backward(const Mlp& m, const MlpCache& cache, const Mat& dout);

// ---- diagonal Gaussian action head ----

constexpr double kLogStdLo = -4.0;
constexpr double kLogStdHi = 1.0;

// mean = lo + (tanh(u) + 1)/2 * (hi - lo), per action dimension
Mat tanh_squash(const Mat& u, const Vec& lo, const Vec& hi);
Mat tanh_squash_backward(const Mat& u, const Vec& lo, const Vec& hi, const Mat& dmean);

Vec clamped_sigma(const Mat& log_std);
// 1 where the clamp is inactive, 0 where it pins the value
Vec logstd_grad_mask(const Mat& log_std);

// columns are samples
Vec diag_logprob(const Mat& mean, const Vec& sigma, const Mat& actions);
double diag_entropy(const Vec& sigma);
Mat dlogprob_dmean(const Mat& mean, const Vec& sigma, const Mat& actions);
// per-sample gradients w.r.t. log sigma; callers weight and row-sum
Mat dlogprob_dlogstd(const Mat& mean, const Vec& sigma, const Mat& actions);

// ---- gated recurrent contact encoder ----

// Single GRU layer plus a linear readout. The readout's first half are
// contact logits, the second half impulse values squashed through softplus
// by decode_contacts; both in the observation's normalized units.
struct GruEncoder {
  Mat Wz, Uz, bz;
  Mat Wr, Ur, br;
  Mat Wn, Un, bn;
  Mat Wo, bo;

  static GruEncoder make(int in, int hidden, int out, Rng& rng);
  int in_dim() const { return static_cast<int>(Wz.cols()); }
  int hidden_dim() const { return static_cast<int>(Wz.rows()); }
  int out_dim() const { return static_cast<int>(Wo.rows()); }
  std::vector<NamedTensor> params(const std::string& prefix);
};

struct GruCache {
  std::vector<Mat> x, h_prev, z, r, n, h;
};

// xs[t] is in x batch; h0 is hidden x batch (zero at episode starts).
// Returns the raw readout per step (out x batch).
std::vector<Mat> gru_forward(const GruEncoder& g, const std::vector<Mat>& xs, const Mat& h0,
                             GruCache* cache = nullptr, Mat* h_final = nullptr);

struct GruGrads {
  Mat dWz, dUz, dbz, dWr, dUr, dbr, dWn, dUn, dbn, dWo, dbo;
  static GruGrads zeros_like(const GruEncoder& g);
  void accumulate(const GruGrads& other, double scale = 1.0);
  std::vector<Mat*> list();
};

GruGrads gru_backward(const GruEncoder& g, const GruCache& cache,
                      const std::vector<Mat>& douts);

// raw readout -> (sigmoid contact probabilities, softplus impulses)
void decode_contacts(const Mat& raw, Mat* b_hat, Mat* f_hat);

// ---- optimizer ----

struct AdamState {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::vector<Mat> m, v;

  static AdamState init(const std::vector<NamedTensor>& params, double lr);
  // grads aligned with the parameter list the state was initialized from
  void step(const std::vector<NamedTensor>& params, const std::vector<Mat*>& grads);
};

// scales grads in place if their global norm exceeds max_norm; returns the
// pre-clip norm
double clip_global_norm(std::vector<Mat*> grads, double max_norm);

// ---- policy / value bundles ----

struct Policy {
  Mlp net;
  Mat log_std;  // act x 1, state independent
  Vec act_lo, act_hi;

  static Policy make(int obs_dim, int act_dim, int hidden, const Vec& lo, const Vec& hi,
                     Rng& rng);
  std::vector<NamedTensor> params(const std::string& prefix);
  // deterministic action: squashed mean
  Mat mean(const Mat& obs, MlpCache* cache = nullptr, Mat* raw = nullptr) const;
};

struct ValueNet {
  Mlp net;
  static ValueNet make(int obs_dim, int hidden, Rng& rng);
  std::vector<NamedTensor> params(const std::string& prefix);
  Vec values(const Mat& obs, MlpCache* cache = nullptr) const;
};

// ---- checkpoints: versioned binary tensor table + JSON sidecar ----

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors,
                     const nlohmann::json& meta);

struct Checkpoint {
  std::map<std::string, Mat> tensors;
  nlohmann::json meta;
};

Checkpoint load_checkpoint(const std::string& path);

// copies by name with exact shape checks; missing or mismatched -> error
void load_into(const Checkpoint& ckpt, const std::vector<NamedTensor>& dst);

}  // namespace graspcraft::neural
