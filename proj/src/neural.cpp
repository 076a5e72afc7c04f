#include "graspcraft/neural.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace graspcraft::neural {

Mat orthogonal(int rows, int cols, double gain, Rng& rng) {
  bool flip = rows < cols;
  int r = flip ? cols : rows, c = flip ? rows : cols;
  Mat a(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ() * Mat::Identity(r, c);
  Mat rmat = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
  for (int j = 0; j < c; ++j)
    if (rmat(j, j) < 0.0) q.col(j) = -q.col(j);
  Mat out = flip ? Mat(q.transpose()) : q;
  return gain * out;
}

double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                           : std::exp(x) / (1.0 + std::exp(x)); }

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// ---- MLP ----

Mlp Mlp::make(const std::vector<int>& sizes, Rng& rng, double final_scale) {
  if (sizes.size() < 2) throw std::invalid_argument("Mlp::make: need at least two sizes");
  Mlp m;
  for (size_t l = 0; l + 1 < sizes.size(); ++l) {
    bool last = l + 2 == sizes.size();
    double gain = last ? final_scale : std::sqrt(2.0);
    m.W.push_back(orthogonal(sizes[l + 1], sizes[l], gain, rng));
    m.b.push_back(Mat::Zero(sizes[l + 1], 1));
  }
  return m;
}

std::vector<NamedTensor> Mlp::params(const std::string& prefix) {
  std::vector<NamedTensor> out;
  for (size_t l = 0; l < W.size(); ++l) {
    out.push_back({prefix + ".W" + std::to_string(l), &W[l]});
    out.push_back({prefix + ".b" + std::to_string(l), &b[l]});
  }
  return out;
}

Mat mlp_forward(const Mlp& m, const Mat& input, MlpCache* cache) {
  if (input.rows() != m.in_dim())
    throw std::invalid_argument("mlp_forward: input dimension mismatch");
  if (cache) {
    cache->input = input;
    cache->act.clear();
  }
  Mat x = input;
  for (size_t l = 0; l < m.W.size(); ++l) {
    Mat pre = (m.W[l] * x).colwise() + Vec(m.b[l].col(0));
    if (l + 1 < m.W.size()) {
      x = m.tanh_hidden ? Mat(pre.array().tanh()) : pre;
      if (cache) cache->act.push_back(x);
    } else {
      x = pre;
    }
  }
  return x;
}

MlpGrads MlpGrads::zeros_like(const Mlp& m) {
  MlpGrads g;
  for (size_t l = 0; l < m.W.size(); ++l) {
    g.dW.push_back(Mat::Zero(m.W[l].rows(), m.W[l].cols()));
    g.db.push_back(Mat::Zero(m.b[l].rows(), 1));
  }
  return g;
}

void MlpGrads::accumulate(const MlpGrads& other, double scale) {
  for (size_t l = 0; l < dW.size(); ++l) {
    dW[l] += scale * other.dW[l];
    db[l] += scale * other.db[l];
  }
}

std::vector<Mat*> MlpGrads::list() {
  std::vector<Mat*> out;
  for (size_t l = 0; l < dW.size(); ++l) {
    out.push_back(&dW[l]);
    out.push_back(&db[l]);
  }
  return out;
}

MlpGrads mlp_backward(const Mlp& m, const MlpCache& cache, const Mat& dout) {
  size_t layers = m.W.size();
  if (cache.act.size() + 1 != layers)
    throw std::invalid_argument("mlp_backward: cache does not match network depth");
  MlpGrads g = MlpGrads::zeros_like(m);
  Mat delta = dout;
  for (size_t l = layers; l-- > 0;) {
    const Mat& in = l == 0 ? cache.input : cache.act[l - 1];
    g.dW[l] = delta * in.transpose();
    g.db[l] = delta.rowwise().sum();
    if (l == 0) {
      g.dinput = m.W[l].transpose() * delta;
    } else {
      delta = m.W[l].transpose() * delta;
      if (m.tanh_hidden)
        delta = delta.cwiseProduct(Mat(1.0 - cache.act[l - 1].array().square()));
    }
  }
  return g;
}

// ---- Gaussian head ----

Mat tanh_squash(const Mat& u, const Vec& lo, const Vec& hi) {
  Mat t = u.array().tanh();
  Mat out(u.rows(), u.cols());
  for (int i = 0; i < u.rows(); ++i)
    out.row(i) = lo(i) + 0.5 * (hi(i) - lo(i)) * (t.row(i).array() + 1.0);
  return out;
}

Mat tanh_squash_backward(const Mat& u, const Vec& lo, const Vec& hi, const Mat& dmean) {
  Mat t = u.array().tanh();
  Mat g(u.rows(), u.cols());
  for (int i = 0; i < u.rows(); ++i)
    g.row(i) = dmean.row(i).array() * 0.5 * (hi(i) - lo(i)) *
               (1.0 - t.row(i).array().square());
  return g;
}

Vec clamped_sigma(const Mat& log_std) {
  Vec s(log_std.rows());
  for (int i = 0; i < log_std.rows(); ++i)
    s(i) = std::exp(std::clamp(log_std(i, 0), kLogStdLo, kLogStdHi));
  return s;
}

Vec logstd_grad_mask(const Mat& log_std) {
  Vec m(log_std.rows());
  for (int i = 0; i < log_std.rows(); ++i)
    m(i) = log_std(i, 0) > kLogStdLo && log_std(i, 0) < kLogStdHi ? 1.0 : 0.0;
  return m;
}

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

Vec diag_logprob(const Mat& mean, const Vec& sigma, const Mat& actions) {
  int n = static_cast<int>(mean.cols());
  int d = static_cast<int>(mean.rows());
  Vec lp = Vec::Zero(n);
  for (int i = 0; i < d; ++i) {
    double inv = 1.0 / sigma(i);
    for (int k = 0; k < n; ++k) {
      double z = (actions(i, k) - mean(i, k)) * inv;
      lp(k) -= 0.5 * (z * z + kLog2Pi) + std::log(sigma(i));
    }
  }
  return lp;
}

double diag_entropy(const Vec& sigma) {
  double h = 0.0;
  for (int i = 0; i < sigma.size(); ++i) h += 0.5 * (kLog2Pi + 1.0) + std::log(sigma(i));
  return h;
}

Mat dlogprob_dmean(const Mat& mean, const Vec& sigma, const Mat& actions) {
  Mat g(mean.rows(), mean.cols());
  for (int i = 0; i < mean.rows(); ++i)
    g.row(i) = (actions.row(i) - mean.row(i)) / (sigma(i) * sigma(i));
  return g;
}

Mat dlogprob_dlogstd(const Mat& mean, const Vec& sigma, const Mat& actions) {
  Mat g(mean.rows(), mean.cols());
  for (int i = 0; i < mean.rows(); ++i) {
    double inv2 = 1.0 / (sigma(i) * sigma(i));
    g.row(i) = (actions.row(i) - mean.row(i)).array().square() * inv2 - 1.0;
  }
  return g;
}

// ---- GRU ----

GruEncoder GruEncoder::make(int in, int hidden, int out, Rng& rng) {
  GruEncoder g;
  double gain_in = std::sqrt(2.0);
  g.Wz = orthogonal(hidden, in, gain_in, rng);
  g.Wr = orthogonal(hidden, in, gain_in, rng);
  g.Wn = orthogonal(hidden, in, gain_in, rng);
  g.Uz = orthogonal(hidden, hidden, 1.0, rng);
  g.Ur = orthogonal(hidden, hidden, 1.0, rng);
  g.Un = orthogonal(hidden, hidden, 1.0, rng);
  g.bz = Mat::Zero(hidden, 1);
  g.br = Mat::Zero(hidden, 1);
  g.bn = Mat::Zero(hidden, 1);
  g.Wo = orthogonal(out, hidden, 1.0, rng);
  g.bo = Mat::Zero(out, 1);
  return g;
}

std::vector<NamedTensor> GruEncoder::params(const std::string& prefix) {
  return {{prefix + ".Wz", &Wz}, {prefix + ".Uz", &Uz}, {prefix + ".bz", &bz},
          {prefix + ".Wr", &Wr}, {prefix + ".Ur", &Ur}, {prefix + ".br", &br},
          {prefix + ".Wn", &Wn}, {prefix + ".Un", &Un}, {prefix + ".bn", &bn},
          {prefix + ".Wo", &Wo}, {prefix + ".bo", &bo}};
}

std::vector<Mat> gru_forward(const GruEncoder& g, const std::vector<Mat>& xs, const Mat& h0,
                             GruCache* cache, Mat* h_final) {
  if (xs.empty()) throw std::invalid_argument("gru_forward: empty sequence");
  Mat h = h0;
  std::vector<Mat> outs;
  outs.reserve(xs.size());
  for (const Mat& x : xs) {
    Mat z = ((g.Wz * x + g.Uz * h).colwise() + Vec(g.bz.col(0)))
                .unaryExpr([](double v) { return sigmoid(v); });
    Mat r = ((g.Wr * x + g.Ur * h).colwise() + Vec(g.br.col(0)))
                .unaryExpr([](double v) { return sigmoid(v); });
    Mat n = ((g.Wn * x + g.Un * r.cwiseProduct(h)).colwise() + Vec(g.bn.col(0)))
                .array()
                .tanh();
    Mat h_new = (1.0 - z.array()) * h.array() + z.array() * n.array();
    if (cache) {
      cache->x.push_back(x);
      cache->h_prev.push_back(h);
      cache->z.push_back(z);
      cache->r.push_back(r);
      cache->n.push_back(n);
      cache->h.push_back(h_new);
    }
    h = h_new;
    outs.push_back((g.Wo * h).colwise() + Vec(g.bo.col(0)));
  }
  if (h_final) *h_final = h;
  return outs;
}

GruGrads GruGrads::zeros_like(const GruEncoder& g) {
  GruGrads gr;
  gr.dWz = Mat::Zero(g.Wz.rows(), g.Wz.cols());
  gr.dUz = Mat::Zero(g.Uz.rows(), g.Uz.cols());
  gr.dbz = Mat::Zero(g.bz.rows(), 1);
  gr.dWr = Mat::Zero(g.Wr.rows(), g.Wr.cols());
  gr.dUr = Mat::Zero(g.Ur.rows(), g.Ur.cols());
  gr.dbr = Mat::Zero(g.br.rows(), 1);
  gr.dWn = Mat::Zero(g.Wn.rows(), g.Wn.cols());
  gr.dUn = Mat::Zero(g.Un.rows(), g.Un.cols());
  gr.dbn = Mat::Zero(g.bn.rows(), 1);
  gr.dWo = Mat::Zero(g.Wo.rows(), g.Wo.cols());
  gr.dbo = Mat::Zero(g.bo.rows(), 1);
  return gr;
}

void GruGrads::accumulate(const GruGrads& other, double scale) {
  dWz += scale * other.dWz;
  dUz += scale * other.dUz;
  dbz += scale * other.dbz;
  dWr += scale * other.dWr;
  dUr += scale * other.dUr;
  dbr += scale * other.dbr;
  dWn += scale * other.dWn;
  dUn += scale * other.dUn;
  dbn += scale * other.dbn;
  dWo += scale * other.dWo;
  dbo += scale * other.dbo;
}

std::vector<Mat*> GruGrads::list() {
  return {&dWz, &dUz, &dbz, &dWr, &dUr, &dbr, &dWn, &dUn, &dbn, &dWo, &dbo};
}

GruGrads gru_backward(const GruEncoder& g, const GruCache& cache,
                      const std::vector<Mat>& douts) {
  size_t steps = cache.x.size();
  if (douts.size() != steps)
    throw std::invalid_argument("gru_backward: output gradient count mismatch");
  GruGrads gr = GruGrads::zeros_like(g);
  Mat dh = Mat::Zero(cache.h[0].rows(), cache.h[0].cols());
  for (size_t t = steps; t-- > 0;) {
    const Mat& x = cache.x[t];
    const Mat& hp = cache.h_prev[t];
    const Mat& z = cache.z[t];
    const Mat& r = cache.r[t];
    const Mat& n = cache.n[t];

    gr.dWo += douts[t] * cache.h[t].transpose();
    gr.dbo += douts[t].rowwise().sum();
    dh += g.Wo.transpose() * douts[t];

    Mat dn = dh.cwiseProduct(z);
    Mat dz = dh.cwiseProduct(n - hp);
    Mat dhp = dh.cwiseProduct(Mat(1.0 - z.array()));

    Mat dc = dn.cwiseProduct(Mat(1.0 - n.array().square()));
    gr.dWn += dc * x.transpose();
    gr.dUn += dc * r.cwiseProduct(hp).transpose();
    gr.dbn += dc.rowwise().sum();
    Mat ds = g.Un.transpose() * dc;
    Mat dr = ds.cwiseProduct(hp);
    dhp += ds.cwiseProduct(r);

    Mat daz = dz.cwiseProduct(z).cwiseProduct(Mat(1.0 - z.array()));
    gr.dWz += daz * x.transpose();
    gr.dUz += daz * hp.transpose();
    gr.dbz += daz.rowwise().sum();
    dhp += g.Uz.transpose() * daz;

    Mat dar = dr.cwiseProduct(r).cwiseProduct(Mat(1.0 - r.array()));
    gr.dWr += dar * x.transpose();
    gr.dUr += dar * hp.transpose();
    gr.dbr += dar.rowwise().sum();
    dhp += g.Ur.transpose() * dar;

    dh = dhp;
  }
  return gr;
}

void decode_contacts(const Mat& raw, Mat* b_hat, Mat* f_hat) {
  int half = static_cast<int>(raw.rows()) / 2;
  if (b_hat) *b_hat = raw.topRows(half).unaryExpr([](double v) { return sigmoid(v); });
  if (f_hat) *f_hat = raw.bottomRows(half).unaryExpr([](double v) { return softplus(v); });
}

// ---- Adam ----

AdamState AdamState::init(const std::vector<NamedTensor>& params, double lr_) {
  AdamState s;
  s.lr = lr_;
  for (const NamedTensor& p : params) {
    s.m.push_back(Mat::Zero(p.value->rows(), p.value->cols()));
    s.v.push_back(Mat::Zero(p.value->rows(), p.value->cols()));
  }
  return s;
}

void AdamState::step(const std::vector<NamedTensor>& params, const std::vector<Mat*>& grads) {
  if (params.size() != grads.size() || params.size() != m.size())
    throw std::invalid_argument("AdamState::step: parameter/gradient count mismatch");
  ++t;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t i = 0; i < params.size(); ++i) {
    const Mat& gmat = *grads[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * gmat;
    v[i] = beta2 * v[i] + (1.0 - beta2) * gmat.cwiseProduct(gmat);
    Mat mhat = m[i] / bc1;
    Mat vhat = v[i] / bc2;
    *params[i].value -=
        lr * mhat.cwiseQuotient(Mat(vhat.array().sqrt() + eps));
  }
}

double clip_global_norm(std::vector<Mat*> grads, double max_norm) {
  double sq = 0.0;
  for (const Mat* gmat : grads) sq += gmat->squaredNorm();
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double scale = max_norm / norm;
    for (Mat* gmat : grads) *gmat *= scale;
  }
  return norm;
}

// ---- policy / value ----

Policy Policy::make(int obs_dim, int act_dim, int hidden, const Vec& lo, const Vec& hi,
                    Rng& rng) {
  Policy p;
  p.net = Mlp::make({obs_dim, hidden, hidden, act_dim}, rng, 0.01);
  p.log_std = Mat::Constant(act_dim, 1, std::log(0.3));
  p.act_lo = lo;
  p.act_hi = hi;
  return p;
}

std::vector<NamedTensor> Policy::params(const std::string& prefix) {
  std::vector<NamedTensor> out = net.params(prefix + ".net");
  out.push_back({prefix + ".log_std", &log_std});
  return out;
}

Mat Policy::mean(const Mat& obs, MlpCache* cache, Mat* raw) const {
  Mat u = mlp_forward(net, obs, cache);
  if (raw) *raw = u;
  return tanh_squash(u, act_lo, act_hi);
}

ValueNet ValueNet::make(int obs_dim, int hidden, Rng& rng) {
  ValueNet v;
  v.net = Mlp::make({obs_dim, hidden, hidden, 1}, rng, 1.0);
  return v;
}

std::vector<NamedTensor> ValueNet::params(const std::string& prefix) {
  return net.params(prefix + ".net");
}

Vec ValueNet::values(const Mat& obs, MlpCache* cache) const {
  return mlp_forward(net, obs, cache).row(0).transpose();
}

// ---- checkpoints ----

namespace {

constexpr char kMagic[4] = {'G', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors,
                     const nlohmann::json& meta) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kMagic, 4);
  write_pod(out, kVersion);
  write_pod(out, static_cast<uint32_t>(tensors.size()));
  for (const NamedTensor& t : tensors) {
    write_pod(out, static_cast<uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_pod(out, static_cast<uint64_t>(t.value->rows()));
    write_pod(out, static_cast<uint64_t>(t.value->cols()));
    for (int i = 0; i < t.value->rows(); ++i)
      for (int j = 0; j < t.value->cols(); ++j) write_pod(out, (*t.value)(i, j));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
  std::ofstream side(path + ".meta.json", std::ios::trunc);
  side << meta.dump(1) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  uint32_t version = read_pod<uint32_t>(in);
  if (version != kVersion)
    throw std::runtime_error("load_checkpoint: unsupported version in " + path);
  uint32_t count = read_pod<uint32_t>(in);
  Checkpoint ckpt;
  for (uint32_t k = 0; k < count; ++k) {
    uint32_t len = read_pod<uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    uint64_t rows = read_pod<uint64_t>(in);
    uint64_t cols = read_pod<uint64_t>(in);
    Mat t(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (uint64_t i = 0; i < rows; ++i)
      for (uint64_t j = 0; j < cols; ++j)
        t(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = read_pod<double>(in);
    if (!in) throw std::runtime_error("load_checkpoint: truncated tensor in " + path);
    ckpt.tensors.emplace(std::move(name), std::move(t));
  }
  std::ifstream side(path + ".meta.json");
  if (side) ckpt.meta = nlohmann::json::parse(side, nullptr, false);
  if (ckpt.meta.is_discarded()) ckpt.meta = nlohmann::json::object();
  return ckpt;
}

void load_into(const Checkpoint& ckpt, const std::vector<NamedTensor>& dst) {
  for (const NamedTensor& t : dst) {
    auto it = ckpt.tensors.find(t.name);
    if (it == ckpt.tensors.end())
      throw std::runtime_error("load_into: checkpoint is missing tensor " + t.name);
    if (it->second.rows() != t.value->rows() || it->second.cols() != t.value->cols())
      throw std::runtime_error("load_into: shape mismatch for tensor " + t.name);
    *t.value = it->second;
  }
}

}  // namespace graspcraft::neural
