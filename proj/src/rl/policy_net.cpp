#include "rl/policy_net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include "error.hpp"

namespace vlmlight {

namespace {

using ConstMap = Eigen::Map<const RowMat>;
using GradMap = Eigen::Map<RowMat>;

constexpr double kLnEps = 1e-5;
constexpr char kMagic[8] = {'V', 'L', 'M', 'P', 'O', 'L', 'C', 'Y'};
constexpr std::uint32_t kSchemaVersion = 1;

// Exact GELU; writes the activation and its derivative in one pass.
void gelu(const RowMat& u, RowMat& g, RowMat& dg) {
  g.resize(u.rows(), u.cols());
  dg.resize(u.rows(), u.cols());
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
  const double* in = u.data();
  double* out = g.data();
  double* d = dg.data();
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double x = in[i];
    const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
    out[i] = x * cdf;
    d[i] = cdf + x * std::exp(-0.5 * x * x) * inv_sqrt2pi;
  }
}

void layer_norm(const RowMat& x, const double* gamma, const double* beta, RowMat& xhat, Eigen::VectorXd& rstd,
                RowMat& out) {
  const auto n = x.rows();
  const auto d = x.cols();
  xhat.resize(n, d);
  out.resize(n, d);
  rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    rstd(i) = rs;
    xhat.row(i) = (x.row(i).array() - mean) * rs;
  }
  const Eigen::Map<const RowVec> g(gamma, d);
  const Eigen::Map<const RowVec> b(beta, d);
  out = (xhat.array().rowwise() * g.array()).rowwise() + b.array();
}

RowMat layer_norm_backward(const RowMat& dy, const RowMat& xhat, const Eigen::VectorXd& rstd, const double* gamma,
                           double* dgamma, double* dbeta) {
  const auto d = dy.cols();
  const Eigen::Map<const RowVec> g(gamma, d);
  Eigen::Map<RowVec>(dgamma, d) += (dy.array() * xhat.array()).colwise().sum().matrix();
  Eigen::Map<RowVec>(dbeta, d) += dy.colwise().sum();
  RowMat dxhat = dy.array().rowwise() * g.array();
  RowMat dx(dy.rows(), d);
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = (dxhat.row(i).array() * xhat.row(i).array()).mean();
    dx.row(i) = rstd(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
  }
  return dx;
}

// Mean over consecutive groups of `seq` rows.
RowMat group_mean(const RowMat& x, int seq) {
  const auto groups = x.rows() / seq;
  RowMat out(groups, x.cols());
  for (Eigen::Index g = 0; g < groups; ++g) out.row(g) = x.middleRows(g * seq, seq).colwise().mean();
  return out;
}

// Inverse of group_mean: every row of a group receives dy/seq.
RowMat group_spread(const RowMat& dy, int seq) {
  RowMat out(dy.rows() * seq, dy.cols());
  const double inv = 1.0 / seq;
  for (Eigen::Index g = 0; g < dy.rows(); ++g) out.middleRows(g * seq, seq).rowwise() = dy.row(g) * inv;
  return out;
}

}  // namespace

PolicyNet::PolicyNet(NetConfig config, std::uint64_t seed) : config_(config) {
  if (config_.d <= 0 || config_.heads <= 0 || config_.hidden <= 0 || config_.d % config_.heads != 0)
    fail(ErrorKind::InvalidArgument, "network width must be a positive multiple of the head count");
  if (config_.phases < 1) fail(ErrorKind::InvalidArgument, "network needs at least one phase");
  layout();
  init(seed);
}

BlockSlots PolicyNet::make_block(size_t& off) {
  const int d = config_.d;
  const int h = config_.hidden;
  auto slot = [&](int rows, int cols) {
    ParamSlot s{off, rows, cols};
    off += s.size();
    return s;
  };
  BlockSlots b;
  b.ln1_g = slot(1, d);
  b.ln1_b = slot(1, d);
  b.wq = slot(d, d);
  b.bq = slot(1, d);
  b.wk = slot(d, d);
  b.bk = slot(1, d);
  b.wv = slot(d, d);
  b.bv = slot(1, d);
  b.wo = slot(d, d);
  b.bo = slot(1, d);
  b.ln2_g = slot(1, d);
  b.ln2_b = slot(1, d);
  b.w1 = slot(d, h);
  b.b1 = slot(1, h);
  b.w2 = slot(h, d);
  b.b2 = slot(1, d);
  return b;
}

void PolicyNet::layout() {
  const int d = config_.d;
  size_t off = 0;
  auto slot = [&](int rows, int cols) {
    ParamSlot s{off, rows, cols};
    off += s.size();
    return s;
  };
  we_ = slot(kFeatureDim, d);
  be_ = slot(1, d);
  spatial_ = make_block(off);
  pos_ = slot(kFrames, d);
  temporal_ = make_block(off);
  wpi_ = slot(d, config_.phases);
  bpi_ = slot(1, config_.phases);
  wval_ = slot(d, 1);
  bval_ = slot(1, 1);
  params_.assign(off, 0.0);
}

void PolicyNet::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto fill = [&](const ParamSlot& s, double stddev) {
    std::normal_distribution<double> nd(0.0, stddev);
    for (size_t i = 0; i < s.size(); ++i) params_[s.offset + i] = nd(rng);
  };
  auto ones = [&](const ParamSlot& s) { std::fill_n(params_.begin() + static_cast<long>(s.offset), s.size(), 1.0); };
  auto dense = [&](const ParamSlot& w) { fill(w, 1.0 / std::sqrt(static_cast<double>(w.rows))); };
  dense(we_);
  for (const BlockSlots* b : {&spatial_, &temporal_}) {
    ones(b->ln1_g);
    ones(b->ln2_g);
    dense(b->wq);
    dense(b->wk);
    dense(b->wv);
    dense(b->wo);
    dense(b->w1);
    dense(b->w2);
  }
  fill(pos_, 0.02);
  fill(wpi_, 0.01);
  dense(wval_);
}

void PolicyNet::zero_heads() {
  for (const ParamSlot* s : {&wpi_, &bpi_, &wval_, &bval_})
    std::fill_n(params_.begin() + static_cast<long>(s->offset), s->size(), 0.0);
}

void PolicyNet::block_forward(const BlockSlots& s, const RowMat& x, int seq, BlockCache& c) const {
  const double* p = params_.data();
  auto mat = [&](const ParamSlot& slot) { return ConstMap(p + slot.offset, slot.rows, slot.cols); };
  auto vec = [&](const ParamSlot& slot) { return Eigen::Map<const RowVec>(p + slot.offset, slot.cols); };
  const int d = config_.d;
  const int heads = config_.heads;
  const int dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const auto n = x.rows();
  const auto groups = n / seq;

  c.x = x;
  layer_norm(x, p + s.ln1_g.offset, p + s.ln1_b.offset, c.xhat1, c.rstd1, c.a);
  c.q.noalias() = c.a * mat(s.wq);
  c.q.rowwise() += vec(s.bq);
  c.k.noalias() = c.a * mat(s.wk);
  c.k.rowwise() += vec(s.bk);
  c.v.noalias() = c.a * mat(s.wv);
  c.v.rowwise() += vec(s.bv);

  c.probs.resize(groups * heads * seq, seq);
  c.o.resize(n, d);
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (int h = 0; h < heads; ++h) {
      const auto qg = c.q.block(g * seq, h * dk, seq, dk);
      const auto kg = c.k.block(g * seq, h * dk, seq, dk);
      const auto vg = c.v.block(g * seq, h * dk, seq, dk);
      auto pg = c.probs.middleRows((g * heads + h) * seq, seq);
      pg.noalias() = qg * kg.transpose() * scale;
      for (int i = 0; i < seq; ++i) {
        auto row = pg.row(i);
        const double mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        row /= row.sum();
      }
      c.o.block(g * seq, h * dk, seq, dk).noalias() = pg * vg;
    }
  }
  c.r.noalias() = c.o * mat(s.wo);
  c.r.rowwise() += vec(s.bo);
  c.r += x;
  layer_norm(c.r, p + s.ln2_g.offset, p + s.ln2_b.offset, c.xhat2, c.rstd2, c.c);
  c.u.noalias() = c.c * mat(s.w1);
  c.u.rowwise() += vec(s.b1);
  gelu(c.u, c.g, c.dgelu);
}

RowMat PolicyNet::block_backward(const BlockSlots& s, const BlockCache& c, int seq, const RowMat& dy,
                                 double* grad) const {
  const double* p = params_.data();
  auto mat = [&](const ParamSlot& slot) { return ConstMap(p + slot.offset, slot.rows, slot.cols); };
  auto gmat = [&](const ParamSlot& slot) { return GradMap(grad + slot.offset, slot.rows, slot.cols); };
  auto gvec = [&](const ParamSlot& slot) { return Eigen::Map<RowVec>(grad + slot.offset, slot.cols); };
  const int d = config_.d;
  const int heads = config_.heads;
  const int dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const auto n = dy.rows();
  const auto groups = n / seq;

  gmat(s.w2).noalias() += c.g.transpose() * dy;
  gvec(s.b2) += dy.colwise().sum();
  RowMat du = dy * mat(s.w2).transpose();
  du.array() *= c.dgelu.array();
  gmat(s.w1).noalias() += c.c.transpose() * du;
  gvec(s.b1) += du.colwise().sum();
  const RowMat dc = du * mat(s.w1).transpose();
  const RowMat dr =
      layer_norm_backward(dc, c.xhat2, c.rstd2, p + s.ln2_g.offset, grad + s.ln2_g.offset, grad + s.ln2_b.offset);

  gmat(s.wo).noalias() += c.o.transpose() * dr;
  gvec(s.bo) += dr.colwise().sum();
  const RowMat dout = dr * mat(s.wo).transpose();

  RowMat dq(n, d), dkm(n, d), dv(n, d);
  RowMat dp(seq, seq);
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (int h = 0; h < heads; ++h) {
      const auto qg = c.q.block(g * seq, h * dk, seq, dk);
      const auto kg = c.k.block(g * seq, h * dk, seq, dk);
      const auto vg = c.v.block(g * seq, h * dk, seq, dk);
      const auto pg = c.probs.middleRows((g * heads + h) * seq, seq);
      const auto dog = dout.block(g * seq, h * dk, seq, dk);
      dv.block(g * seq, h * dk, seq, dk).noalias() = pg.transpose() * dog;
      dp.noalias() = dog * vg.transpose();
      for (int i = 0; i < seq; ++i) {
        const double dotp = dp.row(i).dot(pg.row(i));
        dp.row(i) = pg.row(i).array() * (dp.row(i).array() - dotp) * scale;
      }
      dq.block(g * seq, h * dk, seq, dk).noalias() = dp * kg;
      dkm.block(g * seq, h * dk, seq, dk).noalias() = dp.transpose() * qg;
    }
  }
  gmat(s.wq).noalias() += c.a.transpose() * dq;
  gvec(s.bq) += dq.colwise().sum();
  gmat(s.wk).noalias() += c.a.transpose() * dkm;
  gvec(s.bk) += dkm.colwise().sum();
  gmat(s.wv).noalias() += c.a.transpose() * dv;
  gvec(s.bv) += dv.colwise().sum();
  RowMat da = dq * mat(s.wq).transpose();
  da.noalias() += dkm * mat(s.wk).transpose();
  da.noalias() += dv * mat(s.wv).transpose();
  RowMat dx = dr;
  dx += layer_norm_backward(da, c.xhat1, c.rstd1, p + s.ln1_g.offset, grad + s.ln1_g.offset, grad + s.ln1_b.offset);
  return dx;
}

void PolicyNet::forward(const double* states, int batch, NetCache& cache) const {
  const double* p = params_.data();
  auto mat = [&](const ParamSlot& slot) { return ConstMap(p + slot.offset, slot.rows, slot.cols); };
  auto vec = [&](const ParamSlot& slot) { return Eigen::Map<const RowVec>(p + slot.offset, slot.cols); };
  cache.batch = batch;
  cache.tokens = ConstMap(states, static_cast<Eigen::Index>(batch) * kFrames * kTokens, kFeatureDim);

  RowMat h = cache.tokens * mat(we_);
  h.rowwise() += vec(be_);
  block_forward(spatial_, h, kTokens, cache.sblock);
  RowMat e = cache.sblock.g * mat(spatial_.w2);
  e.rowwise() += vec(spatial_.b2);

  cache.spatial = group_mean(e, kTokens);
  const ConstMap pos = mat(pos_);
  for (Eigen::Index i = 0; i < cache.spatial.rows(); ++i) cache.spatial.row(i) += pos.row(i % kFrames);
  block_forward(temporal_, cache.spatial, kFrames, cache.tblock);
  RowMat z = cache.tblock.g * mat(temporal_.w2);
  z.rowwise() += vec(temporal_.b2);
  cache.pooled = group_mean(z, kFrames);

  cache.logits.noalias() = cache.pooled * mat(wpi_);
  cache.logits.rowwise() += vec(bpi_);
  cache.values = (cache.pooled * mat(wval_)).col(0);
  cache.values.array() += p[bval_.offset];
}

void PolicyNet::backward(const NetCache& cache, const RowMat& dlogits, const Eigen::VectorXd& dvalues,
                         ParamVector& grad) const {
  if (grad.size() != params_.size()) grad.assign(params_.size(), 0.0);
  double* gp = grad.data();
  const double* p = params_.data();
  auto mat = [&](const ParamSlot& slot) { return ConstMap(p + slot.offset, slot.rows, slot.cols); };
  auto gmat = [&](const ParamSlot& slot) { return GradMap(gp + slot.offset, slot.rows, slot.cols); };
  auto gvec = [&](const ParamSlot& slot) { return Eigen::Map<RowVec>(gp + slot.offset, slot.cols); };

  gmat(wpi_).noalias() += cache.pooled.transpose() * dlogits;
  gvec(bpi_) += dlogits.colwise().sum();
  gmat(wval_).noalias() += cache.pooled.transpose() * dvalues;
  gp[bval_.offset] += dvalues.sum();
  RowMat dpooled = dlogits * mat(wpi_).transpose();
  dpooled.noalias() += dvalues * mat(wval_).transpose();

  const RowMat dz = group_spread(dpooled, kFrames);
  const RowMat ds = block_backward(temporal_, cache.tblock, kFrames, dz, gp);
  auto dpos = gmat(pos_);
  for (Eigen::Index i = 0; i < ds.rows(); ++i) dpos.row(i % kFrames) += ds.row(i);

  const RowMat de = group_spread(ds, kTokens);
  const RowMat dh = block_backward(spatial_, cache.sblock, kTokens, de, gp);
  gmat(we_).noalias() += cache.tokens.transpose() * dh;
  gvec(be_) += dh.colwise().sum();
}

std::vector<double> masked_log_softmax(const double* logits, int n, const std::vector<bool>& mask) {
  const double ninf = -std::numeric_limits<double>::infinity();
  double mx = ninf;
  for (int i = 0; i < n; ++i)
    if (mask[static_cast<size_t>(i)]) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i)
    if (mask[static_cast<size_t>(i)]) sum += std::exp(logits[i] - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(static_cast<size_t>(n), ninf);
  for (int i = 0; i < n; ++i)
    if (mask[static_cast<size_t>(i)]) out[static_cast<size_t>(i)] = logits[i] - lse;
  return out;
}

PolicyNet::Output PolicyNet::evaluate(const StateTensor& state, const std::vector<PhaseId>& feasible) const {
  NetCache cache;
  forward(state.data.data(), 1, cache);
  const int n = config_.phases;
  std::vector<bool> mask(static_cast<size_t>(n), feasible.empty());
  for (PhaseId a : feasible) {
    if (a < 1 || a > n) fail(ErrorKind::InvalidArgument, "feasible phase outside the policy's action space");
    mask[static_cast<size_t>(a - 1)] = true;
  }
  const auto logp = masked_log_softmax(cache.logits.data(), n, mask);
  Output out;
  out.value = cache.values(0);
  out.probs.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) out.probs[static_cast<size_t>(i)] = std::exp(logp[static_cast<size_t>(i)]);
  bool finite = std::isfinite(out.value);
  for (double v : out.probs) finite = finite && std::isfinite(v);
  if (!finite) fail(ErrorKind::Numeric, "policy forward produced a non-finite output");
  return out;
}

PhaseId PolicyNet::greedy_action(const StateTensor& state, const std::vector<PhaseId>& feasible) const {
  const auto out = evaluate(state, feasible);
  PhaseId best = 0;
  double best_p = -1.0;
  for (int i = 0; i < config_.phases; ++i) {
    const bool allowed = feasible.empty() || std::find(feasible.begin(), feasible.end(), i + 1) != feasible.end();
    if (allowed && out.probs[static_cast<size_t>(i)] > best_p) {
      best = i + 1;
      best_p = out.probs[static_cast<size_t>(i)];
    }
  }
  return best;
}

void save_checkpoint(const PolicyNet& net, int movements, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write checkpoint '" + path + "'");
  const auto& cfg = net.config();
  const std::int32_t header[5] = {cfg.d, cfg.heads, cfg.hidden, cfg.phases, movements};
  const std::uint64_t count = net.param_count();
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&kSchemaVersion), sizeof(kSchemaVersion));
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  out.write(reinterpret_cast<const char*>(net.params().data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!out) fail(ErrorKind::Io, "failed writing checkpoint '" + path + "'");
}

PolicyNet load_checkpoint(const std::string& path, int* movements) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open checkpoint '" + path + "'");
  char magic[8];
  std::uint32_t version = 0;
  std::int32_t header[5];
  std::uint64_t count = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) fail(ErrorKind::Parse, "not a policy checkpoint: " + path);
  if (version != kSchemaVersion)
    fail(ErrorKind::Parse, "unsupported checkpoint schema version " + std::to_string(version));
  NetConfig cfg{header[0], header[1], header[2], header[3]};
  PolicyNet net(cfg, 0);
  if (count != net.param_count()) fail(ErrorKind::Parse, "checkpoint parameter count does not match its header");
  in.read(reinterpret_cast<char*>(net.params().data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) fail(ErrorKind::Parse, "truncated checkpoint '" + path + "'");
  if (movements) *movements = header[4];
  return net;
}

}  // namespace vlmlight
