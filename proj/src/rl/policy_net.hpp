#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rl/features.hpp"

namespace vlmlight {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// Flat parameter and gradient storage. The aligned allocator fixes the
/// buffer alignment, so vectorised reductions take the same path on every
/// allocation and results are bit-reproducible.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

struct NetConfig {
  int d = 64;
  int heads = 4;
  int hidden = 128;
  int phases = 4;
};

/// Position and shape of one tensor inside the flat parameter vector.
struct ParamSlot {
  size_t offset = 0;
  int rows = 0;
  int cols = 0;
  size_t size() const { return static_cast<size_t>(rows) * static_cast<size_t>(cols); }
};

/// LN -> MSA -> residual -> LN -> MLP, i.e. E = MLP(LN(h + MSA(LN(h)))).
struct BlockSlots {
  ParamSlot ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

/// Activations of one block kept for the backward pass.
struct BlockCache {
  RowMat x, a, xhat1, q, k, v, probs, o, r, c, xhat2, u, g, dgelu;
  Eigen::VectorXd rstd1, rstd2;
};

/// Activations of a batched forward pass.
struct NetCache {
  int batch = 0;
  RowMat tokens;    // (B*5*12) x 7
  RowMat spatial;   // (B*5) x d, pooled spatial output plus positional encoding
  RowMat pooled;    // B x d, f_t
  BlockCache sblock, tblock;
  RowMat logits;    // B x P (unmasked)
  Eigen::VectorXd values;
};

/// Spatial/temporal transformer encoder with policy and value heads. All
/// parameters live in one flat vector so optimisers and checkpoints can treat
/// them uniformly.
class PolicyNet {
 public:
  PolicyNet() : PolicyNet(NetConfig{}, 0) {}
  PolicyNet(NetConfig config, std::uint64_t seed);

  const NetConfig& config() const { return config_; }
  size_t param_count() const { return params_.size(); }
  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }

  /// Sets the policy and value heads to zero (uniform policy, zero value).
  void zero_heads();

  /// Batched forward. `states` holds `batch` StateTensors back to back.
  void forward(const double* states, int batch, NetCache& cache) const;

  /// Accumulates dL/dtheta into `grad` given dL/dlogits and dL/dvalues.
  void backward(const NetCache& cache, const RowMat& dlogits, const Eigen::VectorXd& dvalues,
                ParamVector& grad) const;

  struct Output {
    std::vector<double> probs;  // over phases 1..P, zero outside the feasible set
    double value = 0.0;
  };

  /// Single-state inference. `feasible` (phase ids) masks the softmax; empty
  /// means every phase. Throws Error(Numeric) on non-finite output.
  Output evaluate(const StateTensor& state, const std::vector<PhaseId>& feasible = {}) const;

  /// Highest-probability feasible phase; ties go to the lowest id.
  PhaseId greedy_action(const StateTensor& state, const std::vector<PhaseId>& feasible) const;

 private:
  void layout();
  void init(std::uint64_t seed);
  BlockSlots make_block(size_t& off);
  void block_forward(const BlockSlots& s, const RowMat& x, int seq, BlockCache& c) const;
  RowMat block_backward(const BlockSlots& s, const BlockCache& c, int seq, const RowMat& dy, double* grad) const;

  NetConfig config_;
  ParamVector params_;
  ParamSlot we_, be_, pos_, wpi_, bpi_, wval_, bval_;
  BlockSlots spatial_, temporal_;
};

/// Masked log-softmax of one logit row; entries outside `mask` are -inf.
std::vector<double> masked_log_softmax(const double* logits, int n, const std::vector<bool>& mask);

void save_checkpoint(const PolicyNet& net, int movements, const std::string& path);
PolicyNet load_checkpoint(const std::string& path, int* movements = nullptr);

}  // namespace vlmlight
