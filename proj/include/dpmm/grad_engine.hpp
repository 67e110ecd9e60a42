#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dpmm/rng.hpp"

namespace dpmm {

// A learnable array with a same-shape gradient accumulator. Matrices are row
// major; vectors use cols == 1.
struct ParamTensor {
  std::vector<double> value;
  std::vector<double> grad;
  std::size_t rows = 0;
  std::size_t cols = 1;

  static ParamTensor vector_param(std::size_t d, double fill = 0.0);
  static ParamTensor matrix_param(std::size_t r, std::size_t c, double fill = 0.0);

  std::size_t size() const { return value.size(); }
  void zero_grad();
};

using NodeId = std::size_t;

// Reverse-mode tape over a fixed primitive set. Forward calls append records
// with the activations backward needs; backward replays them in exact reverse
// order and accumulates into node grads and ParamTensor grads. The graph is
// rebuilt every step (no retained state), which keeps replay bit-identical.
class Tape {
 public:
  // Leaves.
  NodeId input(std::vector<double> v);
  NodeId input_scalar(double v);
  NodeId param(ParamTensor& p);  // value copied in, backward adds into p.grad

  // Dense affine layer y = W x + b.
  NodeId dense(NodeId x, ParamTensor& W, ParamTensor& b);

  // Elementwise activations.
  NodeId tanh_act(NodeId x);
  NodeId sigmoid_act(NodeId x);

  // Binary cross entropy of a probability against a {0,1} label, input
  // clamped to [1e-7, 1-1e-7] (clamp passes gradients through).
  NodeId bce_loss(NodeId y_hat, int label);

  // Gaussian primitives against ParamTensor mean/log-variance.
  NodeId gauss_log_pdf(NodeId z, ParamTensor& mean, ParamTensor& log_var);
  NodeId gauss_sample(ParamTensor& mean, ParamTensor& log_var,
                      std::vector<double> eps);

  // Gumbel-softmax selection at temperature tau. The explicit-noise overload
  // is the deterministic core; the rng overload draws the noise itself.
  // hard = true gives a one-hot forward value with soft (straight-through)
  // backward.
  NodeId gumbel_softmax(NodeId logits, double tau, std::vector<double> gumbel_noise,
                        bool hard);
  NodeId gumbel_softmax(NodeId logits, double tau, Rng& rng, bool hard);

  // Reductions and glue.
  NodeId log_sum_exp_node(NodeId v);
  NodeId log_softmax(NodeId v);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId a, double c);
  NodeId add_const(NodeId a, std::span<const double> c);
  NodeId concat(std::span<const NodeId> parts);
  NodeId gather(NodeId v, std::vector<std::size_t> indices);
  NodeId stack_scalars(std::span<const NodeId> scalars);
  NodeId mean_scalars(std::span<const NodeId> scalars);
  // sum_k coeffs[k] * vectors[k], the mixing step of gradient-preserving
  // sampling.
  NodeId lincomb(NodeId coeffs, std::span<const NodeId> vectors);

  // Alignment losses. cosine_distance is 1 - cos(a, b) with a small norm
  // floor; sym_kl_moments is the symmetric KL between diagonal Gaussian
  // moment matches of two embedding batches (variance floor 1e-6).
  NodeId cosine_distance(NodeId a, NodeId b);
  NodeId sym_kl_moments(std::span<const NodeId> batch_a,
                        std::span<const NodeId> batch_b);

  const std::vector<double>& value(NodeId id) const;
  double scalar(NodeId id) const;

  // Seeds d(out)/d(out) = 1 and sweeps the records in reverse. out must be a
  // scalar node. Node grads are reset first; ParamTensor grads are
  // accumulated into, so callers zero them between steps.
  void backward(NodeId out);

  std::size_t node_count() const { return values_.size(); }

 private:
  NodeId push(std::vector<double> v);
  void check_node(NodeId id) const;

  std::vector<std::vector<double>> values_;
  std::vector<std::vector<double>> grads_;
  std::vector<std::function<void()>> records_;
};

// Adaptive-moment optimizer (bias-corrected first/second moments).
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  void add_param(ParamTensor* p);
  // One update from the gradients currently stored in the registered tensors.
  void step();
  void zero_grads();
  long steps_taken() const { return t_; }

 private:
  struct Slot {
    ParamTensor* p;
    std::vector<double> m;
    std::vector<double> v;
  };
  std::vector<Slot> slots_;
  double lr_;
  double b1_;
  double b2_;
  double eps_;
  long t_ = 0;
};

struct FdCheckResult {
  bool ok = true;                // false when f produced a non-finite value
  double max_rel_error = 0.0;
  std::string worst;             // description of the worst coordinate
};

// Central-difference validation of the gradients currently stored in params
// against the scalar function f (which must evaluate the same quantity from
// the tensors' current values, without calling backward). Relative error per
// coordinate uses denominator max(|analytic|, |numeric|, 1e-8).
FdCheckResult finite_diff_check(const std::function<double()>& f,
                                std::span<ParamTensor* const> params,
                                double h = 1e-5);

}  // namespace dpmm
