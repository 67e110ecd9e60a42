#include "dpmm/grad_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "dpmm/math_core.hpp"

namespace dpmm {

namespace {
constexpr double kBceClamp = 1e-7;
constexpr double kNormFloor = 1e-12;   // squared-norm floor for cosine
constexpr double kVarFloor = 1e-6;     // variance floor for moment KL
}  // namespace

ParamTensor ParamTensor::vector_param(std::size_t d, double fill) {
  ParamTensor p;
  p.value.assign(d, fill);
  p.grad.assign(d, 0.0);
  p.rows = d;
  p.cols = 1;
  return p;
}

ParamTensor ParamTensor::matrix_param(std::size_t r, std::size_t c, double fill) {
  ParamTensor p;
  p.value.assign(r * c, fill);
  p.grad.assign(r * c, 0.0);
  p.rows = r;
  p.cols = c;
  return p;
}

void ParamTensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

NodeId Tape::push(std::vector<double> v) {
  values_.push_back(std::move(v));
  grads_.emplace_back(values_.back().size(), 0.0);
  return values_.size() - 1;
}

void Tape::check_node(NodeId id) const {
  if (id >= values_.size()) {
    throw std::invalid_argument("tape: node id out of range");
  }
}

NodeId Tape::input(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("tape input: empty vector");
  return push(std::move(v));
}

NodeId Tape::input_scalar(double v) { return push({v}); }

NodeId Tape::param(ParamTensor& p) {
  if (p.size() == 0) throw std::invalid_argument("tape param: empty tensor");
  NodeId y = push(p.value);
  records_.push_back([this, y, &p]() {
    for (std::size_t i = 0; i < p.size(); ++i) p.grad[i] += grads_[y][i];
  });
  return y;
}

NodeId Tape::dense(NodeId x, ParamTensor& W, ParamTensor& b) {
  check_node(x);
  const std::size_t in = values_[x].size();
  const std::size_t out = b.size();
  if (W.rows != out || W.cols != in || b.size() != out) {
    throw std::invalid_argument("dense: shape mismatch");
  }
  std::vector<double> y(out);
  const auto& xv = values_[x];
  for (std::size_t i = 0; i < out; ++i) {
    double acc = b.value[i];
    const double* row = &W.value[i * in];
    for (std::size_t j = 0; j < in; ++j) acc += row[j] * xv[j];
    y[i] = acc;
  }
  NodeId yid = push(std::move(y));
  records_.push_back([this, x, yid, in, out, &W, &b]() {
    const auto& g = grads_[yid];
    const auto& xv = values_[x];
    auto& gx = grads_[x];
    for (std::size_t i = 0; i < out; ++i) {
      const double gi = g[i];
      b.grad[i] += gi;
      double* wrow = &W.grad[i * in];
      const double* vrow = &W.value[i * in];
      for (std::size_t j = 0; j < in; ++j) {
        wrow[j] += gi * xv[j];
        gx[j] += vrow[j] * gi;
      }
    }
  });
  return yid;
}

NodeId Tape::tanh_act(NodeId x) {
  check_node(x);
  std::vector<double> y(values_[x].size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(values_[x][i]);
  NodeId yid = push(std::move(y));
  records_.push_back([this, x, yid]() {
    const auto& yv = values_[yid];
    const auto& g = grads_[yid];
    auto& gx = grads_[x];
    for (std::size_t i = 0; i < yv.size(); ++i) {
      gx[i] += g[i] * (1.0 - yv[i] * yv[i]);
    }
  });
  return yid;
}

NodeId Tape::sigmoid_act(NodeId x) {
  check_node(x);
  std::vector<double> y(values_[x].size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = 1.0 / (1.0 + std::exp(-values_[x][i]));
  }
  NodeId yid = push(std::move(y));
  records_.push_back([this, x, yid]() {
    const auto& yv = values_[yid];
    const auto& g = grads_[yid];
    auto& gx = grads_[x];
    for (std::size_t i = 0; i < yv.size(); ++i) {
      gx[i] += g[i] * yv[i] * (1.0 - yv[i]);
    }
  });
  return yid;
}

NodeId Tape::bce_loss(NodeId y_hat, int label) {
  check_node(y_hat);
  if (values_[y_hat].size() != 1) {
    throw std::invalid_argument("bce_loss: prediction must be scalar");
  }
  if (label != 0 && label != 1) {
    throw std::invalid_argument("bce_loss: label must be 0 or 1");
  }
  const double clamped =
      std::clamp(values_[y_hat][0], kBceClamp, 1.0 - kBceClamp);
  const double y = static_cast<double>(label);
  const double loss = -(y * std::log(clamped) + (1.0 - y) * std::log(1.0 - clamped));
  NodeId out = push({loss});
  records_.push_back([this, y_hat, out, clamped, y]() {
    // Clamp passes gradients through so saturated sigmoids keep learning.
    grads_[y_hat][0] +=
        grads_[out][0] * (-y / clamped + (1.0 - y) / (1.0 - clamped));
  });
  return out;
}

NodeId Tape::gauss_log_pdf(NodeId z, ParamTensor& mean, ParamTensor& log_var) {
  check_node(z);
  const std::size_t d = values_[z].size();
  if (mean.size() != d || log_var.size() != d) {
    throw std::invalid_argument("gauss_log_pdf: dimension mismatch");
  }
  const double lp = diag_gauss_log_pdf(values_[z], mean.value, log_var.value);
  NodeId out = push({lp});
  records_.push_back([this, z, out, d, &mean, &log_var]() {
    const double g = grads_[out][0];
    const auto& zv = values_[z];
    auto& gz = grads_[z];
    for (std::size_t j = 0; j < d; ++j) {
      const double inv_var = std::exp(-log_var.value[j]);
      const double diff = zv[j] - mean.value[j];
      gz[j] += g * (-diff * inv_var);
      mean.grad[j] += g * (diff * inv_var);
      log_var.grad[j] += g * 0.5 * (diff * diff * inv_var - 1.0);
    }
  });
  return out;
}

NodeId Tape::gauss_sample(ParamTensor& mean, ParamTensor& log_var,
                          std::vector<double> eps) {
  const std::size_t d = mean.size();
  if (log_var.size() != d || eps.size() != d) {
    throw std::invalid_argument("gauss_sample: dimension mismatch");
  }
  std::vector<double> y(d);
  for (std::size_t j = 0; j < d; ++j) {
    y[j] = mean.value[j] + std::exp(0.5 * log_var.value[j]) * eps[j];
  }
  NodeId out = push(std::move(y));
  records_.push_back([this, out, d, &mean, &log_var, eps = std::move(eps)]() {
    const auto& g = grads_[out];
    for (std::size_t j = 0; j < d; ++j) {
      mean.grad[j] += g[j];
      log_var.grad[j] += g[j] * 0.5 * std::exp(0.5 * log_var.value[j]) * eps[j];
    }
  });
  return out;
}

NodeId Tape::gumbel_softmax(NodeId logits, double tau,
                            std::vector<double> gumbel_noise, bool hard) {
  check_node(logits);
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel_softmax: tau must be > 0");
  const std::size_t k = values_[logits].size();
  if (gumbel_noise.size() != k) {
    throw std::invalid_argument("gumbel_softmax: noise length mismatch");
  }
  std::vector<double> soft(k);
  double max_v = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    soft[i] = (values_[logits][i] + gumbel_noise[i]) / tau;
    max_v = std::max(max_v, soft[i]);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    soft[i] = std::exp(soft[i] - max_v);
    total += soft[i];
  }
  std::size_t arg_max = 0;
  for (std::size_t i = 0; i < k; ++i) {
    soft[i] /= total;
    if (soft[i] > soft[arg_max]) arg_max = i;
  }
  std::vector<double> forward(k, 0.0);
  if (hard) {
    forward[arg_max] = 1.0;
  } else {
    forward = soft;
  }
  NodeId out = push(std::move(forward));
  // Straight-through: both modes backpropagate the soft Jacobian.
  records_.push_back([this, logits, out, tau, soft = std::move(soft)]() {
    const auto& g = grads_[out];
    auto& gl = grads_[logits];
    double weighted = 0.0;
    for (std::size_t i = 0; i < soft.size(); ++i) weighted += g[i] * soft[i];
    for (std::size_t i = 0; i < soft.size(); ++i) {
      gl[i] += soft[i] * (g[i] - weighted) / tau;
    }
  });
  return out;
}

NodeId Tape::gumbel_softmax(NodeId logits, double tau, Rng& rng, bool hard) {
  check_node(logits);
  std::vector<double> noise(values_[logits].size());
  for (auto& n : noise) n = rng.gumbel();
  return gumbel_softmax(logits, tau, std::move(noise), hard);
}

NodeId Tape::log_sum_exp_node(NodeId v) {
  check_node(v);
  const double lse = log_sum_exp(values_[v]);
  NodeId out = push({lse});
  records_.push_back([this, v, out, lse]() {
    const double g = grads_[out][0];
    auto& gv = grads_[v];
    const auto& xv = values_[v];
    for (std::size_t i = 0; i < xv.size(); ++i) {
      gv[i] += g * std::exp(xv[i] - lse);
    }
  });
  return out;
}

NodeId Tape::log_softmax(NodeId v) {
  check_node(v);
  const double lse = log_sum_exp(values_[v]);
  std::vector<double> y(values_[v].size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = values_[v][i] - lse;
  NodeId out = push(std::move(y));
  records_.push_back([this, v, out]() {
    const auto& g = grads_[out];
    const auto& yv = values_[out];
    auto& gv = grads_[v];
    double total = 0.0;
    for (double gi : g) total += gi;
    for (std::size_t i = 0; i < yv.size(); ++i) {
      gv[i] += g[i] - std::exp(yv[i]) * total;
    }
  });
  return out;
}

NodeId Tape::add(NodeId a, NodeId b) {
  check_node(a);
  check_node(b);
  if (values_[a].size() != values_[b].size()) {
    throw std::invalid_argument("add: size mismatch");
  }
  std::vector<double> y(values_[a].size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = values_[a][i] + values_[b][i];
  NodeId out = push(std::move(y));
  records_.push_back([this, a, b, out]() {
    const auto& g = grads_[out];
    for (std::size_t i = 0; i < g.size(); ++i) {
      grads_[a][i] += g[i];
      grads_[b][i] += g[i];
    }
  });
  return out;
}

NodeId Tape::scale(NodeId a, double c) {
  check_node(a);
  std::vector<double> y(values_[a].size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = c * values_[a][i];
  NodeId out = push(std::move(y));
  records_.push_back([this, a, out, c]() {
    const auto& g = grads_[out];
    for (std::size_t i = 0; i < g.size(); ++i) grads_[a][i] += c * g[i];
  });
  return out;
}

NodeId Tape::add_const(NodeId a, std::span<const double> c) {
  check_node(a);
  if (values_[a].size() != c.size()) {
    throw std::invalid_argument("add_const: size mismatch");
  }
  std::vector<double> y(values_[a].size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = values_[a][i] + c[i];
  NodeId out = push(std::move(y));
  records_.push_back([this, a, out]() {
    const auto& g = grads_[out];
    for (std::size_t i = 0; i < g.size(); ++i) grads_[a][i] += g[i];
  });
  return out;
}

NodeId Tape::concat(std::span<const NodeId> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no parts");
  std::vector<double> y;
  for (NodeId p : parts) {
    check_node(p);
    y.insert(y.end(), values_[p].begin(), values_[p].end());
  }
  NodeId out = push(std::move(y));
  records_.push_back([this, out, parts = std::vector<NodeId>(parts.begin(), parts.end())]() {
    const auto& g = grads_[out];
    std::size_t offset = 0;
    for (NodeId p : parts) {
      auto& gp = grads_[p];
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
      offset += gp.size();
    }
  });
  return out;
}

NodeId Tape::gather(NodeId v, std::vector<std::size_t> indices) {
  check_node(v);
  if (indices.empty()) throw std::invalid_argument("gather: empty index list");
  std::vector<double> y(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= values_[v].size()) {
      throw std::invalid_argument("gather: index out of range");
    }
    y[i] = values_[v][indices[i]];
  }
  NodeId out = push(std::move(y));
  records_.push_back([this, v, out, indices = std::move(indices)]() {
    const auto& g = grads_[out];
    for (std::size_t i = 0; i < indices.size(); ++i) {
      grads_[v][indices[i]] += g[i];
    }
  });
  return out;
}

NodeId Tape::stack_scalars(std::span<const NodeId> scalars) {
  if (scalars.empty()) throw std::invalid_argument("stack_scalars: empty list");
  std::vector<double> y(scalars.size());
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    check_node(scalars[i]);
    if (values_[scalars[i]].size() != 1) {
      throw std::invalid_argument("stack_scalars: inputs must be scalars");
    }
    y[i] = values_[scalars[i]][0];
  }
  NodeId out = push(std::move(y));
  records_.push_back(
      [this, out, ids = std::vector<NodeId>(scalars.begin(), scalars.end())]() {
        const auto& g = grads_[out];
        for (std::size_t i = 0; i < ids.size(); ++i) grads_[ids[i]][0] += g[i];
      });
  return out;
}

NodeId Tape::mean_scalars(std::span<const NodeId> scalars) {
  NodeId stacked = stack_scalars(scalars);
  const std::size_t n = values_[stacked].size();
  double mean = 0.0;
  for (double v : values_[stacked]) mean += v;
  mean /= static_cast<double>(n);
  NodeId out = push({mean});
  records_.push_back([this, stacked, out, n]() {
    const double g = grads_[out][0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) grads_[stacked][i] += g;
  });
  return out;
}

NodeId Tape::lincomb(NodeId coeffs, std::span<const NodeId> vectors) {
  check_node(coeffs);
  if (values_[coeffs].size() != vectors.size()) {
    throw std::invalid_argument("lincomb: coefficient count mismatch");
  }
  if (vectors.empty()) throw std::invalid_argument("lincomb: no vectors");
  const std::size_t d = values_[vectors[0]].size();
  std::vector<double> y(d, 0.0);
  for (std::size_t k = 0; k < vectors.size(); ++k) {
    check_node(vectors[k]);
    if (values_[vectors[k]].size() != d) {
      throw std::invalid_argument("lincomb: vector size mismatch");
    }
    const double c = values_[coeffs][k];
    for (std::size_t j = 0; j < d; ++j) y[j] += c * values_[vectors[k]][j];
  }
  NodeId out = push(std::move(y));
  records_.push_back(
      [this, coeffs, out, d,
       ids = std::vector<NodeId>(vectors.begin(), vectors.end())]() {
        const auto& g = grads_[out];
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const double c = values_[coeffs][k];
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            grads_[ids[k]][j] += c * g[j];
            dot += values_[ids[k]][j] * g[j];
          }
          grads_[coeffs][k] += dot;
        }
      });
  return out;
}

NodeId Tape::cosine_distance(NodeId a, NodeId b) {
  check_node(a);
  check_node(b);
  const std::size_t d = values_[a].size();
  if (values_[b].size() != d) {
    throw std::invalid_argument("cosine_distance: size mismatch");
  }
  const auto& av = values_[a];
  const auto& bv = values_[b];
  double dot = 0.0;
  double sa = kNormFloor;
  double sb = kNormFloor;
  for (std::size_t j = 0; j < d; ++j) {
    dot += av[j] * bv[j];
    sa += av[j] * av[j];
    sb += bv[j] * bv[j];
  }
  const double na = std::sqrt(sa);
  const double nb = std::sqrt(sb);
  const double cos_sim = dot / (na * nb);
  NodeId out = push({1.0 - cos_sim});
  records_.push_back([this, a, b, out, d, na, nb, cos_sim]() {
    const double g = grads_[out][0];
    const auto& av = values_[a];
    const auto& bv = values_[b];
    for (std::size_t j = 0; j < d; ++j) {
      grads_[a][j] += g * (cos_sim * av[j] / (na * na) - bv[j] / (na * nb));
      grads_[b][j] += g * (cos_sim * bv[j] / (nb * nb) - av[j] / (na * nb));
    }
  });
  return out;
}

NodeId Tape::sym_kl_moments(std::span<const NodeId> batch_a,
                            std::span<const NodeId> batch_b) {
  if (batch_a.empty() || batch_b.empty()) {
    throw std::invalid_argument("sym_kl_moments: empty batch");
  }
  const std::size_t d = values_[batch_a[0]].size();
  auto moments = [&](std::span<const NodeId> batch, std::vector<double>& mu,
                     std::vector<double>& var) {
    mu.assign(d, 0.0);
    var.assign(d, 0.0);
    for (NodeId id : batch) {
      check_node(id);
      if (values_[id].size() != d) {
        throw std::invalid_argument("sym_kl_moments: dimension mismatch");
      }
      for (std::size_t j = 0; j < d; ++j) mu[j] += values_[id][j];
    }
    const double n = static_cast<double>(batch.size());
    for (std::size_t j = 0; j < d; ++j) mu[j] /= n;
    for (NodeId id : batch) {
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = values_[id][j] - mu[j];
        var[j] += diff * diff;
      }
    }
    for (std::size_t j = 0; j < d; ++j) var[j] = var[j] / n + kVarFloor;
  };
  std::vector<double> mu_a;
  std::vector<double> var_a;
  std::vector<double> mu_b;
  std::vector<double> var_b;
  moments(batch_a, mu_a, var_a);
  moments(batch_b, mu_b, var_b);

  double loss = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double delta = mu_a[j] - mu_b[j];
    const double kl_ab = 0.5 * (std::log(var_b[j] / var_a[j]) +
                                (var_a[j] + delta * delta) / var_b[j] - 1.0);
    const double kl_ba = 0.5 * (std::log(var_a[j] / var_b[j]) +
                                (var_b[j] + delta * delta) / var_a[j] - 1.0);
    loss += 0.5 * (kl_ab + kl_ba);
  }
  NodeId out = push({loss});
  records_.push_back(
      [this, out, d, mu_a = std::move(mu_a), var_a = std::move(var_a),
       mu_b = std::move(mu_b), var_b = std::move(var_b),
       ids_a = std::vector<NodeId>(batch_a.begin(), batch_a.end()),
       ids_b = std::vector<NodeId>(batch_b.begin(), batch_b.end())]() {
        const double g = grads_[out][0];
        const double na = static_cast<double>(ids_a.size());
        const double nb = static_cast<double>(ids_b.size());
        for (std::size_t j = 0; j < d; ++j) {
          const double delta = mu_a[j] - mu_b[j];
          // d loss / d moments, with loss = (kl_ab + kl_ba) / 2 per coord.
          const double d_mu_a = 0.5 * (delta / var_b[j] + delta / var_a[j]);
          const double d_mu_b = -d_mu_a;
          const double d_var_a =
              0.5 * (0.5 * (1.0 / var_b[j] - 1.0 / var_a[j]) +
                     0.5 * (1.0 / var_a[j] -
                            (var_b[j] + delta * delta) / (var_a[j] * var_a[j])));
          const double d_var_b =
              0.5 * (0.5 * (1.0 / var_a[j] - 1.0 / var_b[j]) +
                     0.5 * (1.0 / var_b[j] -
                            (var_a[j] + delta * delta) / (var_b[j] * var_b[j])));
          for (NodeId id : ids_a) {
            const double centered = values_[id][j] - mu_a[j];
            grads_[id][j] +=
                g * (d_mu_a / na + d_var_a * 2.0 * centered / na);
          }
          for (NodeId id : ids_b) {
            const double centered = values_[id][j] - mu_b[j];
            grads_[id][j] +=
                g * (d_mu_b / nb + d_var_b * 2.0 * centered / nb);
          }
        }
      });
  return out;
}

const std::vector<double>& Tape::value(NodeId id) const {
  check_node(id);
  return values_[id];
}

double Tape::scalar(NodeId id) const {
  check_node(id);
  if (values_[id].size() != 1) {
    throw std::invalid_argument("tape scalar: node is not scalar");
  }
  return values_[id][0];
}

void Tape::backward(NodeId out) {
  check_node(out);
  if (values_[out].size() != 1) {
    throw std::invalid_argument("backward: output must be scalar");
  }
  for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
  grads_[out][0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::add_param(ParamTensor* p) {
  slots_.push_back({p, std::vector<double>(p->size(), 0.0),
                    std::vector<double>(p->size(), 0.0)});
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (auto& slot : slots_) {
    for (std::size_t i = 0; i < slot.p->size(); ++i) {
      const double g = slot.p->grad[i];
      slot.m[i] = b1_ * slot.m[i] + (1.0 - b1_) * g;
      slot.v[i] = b2_ * slot.v[i] + (1.0 - b2_) * g * g;
      const double m_hat = slot.m[i] / bc1;
      const double v_hat = slot.v[i] / bc2;
      slot.p->value[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

void Adam::zero_grads() {
  for (auto& slot : slots_) slot.p->zero_grad();
}

FdCheckResult finite_diff_check(const std::function<double()>& f,
                                std::span<ParamTensor* const> params,
                                double h) {
  FdCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    ParamTensor* p = params[pi];
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double f_plus = f();
      p->value[i] = saved - h;
      const double f_minus = f();
      p->value[i] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        result.ok = false;
        result.max_rel_error = std::numeric_limits<double>::infinity();
        result.worst = "non-finite evaluation at param " + std::to_string(pi) +
                       " index " + std::to_string(i);
        return result;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double analytic = p->grad[i];
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = "param " + std::to_string(pi) + " index " +
                       std::to_string(i) + ": analytic " +
                       std::to_string(analytic) + " numeric " +
                       std::to_string(numeric);
      }
    }
  }
  return result;
}

}  // namespace dpmm
