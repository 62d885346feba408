#pragma once

// Three-layer MLP feature extractor with a temporary affine head.
//
// Each MLP layer computes ReLU(BN(x W + b)). In training mode, dropout follows
// layers 1 and 2 and is applied again to the head input. Batch norm uses batch
// statistics in training mode and running statistics (momentum 0.1) in eval
// mode. After task-1 training the MLP is frozen and only embed() is used.
//
// Rows are samples throughout: an input batch is N x in, weights are in x out.

#include "sslgcil/common.hpp"
#include "sslgcil/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sslgcil {

inline constexpr int kMlpLayers = 3;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct DenseLayer {
  Matrix weight;  ///< in x out
  Vector bias;    ///< out
};

struct BatchNorm {
  Vector scale;
  Vector shift;
  Vector running_mean;
  Vector running_var;
};

struct MlpParams {
  std::array<DenseLayer, kMlpLayers> layers;
  std::array<BatchNorm, kMlpLayers> norms;
  double dropout = 0.1;
  bool frozen = false;

  int input_dim() const { return static_cast<int>(layers[0].weight.rows()); }
  int hidden_dim() const { return static_cast<int>(layers[kMlpLayers - 1].weight.cols()); }
};

struct HeadParams {
  Matrix weight;  ///< h x outputs
  Vector bias;
};

struct Network {
  MlpParams mlp;
  HeadParams head;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int lr_step_epochs = 2;  ///< StepLR period
  double lr_decay = 0.5;   ///< StepLR factor
  int epochs = 10;
  int batch_size = 128;
  double dropout = 0.1;
  std::uint64_t seed = 0;
};

/// Calls fn(name, data, size) for every trainable tensor, in a fixed order.
template <class Net, class Fn>
void visit_trainable(Net& net, Fn&& fn) {
  for (int l = 0; l < kMlpLayers; ++l) {
    const std::string p = "mlp." + std::to_string(l) + ".";
    fn(p + "weight", net.mlp.layers[l].weight);
    fn(p + "bias", net.mlp.layers[l].bias);
    fn(p + "bn_scale", net.mlp.norms[l].scale);
    fn(p + "bn_shift", net.mlp.norms[l].shift);
  }
  fn(std::string("head.weight"), net.head.weight);
  fn(std::string("head.bias"), net.head.bias);
}

/// He-normal weights for the ReLU layers, fan-in normal for the head, zero
/// biases, identity batch norm.
inline Network init_network(int input_dim, int hidden_dim, int outputs, Rng& rng, double dropout = 0.1) {
  if (input_dim <= 0 || hidden_dim <= 0 || outputs <= 0)
    throw std::invalid_argument("init_network: dimensions must be positive");
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](Matrix& w, int rows, int cols, double stddev) {
    w.resize(rows, cols);
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = stddev * normal(rng);
  };
  Network net;
  net.mlp.dropout = dropout;
  int fan_in = input_dim;
  for (int l = 0; l < kMlpLayers; ++l) {
    draw(net.mlp.layers[l].weight, fan_in, hidden_dim, std::sqrt(2.0 / fan_in));
    net.mlp.layers[l].bias = Vector::Zero(hidden_dim);
    auto& bn = net.mlp.norms[l];
    bn.scale = Vector::Ones(hidden_dim);
    bn.shift = Vector::Zero(hidden_dim);
    bn.running_mean = Vector::Zero(hidden_dim);
    bn.running_var = Vector::Ones(hidden_dim);
    fan_in = hidden_dim;
  }
  draw(net.head.weight, hidden_dim, outputs, std::sqrt(1.0 / hidden_dim));
  net.head.bias = Vector::Zero(outputs);
  return net;
}

enum class Mode { kTrain, kEval };

/// Intermediates kept for backpropagation.
struct ForwardCache {
  struct Layer {
    Matrix input;
    Matrix xhat;
    Vector batch_mean;
    Vector batch_var;  ///< biased
    Vector inv_std;
    Matrix pre_relu;
    Matrix mask;  ///< dropout multipliers (empty when not applied)
  };
  std::array<Layer, kMlpLayers> layers;
  Matrix hidden;      ///< h, output of layer 3
  Matrix head_input;  ///< h after head dropout
  Matrix head_mask;
  Matrix logits;
};

namespace detail {

inline Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Matrix mask(rows, cols);
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) mask(r, c) = keep(rng) ? scale : 0.0;
  return mask;
}

}  // namespace detail

/// Forward pass through the MLP and, when `with_head`, the head. Parameters are
/// not modified; the training loop updates running statistics from the cache.
/// `rng` is required in training mode when dropout > 0.
inline ForwardCache forward(const Network& net, const Matrix& x, Mode mode, Rng* rng, bool with_head = true) {
  if (x.cols() != net.mlp.input_dim())
    throw std::invalid_argument("forward: input has " + std::to_string(x.cols()) + " columns, expected " +
                                std::to_string(net.mlp.input_dim()));
  const bool train = mode == Mode::kTrain;
  const double rate = net.mlp.dropout;
  if (train && rate > 0.0 && rng == nullptr) throw std::invalid_argument("forward: training mode needs an rng");
  ForwardCache cache;
  Matrix a = x;
  for (int l = 0; l < kMlpLayers; ++l) {
    auto& lc = cache.layers[l];
    const auto& layer = net.mlp.layers[l];
    const auto& bn = net.mlp.norms[l];
    lc.input = a;
    Matrix z = a * layer.weight;
    z.rowwise() += layer.bias.transpose();
    if (train) {
      lc.batch_mean = z.colwise().mean().transpose();
      z.rowwise() -= lc.batch_mean.transpose();
      lc.batch_var = z.array().square().colwise().mean().transpose();
      lc.inv_std = (lc.batch_var.array() + kBatchNormEps).rsqrt();
      lc.xhat = z * lc.inv_std.asDiagonal();
    } else {
      z.rowwise() -= bn.running_mean.transpose();
      lc.inv_std = (bn.running_var.array() + kBatchNormEps).rsqrt();
      lc.xhat = z * lc.inv_std.asDiagonal();
    }
    Matrix y = lc.xhat * bn.scale.asDiagonal();
    y.rowwise() += bn.shift.transpose();
    lc.pre_relu = y;
    a = y.cwiseMax(0.0);
    if (train && rate > 0.0 && l < kMlpLayers - 1) {
      lc.mask = detail::dropout_mask(a.rows(), a.cols(), rate, *rng);
      a = a.cwiseProduct(lc.mask);
    }
  }
  cache.hidden = a;
  if (with_head) {
    if (train && rate > 0.0) {
      cache.head_mask = detail::dropout_mask(a.rows(), a.cols(), rate, *rng);
      cache.head_input = a.cwiseProduct(cache.head_mask);
    } else {
      cache.head_input = a;
    }
    cache.logits = cache.head_input * net.head.weight;
    cache.logits.rowwise() += net.head.bias.transpose();
  }
  return cache;
}

struct LossResult {
  double loss = 0.0;
  Matrix grad;  ///< d loss / d logits
};

/// Mean binary cross-entropy with logits over batch and bins, in the stable
/// form max(x, 0) - x z + log(1 + e^{-|x|}).
inline LossResult bce_loss(const Matrix& logits, const Matrix& targets) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols())
    throw std::invalid_argument("bce_loss: logits and targets differ in shape");
  const double count = static_cast<double>(logits.size());
  LossResult r;
  r.grad.resize(logits.rows(), logits.cols());
  double total = 0.0;
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double x = logits(i, c);
      const double z = targets(i, c);
      total += std::max(x, 0.0) - x * z + std::log1p(std::exp(-std::abs(x)));
      const double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      r.grad(i, c) = (sig - z) / count;
    }
  }
  r.loss = total / count;
  return r;
}

/// Gradients of every trainable tensor, stored in a Network of the same shape.
inline Network backward(const Network& net, const ForwardCache& cache, const Matrix& grad_logits,
                        bool train_mode = true) {
  Network g;
  g.head.weight = cache.head_input.transpose() * grad_logits;
  g.head.bias = grad_logits.colwise().sum().transpose();
  Matrix da = grad_logits * net.head.weight.transpose();
  if (cache.head_mask.size() > 0) da = da.cwiseProduct(cache.head_mask);

  for (int l = kMlpLayers - 1; l >= 0; --l) {
    const auto& lc = cache.layers[l];
    const auto& bn = net.mlp.norms[l];
    if (lc.mask.size() > 0) da = da.cwiseProduct(lc.mask);
    const Matrix dy = da.cwiseProduct((lc.pre_relu.array() > 0.0).cast<double>().matrix());
    g.mlp.norms[l].scale = dy.cwiseProduct(lc.xhat).colwise().sum().transpose();
    g.mlp.norms[l].shift = dy.colwise().sum().transpose();
    const Matrix dxhat = dy * bn.scale.asDiagonal();
    Matrix dz;
    if (train_mode) {
      const double n = static_cast<double>(dy.rows());
      const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
      const Eigen::RowVectorXd sum_dxhat_xhat = dxhat.cwiseProduct(lc.xhat).colwise().sum();
      Matrix t = n * dxhat;
      t.rowwise() -= sum_dxhat;
      t -= lc.xhat * sum_dxhat_xhat.asDiagonal();
      dz = t * (lc.inv_std / n).asDiagonal();
    } else {
      dz = dxhat * lc.inv_std.asDiagonal();
    }
    g.mlp.layers[l].weight = lc.input.transpose() * dz;
    g.mlp.layers[l].bias = dz.colwise().sum().transpose();
    if (l > 0) da = dz * net.mlp.layers[l].weight.transpose();
  }
  return g;
}

/// Adam with bias correction over the trainable tensors of a Network.
class AdamOptimizer {
 public:
  AdamOptimizer(const Network& shape, const TrainConfig& config) : config_(config) {
    visit_trainable(shape, [&](const std::string&, const auto& t) {
      m_.push_back(Vector::Zero(t.size()));
      v_.push_back(Vector::Zero(t.size()));
    });
  }

  void step(Network& net, const Network& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    std::vector<const double*> g_ptrs;
    visit_trainable(grads, [&](const std::string&, const auto& t) { g_ptrs.push_back(t.data()); });
    std::size_t idx = 0;
    visit_trainable(net, [&](const std::string&, auto& t) {
      Eigen::Map<Vector> p(t.data(), t.size());
      Eigen::Map<const Vector> g(g_ptrs[idx], t.size());
      auto& m = m_[idx];
      auto& v = v_[idx];
      m = config_.beta1 * m + (1.0 - config_.beta1) * g;
      v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseProduct(g);
      p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config_.adam_eps);
      ++idx;
    });
  }

 private:
  TrainConfig config_;
  std::vector<Vector> m_;
  std::vector<Vector> v_;
  long t_ = 0;
};

/// StepLR schedule.
inline double learning_rate_at(const TrainConfig& config, int epoch) {
  return config.learning_rate * std::pow(config.lr_decay, epoch / std::max(1, config.lr_step_epochs));
}

inline void update_running_stats(MlpParams& mlp, const ForwardCache& cache) {
  for (int l = 0; l < kMlpLayers; ++l) {
    auto& bn = mlp.norms[l];
    const auto& lc = cache.layers[l];
    const double n = static_cast<double>(lc.input.rows());
    const Vector unbiased = n > 1 ? Vector(lc.batch_var * (n / (n - 1.0))) : lc.batch_var;
    bn.running_mean = (1.0 - kBatchNormMomentum) * bn.running_mean + kBatchNormMomentum * lc.batch_mean;
    bn.running_var = (1.0 - kBatchNormMomentum) * bn.running_var + kBatchNormMomentum * unbiased;
  }
}

inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(idx[r]));
  return out;
}

struct TrainResult {
  std::vector<double> epoch_loss;  ///< sample-weighted mean training loss per epoch
};

/// Mini-batch Adam training of the full network (MLP + head) on inputs `x`
/// and soft targets `z`. Batch order comes from `config.seed` only. A batch of
/// a single sample is skipped since batch-norm statistics are undefined for it.
/// Throws NumericError naming the epoch if the loss becomes non-finite.
inline TrainResult train_network(Network& net, const Matrix& x, const Matrix& z, const TrainConfig& config) {
  if (x.rows() == 0) throw std::invalid_argument("train_network: empty training set");
  if (x.rows() != z.rows()) throw std::invalid_argument("train_network: inputs and targets differ in rows");
  if (net.mlp.frozen) throw std::logic_error("train_network: backbone is frozen");
  if (!(config.learning_rate > 0.0) || config.epochs < 1 || config.batch_size < 1)
    throw std::invalid_argument("train_network: invalid training configuration");
  net.mlp.dropout = config.dropout;
  Rng rng(derive_seed(config.seed, {seed_tag::kBackbone}));
  AdamOptimizer adam(net, config);
  std::vector<std::size_t> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = learning_rate_at(config, epoch);
    double total = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      if (end - start < 2) continue;
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Matrix xb = gather_rows(x, idx);
      const Matrix zb = gather_rows(z, idx);
      const ForwardCache cache = forward(net, xb, Mode::kTrain, &rng);
      const LossResult loss = bce_loss(cache.logits, zb);
      if (!std::isfinite(loss.loss))
        throw NumericError("backbone training diverged (non-finite loss) in epoch " + std::to_string(epoch + 1));
      const Network grads = backward(net, cache, loss.grad);
      adam.step(net, grads, lr);
      update_running_stats(net.mlp, cache);
      total += loss.loss * static_cast<double>(idx.size());
      seen += idx.size();
    }
    result.epoch_loss.push_back(seen > 0 ? total / static_cast<double>(seen) : 0.0);
  }
  return result;
}

struct TrainedBackbone {
  Network net;  ///< mlp frozen; head is the temporary task-1 head
  TrainResult history;
};

/// Initializes from `config.seed`, trains MLP and temporary head on task-1 data,
/// then freezes the MLP.
inline TrainedBackbone train_task1(const Matrix& x, const Matrix& z, int hidden_dim, const TrainConfig& config) {
  if (x.rows() == 0) throw std::invalid_argument("train_task1: task 1 is empty");
  Rng init_rng(derive_seed(config.seed, {seed_tag::kBackbone, 0}));
  TrainedBackbone out;
  out.net = init_network(static_cast<int>(x.cols()), hidden_dim, static_cast<int>(z.cols()), init_rng, config.dropout);
  out.history = train_network(out.net, x, z, config);
  out.net.mlp.frozen = true;
  return out;
}

/// Trains only an affine head on fixed embeddings `h` with BCE and Adam, using
/// dropout on the head input. Adam moments and the lr schedule start fresh on
/// every call. Used by the fine-tuning lower bound.
inline TrainResult train_head(HeadParams& head, const Matrix& h, const Matrix& z, const TrainConfig& config) {
  if (h.rows() == 0) throw std::invalid_argument("train_head: empty training set");
  if (h.rows() != z.rows() || h.cols() != head.weight.rows() || z.cols() != head.weight.cols())
    throw std::invalid_argument("train_head: shape mismatch");
  Rng rng(derive_seed(config.seed, {seed_tag::kHead}));
  Vector mw = Vector::Zero(head.weight.size()), vw = mw;
  Vector mb = Vector::Zero(head.bias.size()), vb = mb;
  long step = 0;
  auto adam = [&](double* p, const double* g, Vector& m, Vector& v, Eigen::Index n, double lr) {
    Eigen::Map<Vector> pm(p, n);
    Eigen::Map<const Vector> gm(g, n);
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
    m = config.beta1 * m + (1.0 - config.beta1) * gm;
    v = config.beta2 * v + (1.0 - config.beta2) * gm.cwiseProduct(gm);
    pm.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config.adam_eps);
  };

  std::vector<std::size_t> order(static_cast<std::size_t>(h.rows()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  TrainResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = learning_rate_at(config, epoch);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      Matrix hb = gather_rows(h, idx);
      if (config.dropout > 0.0) hb = hb.cwiseProduct(detail::dropout_mask(hb.rows(), hb.cols(), config.dropout, rng));
      Matrix logits = hb * head.weight;
      logits.rowwise() += head.bias.transpose();
      const LossResult loss = bce_loss(logits, gather_rows(z, idx));
      if (!std::isfinite(loss.loss))
        throw NumericError("head fine-tuning diverged (non-finite loss) in epoch " + std::to_string(epoch + 1));
      const Matrix gw = hb.transpose() * loss.grad;
      const Vector gb = loss.grad.colwise().sum().transpose();
      ++step;
      adam(head.weight.data(), gw.data(), mw, vw, head.weight.size(), lr);
      adam(head.bias.data(), gb.data(), mb, vb, head.bias.size(), lr);
      total += loss.loss * static_cast<double>(idx.size());
    }
    result.epoch_loss.push_back(total / static_cast<double>(order.size()));
  }
  return result;
}

/// Eval-mode logits of the full network.
inline Matrix predict_network(const Network& net, const Matrix& x) {
  return forward(net, x, Mode::kEval, nullptr, true).logits;
}

/// Hidden representation h (N x hidden) of a frozen backbone.
inline Matrix embed(const MlpParams& mlp, const Matrix& x) {
  if (!mlp.frozen) throw std::logic_error("embed: backbone must be frozen first");
  Network view;
  view.mlp = mlp;
  return forward(view, x, Mode::kEval, nullptr, false).hidden;
}

/// FNV-1a over the raw bytes of every MLP tensor, including running statistics.
inline std::uint64_t checksum(const MlpParams& mlp) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const auto& t) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(t.size()) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (int l = 0; l < kMlpLayers; ++l) {
    feed(mlp.layers[l].weight);
    feed(mlp.layers[l].bias);
    feed(mlp.norms[l].scale);
    feed(mlp.norms[l].shift);
    feed(mlp.norms[l].running_mean);
    feed(mlp.norms[l].running_var);
  }
  return h;
}

}  // namespace sslgcil
