#pragma once

// Per-pixel MLP mapping polarity-sum vectors to unit normals: tanh hidden
// layers with inverted dropout, L2-normalized output flipped toward the
// camera, cosine loss, exact backpropagation and Adam training.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "evps/core.hpp"
#include "evps/representation.hpp"

namespace evps {

struct NonFiniteActivation : Error {
  using Error::Error;
};

struct NonFiniteGradient : Error {
  using Error::Error;
};

// Layer widths from input to output; all hidden layers use tanh.
struct MlpConfig {
  std::vector<int> widths;
  double dropout{0.2};
  std::uint64_t seed{0};

  static MlpConfig paper(int input = kDefaultSegments) {
    return {{input, 4096, 4096, 2048, 2048, 2048, 3}, 0.2, 0};
  }
  static MlpConfig small(int input = kDefaultSegments) { return {{input, 256, 128, 3}, 0.2, 0}; }

  int layers() const { return static_cast<int>(widths.size()) - 1; }
  int input_size() const { return widths.empty() ? 0 : widths.front(); }

  void validate() const {
    if (widths.size() < 2) throw InvalidArgument("network needs at least input and output widths");
    if (widths.front() < 2) throw InvalidArgument("network input width must be >= 2");
    if (widths.back() != 3) throw InvalidArgument("network output width must be 3");
    for (int w : widths)
      if (w < 1) throw InvalidArgument("layer widths must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("dropout must lie in [0, 1)");
  }
};

struct Model {
  MlpConfig config;
  std::vector<Eigen::MatrixXd> weights;  // layer l: widths[l+1] x widths[l]
  std::vector<Eigen::VectorXd> biases;

  int layers() const { return static_cast<int>(weights.size()); }
  int input_size() const { return config.input_size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (int l = 0; l < layers(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }

  // Flat parameter view: per layer, weights (column-major Eigen storage) then biases.
  double& parameter(std::size_t index) {
    for (int l = 0; l < layers(); ++l) {
      const auto nw = static_cast<std::size_t>(weights[l].size());
      if (index < nw) return weights[l].data()[index];
      index -= nw;
      const auto nb = static_cast<std::size_t>(biases[l].size());
      if (index < nb) return biases[l].data()[index];
      index -= nb;
    }
    throw InvalidArgument("parameter index out of range");
  }

  bool all_finite() const {
    for (int l = 0; l < layers(); ++l)
      if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    return true;
  }

  bool operator==(const Model& o) const {
    if (config.widths != o.config.widths || config.dropout != o.config.dropout) return false;
    if (layers() != o.layers()) return false;
    for (int l = 0; l < layers(); ++l)
      if (weights[l] != o.weights[l] || biases[l] != o.biases[l]) return false;
    return true;
  }
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero hidden biases. The
// output bias starts at the view direction (0, 0, 1): with a zero output bias
// the z-flip leaves training stuck near a constant prediction for many epochs.
inline Model init(const MlpConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  std::mt19937_64 rng(mix_seed(config.seed, 0x1417));
  for (int l = 0; l < config.layers(); ++l) {
    const int in = config.widths[l];
    const int out = config.widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> uni(-bound, bound);
    Eigen::MatrixXd w(out, in);
    // Row-major fill order so the draw sequence matches the checkpoint layout.
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) w(r, c) = uni(rng);
    m.weights.push_back(std::move(w));
    m.biases.push_back(Eigen::VectorXd::Zero(out));
  }
  m.biases.back()[2] = 1.0;
  return m;
}

enum class Mode { train, infer };

// Per-sample dropout seed inside a batch.
inline std::uint64_t sample_dropout_seed(std::uint64_t batch_seed, std::size_t sample) {
  return mix_seed(batch_seed, sample);
}

namespace detail {

// Fills one column of inverted-dropout scales (0 or 1/(1-rate)).
inline void dropout_column(Eigen::Ref<Eigen::VectorXd> col, std::uint64_t seed, int layer,
                           double rate) {
  const std::uint64_t base = mix_seed(seed, static_cast<std::uint64_t>(layer) + 1);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Eigen::Index u = 0; u < col.size(); ++u)
    col[u] = unit_from_bits(mix_seed(base, static_cast<std::uint64_t>(u))) < rate ? 0.0 : keep_scale;
}

// Activations cached by a batched forward pass.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;   // input to layer l (after dropout for l > 0)
  std::vector<Eigen::MatrixXd> hidden;   // tanh outputs before dropout
  std::vector<Eigen::MatrixXd> dropout;  // scale masks; empty when unused
  Eigen::MatrixXd raw;                   // final affine output, 3 x B
  Eigen::MatrixXd unit;                  // normalized and flipped, 3 x B
  Eigen::VectorXd norms;
  Eigen::VectorXd signs;
};

inline constexpr double kNormFloor = 1e-12;

inline ForwardCache forward_batch(const Model& model, const Eigen::MatrixXd& x, Mode mode,
                                  std::uint64_t batch_seed) {
  if (x.rows() != model.input_size())
    throw InvalidArgument("input length " + std::to_string(x.rows()) + " does not match network width " +
                          std::to_string(model.input_size()));
  const double rate = model.config.dropout;
  const bool use_dropout = mode == Mode::train && rate > 0.0;
  const Eigen::Index batch = x.cols();
  ForwardCache c;
  c.inputs.reserve(model.layers());
  c.inputs.push_back(x);
  for (int l = 0; l + 1 < model.layers(); ++l) {
    Eigen::MatrixXd z = model.weights[l] * c.inputs.back();
    z.colwise() += model.biases[l];
    Eigen::MatrixXd h = z.array().tanh().matrix();
    if (!h.allFinite()) throw NonFiniteActivation("non-finite activation in layer " + std::to_string(l));
    if (use_dropout) {
      Eigen::MatrixXd d(h.rows(), batch);
      for (Eigen::Index s = 0; s < batch; ++s)
        dropout_column(d.col(s), sample_dropout_seed(batch_seed, static_cast<std::size_t>(s)), l,
                       rate);
      c.inputs.push_back(h.cwiseProduct(d));
      c.dropout.push_back(std::move(d));
    } else {
      c.inputs.push_back(h);
    }
    c.hidden.push_back(std::move(h));
  }
  c.raw = model.weights.back() * c.inputs.back();
  c.raw.colwise() += model.biases.back();
  if (!c.raw.allFinite()) throw NonFiniteActivation("non-finite network output");

  c.norms.resize(batch);
  c.signs.resize(batch);
  c.unit.resize(3, batch);
  for (Eigen::Index s = 0; s < batch; ++s) {
    const double n = std::max(c.raw.col(s).norm(), kNormFloor);
    const double sign = c.raw(2, s) < 0.0 ? -1.0 : 1.0;
    c.norms[s] = n;
    c.signs[s] = sign;
    c.unit.col(s) = c.raw.col(s) * (sign / n);
  }
  return c;
}

inline Eigen::MatrixXd to_matrix(std::span<const double> input) {
  return Eigen::Map<const Eigen::VectorXd>(input.data(), static_cast<Eigen::Index>(input.size()));
}

}  // namespace detail

// Single-sample forward pass. In train mode, dropout_seed selects the mask;
// sample s of a batch uses sample_dropout_seed(batch_seed, s).
inline Normal forward(const Model& model, std::span<const double> input, Mode mode = Mode::infer,
                      std::uint64_t dropout_seed = 0) {
  // A single-column batch whose sample 0 must use dropout_seed directly.
  const double rate = model.config.dropout;
  if (mode == Mode::train && rate > 0.0) {
    if (static_cast<int>(input.size()) != model.input_size())
      throw InvalidArgument("input length does not match network width");
    Eigen::VectorXd a = detail::to_matrix(input);
    for (int l = 0; l + 1 < model.layers(); ++l) {
      Eigen::VectorXd h = (model.weights[l] * a + model.biases[l]).array().tanh().matrix();
      if (!h.allFinite()) throw NonFiniteActivation("non-finite activation in layer " + std::to_string(l));
      Eigen::VectorXd d(h.size());
      detail::dropout_column(d, dropout_seed, l, rate);
      a = h.cwiseProduct(d);
    }
    Eigen::Vector3d y = model.weights.back() * a + model.biases.back();
    if (!y.allFinite()) throw NonFiniteActivation("non-finite network output");
    const Normal v = Normal{y[0], y[1], y[2]}.normalized(detail::kNormFloor);
    return y[2] < 0.0 ? -v : v;
  }
  const auto c = detail::forward_batch(model, detail::to_matrix(input), mode, 0);
  return {c.unit(0, 0), c.unit(1, 0), c.unit(2, 0)};
}

inline double cosine_loss(const Normal& pred, const Normal& gt) { return 1.0 - pred.dot(gt); }

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  double loss{0.0};  // mean cosine loss over the batch

  // Same flat ordering as Model::parameter.
  double at(std::size_t index) const {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      const auto nw = static_cast<std::size_t>(weights[l].size());
      if (index < nw) return weights[l].data()[index];
      index -= nw;
      const auto nb = static_cast<std::size_t>(biases[l].size());
      if (index < nb) return biases[l].data()[index];
      index -= nb;
    }
    throw InvalidArgument("gradient index out of range");
  }
};

// Mean cosine loss of a batch (columns of inputs), using the same dropout
// masks as backward() for the same batch_seed.
inline double batch_loss(const Model& model, const Eigen::MatrixXd& inputs,
                         std::span<const Normal> targets, Mode mode, std::uint64_t batch_seed) {
  const auto c = detail::forward_batch(model, inputs, mode, batch_seed);
  double total = 0.0;
  for (Eigen::Index s = 0; s < inputs.cols(); ++s) {
    const Normal& g = targets[static_cast<std::size_t>(s)];
    total += 1.0 - (c.unit(0, s) * g.x + c.unit(1, s) * g.y + c.unit(2, s) * g.z);
  }
  return total / static_cast<double>(inputs.cols());
}

// Exact gradients of the mean cosine loss (train mode). The z-flip sign is a
// per-sample constant.
inline Gradients backward(const Model& model, const Eigen::MatrixXd& inputs,
                          std::span<const Normal> targets, std::uint64_t batch_seed) {
  const Eigen::Index batch = inputs.cols();
  if (batch == 0) throw InvalidArgument("backward needs a non-empty batch");
  if (static_cast<std::size_t>(batch) != targets.size())
    throw InvalidArgument("batch inputs and targets differ in size");

  const auto c = detail::forward_batch(model, inputs, Mode::train, batch_seed);
  const double inv_b = 1.0 / static_cast<double>(batch);

  Gradients g;
  g.weights.resize(model.layers());
  g.biases.resize(model.layers());

  Eigen::MatrixXd dz(3, batch);
  double total = 0.0;
  for (Eigen::Index s = 0; s < batch; ++s) {
    const Normal& t = targets[static_cast<std::size_t>(s)];
    const Eigen::Vector3d gt(t.x, t.y, t.z);
    const Eigen::Vector3d u = c.unit.col(s);
    total += 1.0 - u.dot(gt);
    // dL/du = -gt / B; u = sign * y / |y|.
    const Eigen::Vector3d dldu = -gt * inv_b;
    const double n = c.norms[s];
    if (c.raw.col(s).norm() > detail::kNormFloor) {
      const Eigen::Vector3d yhat = c.raw.col(s) / n;
      dz.col(s) = c.signs[s] * (dldu - yhat * yhat.dot(dldu)) / n;
    } else {
      dz.col(s) = c.signs[s] * dldu / n;
    }
  }
  g.loss = total * inv_b;

  for (int l = model.layers() - 1; l >= 0; --l) {
    g.weights[l] = dz * c.inputs[l].transpose();
    g.biases[l] = dz.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd da = model.weights[l].transpose() * dz;
    const auto hidx = static_cast<std::size_t>(l - 1);
    if (!c.dropout.empty()) da = da.cwiseProduct(c.dropout[hidx]);
    const Eigen::MatrixXd& h = c.hidden[hidx];
    dz = da.cwiseProduct((1.0 - h.array().square()).matrix());
  }
  for (int l = 0; l < model.layers(); ++l)
    if (!g.weights[l].allFinite() || !g.biases[l].allFinite())
      throw NonFiniteGradient("non-finite gradient in layer " + std::to_string(l));
  return g;
}

struct TrainConfig {
  double learning_rate{1e-3};
  int batch_size{256};
  int epochs{250};
  double beta1{0.9};
  double beta2{0.999};
  double epsilon{1e-8};
  std::uint64_t seed{0};

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
    if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
    if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw InvalidArgument("Adam moments must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw InvalidArgument("Adam epsilon must be positive");
  }
};

struct TrainHistory {
  std::vector<double> train_loss;       // mean per-sample loss per epoch
  std::vector<double> validation_loss;  // empty without a validation set
};

struct TrainResult {
  Model model;
  TrainHistory history;
};

// Mean cosine loss in infer mode.
inline double evaluate_loss(const Model& model, const Dataset& data, int batch_size = 1024) {
  if (!data.has_targets || data.size() == 0) throw InvalidArgument("evaluation needs targets");
  double total = 0.0;
  const std::size_t m = static_cast<std::size_t>(data.segments);
  for (std::size_t b = 0; b < data.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(data.size(), b + static_cast<std::size_t>(batch_size));
    const Eigen::Map<const Eigen::MatrixXd> x(data.features.data() + b * m,
                                              static_cast<Eigen::Index>(m),
                                              static_cast<Eigen::Index>(e - b));
    total += batch_loss(model, x, std::span<const Normal>(data.targets).subspan(b, e - b),
                        Mode::infer, 0) *
             static_cast<double>(e - b);
  }
  return total / static_cast<double>(data.size());
}

using EpochCallback = std::function<void(int epoch, double train_loss, double validation_loss)>;

// Adam over mini-batches, reshuffled each epoch with a seed derived from tcfg.seed.
inline TrainResult train(Model model, const Dataset& data, const TrainConfig& tcfg,
                         const Dataset* validation = nullptr, const EpochCallback& on_epoch = {}) {
  tcfg.validate();
  if (data.size() == 0 || !data.has_targets)
    throw InvalidArgument("training needs a non-empty dataset with ground truth");
  if (data.segments != model.input_size())
    throw InvalidArgument("dataset segment count does not match the network input width");

  TrainResult result;
  const int layers = model.layers();
  std::vector<Eigen::MatrixXd> mw(layers), vw(layers);
  std::vector<Eigen::VectorXd> mb(layers), vb(layers);
  for (int l = 0; l < layers; ++l) {
    mw[l] = Eigen::MatrixXd::Zero(model.weights[l].rows(), model.weights[l].cols());
    vw[l] = mw[l];
    mb[l] = Eigen::VectorXd::Zero(model.biases[l].size());
    vb[l] = mb[l];
  }

  const std::size_t n = data.size();
  const std::size_t m = static_cast<std::size_t>(data.segments);
  const std::size_t bs = static_cast<std::size_t>(tcfg.batch_size);
  std::vector<std::size_t> order(n);
  long long step = 0;
  Eigen::MatrixXd x;
  std::vector<Normal> y;

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(mix_seed(tcfg.seed, 0x5EED0000ull + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_total = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t b = 0; b < n; b += bs, ++batch_index) {
      const std::size_t e = std::min(n, b + bs);
      const auto cols = static_cast<Eigen::Index>(e - b);
      x.resize(static_cast<Eigen::Index>(m), cols);
      y.resize(e - b);
      for (std::size_t i = b; i < e; ++i) {
        const auto src = data.feature(order[i]);
        std::copy(src.begin(), src.end(), x.col(static_cast<Eigen::Index>(i - b)).data());
        y[i - b] = data.targets[order[i]];
      }
      const std::uint64_t batch_seed =
          mix_seed(mix_seed(tcfg.seed, 0xD20Full), static_cast<std::uint64_t>(epoch) * 1000003ull + batch_index);
      const Gradients g = backward(model, x, y, batch_seed);
      epoch_total += g.loss * static_cast<double>(e - b);

      ++step;
      const double c1 = 1.0 - std::pow(tcfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(tcfg.beta2, static_cast<double>(step));
      const double lr = tcfg.learning_rate;
      for (int l = 0; l < layers; ++l) {
        mw[l] = tcfg.beta1 * mw[l] + (1.0 - tcfg.beta1) * g.weights[l];
        vw[l] = tcfg.beta2 * vw[l] + (1.0 - tcfg.beta2) * g.weights[l].cwiseAbs2();
        model.weights[l].array() -=
            lr * (mw[l].array() / c1) / ((vw[l].array() / c2).sqrt() + tcfg.epsilon);
        mb[l] = tcfg.beta1 * mb[l] + (1.0 - tcfg.beta1) * g.biases[l];
        vb[l] = tcfg.beta2 * vb[l] + (1.0 - tcfg.beta2) * g.biases[l].cwiseAbs2();
        model.biases[l].array() -=
            lr * (mb[l].array() / c1) / ((vb[l].array() / c2).sqrt() + tcfg.epsilon);
      }
    }
    const double train_loss = epoch_total / static_cast<double>(n);
    result.history.train_loss.push_back(train_loss);
    double val_loss = std::nan("");
    if (validation && validation->size() > 0) {
      val_loss = evaluate_loss(model, *validation);
      result.history.validation_loss.push_back(val_loss);
    }
    if (on_epoch) on_epoch(epoch, train_loss, val_loss);
  }
  result.model = std::move(model);
  return result;
}

// Runs the network on every masked pixel that saw at least one event.
inline NormalMap infer_map(const Model& model, const EventStream& stream, const Mask& mask,
                           int segments = kDefaultSegments, unsigned threads = 1) {
  if (segments != model.input_size())
    throw InvalidArgument("segment count does not match the network input width");
  const Dataset ds = build_dataset(stream, mask, segments);
  NormalMap out(stream.width, stream.height);
  const std::size_t m = static_cast<std::size_t>(segments);
  constexpr std::size_t kChunk = 512;
  const std::size_t chunks = (ds.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, threads, [&](std::size_t cb, std::size_t ce) {
    for (std::size_t chunk = cb; chunk < ce; ++chunk) {
      const std::size_t b = chunk * kChunk;
      const std::size_t e = std::min(ds.size(), b + kChunk);
      const Eigen::Map<const Eigen::MatrixXd> x(ds.features.data() + b * m,
                                                static_cast<Eigen::Index>(m),
                                                static_cast<Eigen::Index>(e - b));
      const auto c = detail::forward_batch(model, x, Mode::infer, 0);
      for (std::size_t i = b; i < e; ++i) {
        if (ds.event_counts[i] == 0) continue;
        const auto s = static_cast<Eigen::Index>(i - b);
        out.set(out.index(ds.pixels[i][0], ds.pixels[i][1]), {c.unit(0, s), c.unit(1, s), c.unit(2, s)});
      }
    }
  });
  return out;
}

// All pixels of the stream.
inline NormalMap infer_map(const Model& model, const EventStream& stream,
                           int segments = kDefaultSegments, unsigned threads = 1) {
  return infer_map(model, stream, Mask(stream.width, stream.height, 1), segments, threads);
}

}  // namespace evps
