#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradshield/autodiff.hpp"

namespace gradshield {

enum class LayerKind { Dense, Conv2d, Relu, LeakyRelu, Tanh, Flatten, Normalize };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::LeakyRelu: return "leaky_relu";
    case LayerKind::Tanh: return "tanh";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Normalize: return "normalize";
  }
  return "?";
}

inline LayerKind parse_layer_kind(const std::string& s) {
  for (auto k : {LayerKind::Dense, LayerKind::Conv2d, LayerKind::Relu, LayerKind::LeakyRelu, LayerKind::Tanh,
                 LayerKind::Flatten, LayerKind::Normalize}) {
    if (s == layer_kind_name(k)) return k;
  }
  throw std::invalid_argument("unknown layer kind '" + s + "'");
}

inline constexpr double kLeakySlope = 0.01;

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  // dense: in -> out; conv2d: in channels -> out channels
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  // normalize: per-channel constants, not trainable
  std::vector<double> mean;
  std::vector<double> std;

  bool has_params() const { return kind == LayerKind::Dense || kind == LayerKind::Conv2d; }

  static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::Dense, in, out}; }
  static LayerSpec conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                        std::size_t padding = 0) {
    return {LayerKind::Conv2d, in, out, kernel, stride, padding};
  }
  static LayerSpec relu() { return {LayerKind::Relu}; }
  static LayerSpec leaky_relu() { return {LayerKind::LeakyRelu}; }
  static LayerSpec tanh() { return {LayerKind::Tanh}; }
  static LayerSpec flatten() { return {LayerKind::Flatten}; }
  static LayerSpec normalize(std::vector<double> mean, std::vector<double> std) {
    LayerSpec s{LayerKind::Normalize};
    s.mean = std::move(mean);
    s.std = std::move(std);
    return s;
  }

  bool operator==(const LayerSpec&) const = default;
};

/// Fixed network description: per-example input shape, layer stack, class count.
struct Architecture {
  std::string id;
  Shape input_shape;
  std::vector<LayerSpec> layers;
  std::size_t num_classes = 0;

  std::size_t input_size() const { return shape_size(input_shape); }
  bool operator==(const Architecture&) const = default;
};

inline std::string param_name(std::size_t layer, const char* which) {
  return "layer" + std::to_string(layer) + "." + which;
}

/// Per-example output shape of a layer, or ShapeError if it does not chain.
inline Shape layer_output_shape(const LayerSpec& l, const Shape& in, std::size_t index) {
  auto fail = [&](const std::string& why) {
    return ShapeError("layer " + std::to_string(index) + " (" + layer_kind_name(l.kind) + "): " + why +
                      ", input " + shape_str(in));
  };
  switch (l.kind) {
    case LayerKind::Dense:
      if (in.size() != 1 || in[0] != l.in) throw fail("expects [" + std::to_string(l.in) + "]");
      return {l.out};
    case LayerKind::Conv2d: {
      if (in.size() != 3 || in[0] != l.in) throw fail("expects [" + std::to_string(l.in) + ",H,W]");
      if (l.kernel == 0 || l.stride == 0) throw fail("kernel and stride must be positive");
      ConvGeometry g{l.stride, l.padding};
      if (in[1] + 2 * l.padding < l.kernel || in[2] + 2 * l.padding < l.kernel) throw fail("kernel exceeds input");
      return {l.out, kernels::conv_out(in[1], l.kernel, g), kernels::conv_out(in[2], l.kernel, g)};
    }
    case LayerKind::Flatten: return {shape_size(in)};
    case LayerKind::Normalize:
      if (in.empty() || l.mean.size() != in[0] || l.std.size() != in[0]) throw fail("needs one mean/std per channel");
      for (double s : l.std)
        if (!(s > 0)) throw fail("std must be positive");
      return in;
    default: return in;
  }
}

/// Per-example shapes: element 0 is the input, element i+1 the output of layer i.
inline std::vector<Shape> architecture_shapes(const Architecture& arch) {
  std::vector<Shape> shapes{arch.input_shape};
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    shapes.push_back(layer_output_shape(arch.layers[i], shapes.back(), i));
  }
  if (shapes.back() != Shape{arch.num_classes}) {
    throw ShapeError("architecture " + arch.id + ": output " + shape_str(shapes.back()) + " is not [" +
                     std::to_string(arch.num_classes) + "]");
  }
  return shapes;
}

struct Model {
  Architecture arch;
  std::map<std::string, Tensor> params;
  std::uint64_t seed = 0;
};

/// Weights ~ U(-a, a) with a = sqrt(3 / fan_in) (variance 1/fan_in); biases zero.
inline Model init_model(const Architecture& arch, std::uint64_t seed) {
  architecture_shapes(arch);
  Model m{arch, {}, seed};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    if (!l.has_params()) continue;
    Shape ws = l.kind == LayerKind::Dense ? Shape{l.in, l.out} : Shape{l.out, l.in, l.kernel, l.kernel};
    std::size_t fan_in = l.kind == LayerKind::Dense ? l.in : l.in * l.kernel * l.kernel;
    double a = std::sqrt(3.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-a, a);
    Tensor w(ws);
    for (auto& v : w.data()) v = dist(rng);
    m.params.emplace(param_name(i, "weight"), std::move(w));
    m.params.emplace(param_name(i, "bias"), Tensor({l.out}));
  }
  return m;
}

/// Parameter leaves of a model on one tape.
struct ModelBinding {
  std::map<std::string, Var> params;
};

/// Places every parameter on `tape` as a leaf named prefix + parameter name.
inline ModelBinding bind(Tape& tape, const Model& model, bool trainable, const std::string& prefix = {}) {
  ModelBinding b;
  for (const auto& [name, t] : model.params) b.params.emplace(name, tape.leaf(t, trainable, trainable ? prefix + name : ""));
  return b;
}

/// Runs the layer stack on a batch [N, input_shape...]. When `activations` is
/// given it receives the input followed by every layer output.
inline Var forward(const Model& model, const ModelBinding& binding, Var x, std::vector<Var>* activations = nullptr) {
  const auto& arch = model.arch;
  Shape expect = arch.input_shape;
  if (x.shape().size() != expect.size() + 1 || !std::equal(expect.begin(), expect.end(), x.shape().begin() + 1)) {
    throw ShapeError("forward: input " + shape_str(x.shape()) + " does not match model input [N," +
                     shape_str(expect).substr(1));
  }
  const std::size_t n = x.shape()[0];
  if (activations) activations->push_back(x);
  Var h = x;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    switch (l.kind) {
      case LayerKind::Dense:
        h = bias_add(matmul(h, binding.params.at(param_name(i, "weight"))), binding.params.at(param_name(i, "bias")));
        break;
      case LayerKind::Conv2d:
        h = bias_add(conv2d(h, binding.params.at(param_name(i, "weight")), ConvGeometry{l.stride, l.padding}),
                     binding.params.at(param_name(i, "bias")));
        break;
      case LayerKind::Relu: h = relu(h); break;
      case LayerKind::LeakyRelu: h = leaky_relu(h, kLeakySlope); break;
      case LayerKind::Tanh: h = tanh(h); break;
      case LayerKind::Flatten: h = reshape(h, {n, h.value().size() / std::max<std::size_t>(n, 1)}); break;
      case LayerKind::Normalize: {
        const Shape& s = h.shape();
        std::size_t c = s[1], inner = h.value().size() / std::max<std::size_t>(n * c, 1);
        Tensor mul(s), off(s);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t j = 0; j < inner; ++j) {
              mul[(b * c + ch) * inner + j] = 1.0 / l.std[ch];
              off[(b * c + ch) * inner + j] = -l.mean[ch] / l.std[ch];
            }
        h = add_const(mul_const(h, std::move(mul)), std::move(off));
        break;
      }
    }
    if (activations) activations->push_back(h);
  }
  return h;
}

/// Pre-softmax scores for a batch, evaluated on a throwaway tape.
inline Tensor logits(const Model& model, const Tensor& x) {
  Tape tape;
  Tape::NoGradGuard guard(tape);
  auto b = bind(tape, model, false);
  return forward(model, b, tape.constant(x)).value();
}

inline std::vector<std::size_t> predict(const Model& model, const Tensor& x) { return argmax_rows(logits(model, x)); }

/// Temperature softmax over the last axis of a [K] or [N,K] tensor.
inline Tensor softmax_T(const Tensor& z, double temperature) {
  if (!(temperature > 0)) throw std::invalid_argument("softmax_T: temperature must be positive");
  if (z.rank() != 1 && z.rank() != 2) throw ShapeError("softmax_T: expects [K] or [N,K], got " + shape_str(z.shape()));
  std::size_t k = z.shape().back(), n = z.size() / std::max<std::size_t>(k, 1);
  Tensor p(z.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = &z.data()[i * k];
    double m = *std::max_element(r, r + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += (p[i * k + j] = std::exp((r[j] - m) / temperature));
    for (std::size_t j = 0; j < k; ++j) p[i * k + j] /= s;
  }
  return p;
}

inline constexpr double kProbClamp = 1e-12;

/// Σₙ Σₖ −Yₙₖ log Ŷₙₖ with predictions clamped to [1e-12, 1].
inline double cross_entropy(const Tensor& pred, const Tensor& labels) {
  kernels::require_same("cross_entropy", pred, labels);
  double h = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0) throw std::invalid_argument("cross_entropy: negative probability");
    if (labels[i] != 0.0) h -= labels[i] * std::log(std::clamp(pred[i], kProbClamp, 1.0));
  }
  return h;
}

/// Taped Σₙ Σₖ −Yₙₖ log softmax(z/T)ₙₖ; labels may be soft.
inline Var cross_entropy(Var logit_batch, const Tensor& labels, double temperature = 1.0) {
  Var z = temperature == 1.0 ? logit_batch : scale(logit_batch, 1.0 / temperature);
  return neg(sum(mul_const(log_softmax(z), labels)));
}

inline Tensor jacobian_bruteforce(const Model& model, const Tensor& x) {
  Shape batched{1};
  batched.insert(batched.end(), model.arch.input_shape.begin(), model.arch.input_shape.end());
  Tensor xb = x.reshaped(batched);
  return jacobian_bruteforce(
      [&model](Tape& tape, Var in) { return forward(model, bind(tape, model, false), in); }, xb);
}

namespace architectures {

inline constexpr double kMnistMean = 0.1307;
inline constexpr double kMnistStd = 0.3081;

/// normalize - conv(1→8,k5,s2) - ReLU - conv(8→16,k5,s2) - ReLU - flatten - dense(10)
inline Architecture mnist_cnn() {
  return {"mnist_cnn",
          {1, 28, 28},
          {LayerSpec::normalize({kMnistMean}, {kMnistStd}), LayerSpec::conv(1, 8, 5, 2), LayerSpec::relu(),
           LayerSpec::conv(8, 16, 5, 2), LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(16 * 4 * 4, 10)},
          10};
}

/// dense(2→32) - ReLU - dense(32→K)
inline Architecture blobs_mlp(std::size_t num_classes) {
  return {"blobs_mlp", {2}, {LayerSpec::dense(2, 32), LayerSpec::relu(), LayerSpec::dense(32, num_classes)},
          num_classes};
}

inline Architecture by_id(const std::string& id, std::size_t num_classes) {
  if (id == "mnist_cnn") return mnist_cnn();
  if (id == "blobs_mlp") return blobs_mlp(num_classes);
  throw std::invalid_argument("unknown architecture '" + id + "'");
}

}  // namespace architectures

}  // namespace gradshield
