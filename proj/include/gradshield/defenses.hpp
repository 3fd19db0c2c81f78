#pragma once

// Training objectives: adversarial training, defensive distillation, input
// gradient regularization, the stochastic Jacobian-norm term, perturbation
// saliency with its aligning network, and the combined selective objective.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradshield/attacks.hpp"
#include "gradshield/data.hpp"
#include "gradshield/nn.hpp"
#include "gradshield/optim.hpp"

namespace gradshield {

enum class DefenseKind { Vanilla, AdvTrain, Distill, GradReg, JSigr };
enum class SigmaMode { MatchInputVariance, Fixed };

inline const char* defense_kind_name(DefenseKind k) {
  switch (k) {
    case DefenseKind::Vanilla: return "vanilla";
    case DefenseKind::AdvTrain: return "adv_train";
    case DefenseKind::Distill: return "distill";
    case DefenseKind::GradReg: return "grad_reg";
    case DefenseKind::JSigr: return "j_sigr";
  }
  return "?";
}

inline DefenseKind parse_defense_kind(const std::string& s) {
  for (auto k : {DefenseKind::Vanilla, DefenseKind::AdvTrain, DefenseKind::Distill, DefenseKind::GradReg,
                 DefenseKind::JSigr}) {
    if (s == defense_kind_name(k)) return k;
  }
  throw std::invalid_argument("unknown defense '" + s + "'");
}

struct DefenseConfig {
  DefenseKind kind = DefenseKind::Vanilla;
  double lambda_m = 0.5;
  double lambda_j = 0.5;
  double epsilon = 0.3;
  SigmaMode sigma_mode = SigmaMode::MatchInputVariance;
  double sigma = 1.0;                   // used when sigma_mode == Fixed
  double beta_quantile = 0.8;           // quantile of |M| per example
  std::optional<double> beta_absolute;  // overrides the quantile rule
  double temperature = 50.0;
  std::size_t n_probes = 1;
  // The indicator is piecewise constant, so its derivative is zero almost
  // everywhere; the flag is accepted for completeness and both settings
  // yield the same parameter gradient.
  bool mask_stop_gradient = true;
  bool gan_updates_classifier = false;

  void validate() const {
    if (lambda_m < 0 || lambda_j < 0) throw std::invalid_argument("defense: lambda weights must be >= 0");
    if (epsilon < 0) throw std::invalid_argument("defense: epsilon must be >= 0");
    if (n_probes < 1) throw std::invalid_argument("defense: n_probes must be >= 1");
    if (!(temperature > 0)) throw std::invalid_argument("defense: temperature must be > 0");
    if (beta_quantile < 0 || beta_quantile > 1) throw std::invalid_argument("defense: beta quantile must be in [0,1]");
    if (sigma_mode == SigmaMode::Fixed && sigma < 0) throw std::invalid_argument("defense: sigma must be >= 0");
  }
};

/// Per-example means of each objective term. total == ce + λ_m·grad_penalty
/// + λ_j·jacobian for the combined objective, (ce + adv_ce)/2 for AT.
struct LossTerms {
  double ce = 0.0;
  double adv_ce = 0.0;
  double grad_penalty = 0.0;
  double jacobian = 0.0;
  double total = 0.0;
};

struct Objective {
  LossTerms terms;
  std::map<std::string, Tensor> grads;
};

namespace detail {

inline std::map<std::string, Tensor> param_grads(Tape& tape, const ModelBinding& b, Var total) {
  std::vector<Var> leaves;
  std::vector<std::string> names;
  for (const auto& [name, v] : b.params) {
    names.push_back(name);
    leaves.push_back(v);
  }
  auto g = tape.gradients(total, Tensor(total.shape(), 1.0), leaves, false);
  std::map<std::string, Tensor> out;
  for (std::size_t i = 0; i < names.size(); ++i) out.emplace(names[i], g[i].value());
  return out;
}

/// Differentiable ∇ₓ of the summed cross-entropy.
inline Var input_gradient_graph(Tape& tape, Var logit_batch, Var x, const Tensor& labels) {
  Var ce = cross_entropy(logit_batch, labels);
  return tape.gradients(ce, Tensor::scalar(1.0), std::span<const Var>(&x, 1), true)[0];
}

/// Σ ‖vᵀJ‖² for one probe matrix V [N,K], recorded differentiably.
inline Var probe_energy_graph(Tape& tape, Var logit_batch, Var x, const Tensor& probe) {
  Var proj = sum(mul_const(logit_batch, probe));
  Var u = tape.gradients(proj, Tensor::scalar(1.0), std::span<const Var>(&x, 1), true)[0];
  return sum(square(u));
}

}  // namespace detail

/// Gaussian probes in logit space: `count` matrices of shape [N,K].
inline std::vector<Tensor> draw_probes(std::size_t n, std::size_t k, std::size_t count, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<Tensor> out;
  for (std::size_t p = 0; p < count; ++p) {
    Tensor v({n, k});
    for (auto& e : v.data()) e = nd(rng);
    out.push_back(std::move(v));
  }
  return out;
}

/// Σₙ Σ_d (∂H/∂x_d)², H the summed cross-entropy of the batch.
inline double input_grad_penalty(const Model& model, const Batch& batch) {
  Tape tape;
  auto b = bind(tape, model, false);
  Var x = tape.leaf(batch.inputs, true);
  Var gx = detail::input_gradient_graph(tape, forward(model, b, x), x, batch.labels);
  return squared_norm(gx.value());
}

/// Σₙ Σ_d (mask_d · ∂H/∂x_d)² with a {0,1} mask shaped like the inputs.
inline double selective_grad_penalty(const Model& model, const Batch& batch, const Tensor& mask) {
  kernels::require_same("selective_grad_penalty", batch.inputs, mask);
  Tape tape;
  auto b = bind(tape, model, false);
  Var x = tape.leaf(batch.inputs, true);
  Var gx = detail::input_gradient_graph(tape, forward(model, b, x), x, batch.labels);
  return sum(square(mul_const(gx, mask))).value().item();
}

/// Probe average of Σₙ ‖vₙᵀ J(xₙ)‖² using the given probe matrices.
inline double jacobian_norm_estimate(const Model& model, const Tensor& x_batch, std::span<const Tensor> probes) {
  if (probes.empty()) throw std::invalid_argument("jacobian_norm_estimate: need at least one probe");
  Tape tape;
  auto b = bind(tape, model, false);
  Var x = tape.leaf(x_batch, true);
  Var z = forward(model, b, x);
  double acc = 0.0;
  // Value only: a first-order sweep per probe, nothing recorded.
  for (const auto& v : probes) acc += squared_norm(tape.gradients(z, v, std::span<const Var>(&x, 1), false)[0].value());
  return acc / static_cast<double>(probes.size());
}

/// Unbiased estimate of Σₙ ‖J(xₙ)‖²_F from `n_probes` Gaussian probes per example.
/// Accepts a single example (model input shape) or a batch.
inline double jacobian_norm_estimate(const Model& model, const Tensor& x, std::size_t n_probes, std::mt19937_64& rng) {
  if (n_probes < 1) throw std::invalid_argument("jacobian_norm_estimate: n_probes must be >= 1");
  Tensor xb = x;
  if (x.shape() == model.arch.input_shape) {
    Shape s{1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    xb = x.reshaped(s);
  }
  auto probes = draw_probes(xb.dim(0), model.arch.num_classes, n_probes, rng);
  return jacobian_norm_estimate(model, xb, probes);
}

/// Cross-entropy plus masked input-gradient penalty plus probe Jacobian energy,
/// all averaged over the batch. `mask` may be null (all ones).
inline Objective penalized_objective(const Model& model, const Batch& batch, double lambda_m, double lambda_j,
                                     const Tensor* mask, std::span<const Tensor> probes) {
  Tape tape;
  auto b = bind(tape, model, true);
  Var x = tape.leaf(batch.inputs, true);
  Var z = forward(model, b, x);
  Var ce = cross_entropy(z, batch.labels);
  Var gx = detail::input_gradient_graph(tape, z, x, batch.labels);
  Var pen = sum(square(mask ? mul_const(gx, *mask) : gx));
  Var total = add(ce, scale(pen, lambda_m));
  double jn_value = 0.0;
  if (!probes.empty()) {
    Var jn = detail::probe_energy_graph(tape, z, x, probes[0]);
    for (std::size_t p = 1; p < probes.size(); ++p) jn = add(jn, detail::probe_energy_graph(tape, z, x, probes[p]));
    jn = scale(jn, 1.0 / static_cast<double>(probes.size()));
    jn_value = jn.value().item();
    total = add(total, scale(jn, lambda_j));
  }
  const double n = static_cast<double>(batch.size());
  total = scale(total, 1.0 / n);
  Objective out;
  out.terms.ce = ce.value().item() / n;
  out.terms.grad_penalty = pen.value().item() / n;
  out.terms.jacobian = jn_value / n;
  out.terms.total = total.value().item();
  out.grads = detail::param_grads(tape, b, total);
  return out;
}

/// Mean cross-entropy at temperature T against (possibly soft) labels.
inline Objective cross_entropy_objective(const Model& model, const Batch& batch, double temperature = 1.0) {
  Tape tape;
  auto b = bind(tape, model, true);
  Var x = tape.constant(batch.inputs);
  Var total = scale(cross_entropy(forward(model, b, x), batch.labels, temperature), 1.0 / batch.size());
  Objective out;
  out.terms.ce = out.terms.total = total.value().item();
  out.grads = detail::param_grads(tape, b, total);
  return out;
}

// ---------------------------------------------------------------------------
// Adversarial training

/// (H_clean + H_adv)/2 with FGSM examples crafted against predicted labels.
/// The crafted batch is a constant: no gradient flows through crafting.
inline Objective adv_training_objective(const Model& model, const Batch& batch, double epsilon) {
  if (epsilon < 0) throw std::invalid_argument("adv_training: epsilon must be >= 0");
  AttackSpec spec = AttackSpec::fgsm(epsilon);
  spec.label_source = LabelSource::Predicted;
  Tensor adv = fgsm(model, batch, spec).perturbed;
  Tape tape;
  auto b = bind(tape, model, true);
  const double n = static_cast<double>(batch.size());
  Var ce = scale(cross_entropy(forward(model, b, tape.constant(batch.inputs)), batch.labels), 1.0 / n);
  Var ce_adv = scale(cross_entropy(forward(model, b, tape.constant(adv)), batch.labels), 1.0 / n);
  Var total = scale(add(ce, ce_adv), 0.5);
  Objective out;
  out.terms.ce = ce.value().item();
  out.terms.adv_ce = ce_adv.value().item();
  out.terms.total = total.value().item();
  out.grads = detail::param_grads(tape, b, total);
  return out;
}

inline double adv_training_loss(const Model& model, const Batch& batch, double epsilon) {
  return adv_training_objective(model, batch, epsilon).terms.total;
}

// ---------------------------------------------------------------------------
// Perturbation saliency and the aligning network

/// Per-channel 1×1 convolution followed by tanh: M = tanh(w_c·g + b_c).
struct Aligner {
  Tensor weight;
  Tensor bias;

  static Aligner identity(std::size_t channels) { return {Tensor({channels}, 1.0), Tensor({channels})}; }
  std::size_t channels() const { return weight.size(); }
};

inline Var aligner_forward(Var g, Var weight, Var bias) {
  if (g.shape().size() < 2 || g.shape()[1] != weight.value().size()) {
    throw ShapeError("aligner: input " + shape_str(g.shape()) + " does not have " +
                     std::to_string(weight.value().size()) + " channels");
  }
  return tanh(bias_add(mul(g, bias_expand(weight, g.shape())), bias));
}

inline Tensor apply_aligner(const Aligner& a, const Tensor& g) {
  Tape tape;
  Tape::NoGradGuard guard(tape);
  return aligner_forward(tape.constant(g), tape.constant(a.weight), tape.constant(a.bias)).value();
}

inline double input_std(const Tensor& x) {
  double mean = 0.0;
  for (double v : x.data()) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x.data()) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(x.size()));
}

/// ∇ₓ F^{k̂}(x) with k̂ the predicted class of each example.
inline Tensor top_logit_gradient(const Model& model, const Tensor& x, std::vector<std::size_t>* classes = nullptr) {
  Tape tape;
  auto b = bind(tape, model, false);
  Var in = tape.leaf(x, true);
  Var z = forward(model, b, in);
  auto top = argmax_rows(z.value());
  Tensor seed = one_hot(top, model.arch.num_classes);
  if (classes) *classes = top;
  return tape.gradients(z, seed, std::span<const Var>(&in, 1), false)[0].value();
}

struct SaliencyMap {
  Tensor values;          // aligner output, in (-1, 1)
  Tensor gradient;        // ∇ₓ F^{k̂} at the perturbed input
  Tensor perturbed;       // x + εz
  std::vector<std::size_t> classes;

  /// 1 where M_d ≤ β, else 0.
  Tensor mask_absolute(double beta) const {
    Tensor m(values.shape());
    for (std::size_t i = 0; i < values.size(); ++i) m[i] = values[i] <= beta ? 1.0 : 0.0;
    return m;
  }

  /// Per-example β: the q-quantile (linear interpolation) of |M| over that example.
  std::vector<double> quantile_thresholds(double q) const {
    std::size_t n = values.dim(0), d = values.size() / std::max<std::size_t>(n, 1);
    std::vector<double> out(n);
    std::vector<double> buf(d);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) buf[j] = std::abs(values[i * d + j]);
      std::sort(buf.begin(), buf.end());
      double pos = q * static_cast<double>(d - 1);
      auto lo = static_cast<std::size_t>(std::floor(pos));
      std::size_t hi = std::min(lo + 1, d - 1);
      out[i] = buf[lo] + (pos - static_cast<double>(lo)) * (buf[hi] - buf[lo]);
    }
    return out;
  }

  Tensor mask_quantile(double q) const {
    auto beta = quantile_thresholds(q);
    std::size_t n = values.dim(0), d = values.size() / std::max<std::size_t>(n, 1);
    Tensor m(values.shape());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) m[i * d + j] = values[i * d + j] <= beta[i] ? 1.0 : 0.0;
    return m;
  }

  Tensor mask(const DefenseConfig& c) const {
    return c.beta_absolute ? mask_absolute(*c.beta_absolute) : mask_quantile(c.beta_quantile);
  }
};

/// Gaussian noise z with σ = std of the batch inputs or a fixed σ.
inline Tensor sample_noise(const Tensor& x, SigmaMode mode, double sigma, std::mt19937_64& rng) {
  double s = mode == SigmaMode::MatchInputVariance ? input_std(x) : sigma;
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor z(x.shape());
  for (auto& v : z.data()) v = s * nd(rng);
  return z;
}

/// M = aligner(∇ₓ F^{k̂}(x + εz)).
inline SaliencyMap perturbation_saliency(const Model& model, const Tensor& x, double epsilon, SigmaMode mode,
                                         double sigma, const Aligner& aligner, std::mt19937_64& rng) {
  Tensor z = sample_noise(x, mode, sigma, rng);
  SaliencyMap out;
  out.perturbed = x;
  for (std::size_t i = 0; i < x.size(); ++i) out.perturbed[i] += epsilon * z[i];
  out.gradient = top_logit_gradient(model, out.perturbed, &out.classes);
  out.values = apply_aligner(aligner, out.gradient);
  return out;
}

// ---------------------------------------------------------------------------
// Combined selective objective

/// Cross-entropy + λ_m·selective penalty + λ_j·Jacobian energy, batch-averaged.
/// Draws the saliency noise and the probes from `rng`.
inline Objective jsigr_objective(const Model& model, const Batch& batch, const DefenseConfig& config,
                                 const Aligner& aligner, std::mt19937_64& rng) {
  config.validate();
  auto sal = perturbation_saliency(model, batch.inputs, config.epsilon, config.sigma_mode, config.sigma, aligner, rng);
  Tensor mask = sal.mask(config);
  auto probes = draw_probes(batch.size(), model.arch.num_classes, config.n_probes, rng);
  return penalized_objective(model, batch, config.lambda_m, config.lambda_j, &mask, probes);
}

inline LossTerms jsigr_loss(const Model& model, const Batch& batch, const DefenseConfig& config,
                            const Aligner& aligner, std::mt19937_64& rng) {
  if (config.kind != DefenseKind::JSigr) throw std::invalid_argument("jsigr_loss: config kind is not j_sigr");
  return jsigr_objective(model, batch, config, aligner, rng).terms;
}

// ---------------------------------------------------------------------------
// GAN training of the aligner

/// Two conv layers (leaky ReLU) and a scalar dense head for image inputs;
/// two dense layers and a head for flat inputs.
inline Architecture discriminator_architecture(const Shape& input_shape) {
  Architecture a;
  a.id = "discriminator";
  a.input_shape = input_shape;
  a.num_classes = 1;
  if (input_shape.size() == 3) {
    std::size_t c = input_shape[0], h = input_shape[1];
    std::size_t k = h >= 20 ? 5 : 3, s = h >= 20 ? 2 : 1;
    a.layers = {LayerSpec::conv(c, 8, k, s), LayerSpec::leaky_relu(), LayerSpec::conv(8, 16, k, s),
                LayerSpec::leaky_relu(), LayerSpec::flatten()};
    Shape cur = input_shape;
    for (std::size_t i = 0; i < a.layers.size(); ++i) cur = layer_output_shape(a.layers[i], cur, i);
    a.layers.push_back(LayerSpec::dense(cur[0], 1));
  } else {
    std::size_t d = shape_size(input_shape);
    a.layers = {LayerSpec::dense(d, 16), LayerSpec::leaky_relu(), LayerSpec::dense(16, 16), LayerSpec::leaky_relu(),
                LayerSpec::dense(16, 1)};
  }
  return a;
}

/// Discriminator with a zero-initialized head, so it starts at D(·) = 0.5.
inline Model init_discriminator(const Shape& input_shape, std::uint64_t seed) {
  Model d = init_model(discriminator_architecture(input_shape), seed);
  auto& head = d.params.at(param_name(d.arch.layers.size() - 1, "weight"));
  std::fill(head.data().begin(), head.data().end(), 0.0);
  return d;
}

/// Mean −log D(real) − log(1 − D(fake)) with D = sigmoid(score).
inline double discriminator_loss(const Model& disc, const Tensor& real, const Tensor& fake) {
  Tensor r = logits(disc, real), f = logits(disc, fake);
  double lr = 0.0, lf = 0.0;
  for (double v : r.data()) lr += kernels::softplus(-v);
  for (double v : f.data()) lf += kernels::softplus(v);
  return lr / static_cast<double>(r.size()) + lf / static_cast<double>(f.size());
}

struct GanOptions {
  double aligner_lr = 0.05;
  double disc_lr = 0.05;
  double classifier_lr = 0.0;  // used only when the classifier receives GAN gradient
};

struct GanStepResult {
  double aligner_loss = 0.0;
  double disc_loss = 0.0;
  double disc_accuracy = 0.0;  // before the update, on real and fake halves
};

/// One alternating non-saturating GAN step: the discriminator separates real
/// images from aligned gradients, then the aligner is updated to fool it.
/// With `classifier` non-null the classifier also receives the aligner's
/// generator gradient (through a differentiable input-gradient sweep).
inline GanStepResult train_aligner_step(Aligner& aligner, Model& disc, const Model& model, const Batch& batch,
                                        double epsilon, SigmaMode mode, double sigma, std::mt19937_64& rng,
                                        const GanOptions& opt = {}, Model* classifier = nullptr) {
  GanStepResult res;
  Tensor z = sample_noise(batch.inputs, mode, sigma, rng);
  Tensor x_hat = batch.inputs;
  for (std::size_t i = 0; i < x_hat.size(); ++i) x_hat[i] += epsilon * z[i];
  Tensor g = top_logit_gradient(model, x_hat);
  Tensor fake = apply_aligner(aligner, g);
  const double n = static_cast<double>(batch.size());

  {  // discriminator
    Tape tape;
    auto b = bind(tape, disc, true);
    Var dr = forward(disc, b, tape.constant(batch.inputs));
    Var df = forward(disc, b, tape.constant(fake));
    std::size_t correct = 0;
    for (double v : dr.value().data()) correct += v > 0;
    for (double v : df.value().data()) correct += v < 0;
    res.disc_accuracy = static_cast<double>(correct) / (2.0 * n);
    Var loss = scale(add(sum(softplus(neg(dr))), sum(softplus(df))), 1.0 / n);
    res.disc_loss = loss.value().item();
    auto grads = detail::param_grads(tape, b, loss);
    for (auto& [name, p] : disc.params) {
      const Tensor& gr = grads.at(name);
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= opt.disc_lr * gr[i];
    }
  }
  {  // aligner (and optionally classifier)
    Tape tape;
    auto db = bind(tape, disc, false);
    Var w = tape.leaf(aligner.weight, true);
    Var bias = tape.leaf(aligner.bias, true);
    Var grad_in;
    ModelBinding cb;
    if (classifier) {
      cb = bind(tape, *classifier, true);
      Var in = tape.leaf(x_hat, true);
      Var zc = forward(*classifier, cb, in);
      Tensor seed = one_hot(argmax_rows(zc.value()), classifier->arch.num_classes);
      grad_in = tape.gradients(sum(mul_const(zc, seed)), Tensor::scalar(1.0), std::span<const Var>(&in, 1), true)[0];
    } else {
      grad_in = tape.constant(g);
    }
    Var df = forward(disc, db, aligner_forward(grad_in, w, bias));
    Var loss = scale(sum(softplus(neg(df))), 1.0 / n);
    res.aligner_loss = loss.value().item();
    std::vector<Var> wrt{w, bias};
    for (const auto& [name, v] : cb.params) wrt.push_back(v);
    auto grads = tape.gradients(loss, Tensor::scalar(1.0), wrt, false);
    for (std::size_t i = 0; i < aligner.weight.size(); ++i) aligner.weight[i] -= opt.aligner_lr * grads[0].value()[i];
    for (std::size_t i = 0; i < aligner.bias.size(); ++i) aligner.bias[i] -= opt.aligner_lr * grads[1].value()[i];
    if (classifier) {
      std::size_t k = 2;
      for (auto& [name, p] : classifier->params) {
        const Tensor& gr = grads[k++].value();
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= opt.classifier_lr * gr[i];
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Defensive distillation

struct DistillOptions {
  std::uint64_t seed = 1;
  std::uint64_t shuffle_seed = 2;
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 32;
};

struct DistillResult {
  Model teacher;
  Model student;
  Tensor soft_labels;                      // teacher softmax_T on the training inputs
  std::vector<double> teacher_epoch_loss;  // mean CE_T per epoch
  std::vector<double> student_epoch_loss;
};

namespace detail {
inline std::vector<double> fit_temperature(Model& model, const Dataset& data, double temperature, std::size_t epochs,
                                           const DistillOptions& opt) {
  SgdMomentum sgd(opt.lr, opt.momentum);
  std::vector<double> history;
  for (std::size_t e = 0; e < epochs; ++e) {
    double acc = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : batches(data, {std::min(opt.batch_size, data.size()), opt.shuffle_seed, e})) {
      auto obj = cross_entropy_objective(model, batch, temperature);
      acc += obj.terms.total * static_cast<double>(batch.size());
      seen += batch.size();
      sgd.step(model.params, obj.grads);
    }
    history.push_back(acc / static_cast<double>(seen));
  }
  return history;
}
}  // namespace detail

/// Teacher fit on one-hot labels at temperature T; student fit on the
/// teacher's softmax_T outputs at the same temperature.
inline DistillResult distill_train(const Dataset& data, const Architecture& arch, double temperature,
                                   std::size_t epochs, const DistillOptions& opt = {}) {
  if (!(temperature > 0)) throw std::invalid_argument("distill_train: temperature must be > 0");
  DistillResult r;
  r.teacher = init_model(arch, opt.seed);
  r.teacher_epoch_loss = detail::fit_temperature(r.teacher, data, temperature, epochs, opt);
  r.soft_labels = softmax_T(logits(r.teacher, data.inputs), temperature);
  Dataset soft{data.inputs, r.soft_labels, data.name + "[soft]", data.provenance};
  r.student = init_model(arch, opt.seed + 1);
  r.student_epoch_loss = detail::fit_temperature(r.student, soft, temperature, epochs, opt);
  return r;
}

}  // namespace gradshield
