#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradshield/data.hpp"
#include "gradshield/nn.hpp"

namespace gradshield {

enum class AttackKind { Fgsm, Pgd, Jsma };
enum class LabelSource { True, Predicted };

inline const char* attack_kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::Fgsm: return "fgsm";
    case AttackKind::Pgd: return "pgd";
    case AttackKind::Jsma: return "jsma";
  }
  return "?";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  if (s == "fgsm") return AttackKind::Fgsm;
  if (s == "pgd") return AttackKind::Pgd;
  if (s == "jsma") return AttackKind::Jsma;
  throw std::invalid_argument("unknown attack '" + s + "'");
}

/// Declarative attack budget. For FGSM `epsilon` is the step and the budget;
/// for PGD it is the per-iteration step (S/4 when unset) and `bound` is S.
struct AttackSpec {
  AttackKind kind = AttackKind::Fgsm;
  std::optional<double> epsilon;
  double bound = 0.3;
  std::size_t n_steps = 40;
  bool random_init = true;
  double gamma = 0.25;
  double theta = 1.0;
  std::optional<std::size_t> target_class;
  LabelSource label_source = LabelSource::True;
  std::uint64_t seed = 0;

  static AttackSpec fgsm(double eps) {
    AttackSpec s;
    s.kind = AttackKind::Fgsm;
    s.epsilon = eps;
    return s;
  }
  static AttackSpec pgd(double bound, std::size_t steps, std::optional<double> step = {}, bool random_init = true) {
    AttackSpec s;
    s.kind = AttackKind::Pgd;
    s.bound = bound;
    s.n_steps = steps;
    s.epsilon = step;
    s.random_init = random_init;
    return s;
  }
  static AttackSpec jsma(double gamma = 0.25, double theta = 1.0) {
    AttackSpec s;
    s.kind = AttackKind::Jsma;
    s.gamma = gamma;
    s.theta = theta;
    return s;
  }

  double fgsm_epsilon() const { return epsilon.value_or(0.3); }
  double pgd_step() const { return epsilon.value_or(bound / 4.0); }

  /// L∞ radius every output must respect.
  double linf_budget() const {
    switch (kind) {
      case AttackKind::Fgsm: return fgsm_epsilon();
      case AttackKind::Pgd: return bound;
      case AttackKind::Jsma: return std::abs(theta);
    }
    return 0.0;
  }

  void validate() const {
    if (epsilon && *epsilon < 0) throw std::invalid_argument("attack: epsilon must be >= 0");
    if (bound < 0) throw std::invalid_argument("attack: bound must be >= 0");
    if (n_steps < 1) throw std::invalid_argument("attack: n_steps must be >= 1");
    if (gamma < 0 || gamma > 1) throw std::invalid_argument("attack: gamma must be in [0,1]");
  }
};

struct AdversarialBatch {
  Tensor originals;
  Tensor perturbed;
  std::vector<bool> success;
  std::vector<double> linf;
  std::vector<std::size_t> features_modified;
};

/// ∇ₓ of the summed cross-entropy against `labels`, first-order tape only.
inline Tensor loss_input_gradient(const Model& model, const Tensor& x, const Tensor& labels) {
  Tape tape;
  auto b = bind(tape, model, false);
  Var in = tape.leaf(x, true);
  Var loss = cross_entropy(forward(model, b, in), labels);
  return tape.gradients(loss, Tensor::scalar(1.0), std::span<const Var>(&in, 1), false)[0].value();
}

namespace detail {

inline double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

inline Tensor attack_labels(const Model& model, const Tensor& x, const Tensor& labels, LabelSource src) {
  if (src == LabelSource::True) return labels;
  auto pred = predict(model, x);
  return one_hot(pred, model.arch.num_classes);
}

inline AdversarialBatch finish_untargeted(const Model& model, const Tensor& x, Tensor adv, const Tensor& labels) {
  AdversarialBatch out;
  auto truth = argmax_rows(labels);
  auto pred = predict(model, adv);
  std::size_t n = x.dim(0), d = x.size() / std::max<std::size_t>(n, 1);
  out.success.resize(n);
  out.linf.resize(n);
  out.features_modified.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.success[i] = pred[i] != truth[i];
    double m = 0.0;
    std::size_t changed = 0;
    for (std::size_t j = 0; j < d; ++j) {
      double diff = std::abs(adv[i * d + j] - x[i * d + j]);
      m = std::max(m, diff);
      changed += diff > 0;
    }
    out.linf[i] = m;
    out.features_modified[i] = changed;
  }
  out.originals = x;
  out.perturbed = std::move(adv);
  return out;
}

}  // namespace detail

/// x_adv = clip₀₁(x + ε·sign(∇ₓ H(y, ŷ))).
inline AdversarialBatch fgsm(const Model& model, const Batch& batch, const AttackSpec& spec) {
  spec.validate();
  const Tensor& x = batch.inputs;
  Tensor y = detail::attack_labels(model, x, batch.labels, spec.label_source);
  Tensor g = loss_input_gradient(model, x, y);
  double eps = spec.fgsm_epsilon();
  Tensor adv(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) adv[i] = std::clamp(x[i] + eps * detail::sign(g[i]), 0.0, 1.0);
  return detail::finish_untargeted(model, x, std::move(adv), batch.labels);
}

/// Iterated signed-gradient steps projected onto the L∞ ball of radius S and [0,1].
inline AdversarialBatch pgd(const Model& model, const Batch& batch, const AttackSpec& spec) {
  spec.validate();
  const Tensor& x = batch.inputs;
  Tensor y = detail::attack_labels(model, x, batch.labels, spec.label_source);
  const double s = spec.bound, step = spec.pgd_step();
  Tensor cur = x;
  if (spec.random_init) {
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> u(-s, s);
    for (std::size_t i = 0; i < x.size(); ++i) cur[i] = std::clamp(x[i] + u(rng), 0.0, 1.0);
  }
  for (std::size_t t = 0; t < spec.n_steps; ++t) {
    Tensor g = loss_input_gradient(model, cur, y);
    for (std::size_t i = 0; i < x.size(); ++i) {
      double v = std::clamp(cur[i] + step * detail::sign(g[i]), x[i] - s, x[i] + s);
      cur[i] = std::clamp(v, 0.0, 1.0);
    }
  }
  return detail::finish_untargeted(model, x, std::move(cur), batch.labels);
}

/// Full K×D logit Jacobian of a single example (one forward, K reverse sweeps).
inline Tensor logit_jacobian(const Model& model, const Tensor& x_single) {
  Shape batched{1};
  batched.insert(batched.end(), model.arch.input_shape.begin(), model.arch.input_shape.end());
  Tape tape;
  auto b = bind(tape, model, false);
  Var in = tape.leaf(x_single.reshaped(batched), true);
  Var z = forward(model, b, in);
  std::size_t k = model.arch.num_classes, d = x_single.size();
  Tensor jac({k, d});
  for (std::size_t row = 0; row < k; ++row) {
    Tensor seed(z.shape());
    seed[row] = 1.0;
    Var g = tape.gradients(z, seed, std::span<const Var>(&in, 1), false)[0];
    std::copy(g.value().data().begin(), g.value().data().end(),
              jac.data().begin() + static_cast<std::ptrdiff_t>(row * d));
  }
  return jac;
}

/// JSMA saliency of moving feature set S in the direction of theta:
/// α·|β| when α > 0 and β < 0 (after orienting by sign θ), otherwise 0.
inline double jsma_score(double alpha, double beta, double theta) {
  double dir = theta >= 0 ? 1.0 : -1.0;
  double a = alpha * dir, b = beta * dir;
  return (a > 0 && b < 0) ? a * std::abs(b) : 0.0;
}

struct JsmaResult {
  Tensor perturbed;
  bool success = false;
  std::size_t modified = 0;
};

/// Greedy targeted saliency attack on a single example.
inline JsmaResult jsma_single(const Model& model, const Tensor& x, std::size_t target, double gamma, double theta) {
  const std::size_t d = x.size();
  const std::size_t budget = static_cast<std::size_t>(std::floor(gamma * static_cast<double>(d) + 1e-12));
  Shape batched{1};
  batched.insert(batched.end(), model.arch.input_shape.begin(), model.arch.input_shape.end());
  JsmaResult r{x, false, 0};
  std::vector<char> used(d, 0);
  auto eligible = [&](std::size_t j) {
    if (used[j]) return false;
    return theta >= 0 ? r.perturbed[j] < 1.0 : r.perturbed[j] > 0.0;
  };
  auto predicted = [&] { return predict(model, r.perturbed.reshaped(batched))[0]; };
  while (true) {
    if (predicted() == target) {
      r.success = true;
      break;
    }
    if (r.modified >= budget) break;
    Tensor jac = logit_jacobian(model, r.perturbed);
    std::size_t k = model.arch.num_classes;
    std::vector<double> alpha(d), beta(d);
    for (std::size_t j = 0; j < d; ++j) {
      alpha[j] = jac[target * d + j];
      for (std::size_t c = 0; c < k; ++c)
        if (c != target) beta[j] += jac[c * d + j];
    }
    double best = 0.0;
    std::size_t p = d, q = d;
    for (std::size_t j = 0; j < d; ++j) {
      if (!eligible(j)) continue;
      double s = jsma_score(alpha[j], beta[j], theta);
      if (s > best) best = s, p = j;
    }
    if (p == d && r.modified + 2 <= budget) {
      for (std::size_t i = 0; i < d; ++i) {
        if (!eligible(i)) continue;
        for (std::size_t j = i + 1; j < d; ++j) {
          if (!eligible(j)) continue;
          double s = jsma_score(alpha[i] + alpha[j], beta[i] + beta[j], theta);
          if (s > best) best = s, p = i, q = j;
        }
      }
    }
    if (p == d) break;
    for (std::size_t j : {p, q}) {
      if (j == d) continue;
      r.perturbed[j] = std::clamp(r.perturbed[j] + theta, 0.0, 1.0);
      used[j] = 1;
      ++r.modified;
    }
  }
  return r;
}

/// Targeted JSMA per example. Without a target class, each example targets (prediction + 1) mod K.
inline AdversarialBatch jsma(const Model& model, const Batch& batch, const AttackSpec& spec) {
  spec.validate();
  const Tensor& x = batch.inputs;
  const std::size_t n = x.dim(0), k = model.arch.num_classes;
  auto pred = predict(model, x);
  AdversarialBatch out;
  out.originals = x;
  out.perturbed = Tensor(x.shape());
  out.success.resize(n);
  out.linf.resize(n);
  out.features_modified.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t target = spec.target_class.value_or((pred[i] + 1) % k);
    if (target >= k) throw std::invalid_argument("jsma: target class out of range");
    Tensor xi = x.slice(i);
    auto r = jsma_single(model, xi, target, spec.gamma, spec.theta);
    std::copy(r.perturbed.data().begin(), r.perturbed.data().end(),
              out.perturbed.data().begin() + static_cast<std::ptrdiff_t>(i * xi.size()));
    out.success[i] = r.success;
    out.features_modified[i] = r.modified;
    out.linf[i] = max_abs_diff(r.perturbed, xi);
  }
  return out;
}

inline AdversarialBatch run_attack(const Model& model, const Batch& batch, const AttackSpec& spec) {
  switch (spec.kind) {
    case AttackKind::Fgsm: return fgsm(model, batch, spec);
    case AttackKind::Pgd: return pgd(model, batch, spec);
    case AttackKind::Jsma: return jsma(model, batch, spec);
  }
  throw std::logic_error("unreachable");
}

}  // namespace gradshield
