#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gradshield/attacks.hpp"
#include "gradshield/data.hpp"
#include "gradshield/defenses.hpp"
#include "gradshield/nn.hpp"

namespace gradshield {

/// First-order distance-to-boundary record for one example.
struct RobustnessRecord {
  std::size_t id = 0;
  std::size_t clean_class = 0;  // i*
  std::size_t runner_up = 0;    // j* (minimizer)
  double rho = 0.0;             // +inf when degenerate
  double alignment = 0.0;       // <x, g>
  double gradient_norm = 0.0;   // ‖g‖, g = ∇ₓ(F^{i*} − F^{j*})
  double alignment_ratio = 0.0; // α / ‖g‖, logged only
  double prediction_gap = 0.0;  // ‖F(x) − F(x + εz)‖
  bool degenerate = false;
};

/// ρ(x) = min over j ≠ i* of (F^{i*} − F^j) / ‖∇ₓ(F^{i*} − F^j)‖, exact over all classes.
/// With gap_epsilon > 0 and an rng, also records the prediction gap at x + εz (σ matched to x).
inline RobustnessRecord linearized_robustness(const Model& model, const Tensor& x, std::size_t id = 0,
                                              double gap_epsilon = 0.0, std::mt19937_64* rng = nullptr) {
  const std::size_t k = model.arch.num_classes;
  if (k < 2) throw std::invalid_argument("linearized_robustness: need at least 2 classes");
  Shape batched{1};
  batched.insert(batched.end(), model.arch.input_shape.begin(), model.arch.input_shape.end());
  Tensor xb = x.reshaped(batched);
  Tape tape;
  auto b = bind(tape, model, false);
  Var in = tape.leaf(xb, true);
  Var z = forward(model, b, in);
  const Tensor& zv = z.value();
  RobustnessRecord r;
  r.id = id;
  r.clean_class = argmax_rows(zv)[0];
  r.rho = std::numeric_limits<double>::infinity();
  r.degenerate = true;
  Tensor best_g;
  for (std::size_t j = 0; j < k; ++j) {
    if (j == r.clean_class) continue;
    Tensor seed(zv.shape());
    seed[r.clean_class] = 1.0;
    seed[j] = -1.0;
    Tensor g = tape.gradients(z, seed, std::span<const Var>(&in, 1), false)[0].value();
    double norm = std::sqrt(squared_norm(g));
    if (norm == 0.0) continue;
    double ratio = (zv[r.clean_class] - zv[j]) / norm;
    if (r.degenerate || ratio < r.rho) {
      r.rho = ratio;
      r.runner_up = j;
      r.gradient_norm = norm;
      r.degenerate = false;
      best_g = std::move(g);
    }
  }
  if (!r.degenerate) {
    for (std::size_t i = 0; i < xb.size(); ++i) r.alignment += xb[i] * best_g[i];
    r.alignment_ratio = r.alignment / r.gradient_norm;
  }
  if (gap_epsilon > 0 && rng) {
    Tensor noise = sample_noise(xb, SigmaMode::MatchInputVariance, 0.0, *rng);
    Tensor xh = xb;
    for (std::size_t i = 0; i < xh.size(); ++i) xh[i] += gap_epsilon * noise[i];
    Tensor zh = logits(model, xh);
    double gap = 0.0;
    for (std::size_t i = 0; i < k; ++i) gap += (zv[i] - zh[i]) * (zv[i] - zh[i]);
    r.prediction_gap = std::sqrt(gap);
  }
  return r;
}

struct RobustnessSummary {
  std::size_t count = 0;
  std::size_t degenerate = 0;
  double mean_rho = 0.0;
  double mean_alignment_ratio = 0.0;
  double mean_prediction_gap = 0.0;
};

/// Aggregates exclude degenerate records.
inline RobustnessSummary summarize(const std::vector<RobustnessRecord>& recs) {
  RobustnessSummary s;
  for (const auto& r : recs) {
    if (r.degenerate) {
      ++s.degenerate;
      continue;
    }
    ++s.count;
    s.mean_rho += r.rho;
    s.mean_alignment_ratio += r.alignment_ratio;
    s.mean_prediction_gap += r.prediction_gap;
  }
  if (s.count) {
    s.mean_rho /= static_cast<double>(s.count);
    s.mean_alignment_ratio /= static_cast<double>(s.count);
    s.mean_prediction_gap /= static_cast<double>(s.count);
  }
  return s;
}

/// Probe estimates of ‖∂logits/∂a‖_F for the input and every layer output a.
struct LayerJacobianNorms {
  std::vector<std::string> layers;  // "input", then "<index>:<kind>"
  std::vector<double> squared;      // estimate of ‖·‖²_F (summed over the batch)
  std::vector<double> norm;         // sqrt(squared)
};

/// Uses the same probe draws as jacobian_norm_estimate for the same rng state,
/// so the "input" entry reproduces it.
inline LayerJacobianNorms layerwise_jacobian_norm(const Model& model, const Tensor& x, std::size_t n_probes,
                                                  std::mt19937_64& rng) {
  if (n_probes < 1) throw std::invalid_argument("layerwise_jacobian_norm: n_probes must be >= 1");
  Tensor xb = x;
  if (x.shape() == model.arch.input_shape) {
    Shape s{1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    xb = x.reshaped(s);
  }
  auto probes = draw_probes(xb.dim(0), model.arch.num_classes, n_probes, rng);
  Tape tape;
  auto b = bind(tape, model, false);
  Var in = tape.leaf(xb, true);
  std::vector<Var> acts;
  Var z = forward(model, b, in, &acts);
  LayerJacobianNorms out;
  out.layers.push_back("input");
  for (std::size_t i = 0; i < model.arch.layers.size(); ++i) {
    out.layers.push_back(std::to_string(i) + ":" + layer_kind_name(model.arch.layers[i].kind));
  }
  out.squared.assign(acts.size(), 0.0);
  for (const auto& v : probes) {
    auto grads = tape.gradients(z, v, acts, false);
    for (std::size_t l = 0; l < acts.size(); ++l) out.squared[l] += squared_norm(grads[l].value());
  }
  for (auto& s : out.squared) {
    s /= static_cast<double>(probes.size());
    out.norm.push_back(std::sqrt(s));
  }
  return out;
}

/// Fraction of argmax-correct predictions; inputs attacked with `attack` when given.
/// Examples are processed in chunks of `chunk` with attack seeds offset per chunk.
inline double evaluate_accuracy(const Model& model, const Dataset& data, const std::optional<AttackSpec>& attack = {},
                                std::size_t chunk = 250) {
  if (data.size() == 0) throw std::invalid_argument("evaluate_accuracy: empty dataset");
  std::size_t correct = 0;
  auto truth = data.label_indices();
  for (std::size_t start = 0, c = 0; start < data.size(); start += chunk, ++c) {
    std::size_t end = std::min(data.size(), start + chunk);
    Batch batch{data.inputs.rows(start, end), data.labels.rows(start, end), {}};
    batch.indices.resize(end - start);
    std::iota(batch.indices.begin(), batch.indices.end(), start);
    Tensor x = batch.inputs;
    if (attack) {
      AttackSpec spec = *attack;
      spec.seed = attack->seed + c;
      x = run_attack(model, batch, spec).perturbed;
    }
    auto pred = predict(model, x);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[start + i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

struct AccuracyStats {
  double mean = 0.0;
  double std = 0.0;  // population std over trials
  std::vector<double> trials;
};

inline AccuracyStats mean_std(std::vector<double> values) {
  AccuracyStats s;
  s.trials = std::move(values);
  for (double v : s.trials) s.mean += v;
  s.mean /= static_cast<double>(s.trials.size());
  for (double v : s.trials) s.std += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(s.trials.size()));
  return s;
}

/// Repeats evaluate_accuracy with attack seeds base, base+1000, ...
inline AccuracyStats evaluate_accuracy_trials(const Model& model, const Dataset& data,
                                              const std::optional<AttackSpec>& attack, std::size_t trials) {
  if (trials < 1) throw std::invalid_argument("evaluate_accuracy_trials: trials must be >= 1");
  std::vector<double> v;
  for (std::size_t t = 0; t < trials; ++t) {
    std::optional<AttackSpec> a = attack;
    if (a) a->seed = attack->seed + 1000 * t;
    v.push_back(evaluate_accuracy(model, data, a));
  }
  return mean_std(std::move(v));
}

/// Crafts adversarial inputs for a whole dataset against one model.
inline Tensor craft_dataset(const Model& source, const Dataset& data, const AttackSpec& attack,
                            std::size_t chunk = 250) {
  Tensor out(data.inputs.shape());
  std::size_t stride = data.inputs.size() / std::max<std::size_t>(data.size(), 1);
  for (std::size_t start = 0, c = 0; start < data.size(); start += chunk, ++c) {
    std::size_t end = std::min(data.size(), start + chunk);
    Batch batch{data.inputs.rows(start, end), data.labels.rows(start, end), {}};
    AttackSpec spec = attack;
    spec.seed = attack.seed + c;
    Tensor adv = run_attack(source, batch, spec).perturbed;
    std::copy(adv.data().begin(), adv.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * stride));
  }
  return out;
}

inline double accuracy_on(const Model& model, const Tensor& inputs, const Tensor& labels) {
  auto pred = predict(model, inputs);
  auto truth = argmax_rows(labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

/// entries[s][t]: accuracy of model t on inputs crafted against model s only.
struct TransferMatrix {
  std::vector<std::string> names;
  std::vector<std::vector<double>> entries;
};

inline TransferMatrix transfer_matrix(const std::vector<const Model*>& models, const std::vector<std::string>& names,
                                      const Dataset& data, const AttackSpec& attack,
                                      std::vector<Tensor>* crafted = nullptr) {
  if (models.empty() || names.size() != models.size()) {
    throw std::invalid_argument("transfer_matrix: need one name per model");
  }
  for (const Model* m : models) {
    if (m->arch.input_shape != models[0]->arch.input_shape || m->arch.num_classes != models[0]->arch.num_classes) {
      throw ShapeError("transfer_matrix: models disagree on input/output shape");
    }
  }
  TransferMatrix tm{names, {}};
  for (const Model* src : models) {
    Tensor adv = craft_dataset(*src, data, attack);
    std::vector<double> row;
    for (const Model* dst : models) row.push_back(accuracy_on(*dst, adv, data.labels));
    tm.entries.push_back(std::move(row));
    if (crafted) crafted->push_back(std::move(adv));
  }
  return tm;
}

/// FNV-1a over parameter names and bytes.
inline std::uint64_t parameter_hash(const Model& m) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : m.params) {
    mix(name.data(), name.size());
    mix(t.data().data(), t.size() * sizeof(double));
  }
  return h;
}

}  // namespace gradshield
