#pragma once

// Experiment orchestration: data loading, the training loop, evaluation
// reports, transfer matrices, sweeps and image dumps.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradshield/attacks.hpp"
#include "gradshield/checkpoint.hpp"
#include "gradshield/config.hpp"
#include "gradshield/data.hpp"
#include "gradshield/defenses.hpp"
#include "gradshield/metrics.hpp"
#include "gradshield/nn.hpp"
#include "gradshield/optim.hpp"

namespace gradshield {

/// Shortest text that parses back to the same double.
inline std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Data

struct DataSplit {
  Dataset train;
  Dataset test;
};

/// MNIST directory: data.mnist_dir, else $GRADSHIELD_MNIST_DIR, else `fallback`.
inline std::filesystem::path mnist_dir(const ExperimentConfig& cfg, const std::filesystem::path& fallback = {}) {
  std::string dir = cfg.raw.get("data.mnist_dir");
  if (dir.empty()) {
    if (const char* env = std::getenv("GRADSHIELD_MNIST_DIR"); env && *env) dir = env;
  }
  if (dir.empty()) dir = fallback.string();
  if (dir.empty()) throw std::runtime_error("mnist: no data directory (set data.mnist_dir)");
  return dir;
}

inline DataSplit load_data(const ExperimentConfig& cfg, const std::filesystem::path& fallback_mnist_dir = {}) {
  const auto& c = cfg.raw;
  if (cfg.dataset == "blobs") {
    std::size_t k = c.get_size("data.blobs_k");
    double spread = c.get_double("data.blobs_spread");
    return {synth_blobs(cfg.seeds.data, c.get_size("data.blobs_n"), k, spread),
            synth_blobs(cfg.seeds.data + 1, c.get_size("data.blobs_test_n"), k, spread)};
  }
  auto dir = mnist_dir(cfg, fallback_mnist_dir);
  Dataset train = load_mnist_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
  Dataset test = load_mnist_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
  return {first_per_class(train, c.get_size("data.train_per_class")),
          first_per_class(test, c.get_size("data.test_per_class"))};
}

inline void check_compatible(const Model& model, const Dataset& data) {
  if (data.example_shape() != model.arch.input_shape || data.num_classes() != model.arch.num_classes) {
    throw ShapeError("architecture " + model.arch.id + " expects " + shape_str(model.arch.input_shape) + " with " +
                     std::to_string(model.arch.num_classes) + " classes; dataset " + data.name + " has " +
                     shape_str(data.example_shape()) + " with " + std::to_string(data.num_classes()));
  }
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  Checkpoint checkpoint;
  double seconds = 0.0;
};

inline std::string rng_digest(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  std::string s = os.str();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream hex;
  hex << "fnv1a:" << std::hex << std::setw(16) << std::setfill('0') << h;
  return hex.str();
}

namespace detail {

inline void check_finite_terms(const LossTerms& t, std::size_t epoch, std::size_t batch) {
  const std::pair<const char*, double> terms[] = {
      {"ce", t.ce}, {"adv_ce", t.adv_ce}, {"grad_penalty", t.grad_penalty}, {"jacobian", t.jacobian}, {"total", t.total}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) {
      throw NonFiniteError("training diverged: loss term '" + std::string(name) + "' is " + fmt_double(v) +
                           " at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch));
    }
  }
}

inline void check_finite_grads(const std::map<std::string, Tensor>& grads, std::size_t epoch, std::size_t batch) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) {
      throw NonFiniteError("training diverged: gradient of '" + name + "' is non-finite at epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(batch));
    }
  }
}

}  // namespace detail

/// Fixed-epoch momentum-SGD loop. For j_sigr every classifier step computes
/// the saliency at x + εz, the mask, fresh probes and the penalized objective,
/// then (with gan.enabled) takes one aligner/discriminator step.
inline TrainResult train(const ExperimentConfig& cfg, const Dataset& data, std::ostream* log = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  validate_dataset(data);
  const auto& d = cfg.defense;
  Architecture arch = architectures::by_id(cfg.arch_id, data.num_classes());
  std::vector<EpochLog> history;

  if (d.kind == DefenseKind::Distill) {
    DistillOptions opt{cfg.seeds.init, cfg.seeds.data, cfg.optim.lr, cfg.optim.momentum, cfg.optim.batch_size};
    Model probe = init_model(arch, cfg.seeds.init);
    check_compatible(probe, data);
    auto r = distill_train(data, arch, d.temperature, cfg.optim.epochs, opt);
    for (std::size_t e = 0; e < r.student_epoch_loss.size(); ++e) {
      for (double v : {r.teacher_epoch_loss[e], r.student_epoch_loss[e]}) {
        if (!std::isfinite(v)) throw NonFiniteError("training diverged: distillation loss is non-finite");
      }
      EpochLog ep;
      ep.epoch = e;
      ep.ce = ep.total = r.student_epoch_loss[e];
      history.push_back(ep);
      if (log) {
        *log << "epoch " << e << " teacher_ce_T " << r.teacher_epoch_loss[e] << " student_ce_T "
             << r.student_epoch_loss[e] << '\n';
      }
    }
    std::mt19937_64 unused(cfg.seeds.noise);
    TrainResult out{make_checkpoint(std::move(r.student), std::nullopt, cfg.raw.values(), rng_digest(unused),
                                    std::move(history))};
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }

  Model model = init_model(arch, cfg.seeds.init);
  check_compatible(model, data);
  SgdMomentum sgd(cfg.optim.lr, cfg.optim.momentum);
  std::mt19937_64 rng(cfg.seeds.noise);
  const bool jsigr = d.kind == DefenseKind::JSigr;
  std::optional<Aligner> aligner;
  Model disc;
  if (jsigr) {
    aligner = Aligner::identity(arch.input_shape[0]);
    disc = init_discriminator(arch.input_shape, cfg.seeds.init + 0x9e3779b9ull);
  }
  GanOptions gan = cfg.gan;

  for (std::size_t e = 0; e < cfg.optim.epochs; ++e) {
    EpochLog ep;
    ep.epoch = e;
    std::size_t seen = 0, bi = 0;
    for (const auto& batch : batches(data, {std::min(cfg.optim.batch_size, data.size()), cfg.seeds.data, e})) {
      Objective obj;
      switch (d.kind) {
        case DefenseKind::Vanilla:
          obj = cross_entropy_objective(model, batch);
          break;
        case DefenseKind::AdvTrain:
          obj = adv_training_objective(model, batch, d.epsilon);
          break;
        case DefenseKind::GradReg: {
          auto probes = draw_probes(batch.size(), arch.num_classes, d.n_probes, rng);
          if (d.lambda_j == 0.0) probes.clear();
          obj = penalized_objective(model, batch, d.lambda_m, d.lambda_j, nullptr, probes);
          break;
        }
        case DefenseKind::JSigr:
          obj = jsigr_objective(model, batch, d, *aligner, rng);
          break;
        case DefenseKind::Distill:
          break;
      }
      detail::check_finite_terms(obj.terms, e, bi);
      detail::check_finite_grads(obj.grads, e, bi);
      sgd.step(model.params, obj.grads);
      const double w = static_cast<double>(batch.size());
      ep.ce += w * obj.terms.ce;
      ep.adv_ce += w * obj.terms.adv_ce;
      ep.grad_penalty += w * obj.terms.grad_penalty;
      ep.jacobian += w * obj.terms.jacobian;
      ep.total += w * obj.terms.total;
      if (jsigr && cfg.gan_enabled) {
        auto g = train_aligner_step(*aligner, disc, model, batch, d.epsilon, d.sigma_mode, d.sigma, rng, gan,
                                    d.gan_updates_classifier ? &model : nullptr);
        if (!std::isfinite(g.aligner_loss) || !std::isfinite(g.disc_loss)) {
          throw NonFiniteError("training diverged: GAN loss is non-finite at epoch " + std::to_string(e) +
                               ", batch " + std::to_string(bi));
        }
        ep.disc_loss += w * g.disc_loss;
        ep.disc_accuracy += w * g.disc_accuracy;
      }
      seen += batch.size();
      ++bi;
    }
    const double n = static_cast<double>(seen);
    for (double* v : {&ep.ce, &ep.adv_ce, &ep.grad_penalty, &ep.jacobian, &ep.total, &ep.disc_loss, &ep.disc_accuracy})
      *v /= n;
    if (log) {
      *log << "epoch " << e << " ce " << ep.ce << " adv_ce " << ep.adv_ce << " grad_penalty " << ep.grad_penalty
           << " jacobian " << ep.jacobian << " total " << ep.total;
      if (jsigr && cfg.gan_enabled) *log << " disc_loss " << ep.disc_loss << " disc_acc " << ep.disc_accuracy;
      *log << '\n' << std::flush;
    }
    history.push_back(ep);
  }
  TrainResult out{make_checkpoint(std::move(model), std::move(aligner), cfg.raw.values(), rng_digest(rng),
                                  std::move(history))};
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation reports

inline std::string attack_label(const AttackSpec& a) {
  std::ostringstream os;
  switch (a.kind) {
    case AttackKind::Fgsm:
      os << "fgsm(eps=" << a.fgsm_epsilon() << ")";
      break;
    case AttackKind::Pgd:
      os << "pgd(bound=" << a.bound << ",steps=" << a.n_steps << ",step=" << a.pgd_step()
         << ",init=" << (a.random_init ? "random" : "none") << ")";
      break;
    case AttackKind::Jsma:
      os << "jsma(gamma=" << a.gamma << ",theta=" << a.theta << ")";
      break;
  }
  return os.str();
}

inline bool attack_is_random(const AttackSpec& a) { return a.kind == AttackKind::Pgd && a.random_init; }

struct AccuracyRow {
  std::string label;
  AccuracyStats stats;
};

struct ExperimentReport {
  std::map<std::string, std::string> config;
  std::vector<EpochLog> epochs;
  std::vector<AccuracyRow> accuracy;  // "clean" first
  std::optional<RobustnessSummary> robustness;
  std::optional<LayerJacobianNorms> layer_jn;
};

struct EvalOptions {
  std::size_t trials = 10;
  std::size_t robustness_samples = 0;
  std::size_t jn_probes = 16;
  std::size_t jn_samples = 0;
  std::uint64_t seed = 3;
  double gap_epsilon = 0.3;
};

inline EvalOptions eval_options(const ExperimentConfig& cfg) {
  return {cfg.trials, cfg.robustness_samples, cfg.jn_probes, cfg.jn_samples, cfg.seeds.noise, cfg.defense.epsilon};
}

/// Seeded repeats of an attack; deterministic attacks are evaluated once and
/// the value replicated across trials.
inline AccuracyStats attacked_accuracy(const Model& model, const Dataset& data, const AttackSpec& attack,
                                       std::size_t trials) {
  if (attack_is_random(attack)) return evaluate_accuracy_trials(model, data, attack, trials);
  double acc = evaluate_accuracy(model, data, attack);
  return {acc, 0.0, std::vector<double>(trials, acc)};
}

inline ExperimentReport evaluate(const Checkpoint& ckpt, const Dataset& data, const std::vector<AttackSpec>& attacks,
                                 const EvalOptions& opt) {
  check_compatible(ckpt.model, data);
  if (opt.trials < 1) throw std::invalid_argument("evaluate: trials must be >= 1");
  ExperimentReport r;
  r.config = ckpt.config;
  r.epochs = ckpt.history;
  r.accuracy.push_back({"clean", mean_std({evaluate_accuracy(ckpt.model, data)})});
  for (const auto& a : attacks) r.accuracy.push_back({attack_label(a), attacked_accuracy(ckpt.model, data, a, opt.trials)});
  if (opt.robustness_samples > 0) {
    std::mt19937_64 rng(opt.seed);
    std::vector<RobustnessRecord> recs;
    for (std::size_t i = 0; i < std::min(opt.robustness_samples, data.size()); ++i) {
      recs.push_back(linearized_robustness(ckpt.model, data.inputs.slice(i), i, opt.gap_epsilon, &rng));
    }
    r.robustness = summarize(recs);
  }
  if (opt.jn_samples > 0) {
    std::mt19937_64 rng(opt.seed + 1);
    r.layer_jn = layerwise_jacobian_norm(ckpt.model, data.inputs.rows(0, std::min(opt.jn_samples, data.size())),
                                         opt.jn_probes, rng);
  }
  return r;
}

/// Columns: section,name,value,std,n. Config rows carry the raw string.
inline std::string report_csv(const ExperimentReport& r) {
  std::ostringstream os;
  os << "section,name,value,std,n\n";
  for (const auto& [k, v] : r.config) os << "config," << k << ',' << v << ",,\n";
  for (const auto& e : r.epochs) {
    const std::pair<const char*, double> cols[] = {{"ce", e.ce},
                                                   {"adv_ce", e.adv_ce},
                                                   {"grad_penalty", e.grad_penalty},
                                                   {"jacobian", e.jacobian},
                                                   {"total", e.total},
                                                   {"disc_loss", e.disc_loss},
                                                   {"disc_accuracy", e.disc_accuracy}};
    for (const auto& [name, v] : cols) os << "train,epoch" << e.epoch << '.' << name << ',' << fmt_double(v) << ",,\n";
  }
  for (const auto& a : r.accuracy) {
    os << "accuracy,\"" << a.label << "\"," << fmt_double(a.stats.mean) << ',' << fmt_double(a.stats.std) << ','
       << a.stats.trials.size() << '\n';
  }
  if (r.robustness) {
    const auto& s = *r.robustness;
    os << "robustness,mean_rho," << fmt_double(s.mean_rho) << ",," << s.count << '\n';
    os << "robustness,mean_alignment_ratio," << fmt_double(s.mean_alignment_ratio) << ",," << s.count << '\n';
    os << "robustness,mean_prediction_gap," << fmt_double(s.mean_prediction_gap) << ",," << s.count << '\n';
    os << "robustness,degenerate," << s.degenerate << ",,\n";
  }
  if (r.layer_jn) {
    for (std::size_t i = 0; i < r.layer_jn->layers.size(); ++i) {
      os << "layer_jn," << r.layer_jn->layers[i] << ',' << fmt_double(r.layer_jn->norm[i]) << ",,\n";
    }
  }
  return os.str();
}

inline std::string train_log_csv(const std::vector<EpochLog>& h) {
  std::ostringstream os;
  os << "epoch,ce,adv_ce,grad_penalty,jacobian,total,disc_loss,disc_accuracy\n";
  for (const auto& e : h) {
    os << e.epoch << ',' << fmt_double(e.ce) << ',' << fmt_double(e.adv_ce) << ',' << fmt_double(e.grad_penalty) << ','
       << fmt_double(e.jacobian) << ',' << fmt_double(e.total) << ',' << fmt_double(e.disc_loss) << ','
       << fmt_double(e.disc_accuracy) << '\n';
  }
  return os.str();
}

inline std::string config_echo(const std::map<std::string, std::string>& cfg) {
  std::ostringstream os;
  for (const auto& [k, v] : cfg) os << k << " = " << v << '\n';
  return os.str();
}

struct RunOutputs {
  TrainResult train;
  std::optional<ExperimentReport> report;
  std::filesystem::path dir;
};

/// train, then save model.ckpt, config.txt, train_log.csv and (with eval.enabled)
/// report.csv under output.dir. Wall-clock goes to timing.csv only.
inline RunOutputs run_training(const ExperimentConfig& cfg, const DataSplit& data, std::ostream* log = nullptr) {
  RunOutputs out{train(cfg, data.train, log), std::nullopt, cfg.output_dir};
  const auto& dir = cfg.output_dir;
  save_checkpoint(out.train.checkpoint, dir / "model.ckpt");
  write_file_atomic(dir / "config.txt", config_echo(out.train.checkpoint.config));
  write_file_atomic(dir / "train_log.csv", train_log_csv(out.train.checkpoint.history));
  double eval_seconds = 0.0;
  if (cfg.evaluate_after_training) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<AttackSpec> attacks;
    if (cfg.evaluate_attack) attacks.push_back(cfg.attack);
    out.report = evaluate(out.train.checkpoint, data.test, attacks, eval_options(cfg));
    write_file_atomic(dir / "report.csv", report_csv(*out.report));
    eval_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  write_file_atomic(dir / "timing.csv", "phase,seconds\ntrain," + fmt_double(out.train.seconds) + "\neval," +
                                            fmt_double(eval_seconds) + "\n");
  return out;
}

// ---------------------------------------------------------------------------
// Transfer

inline std::string role_name(std::size_t index, const Checkpoint& c) {
  auto it = c.config.find("defense.kind");
  return "M" + std::to_string(index + 1) + ":" + (it == c.config.end() ? std::string("unknown") : it->second);
}

inline TransferMatrix transfer_eval(const std::vector<Checkpoint>& ckpts, const Dataset& data, const AttackSpec& attack,
                                    std::vector<Tensor>* crafted = nullptr) {
  if (ckpts.size() < 2) throw std::invalid_argument("transfer_eval: need at least two checkpoints");
  std::vector<const Model*> models;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < ckpts.size(); ++i) {
    check_compatible(ckpts[i].model, data);
    models.push_back(&ckpts[i].model);
    names.push_back(role_name(i, ckpts[i]));
  }
  return transfer_matrix(models, names, data, attack, crafted);
}

/// Rows are sources, columns targets.
inline std::string transfer_csv(const TransferMatrix& tm) {
  std::ostringstream os;
  os << "source\\target";
  for (const auto& n : tm.names) os << ',' << n;
  os << '\n';
  for (std::size_t s = 0; s < tm.entries.size(); ++s) {
    os << tm.names[s];
    for (double v : tm.entries[s]) os << ',' << fmt_double(v);
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepAxis { NSteps, Epsilon, LambdaJ };

inline SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "n_steps") return SweepAxis::NSteps;
  if (s == "epsilon") return SweepAxis::Epsilon;
  if (s == "lambda_j") return SweepAxis::LambdaJ;
  throw std::invalid_argument("unknown sweep axis '" + s + "' (n_steps | epsilon | lambda_j)");
}

inline const char* sweep_axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::NSteps: return "n_steps";
    case SweepAxis::Epsilon: return "epsilon";
    case SweepAxis::LambdaJ: return "lambda_j";
  }
  return "?";
}

struct SweepPoint {
  double value = 0.0;
  double clean = 0.0;
  AccuracyStats attacked;
};

struct SweepSeries {
  SweepAxis axis = SweepAxis::Epsilon;
  std::string attack;
  std::vector<SweepPoint> points;
};

inline void check_sorted(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("sweep: no values");
  if (!std::is_sorted(values.begin(), values.end())) throw std::invalid_argument("sweep: values must be sorted");
}

/// The attack with the swept quantity replaced: ε for FGSM, the bound S for PGD,
/// or the PGD step count.
inline AttackSpec swept_attack(const AttackSpec& base, SweepAxis axis, double v) {
  AttackSpec a = base;
  if (axis == SweepAxis::NSteps) {
    if (a.kind != AttackKind::Pgd) throw std::invalid_argument("sweep: n_steps axis needs a pgd attack");
    if (v < 1 || v != std::floor(v)) throw std::invalid_argument("sweep: n_steps values must be positive integers");
    a.n_steps = static_cast<std::size_t>(v);
  } else if (axis == SweepAxis::Epsilon) {
    if (a.kind == AttackKind::Fgsm) {
      a.epsilon = v;
    } else if (a.kind == AttackKind::Pgd) {
      a.bound = v;
    } else {
      throw std::invalid_argument("sweep: epsilon axis needs fgsm or pgd");
    }
  } else {
    throw std::invalid_argument("sweep: lambda_j needs training; use sweep_lambda_j");
  }
  a.validate();
  return a;
}

inline SweepSeries sweep_attack(const Model& model, const Dataset& data, const AttackSpec& base, SweepAxis axis,
                                const std::vector<double>& values, std::size_t trials) {
  check_sorted(values);
  check_compatible(model, data);
  SweepSeries s{axis, attack_kind_name(base.kind), {}};
  const double clean = evaluate_accuracy(model, data);
  for (double v : values) {
    s.points.push_back({v, clean, attacked_accuracy(model, data, swept_attack(base, axis, v), trials)});
  }
  return s;
}

/// One training run per λ_j with λ_m fixed at 0.5; each point evaluated with
/// the configured attack.
inline SweepSeries sweep_lambda_j(const ExperimentConfig& cfg, const DataSplit& data, const std::vector<double>& values,
                                  std::ostream* log = nullptr) {
  check_sorted(values);
  SweepSeries s{SweepAxis::LambdaJ, attack_kind_name(cfg.attack.kind), {}};
  for (double v : values) {
    ExperimentConfig c = cfg;
    if (c.defense.kind != DefenseKind::GradReg && c.defense.kind != DefenseKind::JSigr) {
      c.defense.kind = DefenseKind::JSigr;
      c.raw.set("defense.kind", "j_sigr");
    }
    c.defense.lambda_m = 0.5;
    c.defense.lambda_j = v;
    c.raw.set("defense.lambda_m", "0.5");
    c.raw.set("defense.lambda_j", fmt_double(v));
    if (log) *log << "lambda_j " << v << '\n';
    auto r = train(c, data.train, log);
    const Model& m = r.checkpoint.model;
    s.points.push_back({v, evaluate_accuracy(m, data.test), attacked_accuracy(m, data.test, cfg.attack, cfg.trials)});
  }
  return s;
}

inline std::string sweep_csv(const SweepSeries& s) {
  std::ostringstream os;
  os << "axis,value,attack,clean,mean,std,n\n";
  for (const auto& p : s.points) {
    os << sweep_axis_name(s.axis) << ',' << fmt_double(p.value) << ',' << s.attack << ',' << fmt_double(p.clean) << ','
       << fmt_double(p.attacked.mean) << ',' << fmt_double(p.attacked.std) << ',' << p.attacked.trials.size() << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Visualization

/// 8-bit grey levels by min-max scaling; a constant map becomes 128.
inline std::vector<std::uint8_t> to_grey(std::span<const double> v) {
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  std::vector<std::uint8_t> out(v.size(), 128);
  if (v.empty() || *hi == *lo) return out;
  const double range = *hi - *lo;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<std::uint8_t>(std::lround((v[i] - *lo) / range * 255.0));
  return out;
}

inline std::string pgm_bytes(std::size_t height, std::size_t width, std::span<const double> values) {
  if (values.size() != height * width) throw ShapeError("pgm: value count does not match image size");
  auto grey = to_grey(values);
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(grey.begin(), grey.end());
  return out;
}

/// Channel mean of one [C, H, W] example.
inline std::vector<double> channel_mean(const Tensor& chw) {
  std::size_t c = chw.dim(0), hw = chw.dim(1) * chw.dim(2);
  std::vector<double> out(hw, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i) out[i] += chw[ch * hw + i] / static_cast<double>(c);
  return out;
}

/// Writes <i>_input.pgm, <i>_gradient.pgm and <i>_saliency.pgm for the first
/// n_images examples. The gradient is ∇ₓ of the predicted logit at x; the
/// saliency is the aligner output at x + εz.
inline std::vector<std::filesystem::path> visualize(const Checkpoint& ckpt, const Dataset& data, std::size_t n_images,
                                                    const std::filesystem::path& out_dir, std::uint64_t seed,
                                                    double epsilon = 0.3) {
  check_compatible(ckpt.model, data);
  Shape ex = data.example_shape();
  if (ex.size() != 3) throw ShapeError("visualize: needs image-shaped inputs [C,H,W], got " + shape_str(ex));
  n_images = std::min(n_images, data.size());
  std::vector<std::filesystem::path> files;
  if (n_images == 0) return files;
  Tensor x = data.inputs.rows(0, n_images);
  Tensor grad = top_logit_gradient(ckpt.model, x);
  std::mt19937_64 rng(seed);
  Aligner aligner = ckpt.aligner.value_or(Aligner::identity(ex[0]));
  auto sal = perturbation_saliency(ckpt.model, x, epsilon, SigmaMode::MatchInputVariance, 0.0, aligner, rng);
  const std::pair<const char*, const Tensor*> maps[] = {{"input", &x}, {"gradient", &grad}, {"saliency", &sal.values}};
  for (std::size_t i = 0; i < n_images; ++i) {
    for (const auto& [name, t] : maps) {
      char fname[64];
      std::snprintf(fname, sizeof fname, "%04zu_%s.pgm", i, name);
      auto path = out_dir / fname;
      auto pix = channel_mean(t->slice(i));
      write_file_atomic(path, pgm_bytes(ex[1], ex[2], pix));
      files.push_back(path);
    }
  }
  return files;
}

}  // namespace gradshield
