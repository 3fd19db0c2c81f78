// Acceptance run: one PASS/FAIL line per criterion with the measured value,
// the limit it is held to, and wall-clock against the runtime budget.
//
//   acceptance [--only 1,4,9] [--workdir DIR] [--mnist DIR]
//
// Exit status is 0 only when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gradshield/harness.hpp"
#include "support/oracles.hpp"
#include "support/primitives.hpp"
#include "support/tempdir.hpp"

using namespace gradshield;
using namespace gradshield::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Batch random_batch(std::mt19937_64& rng, std::size_t n, std::size_t d, std::size_t k) {
  Tensor x = random_tensor({n, d}, rng);
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = rng() % k;
  return make_batch(x, y, k);
}

// ---------------------------------------------------------------------------

Outcome autodiff_first_order() {
  auto catalog = primitive_catalog();
  double worst = 0.0;
  std::string worst_name;
  std::size_t checks = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    for (const auto& p : catalog) {
      double e = check_first_order(p, rng).rel_err;
      ++checks;
      if (e > worst) worst = e, worst_name = p.name;
    }
  }
  return {worst < 1e-5, fmt("max rel err %.2e (%s) over %zu primitive checks, 100 seeds; limit 1e-5", worst,
                            worst_name.c_str(), checks)};
}

Outcome double_backprop() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    Model m = init_model(dense_arch(6, 8, 4, LayerKind::Tanh), seed);
    m.params.at("layer0.bias") = random_tensor({8}, rng);
    m.params.at("layer2.bias") = random_tensor({4}, rng);
    Batch b = random_batch(rng, 5, 6, 4);
    auto g = penalty_param_gradient(m, b.inputs, b.labels);
    for (const auto& [name, t] : m.params) {
      Tensor fd = fd_param_gradient(
          m, name, [&](const Model& p) { return reference_tanh_mlp_penalty(p, b.inputs, b.labels); }, 1e-4);
      worst = std::max(worst, rel_err(g.at(name).data(), fd.data()));
    }
  }
  return {worst < 1e-3, fmt("max rel err %.2e over 20 seeds x 4 parameter tensors; limit 1e-3", worst)};
}

Outcome trace_estimator() {
  std::mt19937_64 rng(3);
  Model m = init_model(dense_arch(20, 16, 5, LayerKind::Tanh), 3);
  Tensor x = random_tensor({20}, rng);
  Tensor jac = jacobian_bruteforce(m, x);
  double exact = 0.0;
  for (double v : jac.data()) exact += v * v;
  std::mt19937_64 probes(4);
  double est = jacobian_norm_estimate(m, x, 10000, probes);
  double rel = std::abs(est - exact) / exact;
  return {rel < 0.02, fmt("estimate %.6f vs Tr(JtJ) %.6f, rel dev %.4f; limit 0.02", est, exact, rel)};
}

Outcome linearized_robustness_check() {
  std::mt19937_64 rng(5);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    std::size_t d = 2 + rng() % 30;
    Tensor w = random_tensor({d, 2}, rng), b = random_tensor({2}, rng);
    Tensor x = random_tensor({d}, rng);
    Model m = linear_model(w, b);
    auto r = linearized_robustness(m, x);
    double dot = b[0] - b[1], nn = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double wd = w[j * 2] - w[j * 2 + 1];
      dot += x[j] * wd;
      nn += wd * wd;
    }
    worst = std::max(worst, std::abs(r.rho - std::abs(dot) / std::sqrt(nn)));
  }
  return {worst < 1e-9, fmt("max |rho - |w.x+b|/||w||| = %.2e over 1000 points; limit 1e-9", worst)};
}

Outcome attack_invariants() {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  std::size_t calls = 0, violations = 0, mismatches = 0, equivalence = 0;
  for (int rep = 0; calls < 100000; ++rep) {
    std::size_t d = 2 + rng() % 7, k = 2 + rng() % 3, n = 1 + rng() % 3;
    Model m = init_model(dense_arch(d, 4, k, LayerKind::Relu), rng());
    Batch batch = random_batch(rng, n, d, k);
    for (auto& v : batch.inputs.data()) v = (v + 1.0) / 2.0;
    AttackSpec s;
    switch (rep % 4) {
      case 0: s = AttackSpec::fgsm(u(rng)); break;
      case 1: s = AttackSpec::pgd(u(rng) * 0.5, 1 + rng() % 5, std::nullopt, rng() % 2); break;
      case 2: s = AttackSpec::jsma(u(rng), u(rng) < 0.5 ? 1.0 : -0.5); break;
      default: {
        double eps = u(rng);
        auto a = pgd(m, batch, AttackSpec::pgd(eps, 1, eps, false));
        auto b = fgsm(m, batch, AttackSpec::fgsm(eps));
        calls += 2;
        ++equivalence;
        mismatches += a.perturbed.vec() != b.perturbed.vec();
        continue;
      }
    }
    s.seed = rng();
    auto out = run_attack(m, batch, s);
    ++calls;
    for (std::size_t i = 0; i < n; ++i) {
      violations += out.linf[i] > s.linf_budget() + 1e-12;
      if (s.kind == AttackKind::Jsma) violations += out.features_modified[i] > std::floor(s.gamma * d + 1e-12);
    }
    for (double v : out.perturbed.data()) violations += v < 0.0 || v > 1.0;
  }
  return {violations == 0 && mismatches == 0,
          fmt("%zu invocations, %zu budget/box violations; pgd(n=1,init=off,step=S) vs fgsm: %zu/%zu bitwise mismatches",
              calls, violations, mismatches, equivalence)};
}

// ---------------------------------------------------------------------------
// Desk-scale MNIST runs shared by criteria 6, 7, 8 and 11.

struct Run {
  fs::path dir;
  Checkpoint ckpt;
  double clean = 0.0;
  double fgsm = 0.0;
};

class MnistRuns {
 public:
  MnistRuns(fs::path workdir, fs::path mnist) : workdir_(std::move(workdir)), mnist_(std::move(mnist)) {}

  ExperimentConfig config(const std::string& kind, std::uint64_t s) const {
    ConfigMap c;
    c.set("dataset", "mnist");
    c.set("data.mnist_dir", mnist_.string());
    c.set("data.train_per_class", "500");
    c.set("data.test_per_class", "100");
    c.set("optim.epochs", "5");
    c.set("defense.kind", kind);
    c.set("seed.init", std::to_string(s));
    c.set("seed.data", std::to_string(100 + s));
    c.set("seed.noise", std::to_string(200 + s));
    c.set("attack.kind", "fgsm");
    c.set("attack.epsilon", "0.3");
    c.set("output.dir", (workdir_ / (kind + "_s" + std::to_string(s))).string());
    return resolve(c);
  }

  const DataSplit& data() {
    if (!data_) data_ = load_data(config("vanilla", 1));
    return *data_;
  }

  const Run& get(const std::string& kind, std::uint64_t s) {
    auto key = kind + std::to_string(s);
    auto it = runs_.find(key);
    if (it != runs_.end()) return it->second;
    auto cfg = config(kind, s);
    auto t0 = std::chrono::steady_clock::now();
    auto out = run_training(cfg, data());
    Run r{cfg.output_dir, out.train.checkpoint, out.report->accuracy[0].stats.mean, out.report->accuracy[1].stats.mean};
    std::cout << fmt("    trained %-8s seed %llu: clean %.3f fgsm(0.3) %.3f (%.0f s)\n", kind.c_str(),
                     static_cast<unsigned long long>(s), r.clean, r.fgsm,
                     std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count())
              << std::flush;
    return runs_.emplace(key, std::move(r)).first->second;
  }

 private:
  fs::path workdir_, mnist_;
  std::optional<DataSplit> data_;
  std::map<std::string, Run> runs_;
};

constexpr std::uint64_t kSeeds[] = {1, 2, 3};

Outcome robustness_gap(MnistRuns& runs) {
  double vc = 0, vf = 0, jc = 0, jf = 0;
  for (auto s : kSeeds) {
    const auto& v = runs.get("vanilla", s);
    const auto& j = runs.get("j_sigr", s);
    vc += v.clean / 3, vf += v.fgsm / 3, jc += j.clean / 3, jf += j.fgsm / 3;
  }
  double gap = jf - vf, clean_diff = std::abs(jc - vc);
  return {gap >= 0.15 && clean_diff <= 0.05,
          fmt("FGSM(0.3) j_sigr %.3f vs vanilla %.3f (gap %+.1f pts, need >= +15); clean %.3f vs %.3f (|diff| %.1f "
              "pts, need <= 5); mean of 3 seeds",
              jf, vf, 100 * gap, jc, vc, 100 * clean_diff)};
}

Outcome transfer_direction(MnistRuns& runs) {
  const auto& test = runs.data().test;
  const auto attack = AttackSpec::fgsm(0.3);
  double drop_v = 0, drop_j = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    std::uint64_t s = kSeeds[i], t = kSeeds[(i + 1) % 3];
    Tensor adv = craft_dataset(runs.get("vanilla", s).ckpt.model, test, attack);
    const auto& v = runs.get("vanilla", t);
    const auto& j = runs.get("j_sigr", t);
    drop_v += (v.clean - accuracy_on(v.ckpt.model, adv, test.labels)) / 3;
    drop_j += (j.clean - accuracy_on(j.ckpt.model, adv, test.labels)) / 3;
  }
  return {drop_v > drop_j,
          fmt("transferred FGSM(0.3) from vanilla_s: drop on vanilla_(s+1) %.1f pts vs on j_sigr_(s+1) %.1f pts "
              "(need strictly larger); mean of 3 pairs",
              100 * drop_v, 100 * drop_j)};
}

Outcome attack_monotonicity(MnistRuns& runs) {
  const auto& test = runs.data().test;
  bool ok = true;
  std::string detail;
  for (const char* kind : {"vanilla", "j_sigr"}) {
    const Model& m = runs.get(kind, 1).ckpt.model;
    double fg = evaluate_accuracy(m, test, AttackSpec::fgsm(0.3));
    double p7 = evaluate_accuracy(m, test, AttackSpec::pgd(0.3, 7));
    double p40 = evaluate_accuracy(m, test, AttackSpec::pgd(0.3, 40));
    auto sweep = sweep_attack(m, test, AttackSpec::fgsm(0.3), SweepAxis::Epsilon, {0.0, 0.1, 0.3, 0.5}, 1);
    bool mono = true;
    for (std::size_t i = 1; i < sweep.points.size(); ++i)
      mono = mono && sweep.points[i].attacked.mean <= sweep.points[i - 1].attacked.mean;
    bool exact0 = sweep.points[0].attacked.mean == sweep.points[0].clean;
    ok = ok && p40 <= p7 && p7 <= fg && mono && exact0;
    detail += fmt("%s: pgd40 %.3f <= pgd7 %.3f <= fgsm %.3f; eps sweep %.3f/%.3f/%.3f/%.3f (clean %.3f)%s; ", kind,
                  p40, p7, fg, sweep.points[0].attacked.mean, sweep.points[1].attacked.mean,
                  sweep.points[2].attacked.mean, sweep.points[3].attacked.mean, sweep.points[0].clean,
                  exact0 ? "" : " eps=0 != clean");
  }
  detail += "bound 0.3, seed-1 models";
  return {ok, detail};
}

Outcome masking_algebra() {
  std::mt19937_64 rng(9);
  Model m = init_model(dense_arch(12, 10, 4, LayerKind::Tanh), 9);
  Batch b = random_batch(rng, 6, 12, 4);
  for (auto& v : b.inputs.data()) v = (v + 1.0) / 2.0;
  auto sal = perturbation_saliency(m, b.inputs, 0.3, SigmaMode::MatchInputVariance, 0.0, Aligner::identity(12), rng);
  auto [lo, hi] = std::minmax_element(sal.values.data().begin(), sal.values.data().end());
  const double full = input_grad_penalty(m, b);
  double err_hi = std::abs(selective_grad_penalty(m, b, sal.mask_absolute(*hi)) - full);
  double err_lo = std::abs(selective_grad_penalty(m, b, sal.mask_absolute(std::nextafter(*lo, -1.0))));
  std::uniform_real_distribution<double> beta(*lo - 0.1, *hi + 0.1);
  double worst_excess = -1e300;
  for (int i = 0; i < 1000; ++i) {
    worst_excess = std::max(worst_excess, selective_grad_penalty(m, b, sal.mask_absolute(beta(rng))) - full);
  }
  return {err_hi <= 1e-10 && err_lo <= 1e-10 && worst_excess <= 1e-10,
          fmt("beta>=max M: |diff| %.1e; beta<min M: |value| %.1e; 1000 random beta: max(selective-full) %.1e; "
              "limit 1e-10",
              err_hi, err_lo, worst_excess)};
}

Outcome distillation_limit() {
  std::mt19937_64 rng(10);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    std::size_t k = 2 + rng() % 19;
    Tensor z = random_tensor({3, k}, rng, -20.0, 20.0);
    Tensor p = softmax_T(z, 1e9);
    for (double v : p.data()) worst = std::max(worst, std::abs(v - 1.0 / static_cast<double>(k)));
  }
  Dataset blobs = synth_blobs(4, 300, 3, 0.08);
  auto r = distill_train(blobs, architectures::blobs_mlp(3), 50.0, 5);
  double row_err = 0.0;
  const std::size_t k = r.soft_labels.dim(1);
  for (std::size_t i = 0; i < r.soft_labels.dim(0); ++i) {
    double s = 0;
    for (std::size_t c = 0; c < k; ++c) s += r.soft_labels[i * k + c];
    row_err = std::max(row_err, std::abs(s - 1.0));
  }
  bool finite = std::all_of(r.student_epoch_loss.begin(), r.student_epoch_loss.end(), [](double v) {
    return std::isfinite(v);
  });
  return {worst < 1e-6 && row_err < 1e-12 && finite,
          fmt("max |softmax_T(1e9) - 1/K| %.1e (limit 1e-6); distill T=50 on blobs: max |row sum - 1| %.1e, "
              "final student CE_T %.4f",
              worst, row_err, r.student_epoch_loss.back())};
}

Outcome reproducibility(MnistRuns& runs) {
  const char* files[] = {"model.ckpt", "report.csv", "train_log.csv", "config.txt"};
  std::size_t differing = 0, compared = 0;
  for (const char* kind : {"vanilla", "j_sigr"}) {
    const auto& first = runs.get(kind, 1);
    std::map<std::string, std::string> before;
    for (const char* f : files) before[f] = slurp(first.dir / f);
    run_training(runs.config(kind, 1), runs.data());
    for (const char* f : files) {
      ++compared;
      differing += before[f] != slurp(first.dir / f);
    }
  }
  return {differing == 0, fmt("seed-1 vanilla and j_sigr retrained: %zu of %zu artifacts differ byte-wise "
                              "(model.ckpt, report.csv, train_log.csv, config.txt)",
                              differing, compared)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string only;
  std::string workdir = (fs::temp_directory_path() / "gradshield_acceptance").string();
  std::string mnist = GRADSHIELD_MNIST_DIR;
  app.add_option("--only", only, "comma-separated criterion numbers");
  app.add_option("--workdir", workdir, "directory for the MNIST runs")->capture_default_str();
  app.add_option("--mnist", mnist, "directory holding the IDX files")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  if (only.empty()) {
    for (int i = 1; i <= 11; ++i) selected.insert(i);
  } else {
    std::stringstream ss(only);
    for (std::string tok; std::getline(ss, tok, ',');) selected.insert(std::stoi(tok));
  }

  MnistRuns runs(workdir, mnist);
  struct Criterion {
    int id;
    const char* name;
    double budget_s;  // 0: no separate budget
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria = {
      {1, "autodiff first-order", 10, autodiff_first_order},
      {2, "double backprop", 30, double_backprop},
      {3, "trace estimator", 30, trace_estimator},
      {4, "linearized robustness", 5, linearized_robustness_check},
      {5, "attack invariants", 60, attack_invariants},
      {6, "desk-scale robustness gap", 900, [&] { return robustness_gap(runs); }},
      {7, "transfer directionality", 0, [&] { return transfer_direction(runs); }},
      {8, "attack-strength monotonicity", 300, [&] { return attack_monotonicity(runs); }},
      {9, "masking algebra", 10, masking_algebra},
      {10, "distillation limit", 60, distillation_limit},
      {11, "reproducibility", 0, [&] { return reproducibility(runs); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.count(c.id)) continue;
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool in_time = c.budget_s == 0 || secs < c.budget_s;
    bool pass = o.ok && in_time;
    failed += !pass;
    std::string timing = c.budget_s == 0 ? fmt("%.1f s", secs) : fmt("%.1f s (budget %.0f s)", secs, c.budget_s);
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << c.id << ". " << c.name << ": " << o.detail << "; " << timing
              << (in_time ? "" : " OVER BUDGET") << '\n'
              << std::flush;
  }
  std::cout << (failed ? std::to_string(failed) + " criterion(s) failed" : std::string("all criteria passed")) << '\n';
  return failed ? 1 : 0;
}
