#pragma once

// gradshield <subcommand> [options]
//
//   train      --config c.cfg --set defense.lambda_j=0.5 --out runs/a
//   attack     --checkpoint m.ckpt --attack fgsm --epsilon 0.3
//   eval       --checkpoint m.ckpt --attack pgd --steps 40 --bound 0.3
//   transfer   --checkpoint a.ckpt --checkpoint b.ckpt
//   sweep      --axis epsilon --values 0,0.1,0.3 --checkpoint m.ckpt
//   visualize  --checkpoint m.ckpt --n-images 4 --out img
//
// Precedence: built-in defaults < $GRADSHIELD_SEED < checkpoint echo < --config < --set < named flags.
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "gradshield/harness.hpp"

namespace gradshield::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline void apply_env_seed(ConfigMap& c) {
  const char* env = std::getenv("GRADSHIELD_SEED");
  if (!env || !*env) return;
  std::uint64_t s = 0;
  std::istringstream is(env);
  if (!(is >> s) || !is.eof()) throw UsageError(std::string("GRADSHIELD_SEED: not an unsigned integer: ") + env);
  c.set("seed.init", std::to_string(s));
  c.set("seed.data", std::to_string(s + 1));
  c.set("seed.noise", std::to_string(s + 2));
}

inline std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = ConfigMap::trim(item);
    std::istringstream is(item);
    double v = 0.0;
    if (item.empty() || !(is >> v) || !is.eof()) throw UsageError("--values: cannot parse '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--values: empty list");
  return out;
}

inline ConfigMap config_from_checkpoint(const Checkpoint& c) {
  ConfigMap m;
  for (const auto& [k, v] : c.config) {
    if (ConfigMap::known(k)) m.set(k, v);
  }
  return m;
}

}  // namespace detail

/// Subcommand option storage; CLI11 writes into these during parsing.
struct Options {
  std::string config_path;
  std::vector<std::string> assignments;
  std::map<std::string, std::string> flag_values;  // config key -> value, when given
  std::vector<std::string> checkpoints;
  std::string axis;
  std::string values;
  std::size_t n_images = 4;
};

class Runner {
 public:
  Runner(std::ostream& out, std::ostream& err, std::filesystem::path default_mnist_dir)
      : out_(out), err_(err), mnist_fallback_(std::move(default_mnist_dir)) {}

  int run(std::vector<std::string> args) {
    CLI::App app{"gradshield: adversarial robustness lab", "gradshield"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "show help for every subcommand");

    auto* train = add_command(app, "train", "train a model and write checkpoint + reports");
    add_flag(train, "--dataset", "dataset", "mnist | blobs");
    add_flag(train, "--defense", "defense.kind", "vanilla | adv_train | distill | grad_reg | j_sigr");
    add_flag(train, "--epochs", "optim.epochs", "training epochs");
    add_flag(train, "--lr", "optim.lr", "SGD learning rate");
    add_attack_flags(train);

    auto* attack = add_command(app, "attack", "craft adversarial examples on the test split; per-example CSV to stdout");
    add_checkpoint(attack, false);
    add_attack_flags(attack);

    auto* eval = add_command(app, "eval", "evaluate a checkpoint; report CSV to stdout and <out>/report.csv");
    add_checkpoint(eval, false);
    add_attack_flags(eval);
    add_flag(eval, "--trials", "eval.trials", "attack repetitions");

    auto* transfer = add_command(app, "transfer", "cross-model transfer matrix (rows: source, columns: target)");
    add_checkpoint(transfer, true);
    add_attack_flags(transfer);

    auto* sweep = add_command(app, "sweep", "accuracy series over n_steps | epsilon | lambda_j");
    sweep->add_option("--axis", opt_.axis, "n_steps | epsilon | lambda_j")->required();
    sweep->add_option("--values", opt_.values, "comma-separated sorted values")->required();
    sweep->add_option("--checkpoint", opt_.checkpoints, "model to attack (n_steps / epsilon axes)");
    add_attack_flags(sweep);
    add_flag(sweep, "--trials", "eval.trials", "attack repetitions");
    add_flag(sweep, "--dataset", "dataset", "mnist | blobs (lambda_j axis)");
    add_flag(sweep, "--epochs", "optim.epochs", "training epochs (lambda_j axis)");

    auto* vis = add_command(app, "visualize", "write input / gradient / saliency PGM images");
    add_checkpoint(vis, false);
    vis->add_option("--n-images", opt_.n_images, "number of test images")->capture_default_str();

    std::reverse(args.begin(), args.end());
    try {
      app.parse(args);
    } catch (const CLI::CallForHelp&) {
      out_ << app.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out_ << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err_ << "error: " << e.what() << "\n\n" << app.help();
      return kExitUsage;
    }

    try {
      if (train->parsed()) return do_train();
      if (attack->parsed()) return do_attack();
      if (eval->parsed()) return do_eval();
      if (transfer->parsed()) return do_transfer();
      if (sweep->parsed()) return do_sweep();
      if (vis->parsed()) return do_visualize();
    } catch (const UsageError& e) {
      err_ << "usage error: " << e.what() << '\n';
      return kExitUsage;
    } catch (const ConfigError& e) {
      err_ << "config error: " << e.what() << '\n';
      return kExitUsage;
    } catch (const std::exception& e) {
      err_ << "error: " << e.what() << '\n';
      return kExitRuntime;
    }
    err_ << app.help();
    return kExitUsage;
  }

 private:
  CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help) {
    auto* cmd = app.add_subcommand(name, help);
    cmd->add_option("--config", opt_.config_path, "flat key = value config file");
    cmd->add_option("--set", opt_.assignments, "override one config key (key=value), repeatable");
    add_flag(cmd, "--out", "output.dir", "output directory");
    return cmd;
  }

  void add_flag(CLI::App* cmd, const std::string& flag, const std::string& key, const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [this, key](const std::string& v) { opt_.flag_values[key] = v; }, help + " [" + key + "]");
  }

  void add_attack_flags(CLI::App* cmd) {
    add_flag(cmd, "--attack", "attack.kind", "fgsm | pgd | jsma");
    add_flag(cmd, "--epsilon", "attack.epsilon", "FGSM step/budget or PGD step");
    add_flag(cmd, "--steps", "attack.steps", "PGD iterations");
    add_flag(cmd, "--bound", "attack.bound", "PGD L-infinity radius");
    add_flag(cmd, "--attack-seed", "attack.seed", "attack RNG seed");
  }

  void add_checkpoint(CLI::App* cmd, bool many) {
    auto* o = cmd->add_option("--checkpoint", opt_.checkpoints, many ? "checkpoint (repeat, at least two)" : "checkpoint");
    o->required();
    if (!many) o->expected(1);
  }

  /// Layers the config sources over `base` in precedence order.
  ExperimentConfig build(ConfigMap base) const {
    if (!opt_.config_path.empty()) base.merge_file(opt_.config_path);
    for (const auto& a : opt_.assignments) base.apply_assignment(a);
    for (const auto& [k, v] : opt_.flag_values) base.set(k, v);
    return resolve(base);
  }

  ExperimentConfig fresh_config() const {
    ConfigMap base;
    detail::apply_env_seed(base);
    return build(base);
  }

  std::filesystem::path out_dir(const ExperimentConfig& cfg) const { return cfg.output_dir; }

  int do_train() {
    auto cfg = fresh_config();
    auto data = load_data(cfg, mnist_fallback_);
    err_ << "train: " << cfg.raw.get("defense.kind") << " on " << data.train.name << " (" << data.train.size()
         << " examples), " << cfg.optim.epochs << " epochs\n";
    auto r = run_training(cfg, data, &err_);
    err_ << "checkpoint: " << (cfg.output_dir / "model.ckpt").string() << '\n';
    if (r.report) out_ << report_csv(*r.report);
    return kExitOk;
  }

  Checkpoint load_one() const {
    if (opt_.checkpoints.empty()) throw UsageError("--checkpoint is required");
    return load_checkpoint(opt_.checkpoints.front());
  }

  int do_attack() {
    auto ckpt = load_one();
    auto cfg = build(detail::config_from_checkpoint(ckpt));
    auto data = load_data(cfg, mnist_fallback_).test;
    check_compatible(ckpt.model, data);
    std::ostringstream csv;
    csv << "index,label,clean_pred,adv_pred,success,linf,features_modified\n";
    auto truth = data.label_indices();
    const std::size_t chunk = 250;
    for (std::size_t start = 0, c = 0; start < data.size(); start += chunk, ++c) {
      std::size_t end = std::min(data.size(), start + chunk);
      Batch b{data.inputs.rows(start, end), data.labels.rows(start, end), {}};
      AttackSpec spec = cfg.attack;
      spec.seed = cfg.attack.seed + c;
      auto adv = run_attack(ckpt.model, b, spec);
      auto clean = predict(ckpt.model, b.inputs);
      auto after = predict(ckpt.model, adv.perturbed);
      for (std::size_t i = 0; i < clean.size(); ++i) {
        csv << start + i << ',' << truth[start + i] << ',' << clean[i] << ',' << after[i] << ','
            << (adv.success[i] ? 1 : 0) << ',' << fmt_double(adv.linf[i]) << ',' << adv.features_modified[i] << '\n';
      }
    }
    write_file_atomic(out_dir(cfg) / "attack.csv", csv.str());
    out_ << csv.str();
    return kExitOk;
  }

  int do_eval() {
    auto ckpt = load_one();
    auto cfg = build(detail::config_from_checkpoint(ckpt));
    auto data = load_data(cfg, mnist_fallback_).test;
    std::vector<AttackSpec> attacks;
    if (cfg.evaluate_attack) attacks.push_back(cfg.attack);
    auto report = evaluate(ckpt, data, attacks, eval_options(cfg));
    report.config = cfg.raw.values();
    auto text = report_csv(report);
    write_file_atomic(out_dir(cfg) / "report.csv", text);
    out_ << text;
    return kExitOk;
  }

  int do_transfer() {
    if (opt_.checkpoints.size() < 2) throw UsageError("transfer needs at least two --checkpoint values");
    std::vector<Checkpoint> ckpts;
    for (const auto& p : opt_.checkpoints) ckpts.push_back(load_checkpoint(p));
    auto cfg = build(detail::config_from_checkpoint(ckpts.front()));
    auto data = load_data(cfg, mnist_fallback_).test;
    auto tm = transfer_eval(ckpts, data, cfg.attack);
    auto text = transfer_csv(tm);
    write_file_atomic(out_dir(cfg) / "transfer.csv", text);
    out_ << text;
    return kExitOk;
  }

  int do_sweep() {
    SweepAxis axis;
    std::vector<double> values;
    try {
      axis = parse_sweep_axis(opt_.axis);
      values = detail::parse_values(opt_.values);
      check_sorted(values);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    SweepSeries series;
    ExperimentConfig cfg;
    if (axis == SweepAxis::LambdaJ) {
      cfg = fresh_config();
      auto data = load_data(cfg, mnist_fallback_);
      series = sweep_lambda_j(cfg, data, values, &err_);
    } else {
      auto ckpt = load_one();
      cfg = build(detail::config_from_checkpoint(ckpt));
      auto data = load_data(cfg, mnist_fallback_).test;
      series = sweep_attack(ckpt.model, data, cfg.attack, axis, values, cfg.trials);
    }
    auto text = sweep_csv(series);
    write_file_atomic(out_dir(cfg) / "sweep.csv", text);
    write_file_atomic(out_dir(cfg) / "config.txt", config_echo(cfg.raw.values()));
    out_ << text;
    return kExitOk;
  }

  int do_visualize() {
    auto ckpt = load_one();
    auto cfg = build(detail::config_from_checkpoint(ckpt));
    auto data = load_data(cfg, mnist_fallback_).test;
    auto files = visualize(ckpt, data, opt_.n_images, out_dir(cfg), cfg.seeds.noise, cfg.defense.epsilon);
    for (const auto& f : files) out_ << f.string() << '\n';
    return kExitOk;
  }

  std::ostream& out_;
  std::ostream& err_;
  std::filesystem::path mnist_fallback_;
  Options opt_;
};

/// Entry point; `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr,
               const std::filesystem::path& default_mnist_dir = {}) {
  Runner r(out, err, default_mnist_dir);
  return r.run(args);
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr,
               const std::filesystem::path& default_mnist_dir = {}) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, out, err, default_mnist_dir);
}

}  // namespace gradshield::cli
