#pragma once

// Flat key-value experiment configuration.
//
//   # comment
//   defense.kind = j_sigr
//   defense.lambda_j = 0.5
//
// Every key has a built-in default; unknown keys are rejected. Resolution
// order is defaults < config file < command-line overrides, and the fully
// resolved map is echoed into checkpoints and reports.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradshield/attacks.hpp"
#include "gradshield/defenses.hpp"

namespace gradshield {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ConfigKey {
  const char* key;
  const char* default_value;
  const char* help;
};

// clang-format off
inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
    {"dataset", "blobs", "mnist | blobs"},
    {"data.mnist_dir", "", "directory holding train-/t10k- IDX files"},
    {"data.train_per_class", "500", "MNIST: first N training images per class"},
    {"data.test_per_class", "100", "MNIST: first N test images per class"},
    {"data.blobs_n", "200", "blobs: training examples"},
    {"data.blobs_test_n", "200", "blobs: test examples"},
    {"data.blobs_k", "3", "blobs: classes"},
    {"data.blobs_spread", "0.08", "blobs: cluster standard deviation"},
    {"model.arch", "auto", "mnist_cnn | blobs_mlp | auto (by dataset)"},
    {"defense.kind", "vanilla", "vanilla | adv_train | distill | grad_reg | j_sigr"},
    {"defense.lambda_m", "0.5", "selective input-gradient weight"},
    {"defense.lambda_j", "0.5", "Jacobian-norm weight"},
    {"defense.epsilon", "0.3", "saliency noise scale / AT FGSM step"},
    {"defense.sigma_mode", "match_input_variance", "match_input_variance | fixed"},
    {"defense.sigma", "1.0", "noise std when sigma_mode = fixed"},
    {"defense.beta_quantile", "0.8", "per-example quantile of |M| used as threshold"},
    {"defense.beta", "", "absolute saliency threshold (overrides quantile)"},
    {"defense.temperature", "50", "distillation temperature"},
    {"defense.n_probes", "1", "trace-estimator probes per example per step"},
    {"defense.mask_stop_gradient", "true", "treat the saliency indicator as a constant"},
    {"defense.gan_updates_classifier", "false", "classifier also receives GAN gradient"},
    {"gan.enabled", "true", "train the aligner adversarially (j_sigr)"},
    {"gan.aligner_lr", "0.05", "aligner SGD step"},
    {"gan.disc_lr", "0.05", "discriminator SGD step"},
    {"gan.classifier_lr", "0.001", "classifier step for GAN gradient when enabled"},
    {"optim.lr", "auto", "SGD learning rate (auto: 0.01 mnist, 0.05 blobs)"},
    {"optim.momentum", "0.9", "SGD momentum"},
    {"optim.epochs", "5", "training epochs"},
    {"optim.batch_size", "50", "mini-batch size"},
    {"seed.init", "1", "parameter initialization seed"},
    {"seed.data", "2", "shuffle seed"},
    {"seed.noise", "3", "saliency / probe / GAN noise seed"},
    {"attack.kind", "fgsm", "fgsm | pgd | jsma"},
    {"attack.epsilon", "", "FGSM step and budget / PGD step (default 0.3 / bound/4)"},
    {"attack.bound", "0.3", "PGD L-infinity radius S"},
    {"attack.steps", "40", "PGD iterations"},
    {"attack.random_init", "true", "PGD uniform random start"},
    {"attack.gamma", "0.25", "JSMA max fraction of modified features"},
    {"attack.theta", "1.0", "JSMA per-feature change"},
    {"attack.target", "", "JSMA target class (default prediction+1 mod K)"},
    {"attack.label_source", "true", "true | predicted"},
    {"attack.seed", "0", "attack RNG seed"},
    {"eval.enabled", "true", "run evaluation after training"},
    {"eval.attack", "true", "include the configured attack in evaluation"},
    {"eval.trials", "10", "attack repetitions for mean/std"},
    {"eval.robustness_samples", "20", "test examples for linearized-robustness records"},
    {"eval.jn_probes", "16", "probes for the layer-wise Jacobian-norm table"},
    {"eval.jn_samples", "8", "test examples for the layer-wise Jacobian-norm table"},
    {"output.dir", "out", "output directory"},
  };
  return keys;
}
// clang-format on

/// Resolved key-value settings with the documented key set.
class ConfigMap {
 public:
  ConfigMap() {
    for (const auto& k : config_keys()) values_[k.key] = k.default_value;
  }

  static bool known(const std::string& key) {
    const auto& keys = config_keys();
    return std::any_of(keys.begin(), keys.end(), [&](const ConfigKey& k) { return key == k.key; });
  }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  /// Applies "key=value" (whitespace around either side is trimmed).
  void apply_assignment(const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  void merge_text(std::istream& in, const std::string& origin) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      try {
        apply_assignment(line);
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  void merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path.string());
    merge_text(in, path.string());
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key) const { return parse_number<double>(key); }
  std::uint64_t get_u64(const std::string& key) const { return parse_number<std::uint64_t>(key); }
  std::size_t get_size(const std::string& key) const { return parse_number<std::size_t>(key); }
  bool get_bool(const std::string& key) const {
    const auto& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
  }
  std::optional<double> get_optional_double(const std::string& key) const {
    if (get(key).empty()) return std::nullopt;
    return get_double(key);
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  std::string to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    return os.str();
  }

  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

 private:
  template <class T>
  T parse_number(const std::string& key) const {
    const auto& v = get(key);
    std::istringstream is(v);
    T out{};
    if (!(is >> out) || !is.eof()) throw ConfigError(key + ": cannot parse '" + v + "' as a number");
    return out;
  }

  std::map<std::string, std::string> values_;
};

struct OptimizerConfig {
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 5;
  std::size_t batch_size = 50;
};

struct SeedConfig {
  std::uint64_t init = 1;
  std::uint64_t data = 2;
  std::uint64_t noise = 3;
};

struct ExperimentConfig {
  ConfigMap raw;
  std::string dataset;
  std::string arch_id;
  DefenseConfig defense;
  GanOptions gan;
  bool gan_enabled = true;
  OptimizerConfig optim;
  SeedConfig seeds;
  AttackSpec attack;
  bool evaluate_after_training = true;
  bool evaluate_attack = true;
  std::size_t trials = 10;
  std::size_t robustness_samples = 20;
  std::size_t jn_probes = 16;
  std::size_t jn_samples = 8;
  std::filesystem::path output_dir;
};

inline AttackSpec attack_from_config(const ConfigMap& c) {
  AttackSpec a;
  a.kind = parse_attack_kind(c.get("attack.kind"));
  a.epsilon = c.get_optional_double("attack.epsilon");
  a.bound = c.get_double("attack.bound");
  a.n_steps = c.get_size("attack.steps");
  a.random_init = c.get_bool("attack.random_init");
  a.gamma = c.get_double("attack.gamma");
  a.theta = c.get_double("attack.theta");
  if (!c.get("attack.target").empty()) a.target_class = c.get_size("attack.target");
  const auto& ls = c.get("attack.label_source");
  if (ls == "true") {
    a.label_source = LabelSource::True;
  } else if (ls == "predicted") {
    a.label_source = LabelSource::Predicted;
  } else {
    throw ConfigError("attack.label_source: expected true | predicted, got '" + ls + "'");
  }
  a.seed = c.get_u64("attack.seed");
  a.validate();
  return a;
}

inline ExperimentConfig resolve(const ConfigMap& c) {
  ExperimentConfig e;
  e.raw = c;
  e.dataset = c.get("dataset");
  if (e.dataset != "mnist" && e.dataset != "blobs") throw ConfigError("dataset: expected mnist | blobs");
  e.arch_id = c.get("model.arch");
  if (e.arch_id == "auto") e.arch_id = e.dataset == "mnist" ? "mnist_cnn" : "blobs_mlp";

  auto& d = e.defense;
  d.kind = parse_defense_kind(c.get("defense.kind"));
  d.lambda_m = c.get_double("defense.lambda_m");
  d.lambda_j = c.get_double("defense.lambda_j");
  d.epsilon = c.get_double("defense.epsilon");
  const auto& sm = c.get("defense.sigma_mode");
  if (sm == "match_input_variance") {
    d.sigma_mode = SigmaMode::MatchInputVariance;
  } else if (sm == "fixed") {
    d.sigma_mode = SigmaMode::Fixed;
  } else {
    throw ConfigError("defense.sigma_mode: expected match_input_variance | fixed");
  }
  d.sigma = c.get_double("defense.sigma");
  d.beta_quantile = c.get_double("defense.beta_quantile");
  d.beta_absolute = c.get_optional_double("defense.beta");
  d.temperature = c.get_double("defense.temperature");
  d.n_probes = c.get_size("defense.n_probes");
  d.mask_stop_gradient = c.get_bool("defense.mask_stop_gradient");
  d.gan_updates_classifier = c.get_bool("defense.gan_updates_classifier");
  d.validate();

  e.gan_enabled = c.get_bool("gan.enabled");
  e.gan.aligner_lr = c.get_double("gan.aligner_lr");
  e.gan.disc_lr = c.get_double("gan.disc_lr");
  e.gan.classifier_lr = c.get_double("gan.classifier_lr");

  e.optim.lr = c.get("optim.lr") == "auto" ? (e.dataset == "mnist" ? 0.01 : 0.05) : c.get_double("optim.lr");
  e.optim.momentum = c.get_double("optim.momentum");
  e.optim.epochs = c.get_size("optim.epochs");
  e.optim.batch_size = c.get_size("optim.batch_size");
  if (e.optim.batch_size == 0) throw ConfigError("optim.batch_size must be positive");

  e.seeds = {c.get_u64("seed.init"), c.get_u64("seed.data"), c.get_u64("seed.noise")};
  e.attack = attack_from_config(c);
  e.evaluate_after_training = c.get_bool("eval.enabled");
  e.evaluate_attack = c.get_bool("eval.attack");
  e.trials = c.get_size("eval.trials");
  if (e.trials == 0) throw ConfigError("eval.trials must be >= 1");
  e.robustness_samples = c.get_size("eval.robustness_samples");
  e.jn_probes = c.get_size("eval.jn_probes");
  e.jn_samples = c.get_size("eval.jn_samples");
  e.output_dir = c.get("output.dir");
  return e;
}

}  // namespace gradshield
