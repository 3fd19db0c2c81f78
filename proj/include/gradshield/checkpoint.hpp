#pragma once

// Checkpoint container:
//   8 bytes   magic "GRDSHLD1"
//   8 bytes   little-endian header length L
//   L bytes   UTF-8 JSON header (architecture, config echo, tensor manifest)
//   payload   little-endian float32 tensors in manifest order

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradshield/defenses.hpp"
#include "gradshield/nn.hpp"

namespace gradshield {

inline constexpr char kCheckpointMagic[9] = "GRDSHLD1";
inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, VersionMismatch, Malformed };
  CheckpointError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Batch-size-weighted epoch means of the training loss terms.
struct EpochLog {
  std::size_t epoch = 0;
  double ce = 0.0;
  double adv_ce = 0.0;
  double grad_penalty = 0.0;
  double jacobian = 0.0;
  double total = 0.0;
  double disc_loss = 0.0;
  double disc_accuracy = 0.0;
};

struct Checkpoint {
  Model model;
  std::optional<Aligner> aligner;
  std::map<std::string, std::string> config;
  std::string rng_digest;
  std::vector<EpochLog> history;
};

/// Rounds every stored value to float32 so in-memory and on-disk checkpoints agree bit-for-bit.
inline void quantize_to_float(Tensor& t) {
  for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

inline Checkpoint make_checkpoint(Model model, std::optional<Aligner> aligner, std::map<std::string, std::string> config,
                                  std::string rng_digest, std::vector<EpochLog> history = {}) {
  for (auto& [name, t] : model.params) quantize_to_float(t);
  if (aligner) {
    quantize_to_float(aligner->weight);
    quantize_to_float(aligner->bias);
  }
  return {std::move(model), std::move(aligner), std::move(config), std::move(rng_digest), std::move(history)};
}

inline nlohmann::json architecture_to_json(const Architecture& a) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : a.layers) {
    nlohmann::json j{{"kind", layer_kind_name(l.kind)}};
    if (l.has_params()) j.update({{"in", l.in}, {"out", l.out}});
    if (l.kind == LayerKind::Conv2d) j.update({{"kernel", l.kernel}, {"stride", l.stride}, {"padding", l.padding}});
    if (l.kind == LayerKind::Normalize) j.update({{"mean", l.mean}, {"std", l.std}});
    layers.push_back(std::move(j));
  }
  return {{"id", a.id}, {"input_shape", a.input_shape}, {"num_classes", a.num_classes}, {"layers", layers}};
}

inline Architecture architecture_from_json(const nlohmann::json& j) {
  Architecture a;
  a.id = j.at("id").get<std::string>();
  a.input_shape = j.at("input_shape").get<Shape>();
  a.num_classes = j.at("num_classes").get<std::size_t>();
  for (const auto& lj : j.at("layers")) {
    LayerSpec l;
    l.kind = parse_layer_kind(lj.at("kind").get<std::string>());
    l.in = lj.value("in", std::size_t{0});
    l.out = lj.value("out", std::size_t{0});
    l.kernel = lj.value("kernel", std::size_t{0});
    l.stride = lj.value("stride", std::size_t{1});
    l.padding = lj.value("padding", std::size_t{0});
    l.mean = lj.value("mean", std::vector<double>{});
    l.std = lj.value("std", std::vector<double>{});
    a.layers.push_back(std::move(l));
  }
  return a;
}

namespace detail {

inline nlohmann::json history_to_json(const std::vector<EpochLog>& h) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : h) {
    out.push_back({{"epoch", e.epoch}, {"ce", e.ce}, {"adv_ce", e.adv_ce}, {"grad_penalty", e.grad_penalty},
                   {"jacobian", e.jacobian}, {"total", e.total}, {"disc_loss", e.disc_loss},
                   {"disc_accuracy", e.disc_accuracy}});
  }
  return out;
}

inline std::vector<EpochLog> history_from_json(const nlohmann::json& j) {
  std::vector<EpochLog> out;
  for (const auto& e : j) {
    out.push_back({e.at("epoch").get<std::size_t>(), e.at("ce").get<double>(), e.at("adv_ce").get<double>(),
                   e.at("grad_penalty").get<double>(), e.at("jacobian").get<double>(), e.at("total").get<double>(),
                   e.at("disc_loss").get<double>(), e.at("disc_accuracy").get<double>()});
  }
  return out;
}

inline void put_le64(std::vector<char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32_le(std::vector<char>& out, float f) {
  auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline float get_f32_le(const unsigned char* p) {
  std::uint32_t bits = std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
                       (std::uint32_t{p[3]} << 24);
  return std::bit_cast<float>(bits);
}

inline std::vector<std::pair<std::string, const Tensor*>> checkpoint_tensors(const Checkpoint& c) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (const auto& [name, t] : c.model.params) out.emplace_back("model/" + name, &t);
  if (c.aligner) {
    out.emplace_back("aligner/weight", &c.aligner->weight);
    out.emplace_back("aligner/bias", &c.aligner->bias);
  }
  return out;
}

}  // namespace detail

inline std::vector<char> serialize_checkpoint(const Checkpoint& c) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t payload = 0;
  auto tensors = detail::checkpoint_tensors(c);
  for (const auto& [name, t] : tensors) {
    manifest.push_back({{"name", name}, {"shape", t->shape()}, {"bytes", t->size() * 4}});
    payload += t->size() * 4;
  }
  nlohmann::json header{{"format_version", kCheckpointVersion},
                        {"architecture", architecture_to_json(c.model.arch)},
                        {"model_seed", c.model.seed},
                        {"config", c.config},
                        {"rng_digest", c.rng_digest},
                        {"history", detail::history_to_json(c.history)},
                        {"tensors", manifest},
                        {"payload_bytes", payload}};
  std::string h = header.dump();
  std::vector<char> out(kCheckpointMagic, kCheckpointMagic + 8);
  detail::put_le64(out, h.size());
  out.insert(out.end(), h.begin(), h.end());
  for (const auto& [name, t] : tensors)
    for (double v : t->data()) detail::put_f32_le(out, static_cast<float>(v));
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
  using K = CheckpointError::Kind;
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw CheckpointError(K::BadMagic, "checkpoint: bad magic");
  }
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) hlen |= std::uint64_t{bytes[8 + static_cast<std::size_t>(i)]} << (8 * i);
  if (16 + hlen > bytes.size()) throw CheckpointError(K::Malformed, "checkpoint: header length exceeds file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(K::Malformed, std::string("checkpoint: header is not valid JSON: ") + e.what());
  }
  if (header.value("format_version", -1) != kCheckpointVersion) {
    throw CheckpointError(K::VersionMismatch, "checkpoint: unsupported format version " +
                                                  header.value("format_version", nlohmann::json(-1)).dump());
  }
  Checkpoint c;
  try {
    c.model.arch = architecture_from_json(header.at("architecture"));
    c.model.seed = header.at("model_seed").get<std::uint64_t>();
    c.config = header.at("config").get<std::map<std::string, std::string>>();
    c.rng_digest = header.at("rng_digest").get<std::string>();
    if (header.contains("history")) c.history = detail::history_from_json(header.at("history"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(K::Malformed, std::string("checkpoint: incomplete header: ") + e.what());
  }
  std::uint64_t declared = 0;
  for (const auto& t : header.at("tensors")) declared += t.at("bytes").get<std::uint64_t>();
  const std::uint64_t payload = bytes.size() - 16 - hlen;
  if (declared != payload || header.value("payload_bytes", std::uint64_t{0}) != payload) {
    throw CheckpointError(K::Malformed, "checkpoint: manifest declares " + std::to_string(declared) +
                                            " payload bytes, file has " + std::to_string(payload));
  }
  const unsigned char* p = bytes.data() + 16 + hlen;
  Aligner aligner;
  bool has_aligner = false;
  for (const auto& t : header.at("tensors")) {
    auto name = t.at("name").get<std::string>();
    Shape shape = t.at("shape").get<Shape>();
    std::uint64_t nbytes = t.at("bytes").get<std::uint64_t>();
    if (shape_size(shape) * 4 != nbytes) throw CheckpointError(K::Malformed, "checkpoint: size mismatch for " + name);
    Tensor v(shape);
    for (std::size_t i = 0; i < v.size(); ++i, p += 4) v[i] = static_cast<double>(detail::get_f32_le(p));
    if (name.rfind("model/", 0) == 0) {
      c.model.params.emplace(name.substr(6), std::move(v));
    } else if (name == "aligner/weight") {
      aligner.weight = std::move(v);
      has_aligner = true;
    } else if (name == "aligner/bias") {
      aligner.bias = std::move(v);
    } else {
      throw CheckpointError(K::Malformed, "checkpoint: unexpected tensor " + name);
    }
  }
  if (has_aligner) c.aligner = std::move(aligner);
  try {
    architecture_shapes(c.model.arch);
  } catch (const ShapeError& e) {
    throw CheckpointError(K::Malformed, std::string("checkpoint: ") + e.what());
  }
  return c;
}

/// Writes via a temporary file and rename.
inline void write_file_atomic(const std::filesystem::path& path, const char* data, std::size_t size) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "cannot write " + tmp.string());
    out.write(data, static_cast<std::streamsize>(size));
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, text.data(), text.size());
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  auto bytes = serialize_checkpoint(c);
  write_file_atomic(path, bytes.data(), bytes.size());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace gradshield
