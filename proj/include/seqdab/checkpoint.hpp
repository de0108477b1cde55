#pragma once

// DSQC checkpoint container. Layout: magic "DSQC", version u16 LE, a
// u32-length-prefixed JSON config block, then named tensors until EOF:
// name length u16 + UTF-8 bytes, rank u8, dims u32 LE each, float32 LE
// payload. The JSON block carries network/trainer provenance plus the
// counter-based RNG state (base seed + epoch) that fixes every stream.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "seqdab/errors.hpp"
#include "seqdab/network.hpp"
#include "seqdab/sgd.hpp"
#include "seqdab/shard.hpp"

namespace seqdab {

struct Checkpoint {
  nlohmann::json config;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [tname, value] : tensors)
      if (tname == name) return &value;
    return nullptr;
  }
  void put(const std::string& name, Tensor<float> value) {
    tensors.emplace_back(name, std::move(value));
  }
};

namespace detail {

inline constexpr char kCheckpointMagic[4] = {'D', 'S', 'Q', 'C'};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check_io(out.good(), "cannot open checkpoint for writing: " + path);
  out.write(detail::kCheckpointMagic, 4);
  detail::put_u16(out, 1);
  std::string cfg = ck.config.dump();
  detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  for (const auto& [name, value] : ck.tensors) {
    check_config(name.size() <= 0xffff, "tensor name longer than 65535 bytes");
    check_config(value.rank() <= 0xff, "tensor rank exceeds format limit");
    detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.put(static_cast<char>(value.rank()));
    for (std::int64_t d : value.shape())
      detail::put_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(value.data()),
              static_cast<std::streamsize>(value.numel() * sizeof(float)));
  }
  out.flush();
  check_io(out.good(), "write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check_io(in.good(), "cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  check_io(in.good() && std::memcmp(magic, detail::kCheckpointMagic, 4) == 0,
           "bad checkpoint magic: " + path);
  std::uint16_t version = detail::get_u16(in, "version");
  check_io(version == 1, "checkpoint version mismatch (want 1, got " +
                             std::to_string(version) + "): " + path);
  std::uint32_t cfg_len = detail::get_u32(in, "config length");
  std::string cfg(cfg_len, '\0');
  if (cfg_len > 0) in.read(cfg.data(), cfg_len);
  check_io(in.good(), "truncated checkpoint (config): " + path);

  Checkpoint ck;
  ck.config = nlohmann::json::parse(cfg, nullptr, false);
  check_io(!ck.config.is_discarded(), "malformed checkpoint config JSON: " + path);

  while (true) {
    int first = in.get();
    if (first == EOF) break;
    int second = in.get();
    check_io(second != EOF, "truncated checkpoint (tensor name): " + path);
    std::uint16_t name_len = static_cast<std::uint16_t>(first | (second << 8));
    std::string name(name_len, '\0');
    if (name_len > 0) in.read(name.data(), name_len);
    check_io(in.good(), "truncated checkpoint (tensor name): " + path);
    int rank = in.get();
    check_io(rank != EOF, "truncated checkpoint (tensor rank): " + path);
    Shape shape;
    for (int d = 0; d < rank; ++d)
      shape.push_back(static_cast<std::int64_t>(detail::get_u32(in, "tensor dims")));
    Tensor<float> value = Tensor<float>::uninit(shape);
    in.read(reinterpret_cast<char*>(value.data()),
            static_cast<std::streamsize>(value.numel() * sizeof(float)));
    check_io(in.good(), "truncated checkpoint (tensor payload): " + path);
    ck.put(name, std::move(value));
  }
  return ck;
}

// ------------------------------------- network config <-> JSON

inline nlohmann::json to_json(const NetworkConfig& cfg) {
  return {{"preset", cfg.preset},
          {"seq_len", cfg.seq_len},
          {"input_hw", cfg.input_hw},
          {"block", cfg.block == NetworkConfig::Block::Bottleneck ? "bottleneck" : "basic"},
          {"widths", cfg.widths},
          {"blocks", cfg.blocks},
          {"stem_width", cfg.stem_width},
          {"stem_kernel", cfg.stem_kernel},
          {"stem_stride", cfg.stem_stride},
          {"stem_pool", cfg.stem_pool},
          {"dab", to_string(cfg.dab)}};
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig cfg;
  cfg.preset = j.at("preset").get<std::string>();
  cfg.seq_len = j.at("seq_len").get<int>();
  cfg.input_hw = j.at("input_hw").get<int>();
  std::string block = j.at("block").get<std::string>();
  check_config(block == "basic" || block == "bottleneck", "unknown block kind: " + block);
  cfg.block = block == "bottleneck" ? NetworkConfig::Block::Bottleneck
                                    : NetworkConfig::Block::Basic;
  cfg.widths = j.at("widths").get<std::vector<int>>();
  cfg.blocks = j.at("blocks").get<std::vector<int>>();
  cfg.stem_width = j.at("stem_width").get<int>();
  cfg.stem_kernel = j.at("stem_kernel").get<int>();
  cfg.stem_stride = j.at("stem_stride").get<int>();
  cfg.stem_pool = j.at("stem_pool").get<bool>();
  cfg.dab = parse_dab_config(j.at("dab").get<std::string>());
  cfg.validate();
  return cfg;
}

// ------------------------------------- model/optimizer packing

// Parameters under their own names, BN running statistics under
// "<bn>.running_mean"/"<bn>.running_var", momenta under "opt.<param>".
inline void pack_network(Checkpoint& ck, const Network<float>& net) {
  for (const auto& p : net.params()) ck.put(p.name, p.value);
  for (const auto& b : net.bn_states()) {
    ck.put(b.name + ".running_mean", b.state.running_mean);
    ck.put(b.name + ".running_var", b.state.running_var);
  }
}

inline void pack_optimizer(Checkpoint& ck, const SgdOptimizer<float>& opt,
                           const Network<float>& net) {
  const std::vector<Tensor<float>>& v = opt.velocity();
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    Tensor<float> buf = i < v.size() && !v[i].empty()
                            ? v[i]
                            : Tensor<float>(net.params()[i].value.shape());
    ck.put("opt." + net.params()[i].name, std::move(buf));
  }
}

inline void unpack_network(const Checkpoint& ck, Network<float>& net) {
  for (auto& p : net.params()) {
    const Tensor<float>* stored = ck.find(p.name);
    check_io(stored != nullptr, "checkpoint is missing tensor: " + p.name);
    check_io(stored->same_shape(p.value), "checkpoint tensor shape mismatch: " + p.name);
    p.value = *stored;
  }
  for (auto& b : net.bn_states()) {
    const Tensor<float>* mean = ck.find(b.name + ".running_mean");
    const Tensor<float>* var = ck.find(b.name + ".running_var");
    check_io(mean != nullptr && var != nullptr,
             "checkpoint is missing batch-norm state: " + b.name);
    check_io(mean->same_shape(b.state.running_mean) && var->same_shape(b.state.running_var),
             "checkpoint batch-norm shape mismatch: " + b.name);
    b.state.running_mean = *mean;
    b.state.running_var = *var;
  }
}

inline void unpack_optimizer(const Checkpoint& ck, SgdOptimizer<float>& opt,
                             const Network<float>& net) {
  std::vector<Tensor<float>>& v = opt.velocity();
  v.assign(net.params().size(), Tensor<float>());
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    const Tensor<float>* buf = ck.find("opt." + net.params()[i].name);
    if (buf != nullptr) {
      check_io(buf->same_shape(net.params()[i].value),
               "checkpoint momentum shape mismatch: " + net.params()[i].name);
      v[i] = *buf;
    }
  }
}

}  // namespace seqdab
