#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "todlab/common.hpp"
#include "todlab/encoder.hpp"
#include "todlab/mat.hpp"

namespace todlab {

inline constexpr const char* kCheckpointFormat = "todlab-checkpoint-v1";

inline void require_little_endian() {
  const std::uint16_t probe = 0x0102;
  check(reinterpret_cast<const unsigned char*>(&probe)[0] == 0x02,
        "checkpoint format requires a little-endian host");
}

struct NamedTensor {
  std::string name;
  Mat<float> data;
};

// A checkpoint directory holds manifest.json (names, shapes, offsets, a
// config block and the epoch) plus params.bin, the concatenated f32
// little-endian tensor payloads in manifest order.
inline void save_tensor_dir(const std::string& dir,
                            const std::vector<NamedTensor>& tensors,
                            const nlohmann::json& config, int epoch) {
  require_little_endian();
  std::filesystem::create_directories(dir);
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  {
    std::ofstream bin(dir + "/params.bin", std::ios::binary);
    check(bin.good(), "cannot write " + dir + "/params.bin");
    for (const auto& t : tensors) {
      const std::uint64_t bytes = std::uint64_t(t.data.size()) * sizeof(float);
      index.push_back({{"name", t.name},
                       {"rows", t.data.rows()},
                       {"cols", t.data.cols()},
                       {"offset", offset},
                       {"count", t.data.size()}});
      bin.write(reinterpret_cast<const char*>(t.data.data()),
                std::streamsize(bytes));
      offset += bytes;
    }
    check(bin.good(), "write failed: " + dir + "/params.bin");
  }
  nlohmann::json manifest{{"format", kCheckpointFormat},
                          {"dtype", "f32"},
                          {"byte_order", "little"},
                          {"epoch", epoch},
                          {"total_bytes", offset},
                          {"config", config},
                          {"tensors", index}};
  std::ofstream mf(dir + "/manifest.json");
  check(mf.good(), "cannot write " + dir + "/manifest.json");
  mf << manifest.dump(2) << "\n";
  check(mf.good(), "write failed: " + dir + "/manifest.json");
}

struct LoadedTensors {
  std::vector<NamedTensor> tensors;
  nlohmann::json config;
  int epoch = 0;
};

inline LoadedTensors load_tensor_dir(const std::string& dir) {
  require_little_endian();
  std::ifstream mf(dir + "/manifest.json");
  check(mf.good(), "cannot open " + dir + "/manifest.json");
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const std::exception& e) {
    throw std::runtime_error(dir + "/manifest.json: " + e.what());
  }
  check(manifest.value("format", "") == kCheckpointFormat,
        dir + ": not a checkpoint directory");
  check(manifest.value("dtype", "") == "f32", dir + ": unsupported dtype");
  check(manifest.value("byte_order", "") == "little", dir + ": unsupported byte order");

  std::ifstream bin(dir + "/params.bin", std::ios::binary);
  check(bin.good(), "cannot open " + dir + "/params.bin");

  LoadedTensors out;
  out.config = manifest.at("config");
  out.epoch = manifest.value("epoch", 0);
  std::uint64_t expect_offset = 0;
  for (const auto& t : manifest.at("tensors")) {
    NamedTensor nt;
    nt.name = t.at("name").get<std::string>();
    const int rows = t.at("rows").get<int>();
    const int cols = t.at("cols").get<int>();
    const std::uint64_t offset = t.at("offset").get<std::uint64_t>();
    const std::uint64_t count = t.at("count").get<std::uint64_t>();
    check(rows >= 0 && cols >= 0 && count == std::uint64_t(rows) * std::uint64_t(cols),
          dir + ": inconsistent shape for tensor " + nt.name);
    check(offset == expect_offset, dir + ": tensors are not contiguous at " + nt.name);
    nt.data.resize(rows, cols);
    bin.read(reinterpret_cast<char*>(nt.data.data()),
             std::streamsize(count * sizeof(float)));
    check(bin.good(), dir + ": params.bin truncated at tensor " + nt.name);
    expect_offset += count * sizeof(float);
    out.tensors.push_back(std::move(nt));
  }
  check(expect_offset == manifest.value("total_bytes", std::uint64_t(0)),
        dir + ": total_bytes does not match tensor index");
  bin.peek();
  check(bin.eof(), dir + ": params.bin has trailing bytes");
  return out;
}

inline nlohmann::json encoder_config_to_json(const EncoderConfig& c) {
  return {{"layers", c.layers},       {"hidden_dim", c.hidden_dim},
          {"heads", c.heads},         {"ffn_dim", c.ffn_dim},
          {"max_len", c.max_len},     {"dropout", c.dropout},
          {"ln_eps", c.ln_eps},       {"vocab_size", c.vocab_size},
          {"pooling", pooling_name(c.pooling)}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.layers = j.at("layers").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.ln_eps = j.at("ln_eps").get<double>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.pooling = parse_pooling(j.at("pooling").get<std::string>());
  c.validate();
  return c;
}

// Round-trips bit-exactly for float parameters: the file stores exactly the
// f32 values held in memory.
template <class S>
void save_encoder(const std::string& dir, const EncoderParams<S>& p, int epoch) {
  std::vector<NamedTensor> tensors;
  tensors.reserve(p.w.size());
  for (std::size_t i = 0; i < p.w.size(); ++i)
    tensors.push_back({p.names[i], p.w[i].template cast<float>()});
  save_tensor_dir(dir, tensors, encoder_config_to_json(p.cfg), epoch);
}

template <class S>
EncoderParams<S> load_encoder(const std::string& dir, int* epoch_out = nullptr) {
  LoadedTensors lt = load_tensor_dir(dir);
  const EncoderConfig cfg = encoder_config_from_json(lt.config);
  const auto layout = encoder_layout(cfg);
  check(lt.tensors.size() == layout.size(), dir + ": wrong tensor count for config");
  EncoderParams<S> p;
  p.cfg = cfg;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& want = layout[i];
    const auto& got = lt.tensors[i];
    check(got.name == want.name, dir + ": tensor order mismatch, expected " +
                                     want.name + " got " + got.name);
    check(got.data.rows() == want.rows && got.data.cols() == want.cols,
          dir + ": shape mismatch for tensor " + want.name);
    p.names.push_back(got.name);
    p.w.push_back(got.data.template cast<S>());
    p.g.emplace_back(want.rows, want.cols);
  }
  if (epoch_out) *epoch_out = lt.epoch;
  return p;
}

}  // namespace todlab
