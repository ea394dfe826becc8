// SPDX-License-Identifier: Apache-2.0
#include "uacal/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "uacal/error.hpp"

namespace uacal {
namespace {

using nlohmann::json;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    require(pos_ + n <= bytes_.size(), ErrorCode::parse_error, "checkpoint: truncated file");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

json header_json(const Checkpoint& ckpt) {
  const ModelConfig& m = ckpt.params.config;
  json h;
  h["model"] = {{"vocab_size", m.vocab_size}, {"d_model", m.d_model},
                {"n_layers", m.n_layers},     {"n_heads", m.n_heads},
                {"context_len", m.context_len}, {"d_ff", m.d_ff},
                {"seed", m.seed}};
  if (ckpt.params.lora) {
    const LoraConfig& l = *ckpt.params.lora;
    h["lora"] = {{"rank", l.rank}, {"alpha", l.alpha}, {"dropout", l.dropout},
                 {"target_maps", l.target_maps}};
  } else {
    h["lora"] = nullptr;
  }
  h["loss_kind"] = ckpt.loss_kind;
  h["step_count"] = ckpt.step_count;
  h["merged"] = ckpt.params.merged;
  return h;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, 6);
  const std::string header = header_json(ckpt).dump();
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;

  std::uint32_t count = 0;
  auto count_fn = [&](const std::string&, const Matrix&) { ++count; };
  ckpt.params.base.for_each(count_fn);
  ckpt.params.adapters.for_each(count_fn);
  put_u32(out, count);

  auto write = [&](const std::string& name, const Matrix& m) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(m.data()[i])));
    }
  };
  ckpt.params.base.for_each(write);
  ckpt.params.adapters.for_each(write);
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  require(r.str(6) == std::string(kCheckpointMagic, 6), ErrorCode::parse_error,
          "checkpoint: bad magic bytes");
  const std::uint32_t header_len = r.u32();
  json h;
  try {
    h = json::parse(r.str(header_len));
  } catch (const json::exception& e) {
    fail(ErrorCode::parse_error, std::string("checkpoint: bad header: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ModelConfig cfg;
    const auto& m = h.at("model");
    cfg.vocab_size = m.at("vocab_size");
    cfg.d_model = m.at("d_model");
    cfg.n_layers = m.at("n_layers");
    cfg.n_heads = m.at("n_heads");
    cfg.context_len = m.at("context_len");
    cfg.d_ff = m.at("d_ff");
    cfg.seed = m.at("seed");
    ckpt.params = init_base_model(cfg);
    if (!h.at("lora").is_null()) {
      LoraConfig lora;
      const auto& l = h.at("lora");
      lora.rank = l.at("rank");
      lora.alpha = l.at("alpha");
      lora.dropout = l.at("dropout");
      lora.target_maps = l.at("target_maps").get<std::vector<std::string>>();
      attach_adapters(ckpt.params, lora, 0);
    }
    ckpt.loss_kind = h.at("loss_kind");
    ckpt.step_count = h.at("step_count");
    ckpt.params.merged = h.at("merged");
  } catch (const json::exception& e) {
    fail(ErrorCode::parse_error, std::string("checkpoint: bad header field: ") + e.what());
  }

  std::map<std::string, Matrix*> slots;
  auto index = [&](const std::string& name, Matrix& m) { slots[name] = &m; };
  ckpt.params.base.for_each(index);
  ckpt.params.adapters.for_each(index);

  const std::uint32_t count = r.u32();
  require(count == slots.size(), ErrorCode::parse_error,
          "checkpoint: expected " + std::to_string(slots.size()) + " arrays, found " +
              std::to_string(count));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    const auto it = slots.find(name);
    require(it != slots.end(), ErrorCode::parse_error, "checkpoint: unexpected array " + name);
    Matrix& dst = *it->second;
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    require(rows == dst.rows() && cols == dst.cols(), ErrorCode::parse_error,
            "checkpoint: shape mismatch for " + name);
    for (Eigen::Index k = 0; k < dst.size(); ++k) {
      dst.data()[k] = static_cast<double>(std::bit_cast<float>(r.u32()));
    }
  }
  require(r.done(), ErrorCode::parse_error, "checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::io_error, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorCode::io_error, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::io_error, "cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace uacal
