// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout (all integers little-endian):
//
//   bytes 0..5   "UACAL1"
//   u32          header length H
//   H bytes      UTF-8 JSON header:
//                  {"model": {vocab_size, d_model, n_layers, n_heads,
//                             context_len, d_ff, seed},
//                   "lora": null | {rank, alpha, dropout, target_maps},
//                   "loss_kind": string, "step_count": integer,
//                   "merged": bool}
//   u32          array count N
//   N times:     u32 name length, name bytes, u32 rows, u32 cols,
//                rows * cols IEEE-754 binary32 values, row-major
//
// Arrays appear in order: base arrays (token_embedding, position_embedding,
// per layer ln1.gain, ln1.bias, {q,k,v,o,up,down}_proj.weight, ln2.gain,
// ln2.bias, then final_norm.gain, final_norm.bias, lm_head), followed by
// adapter pairs layers.L.<map>.lora_a / lora_b for every adapted map.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "uacal/model.hpp"

namespace uacal {

inline constexpr char kCheckpointMagic[] = "UACAL1";

struct Checkpoint {
  ModelParams params;
  std::string loss_kind = "clm";
  std::uint64_t step_count = 0;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace uacal
