#pragma once

// Binary checkpoint format (all integers little-endian):
//   "NRCN" | u32 version | u32 entry count |
//   per entry: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
//              prod(dims) x f32 values in row-major order.
// Optimizer accumulators, when present, are stored as extra entries named
// "opt.square_avg.<param>" and "opt.delta_avg.<param>".

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "nrsteg/model.hpp"
#include "nrsteg/optimizer.hpp"

namespace nrsteg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model<float> model;
  std::optional<OptState<float>> optimizer;
};

std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model, const OptState<float>* optimizer = nullptr);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path,
                     const OptState<float>* optimizer = nullptr);
Checkpoint load_checkpoint_full(const std::filesystem::path& path);
Model<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace nrsteg
