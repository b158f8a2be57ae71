#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "sfi/model.hpp"
#include "sfi/trainer.hpp"

namespace sfi {

inline constexpr char kCheckpointMagic[8] = {'S', 'F', 'I', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (little-endian): magic, u32 version, u64 architecture hash,
/// u64 length + config text, u64 Adam step, u64 array count, then per array
/// u32 name length + name, u32 rank, u64 extents, float64 values. Model
/// arrays come first, then "adam.m.<name>" and "adam.v.<name>" when present.
void save_checkpoint(const std::filesystem::path& path, const SfiModel& model, const AdamState* adam = nullptr);

struct LoadedCheckpoint {
  SfiModel model;
  std::optional<AdamState> adam;
};

// Throws FormatError on a bad or truncated file and ConfigError when the
// stored architecture differs from `expected` (if given).
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

}  // namespace sfi
