#pragma once

#include <cstdint>
#include <string>

#include "silora/trainer.hpp"

namespace silora {

// Checkpoint binary format: fixed little-endian layout, explicit version
// field, 64-bit reals stored bit-exactly. Frozen weights are not serialized;
// they are rebuilt from the recorded init seed and verified against a stored
// per-layer digest of theta0.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a64(const double* values, std::size_t count);

// Serialized image of a TrainState.
std::string serialize_checkpoint(const TrainState& state);
TrainState deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const TrainState& state);
TrainState load_checkpoint(const std::string& path);

} // namespace silora
