#pragma once

/// Single-file checkpoint: a JSON header (iteration count, config hash,
/// tensor directory) followed by the raw little-endian float64 arrays in
/// directory order. Tensors are keyed "module.layer.tensor".

#include <cstdint>
#include <string>

#include "wsod/model.hpp"

namespace wsod {

struct CheckpointInfo {
    std::uint64_t iteration = 0;
    std::string config_hash;
};

void save_checkpoint(const std::string& path, const Model& model,
                     std::uint64_t iteration, const std::string& config_hash);

/// Loads into an already-initialized model; every named tensor must exist
/// with a matching shape.
CheckpointInfo load_checkpoint(const std::string& path, Model& model);

/// Header only (no tensor data read).
CheckpointInfo read_checkpoint_info(const std::string& path);

}  // namespace wsod
