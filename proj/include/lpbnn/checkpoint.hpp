#pragma once

#include <string>

#include "lpbnn/models.hpp"

namespace lpbnn {

// Single-file checkpoint: a magic line, a JSON manifest (layer kinds, shapes,
// J, latent sizes, named parameter order) and the flat little-endian float64
// parameter arrays, in manifest order.
void save_checkpoint(const std::string& path, const Model& model, std::uint64_t seed);

struct LoadedCheckpoint {
    Model model;
    std::uint64_t seed = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace lpbnn
