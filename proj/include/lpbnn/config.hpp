#pragma once

#include <string>
#include <vector>

#include "lpbnn/dataset.hpp"

namespace lpbnn {

enum class ModelKind { kDeterministic, kMeanField, kBatchEnsemble, kLpbnn, kDeepEnsemble };

const char* model_kind_name(ModelKind kind);
ModelKind model_kind_from(const std::string& name);

struct ExperimentConfig {
    ModelKind model_kind = ModelKind::kLpbnn;
    int members = 4;               // ensemble size J
    int latent_dim = 32;           // clamped per layer to in_dim - 1
    std::vector<int> layer_widths = {64, 64};
    double learning_rate = 0.1;
    std::vector<int> lr_decay_epochs = {80, 160, 200};
    double lr_decay_ratio = 0.1;
    int epochs = 30;
    int batch_size = 128;
    double weight_decay_slow = 1e-4;
    double weight_decay_fast = 0.0;
    double prior_sigma = 1.0;
    std::uint64_t seed = 1;
    int extra_samples = 0;         // extra evaluation passes for stochastic models
    DatasetSpec dataset;

    // Internal switches for the degeneracy harness; not config-file keys.
    bool freeze_fast_weights = false;   // fast vectors pinned at one, not updated
    bool identity_vae = false;          // zero-KL, exact-reconstruction VAE; not updated

    void validate() const;
    // FNV-1a hash of the canonical key=value text; stable across runs.
    std::string config_id() const;
    std::string canonical_text() const;
};

// Flat `key = value` file; '#' starts a comment, lists are comma-separated,
// unknown keys are errors.
ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

}  // namespace lpbnn
