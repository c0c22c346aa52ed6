#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lpbnn/config.hpp"
#include "lpbnn/layers.hpp"
#include "lpbnn/objectives.hpp"

namespace lpbnn {

struct DenseLayerParams {
    Tensor w;  // (m, p)
    Tensor b;  // (p)
};

// A stack of dense layers of one family (plain, BatchEnsemble, LP-BNN or
// mean-field), ReLU between layers, identity logits at the output. A deep
// ensemble is a set of deterministic Models, assembled by the harness.
class Model {
  public:
    static Model build(const ExperimentConfig& cfg, ModelKind kind, int input_dim, int n_classes,
                       std::uint64_t seed);

    struct ForwardResult {
        Tensor logits;                                    // (B, C)
        std::vector<std::pair<Tensor, Tensor>> layer_terms;  // LP-BNN per-layer (kl, recon)
        Tensor mf_kl;                                     // mean-field total KL, when applicable
    };

    // member_of routes each row to one ensemble member; ignored by the
    // deterministic and mean-field families. sample_stream feeds every
    // stochastic layer a distinct substream.
    ForwardResult forward(const Tensor& x, const std::vector<int>& member_of, RngStream sample_stream);

    ModelKind kind() const { return kind_; }
    int input_dim() const { return input_dim_; }
    int n_classes() const { return n_classes_; }
    int members() const { return members_; }
    int layer_count() const { return static_cast<int>(widths_.size()) + 1; }
    const std::vector<int>& hidden_widths() const { return widths_; }
    double prior_sigma() const { return prior_sigma_; }
    int latent_dim_requested() const { return latent_dim_; }
    bool frozen_fast() const { return freeze_fast_; }
    bool identity_vae() const { return identity_vae_; }

    // Fixed per-feature affine input standardization, fitted on the train
    // split by the harness and stored with the checkpoint.
    void set_input_standardizer(const Tensor& shift, const Tensor& scale);
    const Tensor& input_shift() const { return input_shift_; }
    const Tensor& input_scale() const { return input_scale_; }

    std::vector<ParamGroup> param_groups(double wd_slow, double wd_fast) const;
    std::vector<Tensor> trainable_params() const;
    std::vector<Tensor> all_params() const;
    std::vector<std::pair<std::string, Tensor>> named_params() const;

    const std::vector<EnsembleLayerParams>& ensemble_layers() const { return ensemble_; }
    std::vector<EnsembleLayerParams>& ensemble_layers() { return ensemble_; }
    const std::vector<LatentPosterior>& vae_layers() const { return vae_; }
    std::vector<LatentPosterior>& vae_layers() { return vae_; }

    Model snapshot() const;  // deep copy of all parameters

  private:
    ModelKind kind_ = ModelKind::kDeterministic;
    int input_dim_ = 0, n_classes_ = 0, members_ = 1, latent_dim_ = 0;
    std::vector<int> widths_;
    double prior_sigma_ = 1.0;
    bool freeze_fast_ = false, identity_vae_ = false;
    Tensor input_shift_, input_scale_;  // (input_dim) each

    std::vector<DenseLayerParams> dense_;
    std::vector<EnsembleLayerParams> ensemble_;
    std::vector<LatentPosterior> vae_;
    std::vector<MeanFieldParams> meanfield_;
};

}  // namespace lpbnn
