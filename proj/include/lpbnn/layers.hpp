#pragma once

#include <vector>

#include "lpbnn/rng.hpp"
#include "lpbnn/tensor.hpp"

namespace lpbnn {

enum class Activation { kIdentity, kRelu, kSoftplus };

Tensor apply_activation(const Tensor& t, Activation act);

// One ensemble dense layer: a slow weight matrix shared by all members plus
// J rank-1 fast perturbations. Member j's effective weight is
// w_share .* (u_j v_j^T), with u_j on the input side and v_j on the output
// side. Biases are shared slow parameters.
struct EnsembleLayerParams {
    Tensor w_share;          // (m, p)
    std::vector<Tensor> u;   // J vectors of shape (m)
    std::vector<Tensor> v;   // J vectors of shape (p)
    Tensor bias;             // optional, shape (p); undefined when absent

    int members() const { return static_cast<int>(u.size()); }
    int in_dim() const { return w_share.dim(0); }
    int out_dim() const { return w_share.dim(1); }
};

EnsembleLayerParams make_batchensemble_layer(int in_dim, int out_dim, int members, bool with_bias,
                                             RngStream init_stream);

// Vectorized BatchEnsemble forward: row b routed through member member_of[b],
//   h_b = act((w_share^T (x_b .* u_j)) .* v_j + bias).
// Equals materializing each member weight and multiplying, to rounding.
Tensor be_forward(const EnsembleLayerParams& params, const Tensor& x, const std::vector<int>& member_of,
                  Activation act);

// w_share .* (u_j v_j^T).
Tensor materialize_member_weight(const EnsembleLayerParams& params, int member);

// Per-layer VAE over the input-side fast vectors. The encoder maps each u_j
// to (mu_j, log_var_j); the decoder is linear. Both maps scale their input by
// 1/sqrt(fan_in) before the weight product. latent_dim is always < in_dim
// (the latent space is a compression).
struct LatentPosterior {
    Tensor enc_w;    // (m, 2d)
    Tensor enc_b;    // (2d)
    Tensor dec_w;    // (d, m)
    Tensor dec_b;    // (m)
    int latent_dim = 0;

    // Observation cache from the latest forward.
    Tensor mu;       // (J, d)
    Tensor sigma;    // (J, d)
    Tensor z;        // (J, d)
    Tensor u_hat;    // (J, m)
};

// Clamps the requested latent size to in_dim - 1.
LatentPosterior make_latent_posterior(int in_dim, int requested_latent_dim, RngStream init_stream);

// Encode the J current fast vectors; sigma = exp(0.5 * log_var).
std::pair<Tensor, Tensor> lpbnn_encode(LatentPosterior& lp, const Tensor& u_batch);

// Sample z_j ~ N(mu_j, sigma_j^2 I) and decode to reconstructed fast vectors.
Tensor lpbnn_sample_decode(LatentPosterior& lp, const Tensor& mu, const Tensor& sigma, RngStream& stream);

struct LpbnnForward {
    Tensor output;  // (B, p)
    Tensor kl;      // scalar: sum over members of KL(Q(z|u) || N(0, I))
    Tensor recon;   // scalar: sum over members of ||u_j - u_hat_j||^2
};

// Full LP-BNN layer pass: encode -> sample -> decode, then the BatchEnsemble
// forward with the reconstructed u_hat_j in place of u_j.
LpbnnForward lpbnn_forward(const EnsembleLayerParams& params, LatentPosterior& lp, const Tensor& x,
                           const std::vector<int>& member_of, Activation act, RngStream& stream);

// Mean-field variational dense layer: every weight has its own Gaussian,
// sigma = softplus(rho), prior N(0, prior_sigma^2).
struct MeanFieldParams {
    Tensor w_mu;        // (m, p)
    Tensor w_rho;       // (m, p)
    double prior_sigma = 1.0;

    int in_dim() const { return w_mu.dim(0); }
    int out_dim() const { return w_mu.dim(1); }
};

MeanFieldParams make_meanfield_layer(int in_dim, int out_dim, double prior_sigma, RngStream init_stream);

struct MeanFieldForward {
    Tensor output;  // (B, p)
    Tensor kl;      // scalar: closed-form KL to the prior, summed over weights
};

MeanFieldForward meanfield_forward(const MeanFieldParams& params, const Tensor& x, RngStream& stream);

}  // namespace lpbnn
