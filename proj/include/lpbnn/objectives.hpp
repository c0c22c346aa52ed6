#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lpbnn/tensor.hpp"

namespace lpbnn {

// A named set of parameters sharing one L2 coefficient (the per-group weight
// decay of the MAP objective).
struct ParamGroup {
    std::string name;
    std::vector<Tensor> params;
    double coeff = 0.0;
};

struct LossBreakdown {
    double nll = 0.0;
    double weight_decay = 0.0;  // already coefficient-weighted
    double kl_total = 0.0;
    double recon_total = 0.0;
    int num_layers = 0;
    double total = 0.0;
};

// Mean negative log-likelihood of the true labels under the given
// per-class probabilities. A zero probability at a true label yields +inf
// and sets *zero_prob_flag instead of crashing.
double nll_loss(const Tensor& probs, const std::vector<int>& labels, bool* zero_prob_flag = nullptr);

// Sum over groups of coeff * sum of squared parameters.
double map_regularizer(const std::vector<ParamGroup>& groups);

// Differentiable regularizer term; undefined tensor when every coefficient
// is zero (so callers can skip the add entirely).
Tensor map_regularizer_term(const std::vector<ParamGroup>& groups);

// KL(N(mu, diag sigma^2) || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - log sigma^2 - 1).
double kl_diag_gaussian_std(const Tensor& mu, const Tensor& sigma);

// Complete objective: nll + weight decay + (1/L) * sum of per-layer (kl + recon).
LossBreakdown lpbnn_total_loss(const Tensor& probs, const std::vector<int>& labels,
                               const std::vector<std::pair<double, double>>& per_layer_terms,
                               const std::vector<ParamGroup>& groups);

// ELBO objective of the mean-field baseline with the KL split uniformly
// across mini-batches: nll + kl / n_minibatches.
double elbo_bnn_loss(const Tensor& probs, const std::vector<int>& labels, double kl_weights, int n_minibatches);

}  // namespace lpbnn
