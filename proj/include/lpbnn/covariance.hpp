#pragma once

#include <vector>

#include "lpbnn/layers.hpp"
#include "lpbnn/tensor.hpp"

namespace lpbnn {

// Weights expressed as linear combinations of independent latent coordinates:
// W[w] = sum_k alpha[w, k] * Z[k] with var(Z[k]) = z_var[k]. The induced
// covariance over W is generally non-diagonal.
struct LatentFactorModel {
    Tensor alpha;  // (n_weights, K)
    Tensor z_var;  // (K), elementwise >= 0
};

double implicit_variance(const LatentFactorModel& model, int w_index);
double implicit_covariance(const LatentFactorModel& model, int w_index_a, int w_index_b);
// Assembles the full (n, n) covariance matrix.
Tensor implicit_covariance_matrix(const LatentFactorModel& model);

// Plain ReLU MLP weights (pre-softmax outputs) for the averaging check.
struct MlpWeights {
    std::vector<Tensor> weights;  // layer l: (m_l, m_{l+1})
    std::vector<Tensor> biases;   // layer l: (m_{l+1})
};

// Forward pass of an MlpWeights network: ReLU between layers, identity at
// the output. Pure arithmetic, never recorded on a tape.
Tensor mlp_forward(const MlpWeights& net, const Tensor& x);

struct AveragingResult {
    double residual;  // max over the batch of ||mean_j f_j(x) - f_avg(x)||_2
    double delta;     // max_j ||theta_j - theta_avg||_2 over all weights
};

// Compares the prediction of the averaged network against the average of
// the member predictions on pre-softmax outputs.
AveragingResult averaging_consistency(const std::vector<MlpWeights>& networks, const Tensor& x_batch);

// Singular values (descending) by one-sided Jacobi rotation sweeps.
std::vector<double> singular_values_jacobi(const Tensor& mat, double tol = 1e-12);

// Frobenius error of the best rank-k approximation: sqrt(sum_{i>k} sigma_i^2).
double rank_approx_error(const Tensor& mat, int k);

// Unbiased empirical covariance of n_samples decoded fast-weight draws for
// one member. The decoder is linear in a latent_dim Gaussian, so the true
// covariance has rank <= latent_dim.
Tensor empirical_weight_covariance(const EnsembleLayerParams& params, const LatentPosterior& lp, int member,
                                   int n_samples, std::uint64_t rng_seed);

}  // namespace lpbnn
