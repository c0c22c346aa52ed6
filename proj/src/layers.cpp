#include "lpbnn/layers.hpp"

#include <cmath>

namespace lpbnn {

Tensor apply_activation(const Tensor& t, Activation act) {
    switch (act) {
        case Activation::kIdentity: return t;
        case Activation::kRelu: return relu(t);
        case Activation::kSoftplus: return softplus(t);
    }
    throw ValueError("unknown activation");
}

namespace {

Tensor normal_tensor(std::vector<int> shape, double mean, double std, RngStream& s) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& x : t.data()) x = mean + std * s.next_normal();
    t.set_requires_grad(true);
    return t;
}

}  // namespace

EnsembleLayerParams make_batchensemble_layer(int in_dim, int out_dim, int members, bool with_bias,
                                             RngStream init_stream) {
    if (members < 1) throw ValueError("ensemble layer needs at least one member");
    EnsembleLayerParams p;
    RngStream ws = init_stream.substream("w_share");
    // He fan-in scaling for the shared matrix; fast vectors start near one so
    // members begin close to the shared network with some spread.
    p.w_share = normal_tensor({in_dim, out_dim}, 0.0, std::sqrt(2.0 / in_dim), ws);
    for (int j = 0; j < members; ++j) {
        RngStream us = init_stream.substream("u", static_cast<std::uint64_t>(j));
        RngStream vs = init_stream.substream("v", static_cast<std::uint64_t>(j));
        p.u.push_back(normal_tensor({in_dim}, 1.0, 0.5, us));
        p.v.push_back(normal_tensor({out_dim}, 1.0, 0.5, vs));
    }
    if (with_bias) {
        p.bias = Tensor::zeros({out_dim});
        p.bias.set_requires_grad(true);
    }
    return p;
}

namespace {

// Shared BatchEnsemble forward over arbitrary member routing. u_row / v_row
// yield member j's fast vectors as (1, m) / (1, p) rows; consecutive rows
// with the same member are processed as one block.
Tensor be_forward_rows(const Tensor& w_share, const Tensor& bias, const Tensor& x,
                       const std::vector<int>& member_of, int members, Activation act,
                       const std::function<Tensor(int)>& u_row, const std::function<Tensor(int)>& v_row) {
    if (x.rank() != 2 || x.dim(1) != w_share.dim(0)) {
        throw ShapeError("be_forward: input " + x.shape_str() + " does not match weight " + w_share.shape_str());
    }
    int batch = x.dim(0);
    if (batch < 1 || static_cast<int>(member_of.size()) != batch) {
        throw ShapeError("be_forward: member assignment length " + std::to_string(member_of.size()) +
                         " does not match batch " + std::to_string(batch));
    }
    for (int j : member_of) {
        if (j < 0 || j >= members) throw ValueError("be_forward: invalid member index " + std::to_string(j));
    }
    int m = w_share.dim(0);

    std::vector<Tensor> blocks;
    int row = 0;
    while (row < batch) {
        int j = member_of[static_cast<size_t>(row)];
        int count = 1;
        while (row + count < batch && member_of[static_cast<size_t>(row + count)] == j) ++count;
        Tensor xs = slice(x, {row, 0}, {count, m});
        Tensor scaled = hadamard(xs, broadcast_rows(u_row(j), count));
        Tensor y = hadamard(matmul(scaled, w_share), broadcast_rows(v_row(j), count));
        blocks.push_back(y);
        row += count;
    }
    Tensor h = blocks.size() == 1 ? blocks[0] : concat(blocks, 0);
    if (bias.defined()) h = add(h, broadcast_rows(bias, batch));
    return apply_activation(h, act);
}

}  // namespace

Tensor be_forward(const EnsembleLayerParams& params, const Tensor& x, const std::vector<int>& member_of,
                  Activation act) {
    return be_forward_rows(
        params.w_share, params.bias, x, member_of, params.members(), act,
        [&](int j) { return reshape(params.u[static_cast<size_t>(j)], {1, params.in_dim()}); },
        [&](int j) { return reshape(params.v[static_cast<size_t>(j)], {1, params.out_dim()}); });
}

Tensor materialize_member_weight(const EnsembleLayerParams& params, int member) {
    if (member < 0 || member >= params.members()) {
        throw ValueError("materialize_member_weight: invalid member index " + std::to_string(member));
    }
    Tensor outer = matmul(reshape(params.u[static_cast<size_t>(member)], {params.in_dim(), 1}),
                          reshape(params.v[static_cast<size_t>(member)], {1, params.out_dim()}));
    return hadamard(params.w_share, outer);
}

LatentPosterior make_latent_posterior(int in_dim, int requested_latent_dim, RngStream init_stream) {
    if (in_dim < 2) throw ValueError("latent posterior needs in_dim >= 2 to compress");
    int d = std::min(requested_latent_dim, in_dim - 1);
    if (d < 1) throw ValueError("latent dimension must be positive");
    LatentPosterior lp;
    lp.latent_dim = d;
    RngStream es = init_stream.substream("enc_w");
    RngStream ds = init_stream.substream("dec_w");
    lp.enc_w = normal_tensor({in_dim, 2 * d}, 0.0, 0.3, es);
    lp.enc_b = Tensor::zeros({2 * d});
    // Start the log-variance head low so early samples stay close to mu.
    for (int k = 0; k < d; ++k) lp.enc_b.at(d + k) = -3.0;
    lp.enc_b.set_requires_grad(true);
    // A near-zero decoder weight keeps the encoder/decoder product loop
    // quiet until the reconstruction actually improves; the bias matches the
    // unit mean of the fast vectors.
    lp.dec_w = normal_tensor({d, in_dim}, 0.0, 0.01, ds);
    lp.dec_b = Tensor::ones({in_dim});
    lp.dec_b.set_requires_grad(true);
    return lp;
}

std::pair<Tensor, Tensor> lpbnn_encode(LatentPosterior& lp, const Tensor& u_batch) {
    if (u_batch.rank() != 2 || u_batch.dim(1) != lp.enc_w.dim(0)) {
        throw ShapeError("lpbnn_encode: u batch " + u_batch.shape_str() + " does not match encoder " +
                         lp.enc_w.shape_str());
    }
    int members = u_batch.dim(0);
    int d = lp.latent_dim;
    // Fan-in scaling keeps the encoder's effective SGD step independent of
    // the fast-vector length.
    Tensor enc_in = scale(u_batch, 1.0 / std::sqrt(static_cast<double>(u_batch.dim(1))));
    Tensor enc_out = add(matmul(enc_in, lp.enc_w), broadcast_rows(lp.enc_b, members));
    if (!enc_out.all_finite()) throw NonFiniteError("lpbnn_encode: non-finite encoder output");
    Tensor mu = slice(enc_out, {0, 0}, {members, d});
    Tensor log_var = slice(enc_out, {0, d}, {members, d});
    Tensor sigma = exp(scale(log_var, 0.5));
    lp.mu = mu;
    lp.sigma = sigma;
    return {mu, sigma};
}

Tensor lpbnn_sample_decode(LatentPosterior& lp, const Tensor& mu, const Tensor& sigma, RngStream& stream) {
    auto [z, eps] = gaussian_sample(mu, sigma, stream);
    Tensor z_in = scale(z, 1.0 / std::sqrt(static_cast<double>(lp.latent_dim)));
    Tensor u_hat = add(matmul(z_in, lp.dec_w), broadcast_rows(lp.dec_b, mu.dim(0)));
    lp.z = z;
    lp.u_hat = u_hat;
    return u_hat;
}

LpbnnForward lpbnn_forward(const EnsembleLayerParams& params, LatentPosterior& lp, const Tensor& x,
                           const std::vector<int>& member_of, Activation act, RngStream& stream) {
    Tensor u_batch = stack_rows(params.u);
    auto [mu, sigma] = lpbnn_encode(lp, u_batch);
    Tensor u_hat = lpbnn_sample_decode(lp, mu, sigma, stream);

    int m = params.in_dim();
    Tensor h = be_forward_rows(
        params.w_share, params.bias, x, member_of, params.members(), act,
        [&](int j) { return slice(u_hat, {j, 0}, {1, m}); },
        [&](int j) { return reshape(params.v[static_cast<size_t>(j)], {1, params.out_dim()}); });

    // KL(N(mu, sigma^2) || N(0, I)) summed over members and latent dims.
    Tensor sigma_sq = hadamard(sigma, sigma);
    Tensor inner = add(add(hadamard(mu, mu), sigma_sq), scale(log(sigma_sq), -1.0));
    Tensor kl = scale(sum(add(inner, Tensor::scalar(-1.0))), 0.5);
    Tensor recon = sum_squares(sub(u_batch, u_hat));
    return {h, kl, recon};
}

MeanFieldParams make_meanfield_layer(int in_dim, int out_dim, double prior_sigma, RngStream init_stream) {
    if (prior_sigma <= 0.0) throw ValueError("prior sigma must be positive");
    MeanFieldParams p;
    RngStream ms = init_stream.substream("w_mu");
    p.w_mu = normal_tensor({in_dim, out_dim}, 0.0, std::sqrt(2.0 / in_dim), ms);
    p.w_rho = Tensor::full({in_dim, out_dim}, -3.0);
    p.w_rho.set_requires_grad(true);
    p.prior_sigma = prior_sigma;
    return p;
}

MeanFieldForward meanfield_forward(const MeanFieldParams& params, const Tensor& x, RngStream& stream) {
    if (x.rank() != 2 || x.dim(1) != params.in_dim()) {
        throw ShapeError("meanfield_forward: input " + x.shape_str() + " does not match weight " +
                         params.w_mu.shape_str());
    }
    Tensor sigma = softplus(params.w_rho);
    auto [w, eps] = gaussian_sample(params.w_mu, sigma, stream);
    Tensor h = matmul(x, w);

    // KL(N(mu, s^2) || N(0, prior^2)) = sum log(prior/s) + (s^2 + mu^2) / (2 prior^2) - 1/2.
    double prior = params.prior_sigma;
    Tensor s_sq = hadamard(sigma, sigma);
    Tensor quad = scale(add(s_sq, hadamard(params.w_mu, params.w_mu)), 1.0 / (2.0 * prior * prior));
    Tensor log_s = scale(log(s_sq), 0.5);
    double n = static_cast<double>(params.w_mu.size());
    Tensor kl = add(sum(sub(quad, log_s)), Tensor::scalar(n * (std::log(prior) - 0.5)));
    return {h, kl};
}

}  // namespace lpbnn
