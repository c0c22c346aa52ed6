#include <cmath>

#include <doctest.h>

#include "lpbnn/covariance.hpp"
#include "lpbnn/layers.hpp"
#include "lpbnn/objectives.hpp"

using namespace lpbnn;

namespace {

// Oracle: materialize member weight and multiply row by row.
Tensor be_forward_materialized(const EnsembleLayerParams& p, const Tensor& x, const std::vector<int>& member_of,
                               Activation act) {
    Tensor out = Tensor::zeros({x.dim(0), p.out_dim()});
    for (int b = 0; b < x.dim(0); ++b) {
        Tensor w = materialize_member_weight(p, member_of[static_cast<size_t>(b)]);
        for (int j = 0; j < p.out_dim(); ++j) {
            double acc = p.bias.defined() ? p.bias.at(j) : 0.0;
            for (int i = 0; i < p.in_dim(); ++i) acc += x.at(b, i) * w.at(i, j);
            out.at(b, j) = acc;
        }
    }
    return apply_activation(out, act);
}

EnsembleLayerParams tiny_layer() {
    EnsembleLayerParams p;
    p.w_share = Tensor::from({2, 1}, {2, 3});
    p.u.push_back(Tensor::from({2}, {1, -1}));
    p.v.push_back(Tensor::from({1}, {2}));
    return p;
}

}  // namespace

TEST_CASE("materialize_member_weight hand oracle") {
    EnsembleLayerParams p = tiny_layer();
    Tensor w = materialize_member_weight(p, 0);
    CHECK(w.at(0, 0) == 4.0);
    CHECK(w.at(1, 0) == -6.0);
    CHECK_THROWS_AS(materialize_member_weight(p, 1), ValueError);
}

TEST_CASE("materialize with all-ones fast vectors returns w_share") {
    RngStream s(2);
    EnsembleLayerParams p = make_batchensemble_layer(4, 3, 2, false, s);
    for (Tensor& u : p.u) std::fill(u.data().begin(), u.data().end(), 1.0);
    for (Tensor& v : p.v) std::fill(v.data().begin(), v.data().end(), 1.0);
    Tensor w = materialize_member_weight(p, 1);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 3; ++j) CHECK(w.at(i, j) == p.w_share.at(i, j));
    }
}

TEST_CASE("rank-1 perturbation: second singular value is zero") {
    RngStream s(5);
    EnsembleLayerParams p = make_batchensemble_layer(6, 4, 3, false, s);
    Tensor outer = matmul(reshape(p.u[0], {6, 1}), reshape(p.v[0], {1, 4}));
    std::vector<double> sv = singular_values_jacobi(outer);
    REQUIRE(sv.size() >= 2);
    CHECK(sv[1] <= 1e-10);
}

TEST_CASE("be_forward tiny example equals -2") {
    EnsembleLayerParams p = tiny_layer();
    Tensor x = Tensor::from({1, 2}, {1, 1});
    Tensor h = be_forward(p, x, {0}, Activation::kIdentity);
    CHECK(h.at(0, 0) == doctest::Approx(-2.0).epsilon(1e-12));
}

TEST_CASE("be_forward with ones equals a plain dense layer") {
    RngStream s(7);
    EnsembleLayerParams p = make_batchensemble_layer(5, 4, 3, true, s);
    for (Tensor& u : p.u) std::fill(u.data().begin(), u.data().end(), 1.0);
    for (Tensor& v : p.v) std::fill(v.data().begin(), v.data().end(), 1.0);
    RngStream xs(8);
    Tensor x = Tensor::zeros({6, 5});
    for (double& v : x.data()) v = xs.next_normal();
    std::vector<int> member_of = {0, 1, 2, 0, 1, 2};
    Tensor h = be_forward(p, x, member_of, Activation::kRelu);
    Tensor dense = apply_activation(add(matmul(x, p.w_share), broadcast_rows(p.bias, 6)), Activation::kRelu);
    for (int b = 0; b < 6; ++b) {
        for (int j = 0; j < 4; ++j) CHECK(h.at(b, j) == dense.at(b, j));
    }
}

TEST_CASE("be_forward equals the materialization oracle over random layers") {
    RngStream root(11);
    for (int trial = 0; trial < 100; ++trial) {
        RngStream layer_stream = root.substream("layer", static_cast<std::uint64_t>(trial));
        int m = 1 + static_cast<int>(layer_stream.next_below(8));
        int p_dim = 1 + static_cast<int>(layer_stream.next_below(6));
        int members = 1 + static_cast<int>(layer_stream.next_below(4));
        int batch = 1 + static_cast<int>(layer_stream.next_below(9));
        RngStream init = layer_stream.substream("init");
        EnsembleLayerParams p = make_batchensemble_layer(m, p_dim, members, trial % 2 == 0, init);
        Tensor x = Tensor::zeros({batch, m});
        for (double& v : x.data()) v = layer_stream.next_normal();
        std::vector<int> member_of(static_cast<size_t>(batch));
        for (int b = 0; b < batch; ++b) member_of[static_cast<size_t>(b)] = static_cast<int>(layer_stream.next_below(static_cast<std::uint64_t>(members)));
        Tensor fast = be_forward(p, x, member_of, Activation::kIdentity);
        Tensor slow = be_forward_materialized(p, x, member_of, Activation::kIdentity);
        for (std::int64_t i = 0; i < fast.size(); ++i) {
            CHECK(std::abs(fast.data()[static_cast<size_t>(i)] - slow.data()[static_cast<size_t>(i)]) <= 1e-10);
        }
    }
}

TEST_CASE("be_forward rejects bad member indices") {
    EnsembleLayerParams p = tiny_layer();
    Tensor x = Tensor::from({1, 2}, {1, 1});
    CHECK_THROWS_AS(be_forward(p, x, {1}, Activation::kIdentity), ValueError);
    CHECK_THROWS_AS(be_forward(p, x, {-1}, Activation::kIdentity), ValueError);
}

TEST_CASE("lpbnn_encode: zero encoder gives mu 0 sigma 1") {
    RngStream s(3);
    LatentPosterior lp = make_latent_posterior(6, 3, s);
    std::fill(lp.enc_w.data().begin(), lp.enc_w.data().end(), 0.0);
    std::fill(lp.enc_b.data().begin(), lp.enc_b.data().end(), 0.0);
    Tensor u = Tensor::from({2, 6}, std::vector<double>(12, 0.7));
    auto [mu, sigma] = lpbnn_encode(lp, u);
    for (int j = 0; j < 2; ++j) {
        for (int k = 0; k < 3; ++k) {
            CHECK(mu.at(j, k) == 0.0);
            CHECK(sigma.at(j, k) == 1.0);
        }
    }
}

TEST_CASE("lpbnn_encode: sigma positive, rows permute with input") {
    RngStream s(17);
    LatentPosterior lp = make_latent_posterior(5, 4, s);
    RngStream us(18);
    Tensor u = Tensor::zeros({3, 5});
    for (double& v : u.data()) v = us.next_normal();
    auto [mu, sigma] = lpbnn_encode(lp, u);
    for (std::int64_t i = 0; i < sigma.size(); ++i) CHECK(sigma.data()[static_cast<size_t>(i)] > 0.0);

    // Swap rows 0 and 2 of the input; outputs swap identically.
    Tensor u_perm = u.detached();
    for (int k = 0; k < 5; ++k) std::swap(u_perm.at(0, k), u_perm.at(2, k));
    auto [mu_p, sigma_p] = lpbnn_encode(lp, u_perm);
    for (int k = 0; k < lp.latent_dim; ++k) {
        CHECK(mu_p.at(0, k) == mu.at(2, k));
        CHECK(mu_p.at(2, k) == mu.at(0, k));
        CHECK(mu_p.at(1, k) == mu.at(1, k));
        CHECK(sigma_p.at(0, k) == sigma.at(2, k));
    }
}

TEST_CASE("latent dimension is clamped below the input dimension") {
    RngStream s(4);
    LatentPosterior lp = make_latent_posterior(6, 32, s);
    CHECK(lp.latent_dim == 5);
    LatentPosterior big = make_latent_posterior(64, 32, s);
    CHECK(big.latent_dim == 32);
}

TEST_CASE("lpbnn_sample_decode: degenerate and constant-decoder cases") {
    RngStream s(6);
    LatentPosterior lp = make_latent_posterior(4, 2, s);
    Tensor mu = Tensor::from({2, 2}, {0.3, -0.1, 0.8, 0.2});
    Tensor zero_sigma = Tensor::zeros({2, 2});

    RngStream draw(1);
    Tensor u_hat = lpbnn_sample_decode(lp, mu, zero_sigma, draw);
    // sigma = 0: decode of mu exactly (decoder applies fan-in scaling).
    for (int j = 0; j < 2; ++j) {
        for (int i = 0; i < 4; ++i) {
            double expect = lp.dec_b.at(i);
            for (int k = 0; k < 2; ++k) expect += mu.at(j, k) / std::sqrt(2.0) * lp.dec_w.at(k, i);
            CHECK(u_hat.at(j, i) == doctest::Approx(expect).epsilon(1e-12));
        }
    }

    // Constant decoder ignores z entirely.
    std::fill(lp.dec_w.data().begin(), lp.dec_w.data().end(), 0.0);
    for (int i = 0; i < 4; ++i) lp.dec_b.at(i) = 2.5;
    Tensor sigma = Tensor::ones({2, 2});
    RngStream draw2(2);
    Tensor u_const = lpbnn_sample_decode(lp, mu, sigma, draw2);
    for (std::int64_t i = 0; i < u_const.size(); ++i) CHECK(u_const.data()[static_cast<size_t>(i)] == 2.5);
}

TEST_CASE("lpbnn_sample_decode: distinct seeds give distinct samples") {
    RngStream s(9);
    LatentPosterior lp = make_latent_posterior(5, 3, s);
    Tensor mu = Tensor::zeros({2, 3});
    Tensor sigma = Tensor::ones({2, 3});
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        RngStream a(seed * 2 + 1), b(seed * 2 + 2);
        Tensor ua = lpbnn_sample_decode(lp, mu, sigma, a);
        Tensor ub = lpbnn_sample_decode(lp, mu, sigma, b);
        bool any_diff = false;
        for (std::int64_t i = 0; i < ua.size(); ++i) {
            if (ua.data()[static_cast<size_t>(i)] != ub.data()[static_cast<size_t>(i)]) any_diff = true;
        }
        CHECK(any_diff);
    }
}

namespace {

// Degenerate LP-BNN configuration: zero KL, exact reconstruction.
std::pair<EnsembleLayerParams, LatentPosterior> degenerate_lpbnn(int m, int p_dim, int members) {
    RngStream s(21);
    EnsembleLayerParams p = make_batchensemble_layer(m, p_dim, members, true, s);
    Tensor shared_u = Tensor::from({m}, std::vector<double>(static_cast<size_t>(m), 1.0));
    for (Tensor& u : p.u) u = shared_u.clone();
    LatentPosterior lp = make_latent_posterior(m, 3, s.substream("vae"));
    std::fill(lp.enc_w.data().begin(), lp.enc_w.data().end(), 0.0);
    std::fill(lp.enc_b.data().begin(), lp.enc_b.data().end(), 0.0);
    std::fill(lp.dec_w.data().begin(), lp.dec_w.data().end(), 0.0);
    std::fill(lp.dec_b.data().begin(), lp.dec_b.data().end(), 1.0);
    return {p, lp};
}

}  // namespace

TEST_CASE("lpbnn_forward degenerates to be_forward with zero kl and recon") {
    auto [p, lp] = degenerate_lpbnn(5, 3, 2);
    Tensor x = Tensor::zeros({4, 5});
    RngStream xs(30);
    for (double& v : x.data()) v = xs.next_normal();
    std::vector<int> member_of = {0, 0, 1, 1};
    RngStream draw(31);
    LpbnnForward fwd = lpbnn_forward(p, lp, x, member_of, Activation::kRelu, draw);
    CHECK(fwd.kl.item() == 0.0);
    CHECK(fwd.recon.item() == 0.0);
    Tensor plain = be_forward(p, x, member_of, Activation::kRelu);
    for (std::int64_t i = 0; i < plain.size(); ++i) {
        CHECK(fwd.output.data()[static_cast<size_t>(i)] == plain.data()[static_cast<size_t>(i)]);
    }
}

TEST_CASE("lpbnn_forward: members disagree when sigma is positive") {
    RngStream s(41);
    EnsembleLayerParams p = make_batchensemble_layer(6, 4, 4, true, s);
    LatentPosterior lp = make_latent_posterior(6, 3, s.substream("vae"));
    // Raise the log-variance bias so sampling noise is clearly visible.
    for (int k = lp.latent_dim; k < 2 * lp.latent_dim; ++k) lp.enc_b.at(k) = 0.0;
    Tensor x_row = Tensor::zeros({1, 6});
    RngStream xs(42);
    for (double& v : x_row.data()) v = xs.next_normal();
    Tensor x = concat({x_row, x_row, x_row, x_row}, 0);
    RngStream draw(43);
    LpbnnForward fwd = lpbnn_forward(p, lp, x, {0, 1, 2, 3}, Activation::kIdentity, draw);
    bool all_same = true;
    for (int j = 1; j < 4; ++j) {
        for (int c = 0; c < 4; ++c) {
            if (fwd.output.at(j, c) != fwd.output.at(0, c)) all_same = false;
        }
    }
    CHECK_FALSE(all_same);
}

TEST_CASE("lpbnn_forward gradients match finite differences with frozen noise") {
    RngStream s(55);
    EnsembleLayerParams p = make_batchensemble_layer(4, 3, 2, true, s);
    LatentPosterior lp = make_latent_posterior(4, 2, s.substream("vae"));
    Tensor x = Tensor::zeros({2, 4});
    RngStream xs(56);
    for (double& v : x.data()) v = xs.next_normal();
    std::vector<int> member_of = {0, 1};
    std::vector<int> labels = {1, 2};
    const std::uint64_t frozen_seed = 77;

    auto loss_with = [&](EnsembleLayerParams params, LatentPosterior vae) {
        RngStream draw(frozen_seed);
        LpbnnForward fwd = lpbnn_forward(params, vae, x, member_of, Activation::kIdentity, draw);
        Tensor ce = cross_entropy_with_logits(fwd.output, labels);
        return add(add(ce, fwd.kl), fwd.recon);
    };

    struct Site {
        const char* name;
        Tensor target;
    };
    std::vector<Site> sites = {{"w_share", p.w_share}, {"u0", p.u[0]},      {"v1", p.v[1]},
                               {"bias", p.bias},       {"enc_w", lp.enc_w}, {"enc_b", lp.enc_b},
                               {"dec_w", lp.dec_w},    {"dec_b", lp.dec_b}};
    for (const Site& site : sites) {
        CAPTURE(site.name);
        auto f = [&](const Tensor& cand) {
            EnsembleLayerParams params = p;
            LatentPosterior vae = lp;
            // Substitute the probed tensor into its slot.
            if (site.target.same_storage(p.w_share)) params.w_share = cand;
            if (site.target.same_storage(p.u[0])) params.u[0] = cand;
            if (site.target.same_storage(p.v[1])) params.v[1] = cand;
            if (site.target.same_storage(p.bias)) params.bias = cand;
            if (site.target.same_storage(lp.enc_w)) vae.enc_w = cand;
            if (site.target.same_storage(lp.enc_b)) vae.enc_b = cand;
            if (site.target.same_storage(lp.dec_w)) vae.dec_w = cand;
            if (site.target.same_storage(lp.dec_b)) vae.dec_b = cand;
            return loss_with(params, vae);
        };
        CHECK(grad_check(f, site.target, 1e-4) <= 1e-4);
    }
}

TEST_CASE("meanfield_forward: matched prior gives zero kl") {
    RngStream s(61);
    MeanFieldParams mf = make_meanfield_layer(3, 2, 1.0, s);
    std::fill(mf.w_mu.data().begin(), mf.w_mu.data().end(), 0.0);
    // softplus(rho) = 1  <=>  rho = log(e - 1).
    double rho = std::log(std::exp(1.0) - 1.0);
    std::fill(mf.w_rho.data().begin(), mf.w_rho.data().end(), rho);
    Tensor x = Tensor::ones({1, 3});
    RngStream draw(62);
    MeanFieldForward fwd = meanfield_forward(mf, x, draw);
    CHECK(fwd.kl.item() == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("meanfield_forward: tiny sigma behaves deterministically") {
    RngStream s(63);
    MeanFieldParams mf = make_meanfield_layer(3, 2, 1.0, s);
    std::fill(mf.w_rho.data().begin(), mf.w_rho.data().end(), -40.0);
    Tensor x = Tensor::from({1, 3}, {1, -1, 2});
    RngStream draw(64);
    MeanFieldForward fwd = meanfield_forward(mf, x, draw);
    for (int j = 0; j < 2; ++j) {
        double expect = 0.0;
        for (int i = 0; i < 3; ++i) expect += x.at(0, i) * mf.w_mu.at(i, j);
        CHECK(fwd.output.at(0, j) == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("meanfield kl matches a Monte-Carlo estimate within 1%") {
    // E_q[log q - log p] over 10^6 draws per weight entry.
    MeanFieldParams mf;
    mf.w_mu = Tensor::from({2, 1}, {0.8, -1.2});
    // sigma = softplus(rho): pick rho so sigma = {0.5, 1.7}.
    auto rho_for = [](double sig) { return std::log(std::exp(sig) - 1.0); };
    mf.w_rho = Tensor::from({2, 1}, {rho_for(0.5), rho_for(1.7)});
    mf.prior_sigma = 1.3;

    Tensor x = Tensor::ones({1, 2});
    RngStream draw(70);
    MeanFieldForward fwd = meanfield_forward(mf, x, draw);
    double closed_form = fwd.kl.item();

    RngStream mc(71);
    const int n = 1000000;
    double est = 0.0;
    double sig0 = 0.5, sig1 = 1.7, prior = 1.3;
    for (int i = 0; i < n; ++i) {
        double z0 = 0.8 + sig0 * mc.next_normal();
        double z1 = -1.2 + sig1 * mc.next_normal();
        double log_q = -0.5 * ((z0 - 0.8) * (z0 - 0.8) / (sig0 * sig0)) - std::log(sig0) -
                       0.5 * ((z1 + 1.2) * (z1 + 1.2) / (sig1 * sig1)) - std::log(sig1);
        double log_p = -0.5 * (z0 * z0 + z1 * z1) / (prior * prior) - 2.0 * std::log(prior);
        est += (log_q - log_p) / n;
    }
    CHECK(std::abs(est - closed_form) <= 0.01 * std::abs(closed_form));
}
