#include "lpbnn/models.hpp"

#include <cmath>

namespace lpbnn {

namespace {

std::vector<int> layer_dims(int input_dim, const std::vector<int>& hidden, int n_classes) {
    std::vector<int> dims;
    dims.push_back(input_dim);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(n_classes);
    return dims;
}

void pin_ones(Tensor& t) {
    std::fill(t.data().begin(), t.data().end(), 1.0);
}

}  // namespace

Model Model::build(const ExperimentConfig& cfg, ModelKind kind, int input_dim, int n_classes,
                   std::uint64_t seed) {
    if (kind == ModelKind::kDeepEnsemble) {
        throw ValueError("deep ensembles are assembled from deterministic members by the harness");
    }
    Model m;
    m.kind_ = kind;
    m.input_dim_ = input_dim;
    m.n_classes_ = n_classes;
    m.members_ = kind == ModelKind::kBatchEnsemble || kind == ModelKind::kLpbnn ? cfg.members : 1;
    m.latent_dim_ = cfg.latent_dim;
    m.widths_ = cfg.layer_widths;
    m.prior_sigma_ = cfg.prior_sigma;
    m.freeze_fast_ = cfg.freeze_fast_weights;
    m.identity_vae_ = cfg.identity_vae;
    m.input_shift_ = Tensor::zeros({input_dim});
    m.input_scale_ = Tensor::ones({input_dim});

    // Layer init streams depend only on (seed, layer index, role), never on
    // the model family, so every family starts from the same slow weights.
    RngStream init = RngStream(seed).substream("init");
    std::vector<int> dims = layer_dims(input_dim, cfg.layer_widths, n_classes);
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        RngStream layer_stream = init.substream("layer", l);
        int in = dims[l], out = dims[l + 1];
        switch (kind) {
            case ModelKind::kDeterministic: {
                EnsembleLayerParams seed_layer = make_batchensemble_layer(in, out, 1, true, layer_stream);
                m.dense_.push_back({seed_layer.w_share, seed_layer.bias});
                break;
            }
            case ModelKind::kBatchEnsemble:
            case ModelKind::kLpbnn: {
                EnsembleLayerParams layer = make_batchensemble_layer(in, out, m.members_, true, layer_stream);
                if (m.freeze_fast_) {
                    for (Tensor& u : layer.u) pin_ones(u);
                    for (Tensor& v : layer.v) pin_ones(v);
                }
                m.ensemble_.push_back(std::move(layer));
                if (kind == ModelKind::kLpbnn) {
                    LatentPosterior lp = make_latent_posterior(in, cfg.latent_dim, layer_stream.substream("vae"));
                    if (m.identity_vae_) {
                        // Zero encoder (mu = 0, sigma = 1, zero KL) and a
                        // constant decoder reproducing the all-ones fast
                        // vectors exactly (zero reconstruction error).
                        std::fill(lp.enc_w.data().begin(), lp.enc_w.data().end(), 0.0);
                        std::fill(lp.enc_b.data().begin(), lp.enc_b.data().end(), 0.0);
                        std::fill(lp.dec_w.data().begin(), lp.dec_w.data().end(), 0.0);
                        pin_ones(lp.dec_b);
                    }
                    m.vae_.push_back(std::move(lp));
                }
                break;
            }
            case ModelKind::kMeanField: {
                m.meanfield_.push_back(make_meanfield_layer(in, out, cfg.prior_sigma, layer_stream));
                break;
            }
            case ModelKind::kDeepEnsemble:
                break;
        }
    }
    return m;
}

void Model::set_input_standardizer(const Tensor& shift, const Tensor& scale) {
    if (shift.size() != input_dim_ || scale.size() != input_dim_) {
        throw ShapeError("input standardizer does not match the input dimension");
    }
    for (double s : scale.data()) {
        if (s <= 0.0) throw ValueError("input scale entries must be positive");
    }
    input_shift_ = shift.detached();
    input_scale_ = scale.detached();
}

Model::ForwardResult Model::forward(const Tensor& x, const std::vector<int>& member_of,
                                    RngStream sample_stream) {
    ForwardResult out;
    // Standardize inputs with the fitted constants; plain data, no tape.
    Tensor h = Tensor::zeros(x.shape());
    for (int i = 0; i < x.dim(0); ++i) {
        for (int d = 0; d < input_dim_; ++d) {
            h.at(i, d) = (x.at(i, d) - input_shift_.at(d)) / input_scale_.at(d);
        }
    }
    int layers = layer_count();
    for (int l = 0; l < layers; ++l) {
        Activation act = l + 1 == layers ? Activation::kIdentity : Activation::kRelu;
        switch (kind_) {
            case ModelKind::kDeterministic: {
                DenseLayerParams& p = dense_[static_cast<size_t>(l)];
                h = apply_activation(add(matmul(h, p.w), broadcast_rows(p.b, h.dim(0))), act);
                break;
            }
            case ModelKind::kBatchEnsemble: {
                h = be_forward(ensemble_[static_cast<size_t>(l)], h, member_of, act);
                break;
            }
            case ModelKind::kLpbnn: {
                RngStream ls = sample_stream.substream("layer", static_cast<std::uint64_t>(l));
                LpbnnForward fwd = lpbnn_forward(ensemble_[static_cast<size_t>(l)], vae_[static_cast<size_t>(l)],
                                                 h, member_of, act, ls);
                h = fwd.output;
                out.layer_terms.emplace_back(fwd.kl, fwd.recon);
                break;
            }
            case ModelKind::kMeanField: {
                RngStream ls = sample_stream.substream("layer", static_cast<std::uint64_t>(l));
                MeanFieldForward fwd = meanfield_forward(meanfield_[static_cast<size_t>(l)], h, ls);
                h = apply_activation(fwd.output, act);
                out.mf_kl = out.mf_kl.defined() ? add(out.mf_kl, fwd.kl) : fwd.kl;
                break;
            }
            case ModelKind::kDeepEnsemble:
                throw ValueError("deep ensemble models are not forwarded directly");
        }
    }
    out.logits = h;
    return out;
}

std::vector<ParamGroup> Model::param_groups(double wd_slow, double wd_fast) const {
    ParamGroup slow{"slow", {}, wd_slow};
    ParamGroup fast{"fast", {}, wd_fast};
    ParamGroup variational{"variational", {}, 0.0};
    for (const DenseLayerParams& p : dense_) {
        slow.params.push_back(p.w);
        slow.params.push_back(p.b);
    }
    for (const EnsembleLayerParams& p : ensemble_) {
        slow.params.push_back(p.w_share);
        if (p.bias.defined()) slow.params.push_back(p.bias);
        for (const Tensor& u : p.u) fast.params.push_back(u);
        for (const Tensor& v : p.v) fast.params.push_back(v);
    }
    for (const LatentPosterior& lp : vae_) {
        variational.params.push_back(lp.enc_w);
        variational.params.push_back(lp.enc_b);
        variational.params.push_back(lp.dec_w);
        variational.params.push_back(lp.dec_b);
    }
    for (const MeanFieldParams& p : meanfield_) {
        variational.params.push_back(p.w_mu);
        variational.params.push_back(p.w_rho);
    }
    return {slow, fast, variational};
}

std::vector<Tensor> Model::trainable_params() const {
    std::vector<Tensor> out;
    for (const ParamGroup& g : param_groups(0.0, 0.0)) {
        if (g.name == "fast" && freeze_fast_) continue;
        if (g.name == "variational" && identity_vae_) continue;
        for (const Tensor& t : g.params) out.push_back(t);
    }
    return out;
}

std::vector<Tensor> Model::all_params() const {
    std::vector<Tensor> out;
    for (const ParamGroup& g : param_groups(0.0, 0.0)) {
        for (const Tensor& t : g.params) out.push_back(t);
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> Model::named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("input.shift", input_shift_);
    out.emplace_back("input.scale", input_scale_);
    auto layer_tag = [](int l) { return "layer" + std::to_string(l); };
    for (size_t l = 0; l < dense_.size(); ++l) {
        out.emplace_back(layer_tag(static_cast<int>(l)) + ".w", dense_[l].w);
        out.emplace_back(layer_tag(static_cast<int>(l)) + ".b", dense_[l].b);
    }
    for (size_t l = 0; l < ensemble_.size(); ++l) {
        const EnsembleLayerParams& p = ensemble_[l];
        std::string tag = layer_tag(static_cast<int>(l));
        out.emplace_back(tag + ".w_share", p.w_share);
        if (p.bias.defined()) out.emplace_back(tag + ".bias", p.bias);
        for (size_t j = 0; j < p.u.size(); ++j) {
            out.emplace_back(tag + ".u" + std::to_string(j), p.u[j]);
            out.emplace_back(tag + ".v" + std::to_string(j), p.v[j]);
        }
    }
    for (size_t l = 0; l < vae_.size(); ++l) {
        const LatentPosterior& lp = vae_[l];
        std::string tag = layer_tag(static_cast<int>(l));
        out.emplace_back(tag + ".enc_w", lp.enc_w);
        out.emplace_back(tag + ".enc_b", lp.enc_b);
        out.emplace_back(tag + ".dec_w", lp.dec_w);
        out.emplace_back(tag + ".dec_b", lp.dec_b);
    }
    for (size_t l = 0; l < meanfield_.size(); ++l) {
        std::string tag = layer_tag(static_cast<int>(l));
        out.emplace_back(tag + ".w_mu", meanfield_[l].w_mu);
        out.emplace_back(tag + ".w_rho", meanfield_[l].w_rho);
    }
    return out;
}

Model Model::snapshot() const {
    Model copy = *this;
    copy.input_shift_ = input_shift_.clone();
    copy.input_scale_ = input_scale_.clone();
    copy.dense_.clear();
    copy.ensemble_.clear();
    copy.vae_.clear();
    copy.meanfield_.clear();
    for (const DenseLayerParams& p : dense_) copy.dense_.push_back({p.w.clone(), p.b.clone()});
    for (const EnsembleLayerParams& p : ensemble_) {
        EnsembleLayerParams q;
        q.w_share = p.w_share.clone();
        if (p.bias.defined()) q.bias = p.bias.clone();
        for (const Tensor& u : p.u) q.u.push_back(u.clone());
        for (const Tensor& v : p.v) q.v.push_back(v.clone());
        copy.ensemble_.push_back(std::move(q));
    }
    for (const LatentPosterior& lp : vae_) {
        LatentPosterior q;
        q.enc_w = lp.enc_w.clone();
        q.enc_b = lp.enc_b.clone();
        q.dec_w = lp.dec_w.clone();
        q.dec_b = lp.dec_b.clone();
        q.latent_dim = lp.latent_dim;
        copy.vae_.push_back(std::move(q));
    }
    for (const MeanFieldParams& p : meanfield_) {
        MeanFieldParams q;
        q.w_mu = p.w_mu.clone();
        q.w_rho = p.w_rho.clone();
        q.prior_sigma = p.prior_sigma;
        copy.meanfield_.push_back(std::move(q));
    }
    return copy;
}

}  // namespace lpbnn
