#include "lpbnn/covariance.hpp"

#include <algorithm>
#include <cmath>

namespace lpbnn {

namespace {

void check_factor_model(const LatentFactorModel& model) {
    if (!model.alpha.defined() || model.alpha.rank() != 2 || !model.z_var.defined() || model.z_var.rank() != 1 ||
        model.alpha.dim(1) != model.z_var.dim(0)) {
        throw ShapeError("latent factor model needs alpha (n,K) and z_var (K)");
    }
    for (double v : model.z_var.data()) {
        if (v < 0.0) throw ValueError("latent factor model: negative latent variance");
    }
}

}  // namespace

double implicit_variance(const LatentFactorModel& model, int w_index) {
    return implicit_covariance(model, w_index, w_index);
}

double implicit_covariance(const LatentFactorModel& model, int w_index_a, int w_index_b) {
    check_factor_model(model);
    int n = model.alpha.dim(0), k_count = model.alpha.dim(1);
    if (w_index_a < 0 || w_index_a >= n || w_index_b < 0 || w_index_b >= n) {
        throw ValueError("implicit_covariance: weight index out of range");
    }
    double acc = 0.0;
    for (int k = 0; k < k_count; ++k) {
        acc += model.alpha.at(w_index_a, k) * model.alpha.at(w_index_b, k) * model.z_var.at(k);
    }
    return acc;
}

Tensor implicit_covariance_matrix(const LatentFactorModel& model) {
    check_factor_model(model);
    int n = model.alpha.dim(0);
    Tensor cov = Tensor::zeros({n, n});
    for (int a = 0; a < n; ++a) {
        for (int b = a; b < n; ++b) {
            double c = implicit_covariance(model, a, b);
            cov.at(a, b) = c;
            cov.at(b, a) = c;
        }
    }
    return cov;
}

Tensor mlp_forward(const MlpWeights& net, const Tensor& x) {
    if (net.weights.empty() || net.weights.size() != net.biases.size()) {
        throw ShapeError("mlp_forward: malformed network");
    }
    int batch = x.dim(0);
    Tensor h = x;
    for (size_t l = 0; l < net.weights.size(); ++l) {
        const Tensor& w = net.weights[l];
        const Tensor& b = net.biases[l];
        if (h.dim(1) != w.dim(0)) throw ShapeError("mlp_forward: layer shape mismatch");
        Tensor out = Tensor::zeros({batch, w.dim(1)});
        bool last = l + 1 == net.weights.size();
        for (int i = 0; i < batch; ++i) {
            for (int j = 0; j < w.dim(1); ++j) {
                double acc = b.at(j);
                for (int t = 0; t < w.dim(0); ++t) acc += h.at(i, t) * w.at(t, j);
                out.at(i, j) = last ? acc : std::max(acc, 0.0);
            }
        }
        h = out;
    }
    return h;
}

AveragingResult averaging_consistency(const std::vector<MlpWeights>& networks, const Tensor& x_batch) {
    if (networks.empty()) throw ValueError("averaging_consistency: no networks");
    const MlpWeights& ref = networks[0];
    for (const MlpWeights& net : networks) {
        if (net.weights.size() != ref.weights.size()) throw ShapeError("averaging_consistency: depth mismatch");
        for (size_t l = 0; l < net.weights.size(); ++l) {
            if (net.weights[l].shape() != ref.weights[l].shape() || net.biases[l].shape() != ref.biases[l].shape()) {
                throw ShapeError("averaging_consistency: architecture mismatch at layer " + std::to_string(l));
            }
        }
    }
    double j_count = static_cast<double>(networks.size());

    MlpWeights avg;
    for (size_t l = 0; l < ref.weights.size(); ++l) {
        Tensor w = Tensor::zeros(ref.weights[l].shape());
        Tensor b = Tensor::zeros(ref.biases[l].shape());
        for (const MlpWeights& net : networks) {
            for (std::int64_t i = 0; i < w.size(); ++i)
                w.data()[static_cast<size_t>(i)] += net.weights[l].data()[static_cast<size_t>(i)] / j_count;
            for (std::int64_t i = 0; i < b.size(); ++i)
                b.data()[static_cast<size_t>(i)] += net.biases[l].data()[static_cast<size_t>(i)] / j_count;
        }
        avg.weights.push_back(w);
        avg.biases.push_back(b);
    }

    double delta = 0.0;
    for (const MlpWeights& net : networks) {
        double sq = 0.0;
        for (size_t l = 0; l < net.weights.size(); ++l) {
            for (std::int64_t i = 0; i < net.weights[l].size(); ++i) {
                double diff = net.weights[l].data()[static_cast<size_t>(i)] - avg.weights[l].data()[static_cast<size_t>(i)];
                sq += diff * diff;
            }
            for (std::int64_t i = 0; i < net.biases[l].size(); ++i) {
                double diff = net.biases[l].data()[static_cast<size_t>(i)] - avg.biases[l].data()[static_cast<size_t>(i)];
                sq += diff * diff;
            }
        }
        delta = std::max(delta, std::sqrt(sq));
    }

    Tensor f_avg = mlp_forward(avg, x_batch);
    std::vector<Tensor> member_out;
    member_out.reserve(networks.size());
    for (const MlpWeights& net : networks) member_out.push_back(mlp_forward(net, x_batch));

    double residual = 0.0;
    int batch = x_batch.dim(0), out_dim = f_avg.dim(1);
    for (int i = 0; i < batch; ++i) {
        double sq = 0.0;
        for (int c = 0; c < out_dim; ++c) {
            double m = 0.0;
            for (const Tensor& out : member_out) m += out.at(i, c) / j_count;
            double diff = m - f_avg.at(i, c);
            sq += diff * diff;
        }
        residual = std::max(residual, std::sqrt(sq));
    }
    return {residual, delta};
}

std::vector<double> singular_values_jacobi(const Tensor& mat, double tol) {
    if (mat.rank() != 2) throw ShapeError("singular_values_jacobi: expected a matrix");
    int rows = mat.dim(0), cols = mat.dim(1);
    // Work on the orientation with fewer columns; singular values are shared.
    bool transpose = cols > rows;
    int m = transpose ? cols : rows;
    int n = transpose ? rows : cols;
    std::vector<std::vector<double>> col(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(m)));
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            if (transpose)
                col[static_cast<size_t>(i)][static_cast<size_t>(j)] = mat.at(i, j);
            else
                col[static_cast<size_t>(j)][static_cast<size_t>(i)] = mat.at(i, j);
        }
    }

    auto dot = [m](const std::vector<double>& a, const std::vector<double>& b) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) acc += a[static_cast<size_t>(i)] * b[static_cast<size_t>(i)];
        return acc;
    };

    const int max_sweeps = 60;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                auto& cp = col[static_cast<size_t>(p)];
                auto& cq = col[static_cast<size_t>(q)];
                double app = dot(cp, cp), aqq = dot(cq, cq), apq = dot(cp, cq);
                if (std::abs(apq) <= tol * std::sqrt(app * aqq)) continue;
                rotated = true;
                double zeta = (aqq - app) / (2.0 * apq);
                double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = c * t;
                for (int i = 0; i < m; ++i) {
                    double vp = cp[static_cast<size_t>(i)], vq = cq[static_cast<size_t>(i)];
                    cp[static_cast<size_t>(i)] = c * vp - s * vq;
                    cq[static_cast<size_t>(i)] = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<double> sv(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) sv[static_cast<size_t>(j)] = std::sqrt(dot(col[static_cast<size_t>(j)], col[static_cast<size_t>(j)]));
    std::sort(sv.begin(), sv.end(), std::greater<>());
    return sv;
}

double rank_approx_error(const Tensor& mat, int k) {
    if (mat.rank() != 2) throw ShapeError("rank_approx_error: expected a matrix");
    int min_dim = std::min(mat.dim(0), mat.dim(1));
    if (k < 1 || k > min_dim) {
        throw ValueError("rank_approx_error: k must be in [1, " + std::to_string(min_dim) + "]");
    }
    std::vector<double> sv = singular_values_jacobi(mat);
    double tail = 0.0;
    for (size_t i = static_cast<size_t>(k); i < sv.size(); ++i) tail += sv[i] * sv[i];
    return std::sqrt(tail);
}

Tensor empirical_weight_covariance(const EnsembleLayerParams& params, const LatentPosterior& lp, int member,
                                   int n_samples, std::uint64_t rng_seed) {
    if (n_samples < 2) throw ValueError("empirical_weight_covariance: need at least two samples");
    if (member < 0 || member >= params.members()) {
        throw ValueError("empirical_weight_covariance: invalid member index " + std::to_string(member));
    }
    LatentPosterior scratch = lp;
    Tensor u_batch = stack_rows(params.u).detached();
    auto [mu_all, sigma_all] = lpbnn_encode(scratch, u_batch);
    int d = lp.latent_dim, m = params.in_dim();
    std::vector<double> mu(static_cast<size_t>(d)), sigma(static_cast<size_t>(d));
    for (int k = 0; k < d; ++k) {
        mu[static_cast<size_t>(k)] = mu_all.at(member, k);
        sigma[static_cast<size_t>(k)] = sigma_all.at(member, k);
    }

    RngStream stream(rng_seed);
    double fan_in = std::sqrt(static_cast<double>(d));
    std::vector<double> mean(static_cast<size_t>(m), 0.0);
    std::vector<double> cross(static_cast<size_t>(m) * static_cast<size_t>(m), 0.0);
    std::vector<double> sample(static_cast<size_t>(m));
    std::vector<double> z(static_cast<size_t>(d));
    for (int s = 0; s < n_samples; ++s) {
        for (int k = 0; k < d; ++k) z[static_cast<size_t>(k)] = mu[static_cast<size_t>(k)] + sigma[static_cast<size_t>(k)] * stream.next_normal();
        for (int i = 0; i < m; ++i) {
            double acc = lp.dec_b.at(i);
            for (int k = 0; k < d; ++k) acc += (z[static_cast<size_t>(k)] / fan_in) * lp.dec_w.at(k, i);
            sample[static_cast<size_t>(i)] = acc;
        }
        for (int i = 0; i < m; ++i) {
            mean[static_cast<size_t>(i)] += sample[static_cast<size_t>(i)];
            for (int j = 0; j < m; ++j) {
                cross[static_cast<size_t>(i) * static_cast<size_t>(m) + static_cast<size_t>(j)] +=
                    sample[static_cast<size_t>(i)] * sample[static_cast<size_t>(j)];
            }
        }
    }
    Tensor cov = Tensor::zeros({m, m});
    double n = static_cast<double>(n_samples);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            double c = cross[static_cast<size_t>(i) * static_cast<size_t>(m) + static_cast<size_t>(j)] -
                       mean[static_cast<size_t>(i)] * mean[static_cast<size_t>(j)] / n;
            cov.at(i, j) = c / (n - 1.0);
        }
    }
    return cov;
}

}  // namespace lpbnn
