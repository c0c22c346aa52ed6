#include "lpbnn/objectives.hpp"

#include <cmath>
#include <limits>

namespace lpbnn {

double nll_loss(const Tensor& probs, const std::vector<int>& labels, bool* zero_prob_flag) {
    if (probs.rank() != 2) throw ShapeError("nll_loss: expected (batch, classes) probabilities");
    int batch = probs.dim(0), classes = probs.dim(1);
    if (static_cast<int>(labels.size()) != batch) {
        throw ShapeError("nll_loss: labels length " + std::to_string(labels.size()) + " vs batch " +
                         std::to_string(batch));
    }
    for (int b = 0; b < batch; ++b) {
        double row_sum = 0.0;
        for (int c = 0; c < classes; ++c) row_sum += probs.at(b, c);
        if (std::abs(row_sum - 1.0) > 1e-8) {
            throw ValueError("nll_loss: probabilities of row " + std::to_string(b) + " sum to " +
                             std::to_string(row_sum));
        }
    }
    if (zero_prob_flag) *zero_prob_flag = false;
    double acc = 0.0;
    for (int b = 0; b < batch; ++b) {
        int y = labels[static_cast<size_t>(b)];
        if (y < 0 || y >= classes) throw ValueError("nll_loss: label out of range: " + std::to_string(y));
        double p = probs.at(b, y);
        if (p <= 0.0) {
            if (zero_prob_flag) *zero_prob_flag = true;
            return std::numeric_limits<double>::infinity();
        }
        acc -= std::log(p);
    }
    return acc / static_cast<double>(batch);
}

double map_regularizer(const std::vector<ParamGroup>& groups) {
    double total = 0.0;
    for (const ParamGroup& g : groups) {
        if (g.coeff < 0.0) throw ValueError("map_regularizer: negative coefficient for group " + g.name);
        double sq = 0.0;
        for (const Tensor& t : g.params) {
            for (double x : t.data()) sq += x * x;
        }
        total += g.coeff * sq;
    }
    return total;
}

Tensor map_regularizer_term(const std::vector<ParamGroup>& groups) {
    Tensor term;
    for (const ParamGroup& g : groups) {
        if (g.coeff < 0.0) throw ValueError("map_regularizer: negative coefficient for group " + g.name);
        if (g.coeff == 0.0) continue;
        for (const Tensor& t : g.params) {
            Tensor part = scale(sum_squares(t), g.coeff);
            term = term.defined() ? add(term, part) : part;
        }
    }
    return term;
}

double kl_diag_gaussian_std(const Tensor& mu, const Tensor& sigma) {
    if (mu.shape() != sigma.shape()) {
        throw ShapeError("kl_diag_gaussian_std: shapes do not conform: " + mu.shape_str() + " vs " +
                         sigma.shape_str());
    }
    double acc = 0.0;
    for (std::int64_t i = 0; i < mu.size(); ++i) {
        double m = mu.data()[static_cast<size_t>(i)];
        double s = sigma.data()[static_cast<size_t>(i)];
        if (s <= 0.0) throw ValueError("kl_diag_gaussian_std: non-positive sigma entry");
        acc += m * m + s * s - std::log(s * s) - 1.0;
    }
    return 0.5 * acc;
}

LossBreakdown lpbnn_total_loss(const Tensor& probs, const std::vector<int>& labels,
                               const std::vector<std::pair<double, double>>& per_layer_terms,
                               const std::vector<ParamGroup>& groups) {
    if (per_layer_terms.empty()) throw ValueError("lpbnn_total_loss: empty per-layer term list");
    LossBreakdown out;
    out.nll = nll_loss(probs, labels);
    out.weight_decay = map_regularizer(groups);
    out.num_layers = static_cast<int>(per_layer_terms.size());
    for (const auto& [kl, recon] : per_layer_terms) {
        out.kl_total += kl;
        out.recon_total += recon;
    }
    out.total = out.nll + out.weight_decay + (out.kl_total + out.recon_total) / out.num_layers;
    return out;
}

double elbo_bnn_loss(const Tensor& probs, const std::vector<int>& labels, double kl_weights, int n_minibatches) {
    if (n_minibatches < 1) throw ValueError("elbo_bnn_loss: n_minibatches must be >= 1");
    if (kl_weights < 0.0) throw ValueError("elbo_bnn_loss: negative kl term");
    return nll_loss(probs, labels) + kl_weights / static_cast<double>(n_minibatches);
}

}  // namespace lpbnn
