#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lpbnn/covariance.hpp"
#include "lpbnn/train.hpp"

namespace py = pybind11;
using namespace lpbnn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const Array& arr) {
    std::vector<int> shape;
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape.push_back(static_cast<int>(arr.shape(i)));
    std::vector<double> data(arr.data(), arr.data() + arr.size());
    return Tensor::from(shape, std::move(data));
}

Array array_from(const Tensor& t) {
    std::vector<py::ssize_t> shape;
    for (int d : t.shape()) shape.push_back(d);
    Array arr(shape);
    std::copy(t.data().begin(), t.data().end(), arr.mutable_data());
    return arr;
}

EnsembleLayerParams layer_from(const Array& w_share, const std::vector<Array>& u, const std::vector<Array>& v,
                               const std::optional<Array>& bias) {
    if (u.size() != v.size() || u.empty()) throw ValueError("need matching non-empty u and v lists");
    EnsembleLayerParams p;
    p.w_share = tensor_from(w_share);
    for (const Array& a : u) p.u.push_back(tensor_from(a));
    for (const Array& a : v) p.v.push_back(tensor_from(a));
    if (bias) p.bias = tensor_from(*bias);
    return p;
}

PredictionBatch batch_from(const Array& probs, const std::optional<std::vector<int>>& labels) {
    if (probs.ndim() != 3) throw ShapeError("probs must have shape (members, samples, classes)");
    PredictionBatch b;
    b.probs = tensor_from(probs);
    if (labels) b.labels = *labels;
    return b;
}

py::dict report_to_dict(const MetricsReport& report) {
    py::dict out;
    for (const auto& [k, v] : report.values) out[py::str(k)] = v;
    py::dict flags;
    for (const auto& [k, v] : report.flags) flags[py::str(k)] = v;
    out["flags"] = flags;
    out["members"] = report.members;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "desk-scale latent-posterior BNN laboratory";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_FloatingPointError);
    py::register_exception<ValueError>(m, "InvalidValueError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.def(
        "be_forward",
        [](const Array& w_share, const std::vector<Array>& u, const std::vector<Array>& v,
           const std::optional<Array>& bias, const Array& x, const std::vector<int>& member_of,
           const std::string& activation) {
            EnsembleLayerParams p = layer_from(w_share, u, v, bias);
            Activation act = activation == "relu"       ? Activation::kRelu
                             : activation == "softplus" ? Activation::kSoftplus
                                                        : Activation::kIdentity;
            return array_from(be_forward(p, tensor_from(x), member_of, act));
        },
        py::arg("w_share"), py::arg("u"), py::arg("v"), py::arg("bias"), py::arg("x"), py::arg("member_of"),
        py::arg("activation") = "identity",
        "BatchEnsemble forward pass: row b is routed through member member_of[b].");

    m.def(
        "materialize_member_weight",
        [](const Array& w_share, const std::vector<Array>& u, const std::vector<Array>& v, int member) {
            EnsembleLayerParams p = layer_from(w_share, u, v, std::nullopt);
            return array_from(materialize_member_weight(p, member));
        },
        py::arg("w_share"), py::arg("u"), py::arg("v"), py::arg("member"),
        "w_share .* (u_j v_j^T) for one member.");

    m.def(
        "lpbnn_layer_forward",
        [](const Array& w_share, const std::vector<Array>& u, const std::vector<Array>& v,
           const std::optional<Array>& bias, const Array& enc_w, const Array& enc_b, const Array& dec_w,
           const Array& dec_b, const Array& x, const std::vector<int>& member_of, std::uint64_t seed) {
            EnsembleLayerParams p = layer_from(w_share, u, v, bias);
            LatentPosterior lp;
            lp.enc_w = tensor_from(enc_w);
            lp.enc_b = tensor_from(enc_b);
            lp.dec_w = tensor_from(dec_w);
            lp.dec_b = tensor_from(dec_b);
            lp.latent_dim = lp.dec_w.dim(0);
            RngStream stream(seed);
            LpbnnForward fwd = lpbnn_forward(p, lp, tensor_from(x), member_of, Activation::kIdentity, stream);
            return py::make_tuple(array_from(fwd.output), fwd.kl.item(), fwd.recon.item());
        },
        py::arg("w_share"), py::arg("u"), py::arg("v"), py::arg("bias"), py::arg("enc_w"), py::arg("enc_b"),
        py::arg("dec_w"), py::arg("dec_b"), py::arg("x"), py::arg("member_of"), py::arg("seed"),
        "One LP-BNN layer pass; returns (output, kl, reconstruction_error).");

    m.def(
        "ensemble_predict",
        [](const Array& probs) { return array_from(ensemble_predict(batch_from(probs, std::nullopt))); },
        py::arg("probs"), "Mean of the per-member probabilities, shape (samples, classes).");

    m.def(
        "ece",
        [](const Array& probs_mean, const std::vector<int>& labels, int bins) {
            return ece(tensor_from(probs_mean), labels, bins);
        },
        py::arg("probs_mean"), py::arg("labels"), py::arg("bins") = 15);

    m.def(
        "accuracy",
        [](const Array& probs_mean, const std::vector<int>& labels) {
            return accuracy(tensor_from(probs_mean), labels);
        },
        py::arg("probs_mean"), py::arg("labels"));

    m.def("auroc", &auroc, py::arg("scores_in"), py::arg("scores_out"));
    m.def("aupr", &aupr, py::arg("scores_in"), py::arg("scores_out"));
    m.def("fpr_at_95_tpr", &fpr_at_95_tpr, py::arg("scores_in"), py::arg("scores_out"));

    m.def(
        "predictive_entropy",
        [](const Array& probs_mean) { return predictive_entropy(tensor_from(probs_mean)); },
        py::arg("probs_mean"));

    m.def(
        "diversity_stats",
        [](const std::vector<std::vector<std::uint8_t>>& member_correct) {
            DiversityStats d = diversity_stats(member_correct);
            py::dict out;
            out["ratio_error"] = d.ratio_error;
            out["q_statistic"] = d.q_statistic;
            out["correlation"] = d.corr_coeff;
            out["pairs"] = d.pairs;
            out["ratio_excluded_pairs"] = d.ratio_excluded;
            return out;
        },
        py::arg("member_correct"));

    m.def(
        "kl_diag_gaussian_std",
        [](const Array& mu, const Array& sigma) { return kl_diag_gaussian_std(tensor_from(mu), tensor_from(sigma)); },
        py::arg("mu"), py::arg("sigma"));

    m.def(
        "singular_values",
        [](const Array& mat) { return singular_values_jacobi(tensor_from(mat)); },
        py::arg("matrix"), "Singular values by one-sided Jacobi sweeps, descending.");

    m.def(
        "rank_approx_error",
        [](const Array& mat, int k) { return rank_approx_error(tensor_from(mat), k); },
        py::arg("matrix"), py::arg("k"));

    m.def(
        "implicit_covariance_matrix",
        [](const Array& alpha, const Array& z_var) {
            LatentFactorModel model{tensor_from(alpha), tensor_from(z_var)};
            return array_from(implicit_covariance_matrix(model));
        },
        py::arg("alpha"), py::arg("z_var"));

    m.def(
        "generate_dataset",
        [](const std::string& config_text) {
            ExperimentConfig cfg = parse_config_text(config_text);
            DatasetBundle data = generate_dataset(cfg.dataset, cfg.seed);
            py::dict out;
            out["train_x"] = array_from(data.train.x);
            out["train_y"] = data.train.labels;
            out["test_x"] = array_from(data.test.x);
            out["test_y"] = data.test.labels;
            out["ood_x"] = array_from(data.ood_test.x);
            py::list corrupted;
            for (const Dataset& c : data.corrupted) corrupted.append(array_from(c.x));
            out["corrupted_x"] = corrupted;
            out["n_classes"] = data.n_classes;
            return out;
        },
        py::arg("config_text"), "Synthetic splits from a config string.");

    m.def(
        "run",
        [](const std::string& config_text) {
            ExperimentConfig cfg = parse_config_text(config_text);
            TrainResult result = train(cfg);
            EvalResult eval = evaluate(result.models, result.data, cfg.extra_samples, cfg.seed ^ 0xE7A1u);
            py::dict out = report_to_dict(eval.report);
            if (result.record.divergence_epoch)
                out["divergence_epoch"] = *result.record.divergence_epoch;
            else
                out["divergence_epoch"] = py::none();
            return out;
        },
        py::arg("config_text"), "Train and evaluate one configuration; returns the metric dict.");

    m.def(
        "run_experiment",
        [](const std::string& config_path, const std::string& out_dir) {
            ExperimentConfig cfg = parse_config_file(config_path);
            RunArtifacts artifacts = run_experiment(cfg, out_dir);
            py::dict out = report_to_dict(artifacts.report);
            out["dir"] = artifacts.dir;
            return out;
        },
        py::arg("config_path"), py::arg("out_dir") = "",
        "Full pipeline from a config file; writes the artifact directory.");

    m.attr("__version__") = "0.1.0";
}
