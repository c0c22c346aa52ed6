#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lpbnn/covariance.hpp"
#include "lpbnn/train.hpp"

namespace fs = std::filesystem;
using namespace lpbnn;

namespace {

int run_train(const std::string& config_path, std::optional<std::uint64_t> seed, std::string out_dir) {
    ExperimentConfig cfg = parse_config_file(config_path);
    if (seed) cfg.seed = *seed;
    RunArtifacts artifacts = run_experiment(cfg, out_dir);
    std::cout << "artifacts: " << artifacts.dir << "\n";
    for (const auto& [k, v] : artifacts.report.values) std::cout << "  " << k << " = " << v << "\n";
    if (artifacts.record.divergence_epoch) {
        std::cout << "  divergence_epoch = " << *artifacts.record.divergence_epoch << "\n";
    }
    return 0;
}

std::vector<Model> load_models(const std::string& checkpoint) {
    std::vector<Model> models;
    if (fs::is_directory(checkpoint)) {
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(checkpoint)) {
            std::string name = entry.path().filename().string();
            if (name.rfind("checkpoint", 0) == 0 && entry.path().extension() == ".lpbnn") {
                files.push_back(entry.path().string());
            }
        }
        std::sort(files.begin(), files.end());
        for (const std::string& f : files) models.push_back(load_checkpoint(f).model);
        if (models.empty()) throw IoError("no checkpoint*.lpbnn files in " + checkpoint);
    } else {
        models.push_back(load_checkpoint(checkpoint).model);
    }
    return models;
}

int run_eval(const std::string& checkpoint, const std::string& data_dir, int extra_samples,
             std::uint64_t eval_seed, std::string out_dir) {
    std::vector<Model> models = load_models(checkpoint);
    DatasetBundle data = read_dataset_dir(data_dir);
    EvalResult result = evaluate(models, data, extra_samples, eval_seed);
    if (out_dir.empty()) out_dir = "eval_out";
    fs::create_directories(out_dir);
    write_prediction_csv(out_dir + "/predictions_test.csv", result.test);
    if (result.ood.probs.defined()) write_prediction_csv(out_dir + "/predictions_ood.csv", result.ood);
    for (size_t s = 0; s < result.corrupted.size(); ++s) {
        write_prediction_csv(out_dir + "/predictions_corrupted_s" + std::to_string(s + 1) + ".csv",
                             result.corrupted[s]);
    }
    std::ofstream f(out_dir + "/metrics.json");
    f << result.report.to_json() << "\n";
    std::cout << result.report.to_json() << "\n";
    return 0;
}

int run_metrics(const std::string& pred_path, const std::string& out_path) {
    PredictionBatch batch = read_prediction_csv(pred_path);
    if (batch.labels.empty()) throw ValueError("prediction dump has no labels; cannot compute metrics");
    Tensor mean_probs = ensemble_predict(batch);
    MetricsReport report;
    report.members = batch.members();
    report.timestamp = iso_timestamp();
    report.dataset_id = pred_path;
    report.values["accuracy"] = accuracy(mean_probs, batch.labels);
    report.values["ece"] = ece(mean_probs, batch.labels);
    bool zero_prob = false;
    report.values["nll"] = nll_loss(mean_probs, batch.labels, &zero_prob);
    if (zero_prob) report.flags["nll"] = "zero probability at a true label";
    std::vector<double> entropy = predictive_entropy(mean_probs);
    double mean_entropy = 0.0;
    for (double h : entropy) mean_entropy += h / entropy.size();
    report.values["entropy"] = mean_entropy;
    if (batch.members() >= 2) {
        std::vector<std::vector<std::uint8_t>> correct(static_cast<size_t>(batch.members()));
        for (int j = 0; j < batch.members(); ++j) {
            correct[static_cast<size_t>(j)].resize(static_cast<size_t>(batch.samples()));
            for (int i = 0; i < batch.samples(); ++i) {
                int best = 0;
                for (int c = 1; c < batch.classes(); ++c) {
                    if (batch.probs.at(j, i, c) > batch.probs.at(j, i, best)) best = c;
                }
                correct[static_cast<size_t>(j)][static_cast<size_t>(i)] =
                    best == batch.labels[static_cast<size_t>(i)] ? 1 : 0;
            }
        }
        DiversityStats div = diversity_stats(correct);
        if (std::isfinite(div.ratio_error)) report.values["diversity_ratio_error"] = div.ratio_error;
        report.values["diversity_q_statistic"] = div.q_statistic;
        report.values["diversity_correlation"] = div.corr_coeff;
    }
    std::string json = report.to_json();
    if (!out_path.empty()) {
        std::ofstream f(out_path);
        if (!f) throw IoError("cannot write " + out_path);
        f << json << "\n";
    }
    std::cout << json << "\n";
    return 0;
}

int run_ood(const std::string& in_path, const std::string& out_path, const std::string& json_out) {
    PredictionBatch in_batch = read_prediction_csv(in_path);
    PredictionBatch out_batch = read_prediction_csv(out_path);
    std::vector<double> s_in = mcp_scores(ensemble_predict(in_batch));
    std::vector<double> s_out = mcp_scores(ensemble_predict(out_batch));
    nlohmann::json j;
    j["auroc"] = auroc(s_in, s_out);
    j["aupr"] = aupr(s_in, s_out);
    j["fpr_at_95_tpr"] = fpr_at_95_tpr(s_in, s_out);
    if (!json_out.empty()) {
        std::ofstream f(json_out);
        f << j.dump(2) << "\n";
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

int run_diversity(const std::string& pred_path) {
    PredictionBatch batch = read_prediction_csv(pred_path);
    if (batch.labels.empty()) throw ValueError("prediction dump has no labels; cannot compute diversity");
    if (batch.members() < 2) throw ValueError("diversity needs at least two members");
    std::vector<std::vector<std::uint8_t>> correct(static_cast<size_t>(batch.members()));
    for (int j = 0; j < batch.members(); ++j) {
        correct[static_cast<size_t>(j)].resize(static_cast<size_t>(batch.samples()));
        for (int i = 0; i < batch.samples(); ++i) {
            int best = 0;
            for (int c = 1; c < batch.classes(); ++c) {
                if (batch.probs.at(j, i, c) > batch.probs.at(j, i, best)) best = c;
            }
            correct[static_cast<size_t>(j)][static_cast<size_t>(i)] =
                best == batch.labels[static_cast<size_t>(i)] ? 1 : 0;
        }
    }
    DiversityStats div = diversity_stats(correct);
    nlohmann::json j;
    if (std::isfinite(div.ratio_error))
        j["ratio_error"] = div.ratio_error;
    else
        j["ratio_error"] = "inf";
    j["q_statistic"] = div.q_statistic;
    j["correlation"] = div.corr_coeff;
    j["pairs"] = div.pairs;
    j["ratio_excluded_pairs"] = div.ratio_excluded;
    std::cout << j.dump(2) << "\n";
    return 0;
}

int run_covcheck(const std::string& checkpoint, const std::string& json_out, int n_samples) {
    LoadedCheckpoint loaded = load_checkpoint(checkpoint);
    Model& model = loaded.model;
    if (model.kind() != ModelKind::kLpbnn) {
        throw ValueError("covcheck needs an lpbnn checkpoint, got " + std::string(model_kind_name(model.kind())));
    }
    nlohmann::json layers = nlohmann::json::array();
    for (size_t l = 0; l < model.vae_layers().size(); ++l) {
        const LatentPosterior& lp = model.vae_layers()[l];
        const EnsembleLayerParams& p = model.ensemble_layers()[l];
        Tensor cov = empirical_weight_covariance(p, lp, 0, n_samples, loaded.seed ^ (0xC07ull + l));
        std::vector<double> sv = singular_values_jacobi(cov);
        double frob = 0.0;
        for (double s : sv) frob += s * s;
        frob = std::sqrt(frob);
        double err_at_d = rank_approx_error(cov, lp.latent_dim);
        nlohmann::json entry;
        entry["layer"] = l;
        entry["in_dim"] = p.in_dim();
        entry["latent_dim"] = lp.latent_dim;
        entry["frobenius_norm"] = frob;
        entry["rank_latent_error"] = err_at_d;
        entry["rank_latent_error_rel"] = frob > 0 ? err_at_d / frob : 0.0;
        // Spectrum summary only; full matrices are never emitted above 64x64.
        size_t keep = std::min<size_t>(sv.size(), 16);
        entry["top_singular_values"] = std::vector<double>(sv.begin(), sv.begin() + static_cast<long>(keep));
        layers.push_back(entry);
    }
    nlohmann::json j;
    j["checkpoint"] = checkpoint;
    j["n_samples"] = n_samples;
    j["layers"] = layers;
    if (!json_out.empty()) {
        std::ofstream f(json_out);
        f << j.dump(2) << "\n";
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

int run_sweep(const std::string& config_path, const std::string& lrs_csv, const std::string& json_out) {
    ExperimentConfig base = parse_config_file(config_path);
    std::vector<double> lrs;
    std::stringstream ss(lrs_csv);
    std::string item;
    while (std::getline(ss, item, ',')) lrs.push_back(std::stod(item));
    std::vector<SweepRow> rows = stability_sweep(base, lrs);
    nlohmann::json j = nlohmann::json::array();
    std::cout << "model         lr        accuracy  divergence_epoch\n";
    for (const SweepRow& r : rows) {
        nlohmann::json rj;
        rj["model_kind"] = model_kind_name(r.kind);
        rj["learning_rate"] = r.learning_rate;
        rj["final_accuracy"] = r.final_accuracy;
        if (r.divergence_epoch)
            rj["divergence_epoch"] = *r.divergence_epoch;
        else
            rj["divergence_epoch"] = nullptr;
        j.push_back(rj);
        std::cout << model_kind_name(r.kind) << "\t" << r.learning_rate << "\t" << r.final_accuracy << "\t"
                  << (r.divergence_epoch ? std::to_string(*r.divergence_epoch) : std::string("none")) << "\n";
    }
    if (!json_out.empty()) {
        std::ofstream f(json_out);
        f << j.dump(2) << "\n";
    }
    return 0;
}

int run_gen_data(const std::string& spec_path, const std::string& out_dir) {
    ExperimentConfig cfg = parse_config_file(spec_path);
    DatasetBundle bundle = generate_dataset(cfg.dataset, cfg.seed);
    write_dataset_dir(out_dir, bundle);
    std::cout << "wrote dataset to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale latent-posterior BNN laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint, data_dir, pred, pred_in, pred_out, json_out, lrs, spec_path;
    std::uint64_t seed_value = 0, eval_seed = 12345;
    bool seed_set = false;
    int extra_samples = 0, cov_samples = 20000;

    CLI::App* train_cmd = app.add_subcommand("train", "train a model from a config file and write artifacts");
    train_cmd->add_option("--config", config_path, "config file")->required();
    train_cmd->add_option("--seed", seed_value, "override the config seed")->each([&](const std::string&) {
        seed_set = true;
    });
    train_cmd->add_option("--out", out_dir, "artifact directory");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset directory");
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file or run directory")->required();
    eval_cmd->add_option("--data", data_dir, "dataset directory from gen-data")->required();
    eval_cmd->add_option("--extra-samples", extra_samples, "extra sampling passes for stochastic models");
    eval_cmd->add_option("--seed", eval_seed, "evaluation sampling seed");
    eval_cmd->add_option("--out", out_dir, "output directory");

    CLI::App* metrics_cmd = app.add_subcommand("metrics", "metrics from a prediction dump");
    metrics_cmd->add_option("--pred", pred, "prediction csv")->required();
    metrics_cmd->add_option("--out", json_out, "metrics json path");

    CLI::App* ood_cmd = app.add_subcommand("ood", "OOD detection metrics from two prediction dumps");
    ood_cmd->add_option("--pred-in", pred_in, "in-distribution prediction csv")->required();
    ood_cmd->add_option("--pred-out", pred_out, "out-of-distribution prediction csv")->required();
    ood_cmd->add_option("--out", json_out, "json output path");

    CLI::App* div_cmd = app.add_subcommand("diversity", "pairwise diversity statistics from a prediction dump");
    div_cmd->add_option("--pred", pred, "prediction csv")->required();

    CLI::App* cov_cmd = app.add_subcommand("covcheck", "latent-rank structure of the fast-weight covariance");
    cov_cmd->add_option("--checkpoint", checkpoint, "lpbnn checkpoint")->required();
    cov_cmd->add_option("--out", json_out, "json output path");
    cov_cmd->add_option("--samples", cov_samples, "Monte-Carlo sample count");

    CLI::App* sweep_cmd = app.add_subcommand("sweep-lr", "stability sweep over a learning-rate grid");
    sweep_cmd->add_option("--config", config_path, "base config file")->required();
    sweep_cmd->add_option("--lrs", lrs, "comma-separated learning rates")->required();
    sweep_cmd->add_option("--out", json_out, "json output path");

    CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset directory");
    gen_cmd->add_option("--spec", spec_path, "dataset spec file (config format)")->required();
    gen_cmd->add_option("--out", out_dir, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) {
            return run_train(config_path, seed_set ? std::optional<std::uint64_t>(seed_value) : std::nullopt,
                             out_dir);
        }
        if (eval_cmd->parsed()) return run_eval(checkpoint, data_dir, extra_samples, eval_seed, out_dir);
        if (metrics_cmd->parsed()) return run_metrics(pred, json_out);
        if (ood_cmd->parsed()) return run_ood(pred_in, pred_out, json_out);
        if (div_cmd->parsed()) return run_diversity(pred);
        if (cov_cmd->parsed()) return run_covcheck(checkpoint, json_out, cov_samples);
        if (sweep_cmd->parsed()) return run_sweep(config_path, lrs, json_out);
        if (gen_cmd->parsed()) return run_gen_data(spec_path, out_dir);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
