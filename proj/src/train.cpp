#include "lpbnn/train.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "lpbnn/covariance.hpp"

namespace lpbnn {

namespace fs = std::filesystem;

int worker_count() {
    const char* env = std::getenv("LPBNN_THREADS");
    if (env == nullptr) return 1;
    int n = std::atoi(env);
    return n < 1 ? 1 : n;
}

void parallel_for(int n, const std::function<void(int)>& fn) {
    int workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                int i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::string iso_timestamp() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

namespace {

std::vector<int> contiguous_member_slices(int batch, int members) {
    std::vector<int> member_of(static_cast<size_t>(batch));
    int per = batch / members;
    for (int b = 0; b < batch; ++b) member_of[static_cast<size_t>(b)] = std::min(b / per, members - 1);
    return member_of;
}

struct StepLoss {
    Tensor total;
    EpochLoss breakdown;
};

StepLoss compose_loss(Model& model, const Model::ForwardResult& fwd, const std::vector<int>& labels,
                      const ExperimentConfig& cfg, int n_minibatches) {
    StepLoss out;
    Tensor ce = cross_entropy_with_logits(fwd.logits, labels);
    out.breakdown.nll = ce.item();
    Tensor total = ce;
    switch (model.kind()) {
        case ModelKind::kDeterministic:
        case ModelKind::kBatchEnsemble:
        case ModelKind::kLpbnn: {
            auto groups = model.param_groups(cfg.weight_decay_slow, cfg.weight_decay_fast);
            Tensor decay = map_regularizer_term(groups);
            if (decay.defined()) {
                total = add(total, decay);
                out.breakdown.weight_decay = decay.item();
            }
            if (model.kind() == ModelKind::kLpbnn) {
                Tensor var_sum;
                for (const auto& [kl, recon] : fwd.layer_terms) {
                    out.breakdown.kl += kl.item();
                    out.breakdown.recon += recon.item();
                    Tensor term = add(kl, recon);
                    var_sum = var_sum.defined() ? add(var_sum, term) : term;
                }
                total = add(total, scale(var_sum, 1.0 / model.layer_count()));
            }
            break;
        }
        case ModelKind::kMeanField: {
            out.breakdown.kl = fwd.mf_kl.item();
            total = add(total, scale(fwd.mf_kl, 1.0 / n_minibatches));
            break;
        }
        case ModelKind::kDeepEnsemble:
            throw ValueError("deep ensemble members train as deterministic models");
    }
    out.total = total;
    out.breakdown.total = out.total.item();
    return out;
}

// Healthy desk-scale parameters stay far below this; beyond it the next
// forward passes inevitably overflow, so the run is already divergent.
constexpr double kParamMagnitudeLimit = 1e6;

bool params_healthy(const Model& model) {
    for (const Tensor& t : model.all_params()) {
        for (double v : t.data()) {
            if (!std::isfinite(v) || std::abs(v) > kParamMagnitudeLimit) return false;
        }
    }
    return true;
}

// Fit the per-feature affine standardizer on the train split.
void fit_input_standardizer(Model& model, const Dataset& train_split) {
    int n = train_split.samples(), dim = train_split.dim();
    Tensor shift = Tensor::zeros({dim});
    Tensor scale_t = Tensor::ones({dim});
    for (int d = 0; d < dim; ++d) {
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += train_split.x.at(i, d);
        mean /= n;
        double var = 0.0;
        for (int i = 0; i < n; ++i) {
            double diff = train_split.x.at(i, d) - mean;
            var += diff * diff;
        }
        var /= n;
        shift.at(d) = mean;
        scale_t.at(d) = std::max(std::sqrt(var), 1e-8);
    }
    model.set_input_standardizer(shift, scale_t);
}

MemberRecord train_single(Model& model, const DatasetBundle& data, const ExperimentConfig& cfg,
                          std::uint64_t seed) {
    MemberRecord record;
    int n = data.train.samples();
    int members = model.members();
    int batch_size = std::min(cfg.batch_size, n - n % members);
    batch_size -= batch_size % members;
    if (batch_size < members) throw ConfigError("training set smaller than one member slice");
    int n_batches = std::max(1, n / batch_size);

    RngStream run_stream = RngStream(seed).substream("train");
    double lr = cfg.learning_rate;
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::vector<int> member_of = contiguous_member_slices(batch_size, members);
    std::vector<Tensor> trainable = model.trainable_params();
    std::vector<Tensor> tracked = model.all_params();

    // Most recent parameter state that produced a finite forward pass; a
    // divergent run is rolled back to it so evaluation stays well-defined.
    Model last_proven = model.snapshot();

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (int decay_epoch : cfg.lr_decay_epochs) {
            if (epoch == decay_epoch) lr *= cfg.lr_decay_ratio;
        }
        RngStream shuffle = run_stream.substream("shuffle", static_cast<std::uint64_t>(epoch));
        for (int i = n - 1; i > 0; --i) {
            int j = static_cast<int>(shuffle.next_below(static_cast<std::uint64_t>(i + 1)));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }

        EpochLoss epoch_mean;
        Model epoch_start = model.snapshot();
        bool diverged = false;
        for (int step = 0; step < n_batches && !diverged; ++step) {
            Tensor x = Tensor::zeros({batch_size, data.train.dim()});
            std::vector<int> y(static_cast<size_t>(batch_size));
            for (int b = 0; b < batch_size; ++b) {
                int src = order[static_cast<size_t>(step * batch_size + b)];
                for (int d = 0; d < data.train.dim(); ++d) x.at(b, d) = data.train.x.at(src, d);
                y[static_cast<size_t>(b)] = data.train.labels[static_cast<size_t>(src)];
            }
            RngStream sample_stream =
                run_stream.substream("sample", static_cast<std::uint64_t>(epoch) * 1000003ull +
                                                   static_cast<std::uint64_t>(step));
            try {
                Tape tape;
                Model::ForwardResult fwd = model.forward(x, member_of, sample_stream);
                StepLoss loss = compose_loss(model, fwd, y, cfg, n_batches);
                if (!std::isfinite(loss.breakdown.total)) {
                    diverged = true;
                    break;
                }
                if (step == 0) last_proven = epoch_start;
                for (Tensor& p : tracked) p.zero_grad();
                backward(tape, loss.total);
                for (Tensor& p : trainable) {
                    auto& v = p.data();
                    const auto& g = p.grad();
                    for (size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
                }
                epoch_mean.total += loss.breakdown.total / n_batches;
                epoch_mean.nll += loss.breakdown.nll / n_batches;
                epoch_mean.weight_decay += loss.breakdown.weight_decay / n_batches;
                epoch_mean.kl += loss.breakdown.kl / n_batches;
                epoch_mean.recon += loss.breakdown.recon / n_batches;
            } catch (const NonFiniteError&) {
                diverged = true;
                break;
            }
            if (!params_healthy(model)) diverged = true;
        }
        if (diverged) {
            model = last_proven;
            record.divergence_epoch = epoch;
            return record;
        }
        record.epoch_losses.push_back(epoch_mean);
    }

    // The final update may itself have produced an unusable state; probe one
    // forward and roll back if the probe blows up.
    if (cfg.epochs > 0) {
        bool healthy = params_healthy(model);
        if (healthy) {
            try {
                Tensor x = Tensor::zeros({std::min(batch_size, n), data.train.dim()});
                for (int b = 0; b < x.dim(0); ++b) {
                    for (int d = 0; d < data.train.dim(); ++d) x.at(b, d) = data.train.x.at(b, d);
                }
                std::vector<int> probe_members(static_cast<size_t>(x.dim(0)));
                for (int b = 0; b < x.dim(0); ++b) probe_members[static_cast<size_t>(b)] = b % members;
                RngStream probe = run_stream.substream("probe");
                Model::ForwardResult fwd = model.forward(x, probe_members, probe);
                healthy = fwd.logits.all_finite();
            } catch (const NonFiniteError&) {
                healthy = false;
            }
        }
        if (!healthy) {
            model = last_proven;
            record.divergence_epoch = cfg.epochs;
        }
    }
    return record;
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg) {
    cfg.validate();
    return train(cfg, generate_dataset(cfg.dataset, cfg.seed));
}

TrainResult train(const ExperimentConfig& cfg, const DatasetBundle& data) {
    cfg.validate();
    TrainResult result;
    result.data = data;
    int input_dim = data.train.dim();
    int n_classes = data.n_classes;

    if (cfg.model_kind == ModelKind::kDeepEnsemble) {
        // J independent deterministic trainings with consecutive seeds.
        result.models.resize(static_cast<size_t>(cfg.members));
        result.record.members.resize(static_cast<size_t>(cfg.members));
        parallel_for(cfg.members, [&](int j) {
            std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(j);
            Model member = Model::build(cfg, ModelKind::kDeterministic, input_dim, n_classes, seed);
            fit_input_standardizer(member, data.train);
            result.record.members[static_cast<size_t>(j)] = train_single(member, data, cfg, seed);
            result.models[static_cast<size_t>(j)] = std::move(member);
        });
    } else {
        Model model = Model::build(cfg, cfg.model_kind, input_dim, n_classes, cfg.seed);
        fit_input_standardizer(model, data.train);
        result.record.members.push_back(train_single(model, data, cfg, cfg.seed));
        result.models.push_back(std::move(model));
    }
    for (const MemberRecord& member : result.record.members) {
        if (member.divergence_epoch &&
            (!result.record.divergence_epoch || *member.divergence_epoch < *result.record.divergence_epoch)) {
            result.record.divergence_epoch = member.divergence_epoch;
        }
    }
    return result;
}

namespace {

void softmax_into(const Tensor& logits, int row, PredictionBatch& batch, int member, int sample) {
    int classes = logits.dim(1);
    double max_logit = logits.at(row, 0);
    for (int c = 1; c < classes; ++c) max_logit = std::max(max_logit, logits.at(row, c));
    double denom = 0.0;
    for (int c = 0; c < classes; ++c) denom += std::exp(logits.at(row, c) - max_logit);
    for (int c = 0; c < classes; ++c) {
        batch.probs.at(member, sample, c) = std::exp(logits.at(row, c) - max_logit) / denom;
    }
}

// All-member predictions on one split. Stochastic families redraw weights on
// every pass; pass p contributes members p*J .. p*J+J-1 of the dump.
PredictionBatch predict_split(std::vector<Model>& models, const Dataset& split, int n_classes, int passes,
                              RngStream eval_stream) {
    int n = split.samples();
    Model& head = models.front();
    int j_per_pass = head.kind() == ModelKind::kDeterministic ? static_cast<int>(models.size())
                                                              : head.members();
    bool stochastic = head.kind() == ModelKind::kLpbnn || head.kind() == ModelKind::kMeanField;
    int total_passes = stochastic ? passes : 1;
    PredictionBatch batch;
    batch.probs = Tensor::zeros({j_per_pass * total_passes, n, n_classes});
    if (!split.labels.empty() && split.labels[0] >= 0) batch.labels = split.labels;

    for (int pass = 0; pass < total_passes; ++pass) {
        RngStream pass_stream = eval_stream.substream("pass", static_cast<std::uint64_t>(pass));
        if (head.kind() == ModelKind::kDeterministic) {
            for (size_t m = 0; m < models.size(); ++m) {
                Tensor logits = models[m].forward(split.x, {}, pass_stream).logits;
                for (int i = 0; i < n; ++i) softmax_into(logits, i, batch, static_cast<int>(m), i);
            }
        } else if (head.kind() == ModelKind::kMeanField) {
            for (int j = 0; j < j_per_pass; ++j) {
                RngStream draw = pass_stream.substream("draw", static_cast<std::uint64_t>(j));
                Tensor logits = head.forward(split.x, {}, draw).logits;
                for (int i = 0; i < n; ++i) softmax_into(logits, i, batch, pass * j_per_pass + j, i);
            }
        } else {
            // One forward of the duplicated inputs: member j sees rows [j*n, (j+1)*n).
            std::vector<Tensor> copies(static_cast<size_t>(j_per_pass), split.x);
            Tensor x_dup = concat(copies, 0);
            std::vector<int> member_of(static_cast<size_t>(j_per_pass * n));
            for (int j = 0; j < j_per_pass; ++j)
                for (int i = 0; i < n; ++i) member_of[static_cast<size_t>(j * n + i)] = j;
            Tensor logits = head.forward(x_dup, member_of, pass_stream).logits;
            for (int j = 0; j < j_per_pass; ++j)
                for (int i = 0; i < n; ++i) softmax_into(logits, j * n + i, batch, pass * j_per_pass + j, i);
        }
    }
    return batch;
}

}  // namespace

EvalResult evaluate(std::vector<Model>& models, const DatasetBundle& data, int extra_samples,
                    std::uint64_t eval_seed) {
    if (models.empty()) throw ValueError("evaluate: no models");
    EvalResult out;
    RngStream eval_stream = RngStream(eval_seed).substream("eval");
    int passes = 1 + extra_samples;
    int n_classes = data.n_classes;

    out.test = predict_split(models, data.test, n_classes, passes, eval_stream.substream("test"));
    MetricsReport& report = out.report;
    report.members = out.test.members();
    report.seed = eval_seed;
    report.timestamp = iso_timestamp();

    Tensor test_mean = ensemble_predict(out.test);
    report.values["accuracy"] = accuracy(test_mean, data.test.labels);
    report.values["ece"] = ece(test_mean, data.test.labels);
    bool zero_prob = false;
    report.values["nll"] = nll_loss(test_mean, data.test.labels, &zero_prob);
    if (zero_prob) report.flags["nll"] = "zero probability at a true label; nll reported as inf";
    std::vector<double> test_entropy = predictive_entropy(test_mean);
    report.values["entropy_test"] =
        std::accumulate(test_entropy.begin(), test_entropy.end(), 0.0) / test_entropy.size();

    if (data.ood_test.x.defined() && data.ood_test.samples() > 0) {
        out.ood = predict_split(models, data.ood_test, n_classes, passes, eval_stream.substream("ood"));
        out.ood.ood.assign(static_cast<size_t>(out.ood.samples()), 1);
        Tensor ood_mean = ensemble_predict(out.ood);
        std::vector<double> ood_entropy = predictive_entropy(ood_mean);
        report.values["entropy_ood"] =
            std::accumulate(ood_entropy.begin(), ood_entropy.end(), 0.0) / ood_entropy.size();
        report.values["auroc"] = auroc(mcp_scores(test_mean), mcp_scores(ood_mean));
        report.values["aupr"] = aupr(mcp_scores(test_mean), mcp_scores(ood_mean));
        report.values["fpr_at_95_tpr"] = fpr_at_95_tpr(mcp_scores(test_mean), mcp_scores(ood_mean));
    }

    for (size_t s = 0; s < data.corrupted.size(); ++s) {
        PredictionBatch b = predict_split(models, data.corrupted[s], n_classes, passes,
                                          eval_stream.substream("corrupt", s + 1));
        b.severity.assign(static_cast<size_t>(b.samples()), static_cast<int>(s + 1));
        Tensor mean_probs = ensemble_predict(b);
        report.values["accuracy_s" + std::to_string(s + 1)] = accuracy(mean_probs, b.labels);
        report.values["ece_s" + std::to_string(s + 1)] = ece(mean_probs, b.labels);
        out.corrupted.push_back(std::move(b));
    }
    if (!out.corrupted.empty()) {
        auto [ca, ce] = corrupted_metrics(out.corrupted);
        report.values["corrupted_accuracy"] = ca;
        report.values["corrupted_ece"] = ce;
    }

    if (out.test.members() >= 2) {
        std::vector<std::vector<std::uint8_t>> correct(static_cast<size_t>(out.test.members()));
        for (int j = 0; j < out.test.members(); ++j) {
            auto& row = correct[static_cast<size_t>(j)];
            row.resize(static_cast<size_t>(out.test.samples()));
            for (int i = 0; i < out.test.samples(); ++i) {
                int best = 0;
                for (int c = 1; c < n_classes; ++c) {
                    if (out.test.probs.at(j, i, c) > out.test.probs.at(j, i, best)) best = c;
                }
                row[static_cast<size_t>(i)] = best == data.test.labels[static_cast<size_t>(i)] ? 1 : 0;
            }
        }
        DiversityStats div = diversity_stats(correct);
        if (std::isfinite(div.ratio_error)) {
            report.values["diversity_ratio_error"] = div.ratio_error;
        } else {
            report.flags["diversity_ratio_error"] = "all pairs had zero joint errors; ratio-error infinite";
        }
        if (div.ratio_excluded > 0) {
            report.flags["diversity_ratio_excluded_pairs"] = std::to_string(div.ratio_excluded);
        }
        report.values["diversity_q_statistic"] = div.q_statistic;
        report.values["diversity_correlation"] = div.corr_coeff;
    } else {
        report.flags["diversity"] = "skipped: single member";
    }
    return out;
}

std::vector<SweepRow> stability_sweep(const ExperimentConfig& base, const std::vector<double>& learning_rates) {
    if (learning_rates.empty()) throw ValueError("stability_sweep: empty learning-rate list");
    DatasetBundle data = generate_dataset(base.dataset, base.seed);
    const ModelKind kinds[] = {ModelKind::kMeanField, ModelKind::kLpbnn};
    std::vector<SweepRow> rows(2 * learning_rates.size());
    parallel_for(static_cast<int>(rows.size()), [&](int idx) {
        ModelKind kind = kinds[idx % 2];
        double lr = learning_rates[static_cast<size_t>(idx) / 2];
        ExperimentConfig cfg = base;
        cfg.model_kind = kind;
        cfg.learning_rate = lr;
        TrainResult result = train(cfg, data);
        EvalResult eval = evaluate(result.models, data, 0, cfg.seed + 0x517EED);
        rows[static_cast<size_t>(idx)] =
            SweepRow{kind, lr, eval.report.values.at("accuracy"), result.record.divergence_epoch};
    });
    return rows;
}

namespace {

nlohmann::json record_to_json(const RunRecord& record) {
    nlohmann::json j;
    j["members"] = nlohmann::json::array();
    for (const MemberRecord& m : record.members) {
        nlohmann::json mj;
        mj["epochs"] = nlohmann::json::array();
        for (const EpochLoss& e : m.epoch_losses) {
            mj["epochs"].push_back({{"total", e.total},
                                    {"nll", e.nll},
                                    {"weight_decay", e.weight_decay},
                                    {"kl", e.kl},
                                    {"recon", e.recon}});
        }
        if (m.divergence_epoch)
            mj["divergence_epoch"] = *m.divergence_epoch;
        else
            mj["divergence_epoch"] = nullptr;
        j["members"].push_back(mj);
    }
    if (record.divergence_epoch)
        j["divergence_epoch"] = *record.divergence_epoch;
    else
        j["divergence_epoch"] = nullptr;
    return j;
}

}  // namespace

RunArtifacts run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    std::string dir = out_dir;
    if (dir.empty()) {
        std::string stamp = iso_timestamp();
        for (char& c : stamp)
            if (c == ':') c = '-';
        dir = "runs/" + stamp + "_" + model_kind_name(cfg.model_kind) + "_" + cfg.config_id();
    }
    fs::create_directories(dir);

    DatasetBundle data = generate_dataset(cfg.dataset, cfg.seed);
    TrainResult result = train(cfg, data);

    if (result.models.size() == 1) {
        std::string path = dir + "/checkpoint.lpbnn";
        save_checkpoint(path, result.models[0], cfg.seed);
        result.record.checkpoint_paths.push_back(path);
    } else {
        for (size_t j = 0; j < result.models.size(); ++j) {
            std::string path = dir + "/checkpoint_member_" + std::to_string(j) + ".lpbnn";
            save_checkpoint(path, result.models[j], cfg.seed + j);
            result.record.checkpoint_paths.push_back(path);
        }
    }

    EvalResult eval = evaluate(result.models, data, cfg.extra_samples, cfg.seed ^ 0xE7A1u);
    eval.report.config_id = cfg.config_id();
    eval.report.dataset_id = cfg.dataset.id();

    write_prediction_csv(dir + "/predictions_test.csv", eval.test);
    if (eval.ood.probs.defined()) write_prediction_csv(dir + "/predictions_ood.csv", eval.ood);
    for (size_t s = 0; s < eval.corrupted.size(); ++s) {
        write_prediction_csv(dir + "/predictions_corrupted_s" + std::to_string(s + 1) + ".csv",
                             eval.corrupted[s]);
    }

    {
        std::ofstream f(dir + "/config.txt");
        f << cfg.canonical_text();
    }
    {
        nlohmann::json manifest;
        manifest["seed"] = cfg.seed;
        manifest["config_id"] = cfg.config_id();
        manifest["dataset_id"] = cfg.dataset.id();
        manifest["code_version"] = "lpbnn 0.1.0";
        manifest["timestamp"] = iso_timestamp();
        manifest["record"] = record_to_json(result.record);
        std::ofstream f(dir + "/manifest.json");
        f << manifest.dump(2) << "\n";
    }
    {
        std::ofstream f(dir + "/metrics.json");
        f << eval.report.to_json() << "\n";
    }
    return {dir, result.record, eval.report};
}

}  // namespace lpbnn
