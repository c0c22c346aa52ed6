#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lpbnn/checkpoint.hpp"
#include "lpbnn/dataset.hpp"
#include "lpbnn/metrics.hpp"
#include "lpbnn/models.hpp"

namespace lpbnn {

struct EpochLoss {
    double total = 0.0;
    double nll = 0.0;
    double weight_decay = 0.0;
    double kl = 0.0;
    double recon = 0.0;
};

struct MemberRecord {
    std::vector<EpochLoss> epoch_losses;
    std::optional<int> divergence_epoch;  // 1-based epoch where the loss or a parameter went non-finite
};

struct RunRecord {
    std::vector<MemberRecord> members;    // one per trained network
    std::optional<int> divergence_epoch;  // earliest across members
    std::vector<std::string> checkpoint_paths;
};

struct TrainResult {
    std::vector<Model> models;  // several for deep ensembles
    RunRecord record;
    DatasetBundle data;
};

// Mini-batch SGD per the configured schedule. Ensemble mini-batches are cut
// into J contiguous member slices; divergence stops the run and restores the
// last finite parameters.
TrainResult train(const ExperimentConfig& cfg);
TrainResult train(const ExperimentConfig& cfg, const DatasetBundle& data);

struct EvalResult {
    PredictionBatch test;
    PredictionBatch ood;
    std::vector<PredictionBatch> corrupted;
    MetricsReport report;
};

// Every test input is evaluated by all members; stochastic families redraw
// their weights per pass and extra_samples extra passes enlarge the ensemble
// to J * (1 + extra_samples) members.
EvalResult evaluate(std::vector<Model>& models, const DatasetBundle& data, int extra_samples,
                    std::uint64_t eval_seed);

struct SweepRow {
    ModelKind kind;
    double learning_rate = 0.0;
    double final_accuracy = 0.0;
    std::optional<int> divergence_epoch;
};

// Trains the mean-field and LP-BNN families over a learning-rate grid with
// everything else fixed.
std::vector<SweepRow> stability_sweep(const ExperimentConfig& base, const std::vector<double>& learning_rates);

struct RunArtifacts {
    std::string dir;
    RunRecord record;
    MetricsReport report;
};

// generate -> train -> evaluate -> write reports, dumps, checkpoints and a
// reproducibility manifest into out_dir.
RunArtifacts run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

// Worker cap from LPBNN_THREADS (default 1). Used for independent runs only.
int worker_count();
void parallel_for(int n, const std::function<void(int)>& fn);

std::string iso_timestamp();

}  // namespace lpbnn
