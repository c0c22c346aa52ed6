#pragma once

#include <map>
#include <string>
#include <vector>

#include "lpbnn/tensor.hpp"

namespace lpbnn {

// Per-member class probabilities for a set of samples, with optional labels,
// out-of-distribution flags, and a corruption severity.
struct PredictionBatch {
    Tensor probs;                      // (J, N, C)
    std::vector<int> labels;           // empty when absent (OOD sets)
    std::vector<std::uint8_t> ood;     // per-sample flag; empty means all zero
    std::vector<int> severity;         // per-sample level; empty means none

    int members() const { return probs.dim(0); }
    int samples() const { return probs.dim(1); }
    int classes() const { return probs.dim(2); }
    void validate() const;
};

// Eq-by-eq evaluation quantities. All functions here are pure and read-only.

// (1/J) sum_j probs[j]; rows remain distributions.
Tensor ensemble_predict(const PredictionBatch& batch);

double accuracy(const Tensor& probs_mean, const std::vector<int>& labels);

// Expected calibration error over M equal-width confidence bins on (0, 1];
// ties at bin edges fall to the lower bin, empty bins contribute nothing.
double ece(const Tensor& probs_mean, const std::vector<int>& labels, int num_bins = 15);

// P(score_in > score_out) + 0.5 P(tie), computed exactly.
double auroc(const std::vector<double>& scores_in, const std::vector<double>& scores_out);

// Area under the precision-recall curve (positive class = in-distribution),
// step-wise summation without interpolation.
double aupr(const std::vector<double>& scores_in, const std::vector<double>& scores_out);

// False-positive rate at the largest threshold keeping >= 95% true positives.
double fpr_at_95_tpr(const std::vector<double>& scores_in, const std::vector<double>& scores_out);

// Unweighted means of accuracy and ECE over severity groups.
std::pair<double, double> corrupted_metrics(const std::vector<PredictionBatch>& batches);

struct DiversityStats {
    double ratio_error = 0.0;   // mean (N10 + N01) / N00 over valid pairs
    double q_statistic = 0.0;   // mean Q over pairs
    double corr_coeff = 0.0;    // mean error-vector Pearson correlation
    int pairs = 0;
    int ratio_excluded = 0;     // pairs with N00 = 0 (ratio-error infinite)
    int q_degenerate = 0;       // pairs with zero Q denominator, counted as 0
    int corr_degenerate = 0;    // pairs with a constant error vector, counted as 0
};

// Pairwise disagreement statistics from a (J, N) member-correctness table.
DiversityStats diversity_stats(const std::vector<std::vector<std::uint8_t>>& member_correct);

// Per-sample entropy -sum p log p with 0 log 0 = 0.
std::vector<double> predictive_entropy(const Tensor& probs_mean);

// Max-class probability per sample; the in-distribution confidence score.
std::vector<double> mcp_scores(const Tensor& probs_mean);

struct MetricsReport {
    std::map<std::string, double> values;
    std::map<std::string, std::string> flags;
    std::uint64_t seed = 0;
    std::string config_id;
    std::string dataset_id;
    int members = 0;
    std::string timestamp;

    std::string to_json() const;  // pretty-printed, sorted keys
};

// Prediction dump CSV: header member,sample_id,label,ood,severity,p_0,...
void write_prediction_csv(const std::string& path, const PredictionBatch& batch);
PredictionBatch read_prediction_csv(const std::string& path);

}  // namespace lpbnn
