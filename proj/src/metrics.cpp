#include "lpbnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace lpbnn {

void PredictionBatch::validate() const {
    if (!probs.defined() || probs.rank() != 3) throw ShapeError("prediction batch needs (J, N, C) probabilities");
    if (members() < 1 || classes() < 2) throw ValueError("prediction batch needs J >= 1 and C >= 2");
    for (int j = 0; j < members(); ++j) {
        for (int n = 0; n < samples(); ++n) {
            double s = 0.0;
            for (int c = 0; c < classes(); ++c) s += probs.at(j, n, c);
            if (std::abs(s - 1.0) > 1e-8) {
                throw ValueError("prediction batch row (" + std::to_string(j) + "," + std::to_string(n) +
                                 ") sums to " + std::to_string(s));
            }
        }
    }
    if (!labels.empty() && static_cast<int>(labels.size()) != samples()) {
        throw ShapeError("prediction batch labels length mismatch");
    }
}

Tensor ensemble_predict(const PredictionBatch& batch) {
    batch.validate();
    int j_count = batch.members(), n_count = batch.samples(), c_count = batch.classes();
    Tensor out = Tensor::zeros({n_count, c_count});
    for (int n = 0; n < n_count; ++n) {
        for (int c = 0; c < c_count; ++c) {
            double acc = 0.0;
            for (int j = 0; j < j_count; ++j) acc += batch.probs.at(j, n, c);
            out.at(n, c) = acc / j_count;
        }
    }
    return out;
}

namespace {

int argmax_row(const Tensor& probs, int row) {
    int best = 0;
    for (int c = 1; c < probs.dim(1); ++c) {
        if (probs.at(row, c) > probs.at(row, best)) best = c;
    }
    return best;
}

}  // namespace

double accuracy(const Tensor& probs_mean, const std::vector<int>& labels) {
    if (probs_mean.rank() != 2 || static_cast<int>(labels.size()) != probs_mean.dim(0)) {
        throw ShapeError("accuracy: labels do not match probabilities");
    }
    int n = probs_mean.dim(0);
    if (n == 0) return 0.0;
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        if (argmax_row(probs_mean, i) == labels[static_cast<size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / n;
}

double ece(const Tensor& probs_mean, const std::vector<int>& labels, int num_bins) {
    if (num_bins < 1) throw ValueError("ece: need at least one bin");
    if (probs_mean.rank() != 2 || static_cast<int>(labels.size()) != probs_mean.dim(0)) {
        throw ShapeError("ece: labels do not match probabilities");
    }
    int n = probs_mean.dim(0);
    if (n < 1) throw ValueError("ece: empty batch");
    std::vector<double> conf_sum(static_cast<size_t>(num_bins), 0.0);
    std::vector<int> hits(static_cast<size_t>(num_bins), 0), count(static_cast<size_t>(num_bins), 0);
    for (int i = 0; i < n; ++i) {
        int pred = argmax_row(probs_mean, i);
        double conf = probs_mean.at(i, pred);
        int bin = static_cast<int>(std::ceil(conf * num_bins)) - 1;
        bin = std::min(std::max(bin, 0), num_bins - 1);
        conf_sum[static_cast<size_t>(bin)] += conf;
        count[static_cast<size_t>(bin)] += 1;
        if (pred == labels[static_cast<size_t>(i)]) hits[static_cast<size_t>(bin)] += 1;
    }
    double e = 0.0;
    for (int b = 0; b < num_bins; ++b) {
        size_t bi = static_cast<size_t>(b);
        if (count[bi] == 0) continue;
        double acc = static_cast<double>(hits[bi]) / count[bi];
        double conf = conf_sum[bi] / count[bi];
        e += (static_cast<double>(count[bi]) / n) * std::abs(acc - conf);
    }
    return e;
}

double auroc(const std::vector<double>& scores_in, const std::vector<double>& scores_out) {
    if (scores_in.empty() || scores_out.empty()) throw ValueError("auroc: empty score set");
    std::vector<double> out_sorted = scores_out;
    std::sort(out_sorted.begin(), out_sorted.end());
    double wins = 0.0, ties = 0.0;
    for (double s : scores_in) {
        auto lo = std::lower_bound(out_sorted.begin(), out_sorted.end(), s);
        auto hi = std::upper_bound(out_sorted.begin(), out_sorted.end(), s);
        wins += static_cast<double>(lo - out_sorted.begin());
        ties += static_cast<double>(hi - lo);
    }
    return (wins + 0.5 * ties) / (static_cast<double>(scores_in.size()) * static_cast<double>(scores_out.size()));
}

double aupr(const std::vector<double>& scores_in, const std::vector<double>& scores_out) {
    if (scores_in.empty() || scores_out.empty()) throw ValueError("aupr: empty score set");
    std::vector<double> thresholds;
    thresholds.reserve(scores_in.size() + scores_out.size());
    thresholds.insert(thresholds.end(), scores_in.begin(), scores_in.end());
    thresholds.insert(thresholds.end(), scores_out.begin(), scores_out.end());
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    auto count_ge = [](const std::vector<double>& v, double t) {
        std::int64_t c = 0;
        for (double s : v)
            if (s >= t) ++c;
        return c;
    };
    double area = 0.0, prev_recall = 0.0;
    for (double t : thresholds) {
        std::int64_t tp = count_ge(scores_in, t);
        std::int64_t fp = count_ge(scores_out, t);
        double recall = static_cast<double>(tp) / static_cast<double>(scores_in.size());
        double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return area;
}

double fpr_at_95_tpr(const std::vector<double>& scores_in, const std::vector<double>& scores_out) {
    if (scores_in.empty() || scores_out.empty()) throw ValueError("fpr_at_95_tpr: empty score set");
    // Largest threshold whose TPR is still >= 0.95: the k-th largest
    // in-distribution score with k = ceil(0.95 * n_in).
    std::vector<double> in_sorted = scores_in;
    std::sort(in_sorted.begin(), in_sorted.end(), std::greater<>());
    auto k = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(in_sorted.size())));
    k = std::max<size_t>(1, std::min(k, in_sorted.size()));
    double threshold = in_sorted[k - 1];
    std::int64_t fp = 0;
    for (double s : scores_out)
        if (s >= threshold) ++fp;
    return static_cast<double>(fp) / static_cast<double>(scores_out.size());
}

std::pair<double, double> corrupted_metrics(const std::vector<PredictionBatch>& batches) {
    if (batches.empty()) throw ValueError("corrupted_metrics: no corrupted batches");
    double acc_sum = 0.0, ece_sum = 0.0;
    for (const PredictionBatch& b : batches) {
        if (b.labels.empty()) throw ValueError("corrupted_metrics: batch without labels");
        if (b.severity.empty() || b.severity[0] < 1) throw ValueError("corrupted_metrics: batch without severity >= 1");
        Tensor mean_probs = ensemble_predict(b);
        acc_sum += accuracy(mean_probs, b.labels);
        ece_sum += ece(mean_probs, b.labels);
    }
    double n = static_cast<double>(batches.size());
    return {acc_sum / n, ece_sum / n};
}

DiversityStats diversity_stats(const std::vector<std::vector<std::uint8_t>>& member_correct) {
    size_t j_count = member_correct.size();
    if (j_count < 2) throw ValueError("diversity_stats: need at least two members");
    size_t n = member_correct[0].size();
    for (const auto& row : member_correct) {
        if (row.size() != n) throw ShapeError("diversity_stats: ragged correctness table");
    }
    DiversityStats out;
    double ratio_sum = 0.0, q_sum = 0.0, corr_sum = 0.0;
    int ratio_valid = 0;
    for (size_t a = 0; a < j_count; ++a) {
        for (size_t b = a + 1; b < j_count; ++b) {
            double n11 = 0, n00 = 0, n10 = 0, n01 = 0;
            for (size_t i = 0; i < n; ++i) {
                bool ca = member_correct[a][i] != 0, cb = member_correct[b][i] != 0;
                if (ca && cb)
                    ++n11;
                else if (!ca && !cb)
                    ++n00;
                else if (ca)
                    ++n10;
                else
                    ++n01;
            }
            ++out.pairs;
            if (n00 > 0) {
                ratio_sum += (n10 + n01) / n00;
                ++ratio_valid;
            } else {
                ++out.ratio_excluded;
            }
            double q_den = n11 * n00 + n10 * n01;
            if (q_den > 0) {
                q_sum += (n11 * n00 - n10 * n01) / q_den;
            } else {
                ++out.q_degenerate;
            }
            // Pearson correlation of the binary error vectors (phi coefficient).
            double var_a = (n01 + n00) * (n11 + n10);
            double var_b = (n10 + n00) * (n11 + n01);
            if (var_a > 0 && var_b > 0) {
                corr_sum += (n11 * n00 - n10 * n01) / std::sqrt(var_a * var_b);
            } else {
                ++out.corr_degenerate;
            }
        }
    }
    out.ratio_error = ratio_valid > 0 ? ratio_sum / ratio_valid : std::numeric_limits<double>::infinity();
    out.q_statistic = q_sum / out.pairs;
    out.corr_coeff = corr_sum / out.pairs;
    return out;
}

std::vector<double> predictive_entropy(const Tensor& probs_mean) {
    if (probs_mean.rank() != 2) throw ShapeError("predictive_entropy: expected (N, C) probabilities");
    int n = probs_mean.dim(0), c_count = probs_mean.dim(1);
    std::vector<double> h(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int c = 0; c < c_count; ++c) {
            double p = probs_mean.at(i, c);
            if (p > 0.0) acc -= p * std::log(p);
        }
        h[static_cast<size_t>(i)] = acc;
    }
    return h;
}

std::vector<double> mcp_scores(const Tensor& probs_mean) {
    if (probs_mean.rank() != 2) throw ShapeError("mcp_scores: expected (N, C) probabilities");
    int n = probs_mean.dim(0);
    std::vector<double> s(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) s[static_cast<size_t>(i)] = probs_mean.at(i, argmax_row(probs_mean, i));
    return s;
}

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    for (const auto& [k, v] : values) {
        if (std::isfinite(v))
            j["metrics"][k] = v;
        else
            j["metrics"][k] = v > 0 ? "inf" : "-inf";
    }
    for (const auto& [k, v] : flags) j["flags"][k] = v;
    j["metadata"]["seed"] = seed;
    j["metadata"]["config_id"] = config_id;
    j["metadata"]["dataset_id"] = dataset_id;
    j["metadata"]["members"] = members;
    j["metadata"]["timestamp"] = timestamp;
    return j.dump(2);
}

void write_prediction_csv(const std::string& path, const PredictionBatch& batch) {
    batch.validate();
    std::ofstream f(path);
    if (!f) throw IoError("cannot write prediction dump: " + path);
    f << "member,sample_id,label,ood,severity";
    for (int c = 0; c < batch.classes(); ++c) f << ",p_" << c;
    f << "\n";
    f.precision(17);
    for (int j = 0; j < batch.members(); ++j) {
        for (int n = 0; n < batch.samples(); ++n) {
            int label = batch.labels.empty() ? -1 : batch.labels[static_cast<size_t>(n)];
            int ood_flag = batch.ood.empty() ? 0 : batch.ood[static_cast<size_t>(n)];
            int sev = batch.severity.empty() ? 0 : batch.severity[static_cast<size_t>(n)];
            f << j << "," << n << "," << label << "," << ood_flag << "," << sev;
            for (int c = 0; c < batch.classes(); ++c) f << "," << batch.probs.at(j, n, c);
            f << "\n";
        }
    }
}

PredictionBatch read_prediction_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read prediction dump: " + path);
    std::string header;
    if (!std::getline(f, header)) throw IoError("empty prediction dump: " + path);
    int classes = 0;
    {
        std::stringstream ss(header);
        std::string col;
        while (std::getline(ss, col, ',')) {
            if (col.rfind("p_", 0) == 0) ++classes;
        }
        if (classes < 2) throw IoError("prediction dump header lacks p_* columns: " + path);
    }
    struct Row {
        int member, sample, label, ood_flag, severity;
        std::vector<double> p;
    };
    std::vector<Row> rows;
    std::string line;
    int max_member = -1, max_sample = -1;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        Row r;
        auto next = [&]() {
            if (!std::getline(ss, cell, ',')) throw IoError("short prediction row in " + path);
            return cell;
        };
        r.member = std::stoi(next());
        r.sample = std::stoi(next());
        r.label = std::stoi(next());
        r.ood_flag = std::stoi(next());
        r.severity = std::stoi(next());
        for (int c = 0; c < classes; ++c) r.p.push_back(std::stod(next()));
        max_member = std::max(max_member, r.member);
        max_sample = std::max(max_sample, r.sample);
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw IoError("prediction dump has no rows: " + path);
    PredictionBatch batch;
    int j_count = max_member + 1, n_count = max_sample + 1;
    batch.probs = Tensor::zeros({j_count, n_count, classes});
    batch.labels.assign(static_cast<size_t>(n_count), -1);
    batch.ood.assign(static_cast<size_t>(n_count), 0);
    batch.severity.assign(static_cast<size_t>(n_count), 0);
    for (const Row& r : rows) {
        for (int c = 0; c < classes; ++c) batch.probs.at(r.member, r.sample, c) = r.p[static_cast<size_t>(c)];
        batch.labels[static_cast<size_t>(r.sample)] = r.label;
        batch.ood[static_cast<size_t>(r.sample)] = static_cast<std::uint8_t>(r.ood_flag != 0);
        batch.severity[static_cast<size_t>(r.sample)] = r.severity;
    }
    bool all_missing = true;
    for (int lab : batch.labels)
        if (lab >= 0) all_missing = false;
    if (all_missing) batch.labels.clear();
    return batch;
}

}  // namespace lpbnn
