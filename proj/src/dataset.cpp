#include "lpbnn/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace lpbnn {

namespace fs = std::filesystem;

void DatasetSpec::validate() const {
    if (kind == Kind::kFile) {
        if (file_path.empty()) throw ConfigError("dataset: file kind needs dataset_file");
        return;
    }
    if (n_classes < 2) throw ConfigError("dataset: need at least two classes");
    if (input_dim < 2) throw ConfigError("dataset: need input_dim >= 2");
    if (n_train < 1 || n_test < 1) throw ConfigError("dataset: empty split");
    for (size_t i = 1; i < corruption_stds.size(); ++i) {
        if (corruption_stds[i] <= corruption_stds[i - 1]) {
            throw ConfigError("dataset: corruption stds must be strictly increasing");
        }
    }
    for (double s : corruption_stds) {
        if (s < 0.0) throw ConfigError("dataset: negative corruption std");
    }
}

std::string DatasetSpec::id() const {
    std::ostringstream os;
    switch (kind) {
        case Kind::kBlobs: os << "blobs"; break;
        case Kind::kRings: os << "rings"; break;
        case Kind::kFile: return "file:" + file_path;
    }
    os << "-c" << n_classes << "-d" << input_dim << "-n" << n_train << "/" << n_test;
    return os.str();
}

namespace {

// Class centers sit on a circle of radius 3 in the first two coordinates;
// remaining coordinates carry pure noise. The OOD displacement runs along
// the last coordinate, orthogonal to the class structure whenever D > 2.
std::vector<double> blob_center(int c, int n_classes, int input_dim) {
    std::vector<double> center(static_cast<size_t>(input_dim), 0.0);
    double angle = 2.0 * M_PI * c / n_classes;
    center[0] = 3.0 * std::cos(angle);
    center[1] = 3.0 * std::sin(angle);
    return center;
}

Dataset sample_split(const DatasetSpec& spec, int n, RngStream stream) {
    Dataset ds;
    ds.x = Tensor::zeros({n, spec.input_dim});
    ds.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        int label = i % spec.n_classes;
        ds.labels[static_cast<size_t>(i)] = label;
        if (spec.kind == DatasetSpec::Kind::kBlobs) {
            std::vector<double> center = blob_center(label, spec.n_classes, spec.input_dim);
            for (int d = 0; d < spec.input_dim; ++d) ds.x.at(i, d) = center[static_cast<size_t>(d)] + stream.next_normal();
        } else {
            // Concentric annuli in the first two coordinates.
            double radius = 2.5 * (label + 1) + 0.25 * stream.next_normal();
            double theta = 2.0 * M_PI * stream.next_uniform();
            ds.x.at(i, 0) = radius * std::cos(theta);
            ds.x.at(i, 1) = radius * std::sin(theta);
            for (int d = 2; d < spec.input_dim; ++d) ds.x.at(i, d) = 0.25 * stream.next_normal();
        }
    }
    return ds;
}

}  // namespace

DatasetBundle generate_dataset(const DatasetSpec& spec, std::uint64_t seed) {
    spec.validate();
    if (spec.kind == DatasetSpec::Kind::kFile) {
        DatasetBundle bundle;
        bundle.train = read_dataset_csv(spec.file_path);
        bundle.test = bundle.train;
        int max_label = 0;
        for (int lab : bundle.train.labels) max_label = std::max(max_label, lab);
        bundle.n_classes = max_label + 1;
        return bundle;
    }

    RngStream root{RngStream(seed).substream("dataset")};
    DatasetBundle bundle;
    bundle.n_classes = spec.n_classes;
    bundle.train = sample_split(spec, spec.n_train, root.substream("train"));
    bundle.test = sample_split(spec, spec.n_test, root.substream("test"));

    bundle.ood_test = sample_split(spec, spec.n_test, root.substream("ood"));
    for (int i = 0; i < bundle.ood_test.samples(); ++i) {
        bundle.ood_test.x.at(i, spec.input_dim - 1) += spec.ood_shift;
        bundle.ood_test.labels[static_cast<size_t>(i)] = -1;
    }

    for (size_t s = 0; s < spec.corruption_stds.size(); ++s) {
        RngStream noise = root.substream("corrupt", s + 1);
        Dataset corrupted;
        corrupted.x = bundle.test.x.detached();
        corrupted.labels = bundle.test.labels;
        double std_dev = spec.corruption_stds[s];
        for (int i = 0; i < corrupted.samples(); ++i) {
            for (int d = 0; d < spec.input_dim; ++d) corrupted.x.at(i, d) += std_dev * noise.next_normal();
        }
        bundle.corrupted.push_back(std::move(corrupted));
    }
    return bundle;
}

void write_dataset_csv(const std::string& path, const Dataset& ds) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write dataset: " + path);
    for (int d = 0; d < ds.dim(); ++d) f << "x_" << d << ",";
    f << "label\n";
    f.precision(17);
    for (int i = 0; i < ds.samples(); ++i) {
        for (int d = 0; d < ds.dim(); ++d) f << ds.x.at(i, d) << ",";
        f << ds.labels[static_cast<size_t>(i)] << "\n";
    }
}

Dataset read_dataset_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read dataset: " + path);
    std::string header;
    if (!std::getline(f, header)) throw IoError("empty dataset file: " + path);
    int dim = 0;
    {
        std::stringstream ss(header);
        std::string col;
        while (std::getline(ss, col, ',')) {
            if (col.rfind("x_", 0) == 0) ++dim;
        }
        if (dim == 0) throw IoError("dataset header lacks x_* columns: " + path);
    }
    std::vector<double> values;
    std::vector<int> labels;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        for (int d = 0; d < dim; ++d) {
            if (!std::getline(ss, cell, ',')) throw IoError("short dataset row in " + path);
            values.push_back(std::stod(cell));
        }
        if (!std::getline(ss, cell, ',')) throw IoError("dataset row missing label in " + path);
        labels.push_back(std::stoi(cell));
    }
    if (labels.empty()) throw IoError("dataset has no rows: " + path);
    Dataset ds;
    ds.x = Tensor::from({static_cast<int>(labels.size()), dim}, std::move(values));
    ds.labels = std::move(labels);
    return ds;
}

void write_dataset_dir(const std::string& dir, const DatasetBundle& bundle) {
    fs::create_directories(dir);
    write_dataset_csv(dir + "/train.csv", bundle.train);
    write_dataset_csv(dir + "/test.csv", bundle.test);
    write_dataset_csv(dir + "/ood.csv", bundle.ood_test);
    for (size_t s = 0; s < bundle.corrupted.size(); ++s) {
        write_dataset_csv(dir + "/corrupted_s" + std::to_string(s + 1) + ".csv", bundle.corrupted[s]);
    }
}

DatasetBundle read_dataset_dir(const std::string& dir) {
    DatasetBundle bundle;
    bundle.train = read_dataset_csv(dir + "/train.csv");
    bundle.test = read_dataset_csv(dir + "/test.csv");
    if (fs::exists(dir + "/ood.csv")) bundle.ood_test = read_dataset_csv(dir + "/ood.csv");
    for (int s = 1;; ++s) {
        std::string path = dir + "/corrupted_s" + std::to_string(s) + ".csv";
        if (!fs::exists(path)) break;
        bundle.corrupted.push_back(read_dataset_csv(path));
    }
    int max_label = 0;
    for (int lab : bundle.train.labels) max_label = std::max(max_label, lab);
    bundle.n_classes = max_label + 1;
    return bundle;
}

}  // namespace lpbnn
