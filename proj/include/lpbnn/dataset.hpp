#pragma once

#include <string>
#include <vector>

#include "lpbnn/rng.hpp"
#include "lpbnn/tensor.hpp"

namespace lpbnn {

// Synthetic stand-ins for the image benchmarks: class-conditional Gaussian
// blobs or concentric rings for in-distribution data, additive-noise copies
// of the test split as corrupted sets, and the same generator displaced off
// the data manifold as the out-of-distribution set.
struct DatasetSpec {
    enum class Kind { kBlobs, kRings, kFile };
    Kind kind = Kind::kBlobs;
    int n_train = 1024;
    int n_test = 512;
    int n_classes = 3;
    int input_dim = 6;
    double ood_shift = 8.0;                      // displacement magnitude, in class-noise stds
    std::vector<double> corruption_stds = {0.5, 1.0, 2.0, 3.0};  // severity 1..S
    std::string file_path;                       // kind == kFile

    void validate() const;
    std::string id() const;
};

struct Dataset {
    Tensor x;                 // (N, D)
    std::vector<int> labels;  // -1 marks unlabeled rows (OOD split)

    int samples() const { return x.dim(0); }
    int dim() const { return x.dim(1); }
};

struct DatasetBundle {
    Dataset train;
    Dataset test;
    Dataset ood_test;
    std::vector<Dataset> corrupted;  // one per severity, index s-1
    int n_classes = 0;
};

DatasetBundle generate_dataset(const DatasetSpec& spec, std::uint64_t seed);

// CSV with header x_0,...,x_{D-1},label.
void write_dataset_csv(const std::string& path, const Dataset& ds);
Dataset read_dataset_csv(const std::string& path);

// Writes train/test/ood/corrupted_s{k} CSVs into a directory.
void write_dataset_dir(const std::string& dir, const DatasetBundle& bundle);
DatasetBundle read_dataset_dir(const std::string& dir);

}  // namespace lpbnn
