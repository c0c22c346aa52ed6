#include <cmath>
#include <filesystem>

#include <doctest.h>

#include "lpbnn/config.hpp"
#include "lpbnn/dataset.hpp"

using namespace lpbnn;

namespace {

DatasetSpec blob_spec() {
    DatasetSpec spec;
    spec.kind = DatasetSpec::Kind::kBlobs;
    spec.n_train = 300;
    spec.n_test = 200;
    spec.n_classes = 3;
    spec.input_dim = 6;
    spec.ood_shift = 10.0;
    spec.corruption_stds = {0.0, 1.0, 2.0};
    return spec;
}

}  // namespace

TEST_CASE("same seed gives byte-identical datasets") {
    DatasetSpec spec = blob_spec();
    spec.corruption_stds = {0.5, 1.0};
    DatasetBundle a = generate_dataset(spec, 77);
    DatasetBundle b = generate_dataset(spec, 77);
    CHECK(a.train.x.data() == b.train.x.data());
    CHECK(a.test.x.data() == b.test.x.data());
    CHECK(a.ood_test.x.data() == b.ood_test.x.data());
    CHECK(a.corrupted[1].x.data() == b.corrupted[1].x.data());
    CHECK(a.train.labels == b.train.labels);

    DatasetBundle c = generate_dataset(spec, 78);
    CHECK(a.train.x.data() != c.train.x.data());
}

TEST_CASE("zero corruption std reproduces the test set exactly") {
    DatasetBundle bundle = generate_dataset(blob_spec(), 5);
    REQUIRE(bundle.corrupted.size() == 3);
    CHECK(bundle.corrupted[0].x.data() == bundle.test.x.data());
    CHECK(bundle.corrupted[0].labels == bundle.test.labels);
    // Higher severities genuinely perturb.
    CHECK(bundle.corrupted[1].x.data() != bundle.test.x.data());
}

TEST_CASE("corruption stds must increase strictly") {
    DatasetSpec spec = blob_spec();
    spec.corruption_stds = {1.0, 1.0};
    CHECK_THROWS_AS(generate_dataset(spec, 1), ConfigError);
}

TEST_CASE("blobs at shift 10: nearest-centroid separates OOD from ID with no errors") {
    DatasetSpec spec = blob_spec();
    spec.n_test = 1000;
    DatasetBundle bundle = generate_dataset(spec, 11);

    auto nearest_centroid_dist = [&](const Dataset& ds, int row) {
        double best = std::numeric_limits<double>::infinity();
        for (int c = 0; c < spec.n_classes; ++c) {
            double angle = 2.0 * M_PI * c / spec.n_classes;
            double sq = 0.0;
            for (int d = 0; d < spec.input_dim; ++d) {
                double center = d == 0 ? 3.0 * std::cos(angle) : d == 1 ? 3.0 * std::sin(angle) : 0.0;
                double diff = ds.x.at(row, d) - center;
                sq += diff * diff;
            }
            best = std::min(best, sq);
        }
        return std::sqrt(best);
    };

    double max_id = 0.0, min_ood = std::numeric_limits<double>::infinity();
    for (int i = 0; i < bundle.test.samples(); ++i) max_id = std::max(max_id, nearest_centroid_dist(bundle.test, i));
    for (int i = 0; i < bundle.ood_test.samples(); ++i) {
        min_ood = std::min(min_ood, nearest_centroid_dist(bundle.ood_test, i));
    }
    CHECK(max_id < min_ood);

    // Every OOD row is unlabeled.
    for (int lab : bundle.ood_test.labels) CHECK(lab == -1);
}

TEST_CASE("rings dataset produces annuli with the expected radii") {
    DatasetSpec spec = blob_spec();
    spec.kind = DatasetSpec::Kind::kRings;
    spec.n_classes = 2;
    DatasetBundle bundle = generate_dataset(spec, 3);
    for (int i = 0; i < bundle.train.samples(); ++i) {
        double r = std::hypot(bundle.train.x.at(i, 0), bundle.train.x.at(i, 1));
        int label = bundle.train.labels[static_cast<size_t>(i)];
        CHECK(std::abs(r - 2.5 * (label + 1)) < 2.0);
    }
}

TEST_CASE("dataset CSV and directory round-trips") {
    DatasetSpec spec = blob_spec();
    spec.n_train = 40;
    spec.n_test = 30;
    DatasetBundle bundle = generate_dataset(spec, 9);
    auto dir = std::filesystem::temp_directory_path() / "lpbnn_ds_test";
    std::filesystem::remove_all(dir);
    write_dataset_dir(dir.string(), bundle);

    DatasetBundle back = read_dataset_dir(dir.string());
    CHECK(back.train.samples() == 40);
    CHECK(back.test.samples() == 30);
    CHECK(back.n_classes == 3);
    CHECK(back.corrupted.size() == 3);
    for (std::int64_t i = 0; i < bundle.train.x.size(); ++i) {
        CHECK(back.train.x.data()[static_cast<size_t>(i)] == bundle.train.x.data()[static_cast<size_t>(i)]);
    }
    CHECK(back.train.labels == bundle.train.labels);
    std::filesystem::remove_all(dir);
}

TEST_CASE("config parsing: defaults, overrides, and unknown keys") {
    ExperimentConfig def = parse_config_text("");
    CHECK(def.members == 4);
    CHECK(def.latent_dim == 32);
    CHECK(def.lr_decay_ratio == 0.1);
    CHECK(def.weight_decay_slow == 1e-4);
    CHECK(def.weight_decay_fast == 0.0);

    ExperimentConfig cfg = parse_config_text(
        "model_kind = batchensemble\n"
        "# a comment line\n"
        "ensemble_size = 2\n"
        "layer_widths = 16, 8\n"
        "learning_rate = 0.05\n"
        "lr_decay_epochs = 3,5\n"
        "epochs = 6\n"
        "batch_size = 32\n"
        "seed = 99\n"
        "dataset = rings\n"
        "corruption_stds = 0.1, 0.4\n");
    CHECK(cfg.model_kind == ModelKind::kBatchEnsemble);
    CHECK(cfg.members == 2);
    CHECK(cfg.layer_widths == std::vector<int>{16, 8});
    CHECK(cfg.dataset.kind == DatasetSpec::Kind::kRings);
    CHECK(cfg.dataset.corruption_stds == std::vector<double>{0.1, 0.4});
    CHECK(cfg.seed == 99);

    CHECK_THROWS_WITH_AS(parse_config_text("no_such_key = 1\n"), doctest::Contains("no_such_key"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("model_kind = magic\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("epochs = banana\n"), ConfigError);
    // Ensemble batch slicing needs batch_size divisible by J.
    CHECK_THROWS_AS(parse_config_text("model_kind = lpbnn\nensemble_size = 4\nbatch_size = 30\n"), ConfigError);
}

TEST_CASE("config id is stable and ignores comments") {
    ExperimentConfig a = parse_config_text("epochs = 5\n");
    ExperimentConfig b = parse_config_text("# hello\nepochs = 5\n");
    ExperimentConfig c = parse_config_text("epochs = 6\n");
    CHECK(a.config_id() == b.config_id());
    CHECK(a.config_id() != c.config_id());
}

TEST_CASE("missing config file raises an error naming the path") {
    CHECK_THROWS_WITH_AS(parse_config_file("/nonexistent/path.cfg"), doctest::Contains("/nonexistent/path.cfg"),
                         ConfigError);
}
