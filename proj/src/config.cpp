#include "lpbnn/config.hpp"

#include <fstream>
#include <sstream>

namespace lpbnn {

const char* model_kind_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::kDeterministic: return "deterministic";
        case ModelKind::kMeanField: return "meanfield";
        case ModelKind::kBatchEnsemble: return "batchensemble";
        case ModelKind::kLpbnn: return "lpbnn";
        case ModelKind::kDeepEnsemble: return "deepensemble";
    }
    return "?";
}

ModelKind model_kind_from(const std::string& name) {
    for (ModelKind k : {ModelKind::kDeterministic, ModelKind::kMeanField, ModelKind::kBatchEnsemble,
                        ModelKind::kLpbnn, ModelKind::kDeepEnsemble}) {
        if (name == model_kind_name(k)) return k;
    }
    throw ConfigError("unknown model_kind: " + name);
}

void ExperimentConfig::validate() const {
    if (members < 1) throw ConfigError("ensemble_size must be >= 1");
    if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
    if (layer_widths.empty()) throw ConfigError("layer_widths must not be empty");
    for (int w : layer_widths) {
        if (w < 1) throw ConfigError("layer widths must be positive");
    }
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
    if (lr_decay_ratio <= 0.0) throw ConfigError("lr_decay_ratio must be positive");
    if (weight_decay_slow < 0.0 || weight_decay_fast < 0.0) throw ConfigError("weight decay must be >= 0");
    if (prior_sigma <= 0.0) throw ConfigError("prior_sigma must be positive");
    if (extra_samples < 0) throw ConfigError("extra_samples must be >= 0");
    bool ensemble = model_kind == ModelKind::kBatchEnsemble || model_kind == ModelKind::kLpbnn;
    if (ensemble && batch_size % members != 0) {
        throw ConfigError("batch_size must be a multiple of ensemble_size for ensemble models");
    }
    dataset.validate();
}

namespace {

template <typename T>
std::string join_list(const std::vector<T>& v) {
    std::ostringstream os;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) os << ",";
        os << v[i];
    }
    return os.str();
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

}  // namespace

std::string ExperimentConfig::canonical_text() const {
    std::ostringstream os;
    os << "model_kind = " << model_kind_name(model_kind) << "\n";
    os << "ensemble_size = " << members << "\n";
    os << "latent_dim = " << latent_dim << "\n";
    os << "layer_widths = " << join_list(layer_widths) << "\n";
    os.precision(17);
    os << "learning_rate = " << learning_rate << "\n";
    os << "lr_decay_epochs = " << join_list(lr_decay_epochs) << "\n";
    os << "lr_decay_ratio = " << lr_decay_ratio << "\n";
    os << "epochs = " << epochs << "\n";
    os << "batch_size = " << batch_size << "\n";
    os << "weight_decay_slow = " << weight_decay_slow << "\n";
    os << "weight_decay_fast = " << weight_decay_fast << "\n";
    os << "prior_sigma = " << prior_sigma << "\n";
    os << "seed = " << seed << "\n";
    os << "extra_samples = " << extra_samples << "\n";
    switch (dataset.kind) {
        case DatasetSpec::Kind::kBlobs: os << "dataset = blobs\n"; break;
        case DatasetSpec::Kind::kRings: os << "dataset = rings\n"; break;
        case DatasetSpec::Kind::kFile: os << "dataset = file\ndataset_file = " << dataset.file_path << "\n"; break;
    }
    os << "n_train = " << dataset.n_train << "\n";
    os << "n_test = " << dataset.n_test << "\n";
    os << "n_classes = " << dataset.n_classes << "\n";
    os << "input_dim = " << dataset.input_dim << "\n";
    os << "ood_shift = " << dataset.ood_shift << "\n";
    os << "corruption_stds = " << join_list(dataset.corruption_stds) << "\n";
    return os.str();
}

std::string ExperimentConfig::config_id() const {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char c : canonical_text()) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + " is not key = value: " + stripped);
        }
        std::string key = trim(stripped.substr(0, eq));
        std::string value = trim(stripped.substr(eq + 1));
        try {
            if (key == "model_kind") {
                cfg.model_kind = model_kind_from(value);
            } else if (key == "ensemble_size") {
                cfg.members = std::stoi(value);
            } else if (key == "latent_dim") {
                cfg.latent_dim = std::stoi(value);
            } else if (key == "layer_widths") {
                cfg.layer_widths.clear();
                for (const std::string& s : split_list(value)) cfg.layer_widths.push_back(std::stoi(s));
            } else if (key == "learning_rate") {
                cfg.learning_rate = std::stod(value);
            } else if (key == "lr_decay_epochs") {
                cfg.lr_decay_epochs.clear();
                for (const std::string& s : split_list(value)) cfg.lr_decay_epochs.push_back(std::stoi(s));
            } else if (key == "lr_decay_ratio") {
                cfg.lr_decay_ratio = std::stod(value);
            } else if (key == "epochs") {
                cfg.epochs = std::stoi(value);
            } else if (key == "batch_size") {
                cfg.batch_size = std::stoi(value);
            } else if (key == "weight_decay_slow") {
                cfg.weight_decay_slow = std::stod(value);
            } else if (key == "weight_decay_fast") {
                cfg.weight_decay_fast = std::stod(value);
            } else if (key == "prior_sigma") {
                cfg.prior_sigma = std::stod(value);
            } else if (key == "seed") {
                cfg.seed = std::stoull(value);
            } else if (key == "extra_samples") {
                cfg.extra_samples = std::stoi(value);
            } else if (key == "dataset") {
                if (value == "blobs")
                    cfg.dataset.kind = DatasetSpec::Kind::kBlobs;
                else if (value == "rings")
                    cfg.dataset.kind = DatasetSpec::Kind::kRings;
                else if (value == "file")
                    cfg.dataset.kind = DatasetSpec::Kind::kFile;
                else
                    throw ConfigError("unknown dataset kind: " + value);
            } else if (key == "dataset_file") {
                cfg.dataset.file_path = value;
            } else if (key == "n_train") {
                cfg.dataset.n_train = std::stoi(value);
            } else if (key == "n_test") {
                cfg.dataset.n_test = std::stoi(value);
            } else if (key == "n_classes") {
                cfg.dataset.n_classes = std::stoi(value);
            } else if (key == "input_dim") {
                cfg.dataset.input_dim = std::stoi(value);
            } else if (key == "ood_shift") {
                cfg.dataset.ood_shift = std::stod(value);
            } else if (key == "corruption_stds") {
                cfg.dataset.corruption_stds.clear();
                for (const std::string& s : split_list(value)) cfg.dataset.corruption_stds.push_back(std::stod(s));
            } else {
                throw ConfigError("unknown config key: " + key);
            }
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("config line " + std::to_string(line_no) + ": bad value for " + key + ": " + value);
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::stringstream buffer;
    buffer << f.rdbuf();
    return parse_config_text(buffer.str());
}

}  // namespace lpbnn
