#include "lpbnn/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace lpbnn {

namespace {

constexpr char kMagic[] = "LPBNN1\n";

void write_u64_le(std::ostream& os, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(buf, 8);
}

std::uint64_t read_u64_le(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (!is) throw IoError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

void write_doubles_le(std::ostream& os, const std::vector<double>& values) {
    for (double d : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        write_u64_le(os, bits);
    }
}

void read_doubles_le(std::istream& is, std::vector<double>& values) {
    for (double& d : values) {
        std::uint64_t bits = read_u64_le(is);
        std::memcpy(&d, &bits, 8);
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, std::uint64_t seed) {
    nlohmann::json manifest;
    manifest["model_kind"] = model_kind_name(model.kind());
    manifest["input_dim"] = model.input_dim();
    manifest["n_classes"] = model.n_classes();
    manifest["hidden"] = model.hidden_widths();
    manifest["members"] = model.members();
    manifest["latent_dim"] = model.latent_dim_requested();
    manifest["prior_sigma"] = model.prior_sigma();
    manifest["freeze_fast"] = model.frozen_fast();
    manifest["identity_vae"] = model.identity_vae();
    manifest["seed"] = seed;
    nlohmann::json params = nlohmann::json::array();
    for (const auto& [name, tensor] : model.named_params()) {
        params.push_back({{"name", name}, {"shape", tensor.shape()}});
    }
    manifest["params"] = params;
    std::string text = manifest.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint: " + path);
    f.write(kMagic, sizeof(kMagic) - 1);
    write_u64_le(f, text.size());
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, tensor] : model.named_params()) write_doubles_le(f, tensor.data());
    if (!f) throw IoError("failed writing checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint: " + path);
    char magic[sizeof(kMagic) - 1];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
        throw IoError("not a checkpoint file: " + path);
    }
    std::uint64_t len = read_u64_le(f);
    std::string text(len, '\0');
    f.read(text.data(), static_cast<std::streamsize>(len));
    if (!f) throw IoError("checkpoint manifest truncated: " + path);
    nlohmann::json manifest = nlohmann::json::parse(text);

    ExperimentConfig cfg;
    cfg.members = manifest["members"].get<int>();
    cfg.latent_dim = manifest["latent_dim"].get<int>();
    cfg.layer_widths = manifest["hidden"].get<std::vector<int>>();
    cfg.prior_sigma = manifest["prior_sigma"].get<double>();
    cfg.freeze_fast_weights = manifest["freeze_fast"].get<bool>();
    cfg.identity_vae = manifest["identity_vae"].get<bool>();
    std::uint64_t seed = manifest["seed"].get<std::uint64_t>();

    LoadedCheckpoint out{Model::build(cfg, model_kind_from(manifest["model_kind"].get<std::string>()),
                                      manifest["input_dim"].get<int>(), manifest["n_classes"].get<int>(), seed),
                         seed};

    auto named = out.model.named_params();
    if (named.size() != manifest["params"].size()) {
        throw IoError("checkpoint manifest does not match rebuilt architecture: " + path);
    }
    for (size_t i = 0; i < named.size(); ++i) {
        const auto& entry = manifest["params"][i];
        if (entry["name"].get<std::string>() != named[i].first ||
            entry["shape"].get<std::vector<int>>() != named[i].second.shape()) {
            throw IoError("checkpoint parameter mismatch at " + named[i].first + ": " + path);
        }
        read_doubles_le(f, named[i].second.data());
    }
    if (!f) throw IoError("checkpoint payload truncated: " + path);
    return out;
}

}  // namespace lpbnn
