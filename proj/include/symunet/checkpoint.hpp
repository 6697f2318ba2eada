#pragma once

#include <filesystem>
#include <fstream>

#include "symunet/optim.hpp"

namespace symunet {

inline constexpr int kCheckpointVersion = 1;

// Training-loop state: optimizer moments plus the data-sampling rng. The
// step counter lives on the optimizer state.
template <typename T>
struct TrainState {
    AdamWState<T> optim;
    Rng rng;
};

namespace detail {

template <typename T>
void write_float_blob(const std::string& path, Model<T>& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    model.for_each_param([&os](const std::string&, Tensor<T>& t) {
        for (T v : t.data()) {
            const float f = static_cast<float>(v);
            os.write(reinterpret_cast<const char*>(&f), 4);
        }
    });
}

template <typename T>
void write_moment_blob(const std::string& path, Model<T>& model,
                       std::map<std::string, std::vector<T>>& moments) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    model.for_each_param([&](const std::string& name, Tensor<T>& t) {
        auto it = moments.find(name);
        std::vector<T> zeros;
        const std::vector<T>& src = it != moments.end() && !it->second.empty()
                                        ? it->second
                                        : (zeros.assign(t.data().size(), T(0)), zeros);
        for (T v : src) {
            const float f = static_cast<float>(v);
            os.write(reinterpret_cast<const char*>(&f), 4);
        }
    });
}

struct ManifestEntryRec {
    std::string name;
    Shape shape;
    std::int64_t offset = 0;
};

inline std::vector<ManifestEntryRec> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open checkpoint manifest '" + path + "'");
    std::vector<ManifestEntryRec> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto parts = split(line, '\t');
        if (parts.size() != 3) throw FormatError("malformed manifest line: '" + line + "'");
        ManifestEntryRec rec;
        rec.name = parts[0];
        for (const auto& d : split(parts[1], ','))
            rec.shape.push_back(std::stoi(d));
        rec.offset = std::stoll(parts[2]);
        out.push_back(std::move(rec));
    }
    return out;
}

template <typename T>
void read_float_blob_into(const std::string& bin_path,
                          const std::vector<ManifestEntryRec>& manifest,
                          const std::function<std::vector<T>*(const ManifestEntryRec&)>& dst) {
    std::ifstream is(bin_path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint blob '" + bin_path + "'");
    for (const auto& rec : manifest) {
        std::vector<T>* out = dst(rec);
        is.seekg(rec.offset);
        const std::int64_t n = numel(rec.shape);
        out->resize(static_cast<size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            float f;
            is.read(reinterpret_cast<char*>(&f), 4);
            if (!is)
                throw FormatError("checkpoint blob '" + bin_path + "' truncated at tensor '" +
                                  rec.name + "'");
            (*out)[static_cast<size_t>(i)] = static_cast<T>(f);
        }
    }
}

}  // namespace detail

// Checkpoint directory: config.txt, manifest.txt (name -> shape -> byte
// offset), params.bin (float32 LE), state.txt, and optimizer moment blobs
// when training state is included. Round-trips are bit-exact for float
// models.
template <typename T>
void save_checkpoint(const std::string& dir, Model<T>& model, const TrainConfig& tcfg,
                     TrainState<T>* state = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        Configs cfg{model.config, tcfg};
        std::ofstream os(fs::path(dir) / "config.txt");
        os << serialize_config(cfg);
    }
    {
        std::ofstream os(fs::path(dir) / "manifest.txt");
        std::int64_t offset = 0;
        model.for_each_param([&](const std::string& name, Tensor<T>& t) {
            os << name << '\t';
            for (size_t i = 0; i < t.shape().size(); ++i)
                os << (i ? "," : "") << t.shape()[i];
            os << '\t' << offset << '\n';
            offset += t.size() * 4;
        });
    }
    detail::write_float_blob((fs::path(dir) / "params.bin").string(), model);
    {
        std::ofstream os(fs::path(dir) / "state.txt");
        os << "version " << kCheckpointVersion << '\n';
        os << "step " << (state ? state->optim.step : 0) << '\n';
        os << "has_optimizer " << (state ? 1 : 0) << '\n';
        if (state) os << "rng " << state->rng.serialize() << '\n';
    }
    if (state) {
        detail::write_moment_blob((fs::path(dir) / "optim_m1.bin").string(), model, state->optim.m1);
        detail::write_moment_blob((fs::path(dir) / "optim_m2.bin").string(), model, state->optim.m2);
    }
}

template <typename T = float>
struct LoadedCheckpoint {
    Configs configs;
    Model<T> model;
    bool has_state = false;
    TrainState<T> state;
};

template <typename T = float>
LoadedCheckpoint<T> load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(fs::path(dir) / "config.txt"))
        throw FormatError("checkpoint '" + dir + "' not found (missing config.txt)");
    LoadedCheckpoint<T> out;
    {
        std::ifstream is(fs::path(dir) / "config.txt");
        std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        out.configs = parse_config_text(text);
    }
    out.model = build_model<T>(out.configs.model, 0);

    auto manifest = detail::read_manifest((fs::path(dir) / "manifest.txt").string());
    std::set<std::string> seen;
    for (const auto& rec : manifest) {
        auto it = out.model.params.find(rec.name);
        if (it == out.model.params.end())
            throw FormatError("checkpoint tensor '" + rec.name + "' is not a model parameter");
        if (it->second.shape() != rec.shape)
            throw FormatError("checkpoint tensor '" + rec.name + "' has shape " +
                              shape_str(rec.shape) + ", model expects " +
                              shape_str(it->second.shape()));
        seen.insert(rec.name);
    }
    for (const auto& [name, t] : out.model.params)
        if (!seen.count(name)) throw FormatError("checkpoint is missing tensor '" + name + "'");

    detail::read_float_blob_into<T>(
        (fs::path(dir) / "params.bin").string(), manifest,
        [&out](const detail::ManifestEntryRec& rec) -> std::vector<T>* {
            return &out.model.params.at(rec.name).data();
        });

    {
        std::ifstream is(fs::path(dir) / "state.txt");
        if (!is) throw FormatError("checkpoint '" + dir + "' is missing state.txt");
        std::string key;
        int version = -1;
        std::int64_t step = 0;
        int has_opt = 0;
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            const size_t sp = line.find(' ');
            key = line.substr(0, sp);
            const std::string value = sp == std::string::npos ? "" : line.substr(sp + 1);
            if (key == "version") version = std::stoi(value);
            else if (key == "step") step = std::stoll(value);
            else if (key == "has_optimizer") has_opt = std::stoi(value);
            else if (key == "rng") out.state.rng.deserialize(value);
        }
        if (version != kCheckpointVersion)
            throw FormatError("checkpoint version " + std::to_string(version) +
                              " does not match supported version " +
                              std::to_string(kCheckpointVersion));
        out.state.optim.step = step;
        out.has_state = has_opt != 0;
    }
    if (out.has_state) {
        detail::read_float_blob_into<T>(
            (fs::path(dir) / "optim_m1.bin").string(), manifest,
            [&out](const detail::ManifestEntryRec& rec) -> std::vector<T>* {
                return &out.state.optim.m1[rec.name];
            });
        detail::read_float_blob_into<T>(
            (fs::path(dir) / "optim_m2.bin").string(), manifest,
            [&out](const detail::ManifestEntryRec& rec) -> std::vector<T>* {
                return &out.state.optim.m2[rec.name];
            });
    }
    return out;
}

}  // namespace symunet
