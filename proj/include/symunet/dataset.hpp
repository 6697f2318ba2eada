#pragma once

#include <filesystem>
#include <fstream>

#include "symunet/config.hpp"
#include "symunet/degrade.hpp"
#include "symunet/png_io.hpp"

namespace symunet {

// One dataset sample: a clean image path plus the degradation that produces
// its paired input. Serialized as "<clean-path>\t<kind>\t<k=v,...>\t<seed>".
struct ManifestEntry {
    std::string clean_path;
    DegradationSpec spec;
};

inline std::string format_manifest_line(const ManifestEntry& e) {
    std::string params;
    for (const auto& [k, v] : e.spec.params)
        params += (params.empty() ? "" : ",") + k + "=" + detail::double_str(v);
    return e.clean_path + "\t" + to_string(e.spec.kind) + "\t" + params + "\t" +
           std::to_string(e.spec.seed);
}

inline ManifestEntry parse_manifest_line(const std::string& line) {
    auto parts = detail::split(line, '\t');
    if (parts.size() != 4)
        throw FormatError("malformed manifest line (expected 4 tab-separated fields): '" + line +
                          "'");
    ManifestEntry e;
    e.clean_path = parts[0];
    e.spec.kind = degradation_kind_from_string(parts[1]);
    for (const auto& kv : detail::split(parts[2], ',')) {
        if (kv.empty()) continue;
        const size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw FormatError("malformed degradation parameter '" + kv + "'");
        e.spec.params[kv.substr(0, eq)] = detail::parse_double(kv.substr(0, eq), kv.substr(eq + 1));
    }
    e.spec.seed = std::stoull(parts[3]);
    return e;
}

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open manifest '" + path + "'");
    std::vector<ManifestEntry> out;
    std::string line;
    while (std::getline(is, line)) {
        if (detail::trim(line).empty()) continue;
        out.push_back(parse_manifest_line(line));
    }
    return out;
}

inline void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write manifest '" + path + "'");
    for (const auto& e : entries) os << format_manifest_line(e) << '\n';
}

// Small decoded-image cache keyed by path; training repeatedly revisits the
// same clean files.
class PngCache {
public:
    const Tensor<float>& get(const std::string& path) {
        auto it = cache_.find(path);
        if (it != cache_.end()) return it->second;
        if (cache_.size() >= kMaxEntries) cache_.clear();
        return cache_.emplace(path, read_png_rgb(path)).first->second;
    }

private:
    static constexpr size_t kMaxEntries = 256;
    std::map<std::string, Tensor<float>> cache_;
};

inline ImagePair load_pair(const ManifestEntry& e, PngCache* cache = nullptr) {
    Tensor<float> clean = cache ? cache->get(e.clean_path).detach() : read_png_rgb(e.clean_path);
    Tensor<float> degraded = degrade(clean, e.spec);
    return ImagePair{std::move(clean), std::move(degraded), e.spec};
}

// Default parameters for CLI synthesis; the noise grid cycles through the
// three benchmark sigmas, the rest jitter within documented ranges.
inline DegradationSpec default_spec(DegradationKind kind, std::uint64_t sample_seed,
                                    std::uint64_t index) {
    DegradationSpec spec;
    spec.kind = kind;
    spec.seed = sample_seed;
    Rng rng(splitmix64(sample_seed ^ 0xD15EA5E));
    switch (kind) {
        case DegradationKind::kNoise: {
            static const double grid[3] = {15.0, 25.0, 50.0};
            spec.params["sigma"] = grid[index % 3];
            break;
        }
        case DegradationKind::kHaze:
            spec.params["beta"] = rng.uniform_range(0.6, 1.4);
            spec.params["airlight"] = rng.uniform_range(0.7, 0.95);
            break;
        case DegradationKind::kRain:
            spec.params["count"] = 40.0 + std::floor(rng.uniform_range(0.0, 40.0));
            spec.params["length"] = rng.uniform_range(16.0, 32.0);
            spec.params["angle"] = rng.uniform_range(-30.0, 30.0);
            spec.params["intensity"] = rng.uniform_range(0.5, 0.8);
            break;
        case DegradationKind::kBlur:
            spec.params["sigma_b"] = rng.uniform_range(1.0, 2.5);
            break;
        case DegradationKind::kLowlight:
            spec.params["gamma"] = rng.uniform_range(1.8, 2.8);
            spec.params["gain"] = rng.uniform_range(0.4, 0.7);
            break;
    }
    return spec;
}

inline std::vector<std::string> list_pngs_sorted(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw ConfigError("'" + dir + "' is not a directory");
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

// Pre-paired folders: matching filenames under clean/ and degraded/.
// The spec of each pair is a placeholder (noise sigma 0) since the
// degradation is given, not synthesized.
inline std::vector<ImagePair> load_paired_folder(const std::string& clean_dir,
                                                 const std::string& degraded_dir) {
    std::vector<ImagePair> out;
    for (const auto& clean_path : list_pngs_sorted(clean_dir)) {
        namespace fs = std::filesystem;
        const auto name = fs::path(clean_path).filename();
        const auto degraded_path = fs::path(degraded_dir) / name;
        if (!fs::exists(degraded_path))
            throw FormatError("paired folder: missing degraded image '" +
                              degraded_path.string() + "'");
        ImagePair pair;
        pair.clean = read_png_rgb(clean_path);
        pair.degraded = read_png_rgb(degraded_path.string());
        check_dims(pair.clean.shape() == pair.degraded.shape(),
                   "paired folder: shape mismatch for '" + name.string() + "'");
        pair.spec.kind = DegradationKind::kNoise;
        pair.spec.params["sigma"] = 0.0;
        out.push_back(std::move(pair));
    }
    return out;
}

}  // namespace symunet
