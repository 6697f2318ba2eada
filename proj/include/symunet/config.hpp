#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "symunet/common.hpp"

namespace symunet {

enum class GuidanceMode { kNone, kOneWay, kBidirectional };

inline std::string to_string(GuidanceMode m) {
    switch (m) {
        case GuidanceMode::kNone: return "none";
        case GuidanceMode::kOneWay: return "one_way";
        case GuidanceMode::kBidirectional: return "bidirectional";
    }
    return "none";
}

inline GuidanceMode guidance_mode_from_string(const std::string& s) {
    if (s == "none") return GuidanceMode::kNone;
    if (s == "one_way") return GuidanceMode::kOneWay;
    if (s == "bidirectional") return GuidanceMode::kBidirectional;
    throw ConfigError("guidance_mode must be one of none, one_way, bidirectional; got '" + s + "'");
}

enum class ContextSource { kStub, kFile };

// Architecture hyperparameters. base_channels defaults to 46: the widths 36,
// 40 and 48 land outside +-10% of the 22.26M parameter budget with this block
// design (48 -> 25.05M, +12.5%), while 46 gives 23.02M (+3.4%).
struct ModelConfig {
    int levels = 3;
    int base_channels = 46;
    std::vector<int> encoder_blocks = {4, 6, 6};
    int bottleneck_blocks = 8;
    std::vector<int> decoder_blocks = {6, 6, 4};  // deepest stage first
    std::vector<int> heads_per_level = {1, 2, 4, 8};  // levels 0..L-1, then bottleneck
    GuidanceMode guidance_mode = GuidanceMode::kNone;
    bool symmetric = true;
    int refinement_blocks = 4;  // asymmetric variant only
    int bottleneck_patch = 2;
    std::vector<int> decoder_patch = {4, 4, 4};  // deepest stage first
    int context_tokens = 257;   // N_z
    int context_dim = 1024;     // D_z
    int ca_heads = 8;
    double ffn_expansion = 2.66;
    ContextSource context_source = ContextSource::kStub;
    std::string context_dir;
    std::uint64_t stub_seed = 0;

    int channels_at(int level) const { return base_channels << level; }

    void validate() const {
        check_config(levels >= 1, "levels must be >= 1");
        check_config(base_channels >= 2 && base_channels % 2 == 0,
                     "base_channels must be even and >= 2 (downsampling halves channels)");
        check_config(static_cast<int>(encoder_blocks.size()) == levels,
                     "encoder_blocks must list exactly levels=" + std::to_string(levels) +
                         " entries");
        check_config(static_cast<int>(decoder_blocks.size()) == levels,
                     "decoder_blocks must list exactly levels=" + std::to_string(levels) +
                         " entries");
        if (symmetric) {
            std::vector<int> rev(encoder_blocks.rbegin(), encoder_blocks.rend());
            check_config(decoder_blocks == rev,
                         "symmetric model requires decoder_blocks to mirror encoder_blocks "
                         "(expected reverse(encoder_blocks))");
        } else {
            check_config(refinement_blocks > 0,
                         "asymmetric variant requires refinement_blocks > 0");
        }
        check_config(static_cast<int>(heads_per_level.size()) == levels + 1,
                     "heads_per_level must list levels+1 entries (per level plus bottleneck)");
        for (int i = 0; i <= levels; ++i) {
            const int c = (i < levels) ? channels_at(i) : channels_at(levels);
            check_config(heads_per_level[static_cast<size_t>(i)] >= 1 &&
                             c % heads_per_level[static_cast<size_t>(i)] == 0,
                         "channels at scale " + std::to_string(i) + " (" + std::to_string(c) +
                             ") must be divisible by heads " +
                             std::to_string(heads_per_level[static_cast<size_t>(i)]));
        }
        for (int b : encoder_blocks) check_config(b >= 1, "encoder stage needs >= 1 block");
        for (int b : decoder_blocks) check_config(b >= 1, "decoder stage needs >= 1 block");
        check_config(bottleneck_blocks >= 1, "bottleneck needs >= 1 block");
        check_config(ffn_expansion > 0.0, "ffn_expansion must be positive");
        if (guidance_mode != GuidanceMode::kNone) {
            check_config(static_cast<int>(decoder_patch.size()) == levels,
                         "decoder_patch must list exactly levels entries");
            check_config(bottleneck_patch >= 1, "bottleneck_patch must be >= 1");
            for (int p : decoder_patch) check_config(p >= 1, "decoder_patch entries must be >= 1");
            check_config(context_tokens >= 1 && context_dim >= 1,
                         "context dims must be positive");
            check_config(ca_heads >= 1, "ca_heads must be >= 1");
            check_config(context_dim % ca_heads == 0,
                         "context_dim must be divisible by ca_heads");
        }
    }
};

// Optimization / loop hyperparameters (desk-scale defaults; total_steps is
// config-exposed rather than the full-scale 300k).
struct TrainConfig {
    double lr0 = 1e-3;
    double lr_min = 1e-7;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 1e-3;
    double lambda_fft = 0.1;
    int total_steps = 2000;
    int batch_size = 4;
    int crop = 128;
    std::uint64_t seed = 0;
    int checkpoint_every = 500;
    bool augment_flips = true;

    void validate() const {
        check_config(lr_min < lr0, "lr_min must be strictly below lr0");
        check_config(lambda_fft >= 0.0, "lambda_fft must be >= 0");
        check_config(total_steps >= 0 && batch_size >= 1 && crop >= 1,
                     "total_steps/batch_size/crop out of range");
        check_config(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1,
                     "adam betas must lie in [0,1)");
        check_config(checkpoint_every >= 1, "checkpoint_every must be >= 1");
    }
};

struct Configs {
    ModelConfig model;
    TrainConfig train;
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline int parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    for (const auto& part : split(v, ','))
        if (!trim(part).empty()) out.push_back(parse_int(key, trim(part)));
    if (out.empty()) throw ConfigError(key + ": expected a comma-separated int list");
    return out;
}

inline std::string int_list_str(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

inline std::string double_str(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

// Applies one "key=value" assignment; unknown keys are rejected.
inline void apply_config_entry(Configs& cfg, const std::string& key, const std::string& value) {
    using namespace detail;
    auto& m = cfg.model;
    auto& t = cfg.train;
    if (key == "levels") m.levels = parse_int(key, value);
    else if (key == "base_channels") m.base_channels = parse_int(key, value);
    else if (key == "encoder_blocks") m.encoder_blocks = parse_int_list(key, value);
    else if (key == "bottleneck_blocks") m.bottleneck_blocks = parse_int(key, value);
    else if (key == "decoder_blocks") m.decoder_blocks = parse_int_list(key, value);
    else if (key == "heads_per_level") m.heads_per_level = parse_int_list(key, value);
    else if (key == "guidance_mode") m.guidance_mode = guidance_mode_from_string(value);
    else if (key == "symmetric") m.symmetric = parse_bool(key, value);
    else if (key == "refinement_blocks") m.refinement_blocks = parse_int(key, value);
    else if (key == "bottleneck_patch") m.bottleneck_patch = parse_int(key, value);
    else if (key == "decoder_patch") m.decoder_patch = parse_int_list(key, value);
    else if (key == "context_tokens") m.context_tokens = parse_int(key, value);
    else if (key == "context_dim") m.context_dim = parse_int(key, value);
    else if (key == "ca_heads") m.ca_heads = parse_int(key, value);
    else if (key == "ffn_expansion") m.ffn_expansion = parse_double(key, value);
    else if (key == "context_source") {
        if (value == "stub") m.context_source = ContextSource::kStub;
        else if (value == "file") m.context_source = ContextSource::kFile;
        else throw ConfigError("context_source must be stub or file, got '" + value + "'");
    }
    else if (key == "context_dir") m.context_dir = value;
    else if (key == "stub_seed") m.stub_seed = static_cast<std::uint64_t>(std::stoull(value));
    else if (key == "lr0") t.lr0 = parse_double(key, value);
    else if (key == "lr_min") t.lr_min = parse_double(key, value);
    else if (key == "beta1") t.beta1 = parse_double(key, value);
    else if (key == "beta2") t.beta2 = parse_double(key, value);
    else if (key == "weight_decay") t.weight_decay = parse_double(key, value);
    else if (key == "lambda_fft") t.lambda_fft = parse_double(key, value);
    else if (key == "total_steps") t.total_steps = parse_int(key, value);
    else if (key == "batch_size") t.batch_size = parse_int(key, value);
    else if (key == "crop") t.crop = parse_int(key, value);
    else if (key == "seed") t.seed = static_cast<std::uint64_t>(std::stoull(value));
    else if (key == "checkpoint_every") t.checkpoint_every = parse_int(key, value);
    else if (key == "augment_flips") t.augment_flips = parse_bool(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

// Flat UTF-8 key=value text; '#' starts a comment, blank lines are ignored.
inline Configs parse_config_text(const std::string& text, Configs base = {}) {
    Configs cfg = std::move(base);
    size_t lineno = 0;
    for (const auto& raw : detail::split(text, '\n')) {
        ++lineno;
        std::string line = detail::trim(raw);
        if (line.empty() || line[0] == '#') continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" +
                              line + "'");
        apply_config_entry(cfg, detail::trim(line.substr(0, eq)),
                           detail::trim(line.substr(eq + 1)));
    }
    return cfg;
}

inline std::string serialize_config(const Configs& cfg) {
    using namespace detail;
    const auto& m = cfg.model;
    const auto& t = cfg.train;
    std::string s;
    s += "levels=" + std::to_string(m.levels) + "\n";
    s += "base_channels=" + std::to_string(m.base_channels) + "\n";
    s += "encoder_blocks=" + int_list_str(m.encoder_blocks) + "\n";
    s += "bottleneck_blocks=" + std::to_string(m.bottleneck_blocks) + "\n";
    s += "decoder_blocks=" + int_list_str(m.decoder_blocks) + "\n";
    s += "heads_per_level=" + int_list_str(m.heads_per_level) + "\n";
    s += "guidance_mode=" + to_string(m.guidance_mode) + "\n";
    s += std::string("symmetric=") + (m.symmetric ? "true" : "false") + "\n";
    s += "refinement_blocks=" + std::to_string(m.refinement_blocks) + "\n";
    s += "bottleneck_patch=" + std::to_string(m.bottleneck_patch) + "\n";
    s += "decoder_patch=" + int_list_str(m.decoder_patch) + "\n";
    s += "context_tokens=" + std::to_string(m.context_tokens) + "\n";
    s += "context_dim=" + std::to_string(m.context_dim) + "\n";
    s += "ca_heads=" + std::to_string(m.ca_heads) + "\n";
    s += "ffn_expansion=" + double_str(m.ffn_expansion) + "\n";
    s += std::string("context_source=") +
         (m.context_source == ContextSource::kStub ? "stub" : "file") + "\n";
    if (!m.context_dir.empty()) s += "context_dir=" + m.context_dir + "\n";
    s += "stub_seed=" + std::to_string(m.stub_seed) + "\n";
    s += "lr0=" + double_str(t.lr0) + "\n";
    s += "lr_min=" + double_str(t.lr_min) + "\n";
    s += "beta1=" + double_str(t.beta1) + "\n";
    s += "beta2=" + double_str(t.beta2) + "\n";
    s += "weight_decay=" + double_str(t.weight_decay) + "\n";
    s += "lambda_fft=" + double_str(t.lambda_fft) + "\n";
    s += "total_steps=" + std::to_string(t.total_steps) + "\n";
    s += "batch_size=" + std::to_string(t.batch_size) + "\n";
    s += "crop=" + std::to_string(t.crop) + "\n";
    s += "seed=" + std::to_string(t.seed) + "\n";
    s += "checkpoint_every=" + std::to_string(t.checkpoint_every) + "\n";
    s += std::string("augment_flips=") + (t.augment_flips ? "true" : "false") + "\n";
    return s;
}

}  // namespace symunet
