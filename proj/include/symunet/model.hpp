#pragma once

#include <map>
#include <set>

#include "symunet/block.hpp"
#include "symunet/config.hpp"
#include "symunet/semantic.hpp"

namespace symunet {

struct ForwardStats {
    int guidance_calls = 0;
    int refine_calls = 0;
};

// Parameter store plus wiring. Every learnable tensor is reachable under
// exactly one name in `params`; the structured fields share the same nodes.
template <typename T = float>
struct Model {
    ModelConfig config;
    SemanticEncoder encoder;

    Tensor<T> init_conv;   // [C, 3, 3, 3]
    Tensor<T> final_conv;  // [3, C_last, 3, 3]
    std::vector<std::vector<BlockParams<T>>> enc_stages;  // [L][blocks]
    std::vector<Tensor<T>> down_convs;                    // [L]
    std::vector<BlockParams<T>> bottleneck;
    std::vector<Tensor<T>> up_convs;                      // [L], index = target level
    std::vector<std::vector<BlockParams<T>>> dec_stages;  // [L][blocks], by level
    std::vector<BlockParams<T>> refinement;               // asymmetric variant only
    std::vector<GuidanceStageParams<T>> guidance;         // [L+1] by level, SE only

    std::map<std::string, Tensor<T>> params;

    int decoder_channels(int level) const {
        const int c = config.channels_at(level);
        return (!config.symmetric && level == 0) ? 2 * c : c;
    }

    int patch_at(int level) const {
        return level == config.levels
                   ? config.bottleneck_patch
                   : config.decoder_patch[static_cast<size_t>(config.levels - 1 - level)];
    }

    template <typename Fn>
    void for_each_param(Fn&& fn) {
        for (auto& [name, t] : params) fn(name, t);
    }
};

namespace detail {

template <typename T>
void register_block(Model<T>& m, const std::string& prefix, BlockParams<T>& b) {
    b.for_each([&](const char* name, Tensor<T>& t) {
        t.set_requires_grad(true);
        m.params.emplace(prefix + "." + name, t);
    });
}

template <typename T>
void register_tensor(Model<T>& m, const std::string& name, Tensor<T>& t) {
    t.set_requires_grad(true);
    m.params.emplace(name, t);
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
void init_params(Model<T>& m, std::uint64_t seed) {
    for (auto& [name, t] : m.params) {
        // residual-branch output projections, the final conv and all CA output
        // projections stay zero so a fresh model is the identity restoration
        if (ends_with(name, "attn_out") || ends_with(name, "ffn_project") ||
            name == "final_conv" || ends_with(name, ".wo"))
            continue;
        // affine norms and temperatures keep their constructor values
        if (ends_with(name, "_scale") || ends_with(name, "_shift") ||
            ends_with(name, "temperature"))
            continue;
        std::int64_t fan_in = 1;
        if (t.rank() == 4) fan_in = static_cast<std::int64_t>(t.dim(1)) * t.dim(2) * t.dim(3);
        else if (t.rank() == 2) fan_in = t.dim(0);
        Rng rng(splitmix64(seed ^ hash_name(name)));
        fill_normal(t, rng, std::sqrt(1.0 / static_cast<double>(fan_in)));
    }
}

}  // namespace detail

// Assembles the model graph for a validated config; deterministic in
// (config, seed). Dispatches to the asymmetric variant when symmetric=false.
template <typename T = float>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    const int L = config.levels;
    Model<T> m;
    m.config = config;
    m.encoder = SemanticEncoder{config.context_source, config.stub_seed, config.context_dir};

    if (!config.symmetric) {
        const int c0 = 2 * config.base_channels;
        check_config(c0 % config.heads_per_level[0] == 0,
                     "asymmetric variant: doubled final-stage channels " + std::to_string(c0) +
                         " must be divisible by heads " +
                         std::to_string(config.heads_per_level[0]));
    }

    m.init_conv = Tensor<T>::zeros({config.base_channels, 3, 3, 3});
    detail::register_tensor(m, "init_conv", m.init_conv);

    for (int i = 0; i < L; ++i) {
        const int c = config.channels_at(i);
        const int heads = config.heads_per_level[static_cast<size_t>(i)];
        std::vector<BlockParams<T>> stage;
        for (int j = 0; j < config.encoder_blocks[static_cast<size_t>(i)]; ++j) {
            stage.push_back(make_block_params<T>(c, heads, config.ffn_expansion));
            detail::register_block(m, "enc" + std::to_string(i) + ".block" + std::to_string(j),
                                   stage.back());
        }
        m.enc_stages.push_back(std::move(stage));
        m.down_convs.push_back(Tensor<T>::zeros({c / 2, c, 3, 3}));
        detail::register_tensor(m, "down" + std::to_string(i), m.down_convs.back());
    }

    {
        const int c = config.channels_at(L);
        const int heads = config.heads_per_level[static_cast<size_t>(L)];
        for (int j = 0; j < config.bottleneck_blocks; ++j) {
            m.bottleneck.push_back(make_block_params<T>(c, heads, config.ffn_expansion));
            detail::register_block(m, "bottleneck.block" + std::to_string(j), m.bottleneck.back());
        }
    }

    m.up_convs.resize(static_cast<size_t>(L));
    m.dec_stages.resize(static_cast<size_t>(L));
    for (int i = L - 1; i >= 0; --i) {
        const int cin = config.channels_at(i + 1);
        m.up_convs[static_cast<size_t>(i)] = Tensor<T>::zeros({2 * cin, cin, 3, 3});
        detail::register_tensor(m, "up" + std::to_string(i), m.up_convs[static_cast<size_t>(i)]);
        const int c = m.decoder_channels(i);
        const int heads = config.heads_per_level[static_cast<size_t>(i)];
        const int nblocks = config.decoder_blocks[static_cast<size_t>(L - 1 - i)];
        for (int j = 0; j < nblocks; ++j) {
            m.dec_stages[static_cast<size_t>(i)].push_back(
                make_block_params<T>(c, heads, config.ffn_expansion));
            detail::register_block(m, "dec" + std::to_string(i) + ".block" + std::to_string(j),
                                   m.dec_stages[static_cast<size_t>(i)].back());
        }
    }

    if (!config.symmetric) {
        const int c = m.decoder_channels(0);
        for (int j = 0; j < config.refinement_blocks; ++j) {
            m.refinement.push_back(
                make_block_params<T>(c, config.heads_per_level[0], config.ffn_expansion));
            detail::register_block(m, "refine.block" + std::to_string(j), m.refinement.back());
        }
    }

    m.final_conv = Tensor<T>::zeros({3, m.decoder_channels(0), 3, 3});
    detail::register_tensor(m, "final_conv", m.final_conv);

    if (config.guidance_mode != GuidanceMode::kNone) {
        for (int i = 0; i <= L; ++i) {
            const int c = i == L ? config.channels_at(L) : m.decoder_channels(i);
            auto g = make_guidance_stage<T>(c, m.patch_at(i), config.context_dim, config.ca_heads);
            const std::string prefix = "sg" + std::to_string(i);
            g.for_each([&](const char* name, Tensor<T>& t) {
                t.set_requires_grad(true);
                m.params.emplace(prefix + "." + name, t);
            });
            m.guidance.push_back(std::move(g));
        }
    }

    detail::init_params(m, seed);
    return m;
}

// Table-style ablation: the final decoder stage consumes a concatenated skip
// at doubled width and refinement blocks are appended before the final conv.
template <typename T = float>
Model<T> build_asymmetric_variant(const ModelConfig& config, std::uint64_t seed = 0) {
    check_config(!config.symmetric, "build_asymmetric_variant requires symmetric=false");
    return build_model<T>(config, seed);
}

namespace detail {

template <typename T>
struct TapSink {
    const std::set<std::string>* want = nullptr;  // null records everything
    std::map<std::string, Tensor<T>> got;

    void record(const std::string& name, const Tensor<T>& t) {
        if (want && !want->count(name)) return;
        got.emplace(name, t.detach());
    }
};

template <typename T>
Tensor<T> run_stage(const std::vector<BlockParams<T>>& blocks, Tensor<T> f) {
    for (const auto& b : blocks) f = feature_block(f, b);
    return f;
}

template <typename T>
Tensor<T> forward_trunk(const Model<T>& m, const Tensor<T>& y, bool with_guidance,
                        const SemanticContext<T>* ctx0, ForwardStats* stats, TapSink<T>* taps) {
    check_dims(y.rank() == 3 && y.dim(0) == 3,
               "forward: expected [3,H,W] input, got " + shape_str(y.shape()));
    const int L = m.config.levels;
    const int mult = 1 << L;
    check_dims(y.dim(1) % mult == 0 && y.dim(2) % mult == 0,
               "forward: H=" + std::to_string(y.dim(1)) + ", W=" + std::to_string(y.dim(2)) +
                   " must be divisible by 2^L=" + std::to_string(mult) + " (pad first)");

    Tensor<T> x = conv2d(y, m.init_conv, 1, 1);
    if (taps) taps->record("f_enc_0", x);

    std::vector<Tensor<T>> skips;
    for (int i = 0; i < L; ++i) {
        Tensor<T> s = run_stage(m.enc_stages[static_cast<size_t>(i)], x);
        if (taps) taps->record("s_" + std::to_string(i), s);
        skips.push_back(s);
        x = downsample(s, m.down_convs[static_cast<size_t>(i)]);
        if (taps) taps->record("f_enc_" + std::to_string(i + 1), x);
    }

    SemanticContext<T> z;
    if (with_guidance) {
        if (ctx0) {
            z = *ctx0;
        } else {
            z = extract_context(y, m.encoder, m.config.context_tokens, m.config.context_dim, L);
        }
    }

    Tensor<T> f = x;
    for (int i = L; i >= 0; --i) {
        Tensor<T> f_in;
        if (i == L) {
            f_in = f;
        } else {
            Tensor<T> up = upsample(f, m.up_convs[static_cast<size_t>(i)]);
            if (!m.config.symmetric && i == 0) {
                f_in = concat0<T>({up, skips[0]});
            } else {
                f_in = add(up, skips[static_cast<size_t>(i)]);
            }
        }
        if (with_guidance) {
            f_in = semantic_guidance(f_in, z, m.guidance[static_cast<size_t>(i)], m.patch_at(i));
            if (stats) ++stats->guidance_calls;
        }
        f = run_stage(i == L ? m.bottleneck : m.dec_stages[static_cast<size_t>(i)], f_in);
        if (taps) {
            taps->record("f_dec_" + std::to_string(i), f);
            if (i == L) taps->record("bottleneck", f);
        }
        if (with_guidance && m.config.guidance_mode == GuidanceMode::kBidirectional) {
            z = semantic_refine(f, z, m.guidance[static_cast<size_t>(i)], m.patch_at(i), i - 1);
            if (stats) ++stats->refine_calls;
        }
    }

    if (!m.config.symmetric) f = run_stage(m.refinement, f);
    return add(conv2d(f, m.final_conv, 1, 1), y);
}

}  // namespace detail

// Baseline restoration forward: x_hat = Conv(f_dec_0) + y.
template <typename T>
Tensor<T> forward_symunet(const Model<T>& m, const Tensor<T>& y, ForwardStats* stats = nullptr) {
    return detail::forward_trunk(m, y, false, static_cast<const SemanticContext<T>*>(nullptr),
                                 stats, static_cast<detail::TapSink<T>*>(nullptr));
}

// Semantic-enhanced forward: the decoder loop interleaves SemanticGuidance
// and (in bidirectional mode) SemanticRefine at every stage from the
// bottleneck down. one_way keeps Z fixed at the initial context.
template <typename T>
Tensor<T> forward_se_symunet(const Model<T>& m, const Tensor<T>& y, ForwardStats* stats = nullptr,
                             const SemanticContext<T>* ctx0 = nullptr) {
    check_config(m.config.guidance_mode != GuidanceMode::kNone,
                 "forward_se_symunet requires guidance_mode != none; use forward_symunet");
    return detail::forward_trunk(m, y, true, ctx0, stats, static_cast<detail::TapSink<T>*>(nullptr));
}

// Dispatches on the configured guidance mode.
template <typename T>
Tensor<T> forward_auto(const Model<T>& m, const Tensor<T>& y, ForwardStats* stats = nullptr) {
    return m.config.guidance_mode == GuidanceMode::kNone ? forward_symunet(m, y, stats)
                                                         : forward_se_symunet(m, y, stats);
}

template <typename T>
std::set<std::string> valid_taps(const Model<T>& m) {
    std::set<std::string> names{"bottleneck"};
    for (int i = 0; i <= m.config.levels; ++i) {
        names.insert("f_enc_" + std::to_string(i));
        names.insert("f_dec_" + std::to_string(i));
        if (i < m.config.levels) names.insert("s_" + std::to_string(i));
    }
    return names;
}

// Runs a forward pass recording detached copies of the requested feature
// taps. Tapping never changes the forward output.
template <typename T>
std::map<std::string, Tensor<T>> extract_features(const Model<T>& m, const Tensor<T>& y,
                                                  const std::vector<std::string>& taps) {
    const auto valid = valid_taps(m);
    for (const auto& t : taps) {
        if (!valid.count(t)) {
            std::string list;
            for (const auto& v : valid) list += (list.empty() ? "" : ", ") + v;
            throw ConfigError("unknown tap '" + t + "'; valid taps: " + list);
        }
    }
    detail::TapSink<T> sink;
    std::set<std::string> want(taps.begin(), taps.end());
    sink.want = &want;
    NoGradGuard ng;
    detail::forward_trunk(m, y, m.config.guidance_mode != GuidanceMode::kNone,
                          static_cast<const SemanticContext<T>*>(nullptr), nullptr, &sink);
    return std::move(sink.got);
}

template <typename T>
std::int64_t count_parameters(Model<T>& m) {
    std::int64_t n = 0;
    m.for_each_param([&n](const std::string&, Tensor<T>& t) { n += t.size(); });
    return n;
}

// MACs of one convolution: output-pixels x Cout x Cin/groups x kernel size.
inline std::int64_t conv_macs(std::int64_t hw, std::int64_t cout, std::int64_t cin_g,
                              std::int64_t k2) {
    return hw * cout * cin_g * k2;
}

// Multiply-accumulate count over convs, attention matmuls and norms at the
// given input resolution.
template <typename T>
std::int64_t estimate_flops(const Model<T>& m, int height, int width) {
    const int L = m.config.levels;
    const int mult = 1 << L;
    check_dims(height % mult == 0 && width % mult == 0,
               "estimate_flops: resolution must be divisible by 2^L");
    auto block_macs = [&](std::int64_t c, std::int64_t hw, std::int64_t heads,
                          std::int64_t hidden) {
        const std::int64_t ch = c / heads;
        std::int64_t n = 0;
        n += 2 * (2 * c * hw);                    // two channel layer norms
        n += conv_macs(hw, 3 * c, c, 1);          // qkv pointwise
        n += conv_macs(hw, 3 * c, 1, 9);          // qkv depthwise
        n += 2 * (2 * c * hw);                    // q/k row normalization
        n += 2 * c * ch * hw;                     // QK^T and AV per head
        n += conv_macs(hw, c, c, 1);              // attention output projection
        n += conv_macs(hw, 2 * hidden, c, 1);     // ffn expand
        n += 2 * hidden * hw;                     // gelu gate
        n += conv_macs(hw, hidden, 1, 9);         // ffn depthwise
        n += conv_macs(hw, c, hidden, 1);         // ffn project
        return n;
    };
    auto guidance_macs = [&](std::int64_t c, std::int64_t hw, std::int64_t p, bool bidir) {
        const std::int64_t np = hw / (p * p);
        const std::int64_t dp = p * p * c;
        const std::int64_t nz = m.config.context_tokens, dz = m.config.context_dim;
        std::int64_t n = 0;
        n += nz * dz * dp;                        // z bridge
        n += np * dp * dp + 2 * nz * dp * dp;     // q, k, v projections
        n += 2 * np * nz * dp;                    // scores and weighted values
        n += np * dp * dp;                        // output projection
        if (bidir) {
            n += np * dp * dz;                    // f bridge
            n += nz * dz * dz + 2 * np * dz * dz;
            n += 2 * nz * np * dz;
            n += nz * dz * dz;
        }
        return n;
    };

    std::int64_t total = 0;
    std::int64_t h = height, w = width;
    total += conv_macs(h * w, m.config.base_channels, 3, 9);  // initial conv
    for (int i = 0; i < L; ++i) {
        const std::int64_t c = m.config.channels_at(i);
        const std::int64_t hidden = static_cast<std::int64_t>(c * m.config.ffn_expansion);
        for (size_t j = 0; j < m.enc_stages[static_cast<size_t>(i)].size(); ++j)
            total += block_macs(c, h * w, m.config.heads_per_level[static_cast<size_t>(i)], hidden);
        total += conv_macs(h * w, c / 2, c, 9);  // down conv
        h /= 2;
        w /= 2;
    }
    {
        const std::int64_t c = m.config.channels_at(L);
        const std::int64_t hidden = static_cast<std::int64_t>(c * m.config.ffn_expansion);
        const bool guided = m.config.guidance_mode != GuidanceMode::kNone;
        const bool bidir = m.config.guidance_mode == GuidanceMode::kBidirectional;
        if (guided) total += guidance_macs(c, h * w, m.patch_at(L), bidir);
        for (int j = 0; j < m.config.bottleneck_blocks; ++j)
            total += block_macs(c, h * w, m.config.heads_per_level[static_cast<size_t>(L)], hidden);
    }
    for (int i = L - 1; i >= 0; --i) {
        const std::int64_t cin = m.config.channels_at(i + 1);
        total += conv_macs(h * w, 2 * cin, cin, 9);  // up conv
        h *= 2;
        w *= 2;
        const std::int64_t c = m.decoder_channels(i);
        const std::int64_t hidden = static_cast<std::int64_t>(c * m.config.ffn_expansion);
        const bool guided = m.config.guidance_mode != GuidanceMode::kNone;
        const bool bidir = m.config.guidance_mode == GuidanceMode::kBidirectional;
        if (guided) total += guidance_macs(c, h * w, m.patch_at(i), bidir);
        for (size_t j = 0; j < m.dec_stages[static_cast<size_t>(i)].size(); ++j)
            total += block_macs(c, h * w, m.config.heads_per_level[static_cast<size_t>(i)], hidden);
    }
    if (!m.config.symmetric) {
        const std::int64_t c = m.decoder_channels(0);
        const std::int64_t hidden = static_cast<std::int64_t>(c * m.config.ffn_expansion);
        for (int j = 0; j < m.config.refinement_blocks; ++j)
            total += block_macs(c, h * w, m.config.heads_per_level[0], hidden);
    }
    total += conv_macs(h * w, 3, m.decoder_channels(0), 9);  // final conv
    return total;
}

}  // namespace symunet
