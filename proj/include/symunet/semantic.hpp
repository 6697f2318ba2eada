#pragma once

#include <filesystem>

#include "symunet/config.hpp"
#include "symunet/io.hpp"
#include "symunet/ops.hpp"

namespace symunet {

// Token matrix Z of shape [N_z, D_z] carrying high-level priors, plus the
// decoder level that produced it (L..0).
template <typename T>
struct SemanticContext {
    Tensor<T> tokens;
    int level_tag = 0;
};

// Frozen encoder handle: either the deterministic stub or precomputed token
// files (<image-stem>.ctx.symt under a directory). The stub mimics a ViT's
// last hidden state: one global token followed by grid patch tokens, each a
// fixed random projection of local image statistics. Its weights are plain
// data, never graph leaves, so no gradient can reach them.
struct SemanticEncoder {
    ContextSource source = ContextSource::kStub;
    std::uint64_t seed = 0;
    std::string dir;
};

namespace detail {

template <typename T>
Tensor<T> stub_context_tokens(const Tensor<T>& image, std::uint64_t seed, int nz, int dz) {
    check_dims(image.rank() == 3 && image.dim(0) == 3,
               "stub encoder: expected [3,H,W] image, got " + shape_str(image.shape()));
    const int h = image.dim(1), w = image.dim(2);
    int grid = 1;
    while (grid * grid < nz - 1) ++grid;
    // frozen projection, drawn once from the stub seed
    const int feat = 5;
    std::vector<double> proj(static_cast<size_t>(dz) * feat);
    std::vector<double> bias(static_cast<size_t>(dz));
    Rng wr(splitmix64(seed ^ 0x53454d454e43ULL));
    for (auto& v : proj) v = wr.normal() * 0.7;
    for (auto& v : bias) v = wr.normal() * 0.1;

    // average-pool the image onto the grid
    std::vector<double> cells(static_cast<size_t>(3) * grid * grid, 0.0);
    for (int c = 0; c < 3; ++c)
        for (int gy = 0; gy < grid; ++gy)
            for (int gx = 0; gx < grid; ++gx) {
                const int y0 = static_cast<int>(static_cast<std::int64_t>(gy) * h / grid);
                const int y1 = std::max(y0 + 1, static_cast<int>(static_cast<std::int64_t>(gy + 1) * h / grid));
                const int x0 = static_cast<int>(static_cast<std::int64_t>(gx) * w / grid);
                const int x1 = std::max(x0 + 1, static_cast<int>(static_cast<std::int64_t>(gx + 1) * w / grid));
                double acc = 0.0;
                for (int y = y0; y < std::min(y1, h); ++y)
                    for (int x = x0; x < std::min(x1, w); ++x)
                        acc += static_cast<double>(
                            image.data()[(static_cast<size_t>(c) * h + y) * w + x]);
                const int area = std::max(1, (std::min(y1, h) - y0) * (std::min(x1, w) - x0));
                cells[(static_cast<size_t>(c) * grid + gy) * grid + gx] = acc / area;
            }

    double gmean = 0.0;
    for (double v : cells) gmean += v;
    gmean /= static_cast<double>(cells.size());
    double gvar = 0.0;
    for (double v : cells) gvar += (v - gmean) * (v - gmean);
    gvar /= static_cast<double>(cells.size());

    std::vector<T> tokens(static_cast<size_t>(nz) * dz);
    auto emit = [&](int row, const double* f) {
        for (int d = 0; d < dz; ++d) {
            double acc = bias[static_cast<size_t>(d)];
            for (int k = 0; k < feat; ++k) acc += proj[static_cast<size_t>(d) * feat + k] * f[k];
            tokens[static_cast<size_t>(row) * dz + d] = static_cast<T>(std::tanh(acc));
        }
    };
    {
        const double f[5] = {gmean, std::sqrt(gvar), 1.0, 0.0, 0.0};
        emit(0, f);
    }
    for (int t = 1; t < nz; ++t) {
        const int cell = t - 1;
        const int gy = cell / grid, gx = cell % grid;
        const double fy = grid > 1 ? static_cast<double>(gy) / (grid - 1) : 0.5;
        const double fx = grid > 1 ? static_cast<double>(gx) / (grid - 1) : 0.5;
        const double f[5] = {cells[(0 * grid + gy) * static_cast<size_t>(grid) + gx],
                             cells[(1 * static_cast<size_t>(grid) + gy) * grid + gx],
                             cells[(2 * static_cast<size_t>(grid) + gy) * grid + gx], fy, fx};
        emit(t, f);
    }
    return Tensor<T>::from_data({nz, dz}, std::move(tokens));
}

}  // namespace detail

// Extracts the initial semantic context from an image. The returned token
// tensor is a constant leaf (requires_grad = false): the encoder is frozen.
template <typename T>
SemanticContext<T> extract_context(const Tensor<T>& image, const SemanticEncoder& enc, int nz,
                                   int dz, int level_tag, const std::string& stem = "") {
    if (enc.source == ContextSource::kStub) {
        return SemanticContext<T>{detail::stub_context_tokens(image, enc.seed, nz, dz), level_tag};
    }
    check_config(!stem.empty(), "file context source needs the image stem");
    const auto path = (std::filesystem::path(enc.dir) / (stem + ".ctx.symt")).string();
    Tensor<T> tokens = load_symt<T>(path);
    if (tokens.rank() != 2 || tokens.dim(0) != nz || tokens.dim(1) != dz)
        throw FormatError("context file '" + path + "' has shape " + shape_str(tokens.shape()) +
                          ", expected (" + std::to_string(nz) + "," + std::to_string(dz) + ")");
    return SemanticContext<T>{std::move(tokens), level_tag};
}

// Multi-head cross-attention weights. Queries come in at dim Dq, keys/values
// at Dk; attention runs at the internal dim (wq columns) split across heads,
// and wo projects back to Dq. wo is zero-initialized by the builder so a
// fresh module is an exact no-op in its residual form.
template <typename T>
struct CrossAttnParams {
    int heads = 8;
    Tensor<T> wq;  // [Dq, Di]
    Tensor<T> wk;  // [Dk, Di]
    Tensor<T> wv;  // [Dk, Di]
    Tensor<T> wo;  // [Di, Dq]

    template <typename Fn>
    void for_each(Fn&& fn) {
        fn("wq", wq);
        fn("wk", wk);
        fn("wv", wv);
        fn("wo", wo);
    }
};

template <typename T>
CrossAttnParams<T> make_cross_attn_params(int dq, int dk, int heads) {
    check_config(heads >= 1 && dq % heads == 0,
                 "cross_attention: query dim " + std::to_string(dq) +
                     " must be divisible by heads " + std::to_string(heads));
    CrossAttnParams<T> p;
    p.heads = heads;
    p.wq = Tensor<T>::zeros({dq, dq});
    p.wk = Tensor<T>::zeros({dk, dq});
    p.wv = Tensor<T>::zeros({dk, dq});
    p.wo = Tensor<T>::zeros({dq, dq});
    return p;
}

template <typename T>
Tensor<T> cross_attention(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                          const CrossAttnParams<T>& p) {
    check_dims(q_in.rank() == 2 && kv_in.rank() == 2, "cross_attention: tokens must be matrices");
    check_config(q_in.dim(1) == p.wq.dim(0), "cross_attention: query dim " +
                                                 std::to_string(q_in.dim(1)) +
                                                 " does not match wq rows " +
                                                 std::to_string(p.wq.dim(0)));
    check_config(kv_in.dim(1) == p.wk.dim(0), "cross_attention: key/value dim " +
                                                  std::to_string(kv_in.dim(1)) +
                                                  " does not match wk rows " +
                                                  std::to_string(p.wk.dim(0)));
    const int di = p.wq.dim(1);
    check_config(di % p.heads == 0, "cross_attention: internal dim not divisible by heads");
    const int dh = di / p.heads;
    Tensor<T> q = matmul(q_in, p.wq);
    Tensor<T> k = matmul(kv_in, p.wk);
    Tensor<T> v = matmul(kv_in, p.wv);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor<T>> heads_out;
    for (int h = 0; h < p.heads; ++h) {
        Tensor<T> qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor<T> kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor<T> vh = slice_cols(v, h * dh, (h + 1) * dh);
        Tensor<T> probs = softmax_rows(scale(matmul_transb(qh, kh), inv_sqrt));
        heads_out.push_back(matmul(probs, vh));
    }
    return matmul(concat_cols(heads_out), p.wo);
}

// Per-stage weights of the bidirectional guidance module: a learned bridge
// between the context dim D_z and the stage's patch-token dim p^2*C, plus one
// cross-attention block per direction.
template <typename T>
struct GuidanceStageParams {
    int patch = 1;
    Tensor<T> z_proj;  // [Dz, Dp]
    CrossAttnParams<T> guide;
    Tensor<T> f_proj;  // [Dp, Dz]
    CrossAttnParams<T> refine;

    template <typename Fn>
    void for_each(Fn&& fn) {
        fn("z_proj", z_proj);
        guide.for_each([&fn](const char* n, Tensor<T>& t) { fn((std::string("guide.") + n).c_str(), t); });
        fn("f_proj", f_proj);
        refine.for_each([&fn](const char* n, Tensor<T>& t) { fn((std::string("refine.") + n).c_str(), t); });
    }
};

template <typename T>
GuidanceStageParams<T> make_guidance_stage(int stage_channels, int patch, int dz, int heads) {
    const int dp = patch * patch * stage_channels;
    check_config(dp % heads == 0, "guidance: patch token dim " + std::to_string(dp) +
                                      " must be divisible by ca_heads " + std::to_string(heads));
    GuidanceStageParams<T> g;
    g.patch = patch;
    g.z_proj = Tensor<T>::zeros({dz, dp});
    g.guide = make_cross_attn_params<T>(dp, dp, heads);
    g.f_proj = Tensor<T>::zeros({dp, dz});
    g.refine = make_cross_attn_params<T>(dz, dz, heads);
    return g;
}

// SemanticGuidance(f, Z) = f + CA(f, Z', Z') on patch tokens of f.
template <typename T>
Tensor<T> semantic_guidance(const Tensor<T>& f, const SemanticContext<T>& z,
                            const GuidanceStageParams<T>& g, int p) {
    const int c = f.dim(0), h = f.dim(1), w = f.dim(2);
    Tensor<T> tok = patchify(f, p);
    Tensor<T> zp = matmul(z.tokens, g.z_proj);
    Tensor<T> ca = cross_attention(tok, zp, g.guide);
    return add(f, unpatchify(ca, p, c, h, w));
}

// SemanticRefine(f, Z) = Z + CA(Z, f', f') with f' the patch tokens of f
// projected into the context dim. Preserves (N_z, D_z).
template <typename T>
SemanticContext<T> semantic_refine(const Tensor<T>& f, const SemanticContext<T>& z,
                                   const GuidanceStageParams<T>& g, int p, int next_level_tag) {
    Tensor<T> tok = patchify(f, p);
    Tensor<T> fp = matmul(tok, g.f_proj);
    Tensor<T> ca = cross_attention(z.tokens, fp, g.refine);
    return SemanticContext<T>{add(z.tokens, ca), next_level_tag};
}

}  // namespace symunet
