#pragma once

#include "symunet/ops.hpp"

namespace symunet {

// Parameters of one feature extraction block: channel layer norm, multi-head
// transposed (channel-wise) attention, and a gated feedforward. All convs are
// bias-free. The same block is used in encoder, decoder and bottleneck.
template <typename T>
struct BlockParams {
    int channels = 0;
    int heads = 1;
    int hidden = 0;  // gated feedforward width, floor(expansion * C)

    Tensor<T> norm1_scale, norm1_shift;  // [C]
    Tensor<T> qkv_point;                 // [3C, C, 1, 1]
    Tensor<T> qkv_depth;                 // [3C, 1, 3, 3]
    Tensor<T> temperature;               // [heads]
    Tensor<T> attn_out;                  // [C, C, 1, 1]
    Tensor<T> norm2_scale, norm2_shift;  // [C]
    Tensor<T> ffn_expand;                // [2*hidden, C, 1, 1]
    Tensor<T> ffn_depth;                 // [hidden, 1, 3, 3]
    Tensor<T> ffn_project;               // [C, hidden, 1, 1]

    template <typename Fn>
    void for_each(Fn&& fn) {
        fn("norm1_scale", norm1_scale);
        fn("norm1_shift", norm1_shift);
        fn("qkv_point", qkv_point);
        fn("qkv_depth", qkv_depth);
        fn("temperature", temperature);
        fn("attn_out", attn_out);
        fn("norm2_scale", norm2_scale);
        fn("norm2_shift", norm2_shift);
        fn("ffn_expand", ffn_expand);
        fn("ffn_depth", ffn_depth);
        fn("ffn_project", ffn_project);
    }
};

template <typename T>
BlockParams<T> make_block_params(int channels, int heads, double expansion) {
    check_config(heads >= 1 && channels % heads == 0,
                 "block: channels=" + std::to_string(channels) + " not divisible by heads=" +
                     std::to_string(heads));
    check_config(expansion > 0.0, "block: feedforward expansion must be positive");
    BlockParams<T> p;
    p.channels = channels;
    p.heads = heads;
    p.hidden = static_cast<int>(channels * expansion);
    const int c = channels, h = p.hidden;
    p.norm1_scale = Tensor<T>::full({c}, T(1));
    p.norm1_shift = Tensor<T>::zeros({c});
    p.qkv_point = Tensor<T>::zeros({3 * c, c, 1, 1});
    p.qkv_depth = Tensor<T>::zeros({3 * c, 1, 3, 3});
    p.temperature = Tensor<T>::full({heads}, T(1));
    p.attn_out = Tensor<T>::zeros({c, c, 1, 1});
    p.norm2_scale = Tensor<T>::full({c}, T(1));
    p.norm2_shift = Tensor<T>::zeros({c});
    p.ffn_expand = Tensor<T>::zeros({2 * h, c, 1, 1});
    p.ffn_depth = Tensor<T>::zeros({h, 1, 3, 3});
    p.ffn_project = Tensor<T>::zeros({c, h, 1, 1});
    return p;
}

namespace detail {

// Per-head attention probabilities of mdta; split out so tests can inspect
// the softmax rows directly.
template <typename T>
std::vector<Tensor<T>> mdta_scores(const Tensor<T>& f, const BlockParams<T>& p,
                                   std::vector<Tensor<T>>* values_out) {
    const int c = f.dim(0), h = f.dim(1), w = f.dim(2);
    check_config(c == p.channels, "mdta: input has " + std::to_string(c) +
                                      " channels, params expect " + std::to_string(p.channels));
    Tensor<T> qkv = conv2d(f, p.qkv_point);
    qkv = conv2d(qkv, p.qkv_depth, 1, 1, 3 * c);
    Tensor<T> flat = reshape(qkv, {3 * c, h * w});
    Tensor<T> q = narrow0(flat, 0, c);
    Tensor<T> k = narrow0(flat, c, c);
    Tensor<T> v = narrow0(flat, 2 * c, c);
    const int ch = c / p.heads;
    std::vector<Tensor<T>> probs;
    for (int hd = 0; hd < p.heads; ++hd) {
        Tensor<T> qh = l2_normalize_rows(narrow0(q, hd * ch, ch));
        Tensor<T> kh = l2_normalize_rows(narrow0(k, hd * ch, ch));
        Tensor<T> scores = mul_param_element(matmul_transb(qh, kh), p.temperature, hd);
        probs.push_back(softmax_rows(scores));
        if (values_out) values_out->push_back(narrow0(v, hd * ch, ch));
    }
    return probs;
}

}  // namespace detail

// Multi-head transposed attention: Q, K, V come from a pointwise + depthwise
// conv pair; the attention matrix is (C/heads)x(C/heads) per head over
// HW-long channel vectors, with L2-normalized Q/K rows and a learnable
// per-head temperature before the softmax.
template <typename T>
Tensor<T> mdta(const Tensor<T>& f, const BlockParams<T>& p) {
    const int c = f.dim(0), h = f.dim(1), w = f.dim(2);
    std::vector<Tensor<T>> values;
    std::vector<Tensor<T>> probs = detail::mdta_scores(f, p, &values);
    std::vector<Tensor<T>> heads_out;
    for (size_t hd = 0; hd < probs.size(); ++hd)
        heads_out.push_back(matmul(probs[hd], values[hd]));
    Tensor<T> merged = reshape(concat0(heads_out), {c, h, w});
    return conv2d(merged, p.attn_out);
}

// Gated feedforward: pointwise expand to 2*hidden, split, GELU-gate
// elementwise, depthwise 3x3, pointwise project back.
template <typename T>
Tensor<T> gdfn(const Tensor<T>& f, const BlockParams<T>& p) {
    check_config(f.dim(0) == p.channels, "gdfn: channel mismatch");
    Tensor<T> e = conv2d(f, p.ffn_expand);
    Tensor<T> x1 = narrow0(e, 0, p.hidden);
    Tensor<T> x2 = narrow0(e, p.hidden, p.hidden);
    Tensor<T> gated = mul(gelu(x1), x2);
    Tensor<T> d = conv2d(gated, p.ffn_depth, 1, 1, p.hidden);
    return conv2d(d, p.ffn_project);
}

// f -> f + mdta(LN(f)); then -> f + gdfn(LN(f)). With zeroed attn_out and
// ffn_project this is the exact identity.
template <typename T>
Tensor<T> feature_block(const Tensor<T>& f, const BlockParams<T>& p) {
    Tensor<T> a = add(f, mdta(layer_norm_channel(f, p.norm1_scale, p.norm1_shift), p));
    return add(a, gdfn(layer_norm_channel(a, p.norm2_scale, p.norm2_shift), p));
}

// DOWN: 3x3 conv C -> C/2, then pixel-unshuffle(2). [C,H,W] -> [2C,H/2,W/2].
template <typename T>
Tensor<T> downsample(const Tensor<T>& f, const Tensor<T>& conv_w) {
    const int c = f.dim(0), h = f.dim(1), w = f.dim(2);
    check_dims(h % 2 == 0 && w % 2 == 0, "downsample: H=" + std::to_string(h) + ", W=" +
                                             std::to_string(w) + " must be even (pad first)");
    check_config(c % 2 == 0 && conv_w.dim(0) == c / 2 && conv_w.dim(1) == c,
                 "downsample: conv weight must be [C/2,C,3,3] for C=" + std::to_string(c));
    return pixel_unshuffle(conv2d(f, conv_w, 1, 1), 2);
}

// UP: 3x3 conv C -> 2C, then pixel-shuffle(2). [C,H,W] -> [C/2,2H,2W].
template <typename T>
Tensor<T> upsample(const Tensor<T>& f, const Tensor<T>& conv_w) {
    const int c = f.dim(0);
    check_config(c % 2 == 0, "upsample: C=" + std::to_string(c) + " must be even");
    check_config(conv_w.dim(0) == 2 * c && conv_w.dim(1) == c,
                 "upsample: conv weight must be [2C,C,3,3] for C=" + std::to_string(c));
    return pixel_shuffle(conv2d(f, conv_w, 1, 1), 2);
}

template <typename T>
std::int64_t block_param_count(BlockParams<T> p) {
    std::int64_t n = 0;
    p.for_each([&n](const char*, Tensor<T>& t) { n += t.size(); });
    return n;
}

}  // namespace symunet
