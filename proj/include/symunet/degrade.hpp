#pragma once

#include <map>

#include "symunet/tensor.hpp"

namespace symunet {

enum class DegradationKind { kNoise, kHaze, kRain, kBlur, kLowlight };

inline const std::vector<std::string>& degradation_kind_names() {
    static const std::vector<std::string> names{"noise", "haze", "rain", "blur", "lowlight"};
    return names;
}

inline std::string to_string(DegradationKind k) {
    return degradation_kind_names()[static_cast<size_t>(k)];
}

inline DegradationKind degradation_kind_from_string(const std::string& s) {
    const auto& names = degradation_kind_names();
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == s) return static_cast<DegradationKind>(i);
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw ConfigError("unknown degradation kind '" + s + "'; valid kinds: " + list);
}

// Tagged description of one synthetic degradation; fully determines the
// degraded image given the clean one.
struct DegradationSpec {
    DegradationKind kind = DegradationKind::kNoise;
    std::map<std::string, double> params;
    std::uint64_t seed = 0;

    double param(const std::string& name) const {
        auto it = params.find(name);
        check_config(it != params.end(),
                     to_string(kind) + " degradation is missing parameter '" + name + "'");
        return it->second;
    }
};

struct ImagePair {
    Tensor<float> clean;
    Tensor<float> degraded;
    DegradationSpec spec;
};

namespace detail {

inline void clamp01(Tensor<float>& t) {
    for (auto& v : t.data()) v = std::min(1.0f, std::max(0.0f, v));
}

inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

}  // namespace detail

// y = clamp(x + n/255), n ~ N(0, sigma^2) i.i.d., sigma in 8-bit units.
inline Tensor<float> add_gaussian_noise(const Tensor<float>& x, double sigma,
                                        std::uint64_t seed) {
    check_config(sigma >= 0.0, "noise sigma must be >= 0, got " + std::to_string(sigma));
    Tensor<float> y = x.detach();
    if (sigma == 0.0) return y;
    Rng rng(seed);
    const double s = sigma / 255.0;
    for (auto& v : y.data()) v = static_cast<float>(v + rng.normal() * s);
    detail::clamp01(y);
    return y;
}

// Scattering model y = x t + A (1 - t), t = exp(-beta d) over a provided
// transmission depth map (row-major [H*W], arbitrary non-negative units).
inline Tensor<float> apply_haze(const Tensor<float>& x, double beta, double airlight,
                                const std::vector<float>& depth) {
    check_config(beta > 0.0, "haze beta must be > 0");
    check_config(airlight >= 0.0 && airlight <= 1.0, "haze airlight must lie in [0,1]");
    const int h = x.dim(1), w = x.dim(2);
    check_dims(static_cast<std::int64_t>(depth.size()) == static_cast<std::int64_t>(h) * w,
               "apply_haze: depth map size mismatch");
    Tensor<float> y = x.detach();
    for (int c = 0; c < 3; ++c)
        for (std::int64_t p = 0; p < static_cast<std::int64_t>(h) * w; ++p) {
            const double t = std::exp(-beta * static_cast<double>(depth[static_cast<size_t>(p)]));
            auto& v = y.data()[static_cast<size_t>(c) * h * w + static_cast<size_t>(p)];
            v = static_cast<float>(v * t + airlight * (1.0 - t));
        }
    detail::clamp01(y);
    return y;
}

// Synthesizes a smooth depth ramp (seeded direction plus a gentle sine
// perturbation) and applies the scattering model.
inline Tensor<float> synth_haze(const Tensor<float>& x, double beta, double airlight,
                                std::uint64_t seed) {
    const int h = x.dim(1), w = x.dim(2);
    Rng rng(seed);
    const double theta = rng.uniform() * 2.0 * M_PI;
    const double cx = std::cos(theta), cy = std::sin(theta);
    const double phase = rng.uniform() * 2.0 * M_PI;
    const double freq = 1.0 + rng.uniform() * 2.0;
    std::vector<float> depth(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
            const double u = w > 1 ? static_cast<double>(xx) / (w - 1) : 0.5;
            const double v = h > 1 ? static_cast<double>(y) / (h - 1) : 0.5;
            const double proj = 0.5 * (u * cx + v * cy + 1.0);
            const double wave = 0.1 * std::sin(2.0 * M_PI * freq * (u + v) + phase);
            depth[static_cast<size_t>(y) * w + xx] =
                static_cast<float>(std::min(1.0, std::max(0.0, 0.2 + 0.7 * proj + wave)));
        }
    return apply_haze(x, beta, airlight, depth);
}

struct RainParams {
    int count = 60;
    double length = 24.0;
    double angle_deg = 0.0;  // from vertical
    double intensity = 0.7;
};

// Additive oriented bright streaks, alpha-blended toward white.
inline Tensor<float> synth_rain(const Tensor<float>& x, const RainParams& rp,
                                std::uint64_t seed) {
    check_config(rp.count >= 0, "rain streak count must be >= 0");
    check_config(rp.length > 0.0, "rain streak length must be > 0");
    check_config(rp.intensity >= 0.0 && rp.intensity <= 1.0, "rain intensity must lie in [0,1]");
    const int h = x.dim(1), w = x.dim(2);
    std::vector<float> mask(static_cast<size_t>(h) * w, 0.0f);
    Rng rng(seed);
    const double ang = rp.angle_deg * M_PI / 180.0;
    for (int s = 0; s < rp.count; ++s) {
        const double cy = rng.uniform() * h;
        const double cx = rng.uniform() * w;
        const double jitter = (rng.uniform() - 0.5) * (8.0 * M_PI / 180.0);
        const double dy = std::cos(ang + jitter), dx = std::sin(ang + jitter);
        const double half = rp.length / 2.0;
        for (double t = -half; t <= half; t += 0.5) {
            const int py = static_cast<int>(std::lround(cy + t * dy));
            const int px = static_cast<int>(std::lround(cx + t * dx));
            if (py < 0 || py >= h || px < 0 || px >= w) continue;
            const float fade = static_cast<float>(1.0 - 0.4 * std::abs(t) / half);
            auto& m = mask[static_cast<size_t>(py) * w + px];
            m = std::max(m, fade);
        }
    }
    Tensor<float> y = x.detach();
    for (int c = 0; c < 3; ++c)
        for (std::int64_t p = 0; p < static_cast<std::int64_t>(h) * w; ++p) {
            const float a = static_cast<float>(rp.intensity) * mask[static_cast<size_t>(p)];
            auto& v = y.data()[static_cast<size_t>(c) * h * w + static_cast<size_t>(p)];
            v = v * (1.0f - a) + a;
        }
    detail::clamp01(y);
    return y;
}

// Gaussian blur with reflect padding; sigma_b -> 0 is the identity.
inline Tensor<float> synth_blur(const Tensor<float>& x, double sigma_b) {
    check_config(sigma_b >= 0.0, "blur sigma must be >= 0");
    if (sigma_b == 0.0) return x.detach();
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma_b)));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma_b * sigma_b));
        sum += k[static_cast<size_t>(i + radius)];
    }
    for (auto& v : k) v /= sum;
    const int h = x.dim(1), w = x.dim(2);
    Tensor<float> y = x.detach();
    std::vector<double> tmp(static_cast<size_t>(h) * w);
    for (int c = 0; c < 3; ++c) {
        const float* src = x.data().data() + static_cast<size_t>(c) * h * w;
        for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[static_cast<size_t>(i + radius)] *
                           src[static_cast<size_t>(yy) * w + detail::reflect_index(xx + i, w)];
                tmp[static_cast<size_t>(yy) * w + xx] = acc;
            }
        float* dst = y.data().data() + static_cast<size_t>(c) * h * w;
        for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[static_cast<size_t>(i + radius)] *
                           tmp[static_cast<size_t>(detail::reflect_index(yy + i, h)) * w + xx];
                dst[static_cast<size_t>(yy) * w + xx] = static_cast<float>(acc);
            }
    }
    detail::clamp01(y);
    return y;
}

// y = gain * x^gamma
inline Tensor<float> synth_lowlight(const Tensor<float>& x, double gamma, double gain) {
    check_config(gamma >= 1.0, "lowlight gamma must be >= 1");
    check_config(gain > 0.0 && gain <= 1.0, "lowlight gain must lie in (0,1]");
    Tensor<float> y = x.detach();
    for (auto& v : y.data())
        v = static_cast<float>(gain * std::pow(std::max(0.0, static_cast<double>(v)), gamma));
    detail::clamp01(y);
    return y;
}

inline Tensor<float> degrade(const Tensor<float>& clean, const DegradationSpec& spec) {
    switch (spec.kind) {
        case DegradationKind::kNoise:
            return add_gaussian_noise(clean, spec.param("sigma"), spec.seed);
        case DegradationKind::kHaze:
            return synth_haze(clean, spec.param("beta"), spec.param("airlight"), spec.seed);
        case DegradationKind::kRain: {
            RainParams rp;
            rp.count = static_cast<int>(spec.param("count"));
            rp.length = spec.param("length");
            rp.angle_deg = spec.param("angle");
            rp.intensity = spec.param("intensity");
            return synth_rain(clean, rp, spec.seed);
        }
        case DegradationKind::kBlur:
            return synth_blur(clean, spec.param("sigma_b"));
        case DegradationKind::kLowlight:
            return synth_lowlight(clean, spec.param("gamma"), spec.param("gain"));
    }
    throw ConfigError("unhandled degradation kind");
}

// Identical crop window applied to both members.
inline ImagePair random_crop_pair(const ImagePair& pair, int size, std::uint64_t seed) {
    const int h = pair.clean.dim(1), w = pair.clean.dim(2);
    check_dims(h >= size && w >= size, "crop " + std::to_string(size) + " exceeds image " +
                                           std::to_string(h) + "x" + std::to_string(w));
    Rng rng(seed);
    const int oy = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(h - size + 1)));
    const int ox = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(w - size + 1)));
    auto crop = [&](const Tensor<float>& t) {
        auto out = Tensor<float>::zeros({3, size, size});
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < size; ++y)
                std::copy_n(t.data().begin() + (static_cast<size_t>(c) * h + oy + y) * w + ox,
                            size,
                            out.data().begin() + (static_cast<size_t>(c) * size + y) * size);
        return out;
    };
    return ImagePair{crop(pair.clean), crop(pair.degraded), pair.spec};
}

inline Tensor<float> flip_image(const Tensor<float>& t, bool horizontal, bool vertical) {
    const int h = t.dim(1), w = t.dim(2);
    auto out = Tensor<float>::zeros(t.shape());
    for (int c = 0; c < t.dim(0); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int sy = vertical ? h - 1 - y : y;
                const int sx = horizontal ? w - 1 - x : x;
                out.data()[(static_cast<size_t>(c) * h + y) * w + x] =
                    t.data()[(static_cast<size_t>(c) * h + sy) * w + sx];
            }
    return out;
}

// Identical flips applied to both members.
inline ImagePair random_flips(const ImagePair& pair, std::uint64_t seed) {
    Rng rng(seed);
    const bool hflip = rng.coin();
    const bool vflip = rng.coin();
    return ImagePair{flip_image(pair.clean, hflip, vflip),
                     flip_image(pair.degraded, hflip, vflip), pair.spec};
}

// Reflect padding on bottom/right up to the next multiple of m.
inline std::pair<Tensor<float>, Shape> pad_to_multiple(const Tensor<float>& x, int m) {
    check_config(m >= 1 && (m & (m - 1)) == 0, "pad multiple must be a power of two");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int hp = (h + m - 1) / m * m;
    const int wp = (w + m - 1) / m * m;
    if (hp == h && wp == w) return {x.detach(), x.shape()};
    auto out = Tensor<float>::zeros({c, hp, wp});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < hp; ++y)
            for (int xx = 0; xx < wp; ++xx)
                out.data()[(static_cast<size_t>(ci) * hp + y) * wp + xx] =
                    x.data()[(static_cast<size_t>(ci) * h + detail::reflect_index(y, h)) * w +
                             detail::reflect_index(xx, w)];
    return {out, x.shape()};
}

inline Tensor<float> crop_back(const Tensor<float>& padded, const Shape& original) {
    const int c = original[0], h = original[1], w = original[2];
    check_dims(padded.dim(0) == c && padded.dim(1) >= h && padded.dim(2) >= w,
               "crop_back: padded tensor smaller than original dims");
    const int hp = padded.dim(1), wp = padded.dim(2);
    auto out = Tensor<float>::zeros({c, h, w});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            std::copy_n(padded.data().begin() + (static_cast<size_t>(ci) * hp + y) * wp, w,
                        out.data().begin() + (static_cast<size_t>(ci) * h + y) * w);
    return out;
}

}  // namespace symunet
