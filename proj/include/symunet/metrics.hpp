#pragma once

#include "symunet/tensor.hpp"

namespace symunet {

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
    check_dims(a.shape() == b.shape(), "mse: shape mismatch");
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data()[static_cast<size_t>(i)]) -
                         static_cast<double>(b.data()[static_cast<size_t>(i)]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

// 10 log10(peak^2 / MSE), capped at 100 dB for (near-)identical images.
template <typename T>
double psnr(const Tensor<T>& x_hat, const Tensor<T>& x, double peak = 1.0) {
    const double m = mse(x_hat, x);
    if (m <= 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(peak * peak / m));
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<size_t>(size));
    const int half = size / 2;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - half;
        w[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += w[static_cast<size_t>(i)];
    }
    for (auto& v : w) v /= sum;
    return w;
}

// separable weighted filter, valid region only: [H,W] -> [H-size+1, W-size+1]
inline std::vector<double> filter_valid(const std::vector<double>& img, int h, int w,
                                        const std::vector<double>& win) {
    const int k = static_cast<int>(win.size());
    const int hv = h - k + 1, wv = w - k + 1;
    std::vector<double> rows(static_cast<size_t>(h) * wv);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < wv; ++x) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i) acc += win[static_cast<size_t>(i)] * img[static_cast<size_t>(y) * w + x + i];
            rows[static_cast<size_t>(y) * wv + x] = acc;
        }
    std::vector<double> out(static_cast<size_t>(hv) * wv);
    for (int y = 0; y < hv; ++y)
        for (int x = 0; x < wv; ++x) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i) acc += win[static_cast<size_t>(i)] * rows[static_cast<size_t>(y + i) * wv + x];
            out[static_cast<size_t>(y) * wv + x] = acc;
        }
    return out;
}

}  // namespace detail

// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// dynamic range 1.0, averaged over valid window positions and channels.
template <typename T>
double ssim(const Tensor<T>& x_hat, const Tensor<T>& x) {
    check_dims(x_hat.shape() == x.shape(), "ssim: shape mismatch");
    check_dims(x_hat.rank() == 3, "ssim: expected [C,H,W]");
    const int c = x_hat.dim(0), h = x_hat.dim(1), w = x_hat.dim(2);
    constexpr int kWin = 11;
    check_dims(h >= kWin && w >= kWin,
               "ssim: image must be at least 11x11, got " + shape_str(x_hat.shape()));
    const auto win = detail::gaussian_window(kWin, 1.5);
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;

    double total = 0.0;
    for (int ci = 0; ci < c; ++ci) {
        std::vector<double> a(static_cast<size_t>(hw)), b(static_cast<size_t>(hw));
        std::vector<double> aa(static_cast<size_t>(hw)), bb(static_cast<size_t>(hw)),
            ab(static_cast<size_t>(hw));
        for (std::int64_t i = 0; i < hw; ++i) {
            a[static_cast<size_t>(i)] =
                static_cast<double>(x_hat.data()[static_cast<size_t>(ci) * hw + i]);
            b[static_cast<size_t>(i)] =
                static_cast<double>(x.data()[static_cast<size_t>(ci) * hw + i]);
            aa[static_cast<size_t>(i)] = a[static_cast<size_t>(i)] * a[static_cast<size_t>(i)];
            bb[static_cast<size_t>(i)] = b[static_cast<size_t>(i)] * b[static_cast<size_t>(i)];
            ab[static_cast<size_t>(i)] = a[static_cast<size_t>(i)] * b[static_cast<size_t>(i)];
        }
        const auto mu_a = detail::filter_valid(a, h, w, win);
        const auto mu_b = detail::filter_valid(b, h, w, win);
        const auto s_aa = detail::filter_valid(aa, h, w, win);
        const auto s_bb = detail::filter_valid(bb, h, w, win);
        const auto s_ab = detail::filter_valid(ab, h, w, win);
        double acc = 0.0;
        for (size_t i = 0; i < mu_a.size(); ++i) {
            const double ma = mu_a[i], mb = mu_b[i];
            const double va = s_aa[i] - ma * ma;
            const double vb = s_bb[i] - mb * mb;
            const double cov = s_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) /
                   ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
        }
        total += acc / static_cast<double>(mu_a.size());
    }
    return total / c;
}

}  // namespace symunet
