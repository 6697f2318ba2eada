#pragma once

#include "symunet/ops.hpp"

namespace symunet {

// Standard L1 pixel loss (mean absolute difference).
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& x_hat, const Tensor<T>& x) {
    return l1_diff(x_hat, x);
}

namespace detail {

struct DftTables {
    int n = 0;
    std::vector<double> cos_t, sin_t;  // [n][n], angle 2*pi*u*i/n

    explicit DftTables(int size) : n(size), cos_t(static_cast<size_t>(size) * size),
                                   sin_t(static_cast<size_t>(size) * size) {
        for (int u = 0; u < n; ++u)
            for (int i = 0; i < n; ++i) {
                const double a = 2.0 * M_PI * static_cast<double>(static_cast<std::int64_t>(u) * i % n) / n;
                cos_t[static_cast<size_t>(u) * n + i] = std::cos(a);
                sin_t[static_cast<size_t>(u) * n + i] = std::sin(a);
            }
    }
};

}  // namespace detail

// Frequency-domain loss: per-channel unnormalized 2D DFT of (x_hat - x),
// mean over all coefficients of the complex modulus. Computed as separable
// row/column transforms.
template <typename T>
Tensor<T> fft_loss(const Tensor<T>& x_hat, const Tensor<T>& x) {
    check_dims(x_hat.shape() == x.shape(), "fft_loss: shape mismatch " +
                                               shape_str(x_hat.shape()) + " vs " +
                                               shape_str(x.shape()));
    check_dims(x_hat.rank() == 3, "fft_loss: expected [C,H,W]");
    const int c = x_hat.dim(0), h = x_hat.dim(1), w = x_hat.dim(2);
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    detail::DftTables th(h), tw(w);

    // D = F_h d F_w^T per channel; keep the unit phases D/|D| for backward.
    auto unit_re = std::make_shared<std::vector<double>>(static_cast<size_t>(c) * hw, 0.0);
    auto unit_im = std::make_shared<std::vector<double>>(static_cast<size_t>(c) * hw, 0.0);
    double loss = 0.0;
    std::vector<double> m_re(static_cast<size_t>(hw)), m_im(static_cast<size_t>(hw));
    for (int ci = 0; ci < c; ++ci) {
        const T* a = x_hat.data().data() + static_cast<size_t>(ci) * hw;
        const T* b = x.data().data() + static_cast<size_t>(ci) * hw;
        // rows: M[i][v] = sum_j d[i][j] e^{-2pi i v j / W}
#pragma omp parallel for schedule(static) if (detail::par_worth(hw* w))
        for (int i = 0; i < h; ++i)
            for (int v = 0; v < w; ++v) {
                double re = 0.0, im = 0.0;
#pragma omp simd reduction(+ : re, im)
                for (int j = 0; j < w; ++j) {
                    const double d = static_cast<double>(a[static_cast<size_t>(i) * w + j]) -
                                     static_cast<double>(b[static_cast<size_t>(i) * w + j]);
                    re += d * tw.cos_t[static_cast<size_t>(v) * w + j];
                    im -= d * tw.sin_t[static_cast<size_t>(v) * w + j];
                }
                m_re[static_cast<size_t>(i) * w + v] = re;
                m_im[static_cast<size_t>(i) * w + v] = im;
            }
        // cols: D[u][v] = sum_i M[i][v] e^{-2pi i u i / H}
        std::vector<double> row_mods(static_cast<size_t>(h), 0.0);
#pragma omp parallel for schedule(static) if (detail::par_worth(hw* h))
        for (int u = 0; u < h; ++u) {
            double mod_acc = 0.0;
            for (int v = 0; v < w; ++v) {
                double re = 0.0, im = 0.0;
#pragma omp simd reduction(+ : re, im)
                for (int i = 0; i < h; ++i) {
                    const double cs = th.cos_t[static_cast<size_t>(u) * h + i];
                    const double sn = th.sin_t[static_cast<size_t>(u) * h + i];
                    const double mr = m_re[static_cast<size_t>(i) * w + v];
                    const double mi = m_im[static_cast<size_t>(i) * w + v];
                    re += cs * mr + sn * mi;
                    im += cs * mi - sn * mr;
                }
                const double mod = std::hypot(re, im);
                mod_acc += mod;
                if (mod > 1e-300) {
                    (*unit_re)[static_cast<size_t>(ci) * hw + u * w + v] = re / mod;
                    (*unit_im)[static_cast<size_t>(ci) * hw + u * w + v] = im / mod;
                }
            }
            row_mods[static_cast<size_t>(u)] = mod_acc;
        }
        for (double rm : row_mods) loss += rm;
    }
    const double inv = 1.0 / static_cast<double>(static_cast<std::int64_t>(c) * hw);
    std::vector<T> out{static_cast<T>(loss * inv)};
    return Tensor<T>::make_op(
        {1}, std::move(out), {x_hat, x}, [c, h, w, hw, inv, unit_re, unit_im](auto& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (!pa.requires_grad && !pb.requires_grad) return;
            detail::DftTables th(h), tw(w);
            const double g0 = static_cast<double>(self.grad[0]) * inv;
            std::vector<double> n_re(static_cast<size_t>(hw)), n_im(static_cast<size_t>(hw));
            if (pa.requires_grad) pa.ensure_grad();
            if (pb.requires_grad) pb.ensure_grad();
            for (int ci = 0; ci < c; ++ci) {
                const double* gr = unit_re->data() + static_cast<size_t>(ci) * hw;
                const double* gi = unit_im->data() + static_cast<size_t>(ci) * hw;
                // adjoint column pass: N[i][v] = sum_u e^{+2pi i u i/H} G[u][v]
#pragma omp parallel for schedule(static) if (detail::par_worth(hw* h))
                for (int i = 0; i < h; ++i)
                    for (int v = 0; v < w; ++v) {
                        double re = 0.0, im = 0.0;
#pragma omp simd reduction(+ : re, im)
                        for (int u = 0; u < h; ++u) {
                            const double cs = th.cos_t[static_cast<size_t>(u) * h + i];
                            const double sn = th.sin_t[static_cast<size_t>(u) * h + i];
                            const double vr = gr[static_cast<size_t>(u) * w + v];
                            const double vi = gi[static_cast<size_t>(u) * w + v];
                            re += cs * vr - sn * vi;
                            im += cs * vi + sn * vr;
                        }
                        n_re[static_cast<size_t>(i) * w + v] = re;
                        n_im[static_cast<size_t>(i) * w + v] = im;
                    }
                // adjoint row pass, real part only
#pragma omp parallel for schedule(static) if (detail::par_worth(hw* w))
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j) {
                        double acc = 0.0;
#pragma omp simd reduction(+ : acc)
                        for (int v = 0; v < w; ++v) {
                            const double cs = tw.cos_t[static_cast<size_t>(v) * w + j];
                            const double sn = tw.sin_t[static_cast<size_t>(v) * w + j];
                            acc += n_re[static_cast<size_t>(i) * w + v] * cs -
                                   n_im[static_cast<size_t>(i) * w + v] * sn;
                        }
                        const T gval = static_cast<T>(g0 * acc);
                        const size_t idx = static_cast<size_t>(ci) * hw + static_cast<size_t>(i) * w + j;
                        if (pa.requires_grad) pa.grad[idx] += gval;
                        if (pb.requires_grad) pb.grad[idx] -= gval;
                    }
            }
        });
}

// L_total = L1 + lambda * L_FFT
template <typename T>
Tensor<T> total_loss(const Tensor<T>& x_hat, const Tensor<T>& x, double lambda) {
    Tensor<T> l1 = l1_loss(x_hat, x);
    if (lambda == 0.0) return l1;
    return add(l1, scale(fft_loss(x_hat, x), lambda));
}

}  // namespace symunet
