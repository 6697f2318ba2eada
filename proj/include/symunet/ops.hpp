#pragma once

#include "symunet/tensor.hpp"

namespace symunet {

namespace detail {

inline bool par_worth(std::int64_t work) { return work >= (1 << 14); }

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_dims(a.shape() == b.shape(),
               "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> out(a.data());
    const std::int64_t n = a.size();
    for (std::int64_t i = 0; i < n; ++i) out[i] += b.data()[i];
    return Tensor<T>::make_op(a.shape(), std::move(out), {a, b}, [](auto& self) {
        for (int pi = 0; pi < 2; ++pi) {
            auto& p = *self.parents[pi];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_dims(a.shape() == b.shape(),
               "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> out(a.data());
    const std::int64_t n = a.size();
    for (std::int64_t i = 0; i < n; ++i) out[i] -= b.data()[i];
    return Tensor<T>::make_op(a.shape(), std::move(out), {a, b}, [](auto& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_dims(a.shape() == b.shape(),
               "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> out(a.data());
    const std::int64_t n = a.size();
    for (std::int64_t i = 0; i < n; ++i) out[i] *= b.data()[i];
    return Tensor<T>::make_op(a.shape(), std::move(out), {a, b}, [](auto& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.value[i];
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double s) {
    std::vector<T> out(a.data());
    for (auto& x : out) x = static_cast<T>(x * s);
    return Tensor<T>::make_op(a.shape(), std::move(out), {a}, [s](auto& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            p.grad[i] += static_cast<T>(self.grad[i] * s);
    });
}

// y = x * param[index]; used for the learnable per-head attention temperature.
template <typename T>
Tensor<T> mul_param_element(const Tensor<T>& x, const Tensor<T>& param, int index) {
    check_dims(index >= 0 && index < param.size(), "mul_param_element: index out of range");
    const T s = param.data()[static_cast<size_t>(index)];
    std::vector<T> out(x.data());
    for (auto& v : out) v *= s;
    return Tensor<T>::make_op(x.shape(), std::move(out), {x, param}, [index, s](auto& self) {
        auto& px = *self.parents[0];
        auto& pp = *self.parents[1];
        if (px.requires_grad) {
            px.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i] * s;
        }
        if (pp.requires_grad) {
            pp.ensure_grad();
            T acc = 0;
            for (size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * px.value[i];
            pp.grad[static_cast<size_t>(index)] += acc;
        }
    });
}

namespace detail {

// erf at the tensor's own precision: exact GELU without paying for double
// libm on float data.
inline float erf_as(float v) { return ::erff(v); }
inline double erf_as(double v) { return std::erf(v); }
inline float exp_as(float v) { return ::expf(v); }
inline double exp_as(double v) { return std::exp(v); }

}  // namespace detail

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr T kInvSqrt2 = static_cast<T>(0.7071067811865475244);
    std::vector<T> out(x.data().size());
    auto cdf = std::make_shared<std::vector<T>>(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) {
        const T v = x.data()[i];
        const T c = static_cast<T>(0.5) * (T(1) + detail::erf_as(v * kInvSqrt2));
        (*cdf)[i] = c;
        out[i] = v * c;
    }
    return Tensor<T>::make_op(x.shape(), std::move(out), {x}, [cdf](auto& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        constexpr T kInvSqrt2Pi = static_cast<T>(0.3989422804014326779);
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const T v = p.value[i];
            const T pdf = kInvSqrt2Pi * detail::exp_as(static_cast<T>(-0.5) * v * v);
            p.grad[i] += self.grad[i] * ((*cdf)[i] + v * pdf);
        }
    });
}

// ---------------------------------------------------------------------------
// shape movement
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    check_dims(numel(shape) == x.size(), "reshape: " + shape_str(x.shape()) + " -> " +
                                             shape_str(shape) + " changes element count");
    return Tensor<T>::make_op(std::move(shape), x.data(), {x}, [](auto& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    });
}

// Contiguous slice along dim 0 (rows of a matrix, channels of a feature map).
template <typename T>
Tensor<T> narrow0(const Tensor<T>& x, int start, int len) {
    check_dims(x.rank() >= 1 && start >= 0 && len > 0 && start + len <= x.dim(0),
               "narrow0: slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                   ") out of range for " + shape_str(x.shape()));
    const std::int64_t inner = x.size() / x.dim(0);
    Shape shape = x.shape();
    shape[0] = len;
    std::vector<T> out(static_cast<size_t>(inner * len));
    std::copy_n(x.data().begin() + start * inner, inner * len, out.begin());
    return Tensor<T>::make_op(std::move(shape), std::move(out), {x}, [start, inner](auto& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const std::int64_t off = start * inner;
        for (size_t i = 0; i < self.grad.size(); ++i) p.grad[static_cast<size_t>(off) + i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> concat0(const std::vector<Tensor<T>>& parts) {
    check_dims(!parts.empty(), "concat0: empty part list");
    Shape shape = parts[0].shape();
    const std::int64_t inner = parts[0].size() / std::max(1, parts[0].dim(0));
    int total = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        check_dims(s.size() == shape.size(), "concat0: rank mismatch");
        for (size_t i = 1; i < s.size(); ++i)
            check_dims(s[i] == shape[i], "concat0: trailing dims differ");
        total += p.dim(0);
    }
    shape[0] = total;
    std::vector<T> out;
    out.reserve(static_cast<size_t>(total * inner));
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<std::int64_t> sizes;
    for (const auto& p : parts) sizes.push_back(p.size());
    return Tensor<T>::make_op(std::move(shape), std::move(out), parts, [sizes](auto& self) {
        std::int64_t off = 0;
        for (size_t pi = 0; pi < self.parents.size(); ++pi) {
            auto& p = *self.parents[pi];
            if (p.requires_grad) {
                p.ensure_grad();
                for (std::int64_t i = 0; i < sizes[pi]; ++i)
                    p.grad[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(off + i)];
            }
            off += sizes[pi];
        }
    });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int c0, int c1) {
    check_dims(x.rank() == 2, "slice_cols: expected a matrix, got " + shape_str(x.shape()));
    const int rows = x.dim(0), cols = x.dim(1);
    check_dims(c0 >= 0 && c1 > c0 && c1 <= cols, "slice_cols: column range out of bounds");
    const int w = c1 - c0;
    std::vector<T> out(static_cast<size_t>(rows) * w);
    for (int r = 0; r < rows; ++r)
        std::copy_n(x.data().begin() + static_cast<size_t>(r) * cols + c0, w,
                    out.begin() + static_cast<size_t>(r) * w);
    return Tensor<T>::make_op({rows, w}, std::move(out), {x}, [rows, cols, c0, w](auto& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < w; ++c)
                p.grad[static_cast<size_t>(r) * cols + c0 + c] +=
                    self.grad[static_cast<size_t>(r) * w + c];
    });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    check_dims(!parts.empty(), "concat_cols: empty part list");
    const int rows = parts[0].dim(0);
    int cols = 0;
    for (const auto& p : parts) {
        check_dims(p.rank() == 2 && p.dim(0) == rows, "concat_cols: row count mismatch");
        cols += p.dim(1);
    }
    std::vector<T> out(static_cast<size_t>(rows) * cols);
    int off = 0;
    std::vector<int> widths;
    for (const auto& p : parts) {
        const int w = p.dim(1);
        for (int r = 0; r < rows; ++r)
            std::copy_n(p.data().begin() + static_cast<size_t>(r) * w, w,
                        out.begin() + static_cast<size_t>(r) * cols + off);
        off += w;
        widths.push_back(w);
    }
    return Tensor<T>::make_op({rows, cols}, std::move(out), parts, [rows, cols, widths](auto& self) {
        int off2 = 0;
        for (size_t pi = 0; pi < self.parents.size(); ++pi) {
            auto& p = *self.parents[pi];
            const int w = widths[pi];
            if (p.requires_grad) {
                p.ensure_grad();
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < w; ++c)
                        p.grad[static_cast<size_t>(r) * w + c] +=
                            self.grad[static_cast<size_t>(r) * cols + off2 + c];
            }
            off2 += w;
        }
    });
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void gemm_nn(const T* a, const T* b, T* y, int m, int k, int n);
template <typename T>
void gemm_nt(const T* a, const T* b, T* y, int m, int k, int n);
template <typename T>
void gemm_tn(const T* a, const T* b, T* y, int m, int k, int n);

inline bool is_depthwise(int cin, int cout, int groups) {
    return groups > 1 && groups == cin && cout == cin;
}

// Patch matrix for one group: rows are output pixels, columns the unrolled
// cin_g x kh x kw receptive field (zero where padding reaches outside).
template <typename T>
void im2col_group(const T* x, T* cols, int cin_g, int h, int win, int kh, int kw, int stride,
                  int pad, int ho, int wo) {
    const int k2 = kh * kw;
    for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
            T* row = cols + (static_cast<std::int64_t>(oy) * wo + ox) * cin_g * k2;
            for (int cg = 0; cg < cin_g; ++cg)
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy * stride - pad + ky;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = ox * stride - pad + kx;
                        row[cg * k2 + ky * kw + kx] =
                            (iy >= 0 && iy < h && ix >= 0 && ix < win)
                                ? x[(static_cast<std::int64_t>(cg) * h + iy) * win + ix]
                                : T(0);
                    }
                }
        }
}

template <typename T>
void conv2d_depthwise_forward(const T* x, const T* w, T* y, int c, int h, int win, int kh,
                              int kw, int stride, int pad) {
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (win + 2 * pad - kw) / stride + 1;
#pragma omp parallel for schedule(static) if (par_worth(static_cast<std::int64_t>(c) * ho * wo * kh * kw))
    for (int ci = 0; ci < c; ++ci) {
        const T* wc = w + static_cast<std::int64_t>(ci) * kh * kw;
        for (int oy = 0; oy < ho; ++oy) {
            T* orow = y + (static_cast<std::int64_t>(ci) * ho + oy) * wo;
            for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= h) continue;
                const T* irow = x + (static_cast<std::int64_t>(ci) * h + iy) * win;
                for (int kx = 0; kx < kw; ++kx) {
                    const T wv = wc[ky * kw + kx];
                    if (stride == 1) {
                        const int ox_lo = std::max(0, pad - kx);
                        const int ox_hi = std::min(wo, win + pad - kx);
                        const T* ip = irow - pad + kx;
                        for (int ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * ip[ox];
                    } else {
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            if (ix >= 0 && ix < win) orow[ox] += wv * irow[ix];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_forward(const T* x, const T* w, T* y, int cin, int h, int win, int cout, int kh,
                    int kw, int stride, int pad, int groups) {
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (win + 2 * pad - kw) / stride + 1;
    const std::int64_t hw_out = static_cast<std::int64_t>(ho) * wo;
    const std::int64_t hw_in = static_cast<std::int64_t>(h) * win;
    const int cin_g = cin / groups;
    const int cout_g = cout / groups;
    if (kh == 1 && kw == 1 && stride == 1 && pad == 0 && groups == 1) {
        gemm_nn(w, x, y, cout, cin, static_cast<int>(hw_in));
        return;
    }
    if (is_depthwise(cin, cout, groups)) {
        conv2d_depthwise_forward(x, w, y, cin, h, win, kh, kw, stride, pad);
        return;
    }
    const int k2 = kh * kw;
    std::vector<T> cols(hw_out * cin_g * k2);
    for (int g = 0; g < groups; ++g) {
        im2col_group(x + g * cin_g * hw_in, cols.data(), cin_g, h, win, kh, kw, stride, pad, ho,
                     static_cast<int>(wo));
        // y_g[co][pixel] = dot(w row, patch row)
        gemm_nt(w + static_cast<std::int64_t>(g) * cout_g * cin_g * k2, cols.data(),
                y + static_cast<std::int64_t>(g) * cout_g * hw_out, cout_g, cin_g * k2,
                static_cast<int>(hw_out));
    }
}

template <typename T>
void conv2d_dw_grad_input(const T* gy, const T* w, T* gx, int c, int h, int win, int kh, int kw,
                          int stride, int pad) {
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (win + 2 * pad - kw) / stride + 1;
#pragma omp parallel for schedule(static) if (par_worth(static_cast<std::int64_t>(c) * h * win * kh * kw))
    for (int ci = 0; ci < c; ++ci) {
        const T* wc = w + static_cast<std::int64_t>(ci) * kh * kw;
        for (int iy = 0; iy < h; ++iy) {
            T* grow = gx + (static_cast<std::int64_t>(ci) * h + iy) * win;
            for (int ky = 0; ky < kh; ++ky) {
                const int num = iy + pad - ky;
                if (num < 0 || num % stride != 0) continue;
                const int oy = num / stride;
                if (oy >= ho) continue;
                const T* gyrow = gy + (static_cast<std::int64_t>(ci) * ho + oy) * wo;
                for (int kx = 0; kx < kw; ++kx) {
                    const T wv = wc[ky * kw + kx];
                    if (stride == 1) {
                        const int ix_lo = std::max(0, kx - pad);
                        const int ix_hi = std::min(win, wo + kx - pad);
                        const T* gp = gyrow + pad - kx;
                        for (int ix = ix_lo; ix < ix_hi; ++ix) grow[ix] += wv * gp[ix];
                    } else {
                        for (int ix = 0; ix < win; ++ix) {
                            const int numx = ix + pad - kx;
                            if (numx < 0 || numx % stride != 0) continue;
                            const int ox = numx / stride;
                            if (ox < wo) grow[ix] += wv * gyrow[ox];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_dw_grad_weight(const T* gy, const T* x, T* gw, int c, int h, int win, int kh, int kw,
                           int stride, int pad) {
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (win + 2 * pad - kw) / stride + 1;
#pragma omp parallel for schedule(static) if (par_worth(static_cast<std::int64_t>(c) * kh * kw * ho * wo))
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                T acc = 0;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const T* gyrow = gy + (static_cast<std::int64_t>(ci) * ho + oy) * wo;
                    const T* irow = x + (static_cast<std::int64_t>(ci) * h + iy) * win;
                    if (stride == 1) {
                        const int ox_lo = std::max(0, pad - kx);
                        const int ox_hi = std::min(wo, win + pad - kx);
                        const T* ip = irow - pad + kx;
#pragma omp simd reduction(+ : acc)
                        for (int ox = ox_lo; ox < ox_hi; ++ox) acc += gyrow[ox] * ip[ox];
                    } else {
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            if (ix >= 0 && ix < win) acc += gyrow[ox] * irow[ix];
                        }
                    }
                }
                gw[(static_cast<std::int64_t>(ci) * kh + ky) * kw + kx] += acc;
            }
    }
}

template <typename T>
void conv2d_grad_input(const T* gy, const T* w, T* gx, int cin, int h, int win, int cout, int kh,
                       int kw, int stride, int pad, int groups) {
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (win + 2 * pad - kw) / stride + 1;
    const std::int64_t hw_out = static_cast<std::int64_t>(ho) * wo;
    const std::int64_t hw_in = static_cast<std::int64_t>(h) * win;
    const int cin_g = cin / groups;
    const int cout_g = cout / groups;
    if (kh == 1 && kw == 1 && stride == 1 && pad == 0 && groups == 1) {
        gemm_tn(w, gy, gx, cout, cin, static_cast<int>(hw_in));
        return;
    }
    if (is_depthwise(cin, cout, groups)) {
        conv2d_dw_grad_input(gy, w, gx, cin, h, win, kh, kw, stride, pad);
        return;
    }
    const int k2 = kh * kw;
    std::vector<T> tmp(static_cast<std::int64_t>(cin_g) * k2 * hw_out);
    for (int g = 0; g < groups; ++g) {
        std::fill(tmp.begin(), tmp.end(), T(0));
        // tmp[K, pixels] = w_g^T gy_g, then scatter back through the patches
        gemm_tn(w + static_cast<std::int64_t>(g) * cout_g * cin_g * k2,
                gy + static_cast<std::int64_t>(g) * cout_g * hw_out, tmp.data(), cout_g,
                cin_g * k2, static_cast<int>(hw_out));
        T* gxg = gx + static_cast<std::int64_t>(g) * cin_g * hw_in;
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                const std::int64_t pix = static_cast<std::int64_t>(oy) * wo + ox;
                for (int cg = 0; cg < cin_g; ++cg)
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= win) continue;
                            gxg[(static_cast<std::int64_t>(cg) * h + iy) * win + ix] +=
                                tmp[(static_cast<std::int64_t>(cg) * k2 + ky * kw + kx) * hw_out +
                                    pix];
                        }
                    }
            }
    }
}

template <typename T>
void conv2d_grad_weight(const T* gy, const T* x, T* gw, int cin, int h, int win, int cout, int kh,
                        int kw, int stride, int pad, int groups) {
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (win + 2 * pad - kw) / stride + 1;
    const std::int64_t hw_out = static_cast<std::int64_t>(ho) * wo;
    const std::int64_t hw_in = static_cast<std::int64_t>(h) * win;
    const int cin_g = cin / groups;
    const int cout_g = cout / groups;
    if (kh == 1 && kw == 1 && stride == 1 && pad == 0 && groups == 1) {
        gemm_nt(gy, x, gw, cout, static_cast<int>(hw_in), cin);
        return;
    }
    if (is_depthwise(cin, cout, groups)) {
        conv2d_dw_grad_weight(gy, x, gw, cin, h, win, kh, kw, stride, pad);
        return;
    }
    const int k2 = kh * kw;
    std::vector<T> cols(hw_out * cin_g * k2);
    for (int g = 0; g < groups; ++g) {
        im2col_group(x + g * cin_g * hw_in, cols.data(), cin_g, h, win, kh, kw, stride, pad, ho,
                     static_cast<int>(wo));
        // gw_g[co][K] = sum over pixels gy_g[co][pix] * cols[pix][K]
        gemm_nn(gy + static_cast<std::int64_t>(g) * cout_g * hw_out, cols.data(),
                gw + static_cast<std::int64_t>(g) * cout_g * cin_g * k2, cout_g,
                static_cast<int>(hw_out), cin_g * k2);
    }
}

}  // namespace detail

// Cross-correlation with zero padding. x: [Cin,H,W], w: [Cout,Cin/groups,kh,kw].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride = 1, int pad = 0,
                 int groups = 1) {
    check_dims(x.rank() == 3, "conv2d: input must be [C,H,W], got " + shape_str(x.shape()));
    check_config(w.rank() == 4, "conv2d: weight must be [Cout,Cin/g,kh,kw], got " +
                                    shape_str(w.shape()));
    const int cin = x.dim(0), h = x.dim(1), win = x.dim(2);
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    check_config(groups >= 1 && cin % groups == 0 && cout % groups == 0,
                 "conv2d: groups=" + std::to_string(groups) + " must divide Cin=" +
                     std::to_string(cin) + " and Cout=" + std::to_string(cout));
    check_config(w.dim(1) == cin / groups,
                 "conv2d: weight expects Cin/g=" + std::to_string(w.dim(1)) + " but input has " +
                     std::to_string(cin / groups));
    check_config(stride >= 1 && pad >= 0, "conv2d: stride/pad out of range");
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (win + 2 * pad - kw) / stride + 1;
    check_dims(h + 2 * pad >= kh && win + 2 * pad >= kw && ho >= 1 && wo >= 1,
               "conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                   " does not fit input " + shape_str(x.shape()) + " with pad " +
                   std::to_string(pad));

    std::vector<T> out(static_cast<size_t>(cout) * ho * wo, T(0));
    detail::conv2d_forward(x.data().data(), w.data().data(), out.data(), cin, h, win, cout, kh,
                           kw, stride, pad, groups);
    return Tensor<T>::make_op(
        {cout, ho, wo}, std::move(out), {x, w},
        [cin, h, win, cout, kh, kw, stride, pad, groups](auto& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            if (px.requires_grad) {
                px.ensure_grad();
                detail::conv2d_grad_input(self.grad.data(), pw.value.data(), px.grad.data(), cin,
                                          h, win, cout, kh, kw, stride, pad, groups);
            }
            if (pw.requires_grad) {
                pw.ensure_grad();
                detail::conv2d_grad_weight(self.grad.data(), px.value.data(), pw.grad.data(), cin,
                                           h, win, cout, kh, kw, stride, pad, groups);
            }
        });
}

// ---------------------------------------------------------------------------
// channel layer norm
// ---------------------------------------------------------------------------

// Per spatial position, normalizes the channel vector to zero mean / unit
// variance (biased, epsilon-stabilized), then applies a per-channel affine.
template <typename T>
Tensor<T> layer_norm_channel(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             double eps = 1e-5) {
    check_dims(x.rank() == 3, "layer_norm_channel: input must be [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    check_config(gamma.size() == c && beta.size() == c,
                 "layer_norm_channel: affine params must have length C=" + std::to_string(c));
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    std::vector<T> out(x.data().size());
    auto xhat = std::make_shared<std::vector<T>>(x.data().size());
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(hw));
    const T* xp = x.data().data();
    const T* gp = gamma.data().data();
    const T* bp = beta.data().data();
#pragma omp parallel for schedule(static) if (detail::par_worth(hw* c))
    for (std::int64_t p = 0; p < hw; ++p) {
        double mean = 0.0;
        for (int ci = 0; ci < c; ++ci) mean += static_cast<double>(xp[ci * hw + p]);
        mean /= c;
        double var = 0.0;
        for (int ci = 0; ci < c; ++ci) {
            const double d = static_cast<double>(xp[ci * hw + p]) - mean;
            var += d * d;
        }
        var /= c;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(p)] = static_cast<T>(is);
        for (int ci = 0; ci < c; ++ci) {
            const double xh = (static_cast<double>(xp[ci * hw + p]) - mean) * is;
            (*xhat)[static_cast<size_t>(ci * hw + p)] = static_cast<T>(xh);
            out[static_cast<size_t>(ci * hw + p)] =
                static_cast<T>(xh * static_cast<double>(gp[ci]) + static_cast<double>(bp[ci]));
        }
    }
    return Tensor<T>::make_op(
        x.shape(), std::move(out), {x, gamma, beta}, [c, hw, xhat, inv_std](auto& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            const T* gy = self.grad.data();
            const T* gv = pg.value.data();
            if (px.requires_grad) {
                px.ensure_grad();
#pragma omp parallel for schedule(static) if (detail::par_worth(hw* c))
                for (std::int64_t p = 0; p < hw; ++p) {
                    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                    for (int ci = 0; ci < c; ++ci) {
                        const double dxh = static_cast<double>(gy[ci * hw + p]) *
                                           static_cast<double>(gv[ci]);
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * static_cast<double>((*xhat)[ci * hw + p]);
                    }
                    mean_dxh /= c;
                    mean_dxh_xh /= c;
                    const double is = static_cast<double>((*inv_std)[static_cast<size_t>(p)]);
                    for (int ci = 0; ci < c; ++ci) {
                        const double dxh = static_cast<double>(gy[ci * hw + p]) *
                                           static_cast<double>(gv[ci]);
                        const double xh = static_cast<double>((*xhat)[ci * hw + p]);
                        px.grad[static_cast<size_t>(ci * hw + p)] +=
                            static_cast<T>(is * (dxh - mean_dxh - xh * mean_dxh_xh));
                    }
                }
            }
            if (pg.requires_grad) {
                pg.ensure_grad();
                for (int ci = 0; ci < c; ++ci) {
                    double acc = 0.0;
                    for (std::int64_t p = 0; p < hw; ++p)
                        acc += static_cast<double>(gy[ci * hw + p]) *
                               static_cast<double>((*xhat)[ci * hw + p]);
                    pg.grad[static_cast<size_t>(ci)] += static_cast<T>(acc);
                }
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (int ci = 0; ci < c; ++ci) {
                    double acc = 0.0;
                    for (std::int64_t p = 0; p < hw; ++p) acc += static_cast<double>(gy[ci * hw + p]);
                    pb.grad[static_cast<size_t>(ci)] += static_cast<T>(acc);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// pixel shuffle / unshuffle / patch tokens
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r) {
    check_dims(x.rank() == 3, "pixel_unshuffle: input must be [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    check_dims(h % r == 0 && w % r == 0, "pixel_unshuffle: H=" + std::to_string(h) + ", W=" +
                                             std::to_string(w) + " must be divisible by r=" +
                                             std::to_string(r));
    const int ho = h / r, wo = w / r;
    std::vector<T> out(x.data().size());
    const T* xp = x.data().data();
    for (int ci = 0; ci < c; ++ci)
        for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx) {
                const int co = ci * r * r + dy * r + dx;
                for (int oy = 0; oy < ho; ++oy)
                    for (int ox = 0; ox < wo; ++ox)
                        out[(static_cast<size_t>(co) * ho + oy) * wo + ox] =
                            xp[(static_cast<size_t>(ci) * h + oy * r + dy) * w + ox * r + dx];
            }
    return Tensor<T>::make_op({c * r * r, ho, wo}, std::move(out), {x}, [c, h, w, r](auto& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const int ho = h / r, wo = w / r;
        for (int ci = 0; ci < c; ++ci)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    const int co = ci * r * r + dy * r + dx;
                    for (int oy = 0; oy < ho; ++oy)
                        for (int ox = 0; ox < wo; ++ox)
                            p.grad[(static_cast<size_t>(ci) * h + oy * r + dy) * w + ox * r + dx] +=
                                self.grad[(static_cast<size_t>(co) * ho + oy) * wo + ox];
                }
    });
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
    check_dims(x.rank() == 3, "pixel_shuffle: input must be [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    check_config(c % (r * r) == 0, "pixel_shuffle: C=" + std::to_string(c) +
                                       " must be divisible by r^2=" + std::to_string(r * r));
    const int co = c / (r * r);
    const int ho = h * r, wo = w * r;
    std::vector<T> out(x.data().size());
    const T* xp = x.data().data();
    for (int cc = 0; cc < co; ++cc)
        for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx) {
                const int ci = cc * r * r + dy * r + dx;
                for (int iy = 0; iy < h; ++iy)
                    for (int ix = 0; ix < w; ++ix)
                        out[(static_cast<size_t>(cc) * ho + iy * r + dy) * wo + ix * r + dx] =
                            xp[(static_cast<size_t>(ci) * h + iy) * w + ix];
            }
    return Tensor<T>::make_op({co, ho, wo}, std::move(out), {x}, [co, h, w, r](auto& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const int ho = h * r, wo = w * r;
        for (int cc = 0; cc < co; ++cc)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    const int ci = cc * r * r + dy * r + dx;
                    for (int iy = 0; iy < h; ++iy)
                        for (int ix = 0; ix < w; ++ix)
                            p.grad[(static_cast<size_t>(ci) * h + iy) * w + ix] +=
                                self.grad[(static_cast<size_t>(cc) * ho + iy * r + dy) * wo +
                                          ix * r + dx];
                }
    });
}

// [C,H,W] -> [(H/p)(W/p), p*p*C] token matrix; lossless rearrangement.
// Token element layout: j = c*p*p + dy*p + dx.
template <typename T>
Tensor<T> patchify(const Tensor<T>& x, int p) {
    check_dims(x.rank() == 3, "patchify: input must be [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    check_dims(p >= 1 && h % p == 0 && w % p == 0,
               "patchify: H=" + std::to_string(h) + ", W=" + std::to_string(w) +
                   " must be divisible by patch size p=" + std::to_string(p));
    const int bh = h / p, bw = w / p;
    const int ntok = bh * bw, dtok = p * p * c;
    std::vector<T> out(static_cast<size_t>(ntok) * dtok);
    const T* xp = x.data().data();
    for (int ty = 0; ty < bh; ++ty)
        for (int tx = 0; tx < bw; ++tx) {
            T* tok = out.data() + (static_cast<size_t>(ty) * bw + tx) * dtok;
            for (int ci = 0; ci < c; ++ci)
                for (int dy = 0; dy < p; ++dy)
                    for (int dx = 0; dx < p; ++dx)
                        tok[ci * p * p + dy * p + dx] =
                            xp[(static_cast<size_t>(ci) * h + ty * p + dy) * w + tx * p + dx];
        }
    return Tensor<T>::make_op({ntok, dtok}, std::move(out), {x}, [c, h, w, p](auto& self) {
        auto& par = *self.parents[0];
        if (!par.requires_grad) return;
        par.ensure_grad();
        const int bh = h / p, bw = w / p, dtok = p * p * c;
        for (int ty = 0; ty < bh; ++ty)
            for (int tx = 0; tx < bw; ++tx) {
                const T* tok = self.grad.data() + (static_cast<size_t>(ty) * bw + tx) * dtok;
                for (int ci = 0; ci < c; ++ci)
                    for (int dy = 0; dy < p; ++dy)
                        for (int dx = 0; dx < p; ++dx)
                            par.grad[(static_cast<size_t>(ci) * h + ty * p + dy) * w + tx * p + dx] +=
                                tok[ci * p * p + dy * p + dx];
            }
    });
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, int p, int c, int h, int w) {
    check_dims(tokens.rank() == 2, "unpatchify: tokens must be a matrix");
    const int bh = h / p, bw = w / p;
    check_dims(h % p == 0 && w % p == 0, "unpatchify: H, W must be divisible by p");
    check_dims(tokens.dim(0) == bh * bw,
               "unpatchify: expected " + std::to_string(bh * bw) + " tokens, got " +
                   std::to_string(tokens.dim(0)));
    check_dims(tokens.dim(1) == p * p * c, "unpatchify: expected token dim " +
                                               std::to_string(p * p * c) + ", got " +
                                               std::to_string(tokens.dim(1)));
    const int dtok = p * p * c;
    std::vector<T> out(static_cast<size_t>(c) * h * w);
    const T* tp = tokens.data().data();
    for (int ty = 0; ty < bh; ++ty)
        for (int tx = 0; tx < bw; ++tx) {
            const T* tok = tp + (static_cast<size_t>(ty) * bw + tx) * dtok;
            for (int ci = 0; ci < c; ++ci)
                for (int dy = 0; dy < p; ++dy)
                    for (int dx = 0; dx < p; ++dx)
                        out[(static_cast<size_t>(ci) * h + ty * p + dy) * w + tx * p + dx] =
                            tok[ci * p * p + dy * p + dx];
        }
    return Tensor<T>::make_op({c, h, w}, std::move(out), {tokens}, [c, h, w, p](auto& self) {
        auto& par = *self.parents[0];
        if (!par.requires_grad) return;
        par.ensure_grad();
        const int bh = h / p, bw = w / p, dtok = p * p * c;
        for (int ty = 0; ty < bh; ++ty)
            for (int tx = 0; tx < bw; ++tx) {
                T* tok = par.grad.data() + (static_cast<size_t>(ty) * bw + tx) * dtok;
                for (int ci = 0; ci < c; ++ci)
                    for (int dy = 0; dy < p; ++dy)
                        for (int dx = 0; dx < p; ++dx)
                            tok[ci * p * p + dy * p + dx] +=
                                self.grad[(static_cast<size_t>(ci) * h + ty * p + dy) * w +
                                          tx * p + dx];
            }
    });
}

// ---------------------------------------------------------------------------
// matrix products and row-wise transforms
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void gemm_nn(const T* a, const T* b, T* y, int m, int k, int n) {
#pragma omp parallel for schedule(static) if (par_worth(static_cast<std::int64_t>(m) * k * n))
    for (int i = 0; i < m; ++i) {
        T* yrow = y + static_cast<std::int64_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const T av = a[static_cast<std::int64_t>(i) * k + kk];
            const T* brow = b + static_cast<std::int64_t>(kk) * n;
            for (int j = 0; j < n; ++j) yrow[j] += av * brow[j];
        }
    }
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* y, int m, int k, int n) {
#pragma omp parallel for schedule(static) if (par_worth(static_cast<std::int64_t>(m) * k * n))
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::int64_t>(i) * k;
        T* yrow = y + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = b + static_cast<std::int64_t>(j) * k;
            T acc = 0;
#pragma omp simd reduction(+ : acc)
            for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            yrow[j] += acc;
        }
    }
}

// y += a^T b with a: [M,K], b: [M,N], y: [K,N]
template <typename T>
void gemm_tn(const T* a, const T* b, T* y, int m, int k, int n) {
#pragma omp parallel for schedule(static) if (par_worth(static_cast<std::int64_t>(m) * k * n))
    for (int kk = 0; kk < k; ++kk) {
        T* yrow = y + static_cast<std::int64_t>(kk) * n;
        for (int i = 0; i < m; ++i) {
            const T av = a[static_cast<std::int64_t>(i) * k + kk];
            const T* brow = b + static_cast<std::int64_t>(i) * n;
            for (int j = 0; j < n; ++j) yrow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    check_dims(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
               "matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                   shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(static_cast<size_t>(m) * n, T(0));
    detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    return Tensor<T>::make_op({m, n}, std::move(out), {a, b}, [m, k, n](auto& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            detail::gemm_nt(self.grad.data(), pb.value.data(), pa.grad.data(), m, n, k);
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            detail::gemm_tn(pa.value.data(), self.grad.data(), pb.grad.data(), m, k, n);
        }
    });
}

// y = a b^T with a: [M,K], b: [N,K]
template <typename T>
Tensor<T> matmul_transb(const Tensor<T>& a, const Tensor<T>& b) {
    check_dims(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
               "matmul_transb: incompatible shapes " + shape_str(a.shape()) + " x " +
                   shape_str(b.shape()) + "^T");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    std::vector<T> out(static_cast<size_t>(m) * n, T(0));
    detail::gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
    return Tensor<T>::make_op({m, n}, std::move(out), {a, b}, [m, k, n](auto& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            // ga = gy b : [M,N] x [N,K]
            detail::gemm_nn(self.grad.data(), pb.value.data(), pa.grad.data(), m, n, k);
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            // gb = gy^T a : [N,M] x [M,K]
            detail::gemm_tn(self.grad.data(), pa.value.data(), pb.grad.data(), m, n, k);
        }
    });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    check_dims(x.rank() == 2, "softmax_rows: expected a matrix");
    const int m = x.dim(0), n = x.dim(1);
    std::vector<T> out(x.data().size());
    for (int i = 0; i < m; ++i) {
        const T* row = x.data().data() + static_cast<size_t>(i) * n;
        T* orow = out.data() + static_cast<size_t>(i) * n;
        T mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            const double e = std::exp(static_cast<double>(row[j] - mx));
            orow[j] = static_cast<T>(e);
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < n; ++j) orow[j] = static_cast<T>(orow[j] * inv);
    }
    return Tensor<T>::make_op(x.shape(), std::move(out), {x}, [m, n](auto& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int i = 0; i < m; ++i) {
            const T* y = self.value.data() + static_cast<size_t>(i) * n;
            const T* gy = self.grad.data() + static_cast<size_t>(i) * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += static_cast<double>(gy[j]) * static_cast<double>(y[j]);
            for (int j = 0; j < n; ++j)
                p.grad[static_cast<size_t>(i) * n + j] +=
                    static_cast<T>(static_cast<double>(y[j]) * (static_cast<double>(gy[j]) - dot));
        }
    });
}

template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x, double eps = 1e-12) {
    check_dims(x.rank() == 2, "l2_normalize_rows: expected a matrix");
    const int m = x.dim(0), n = x.dim(1);
    std::vector<T> out(x.data().size());
    auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        const T* row = x.data().data() + static_cast<size_t>(i) * n;
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += static_cast<double>(row[j]) * static_cast<double>(row[j]);
        const double nrm = std::max(std::sqrt(s), eps);
        (*norms)[static_cast<size_t>(i)] = nrm;
        for (int j = 0; j < n; ++j)
            out[static_cast<size_t>(i) * n + j] = static_cast<T>(row[j] / nrm);
    }
    return Tensor<T>::make_op(x.shape(), std::move(out), {x}, [m, n, norms](auto& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int i = 0; i < m; ++i) {
            const T* y = self.value.data() + static_cast<size_t>(i) * n;
            const T* gy = self.grad.data() + static_cast<size_t>(i) * n;
            const double nrm = (*norms)[static_cast<size_t>(i)];
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += static_cast<double>(gy[j]) * static_cast<double>(y[j]);
            for (int j = 0; j < n; ++j)
                p.grad[static_cast<size_t>(i) * n + j] +=
                    static_cast<T>((static_cast<double>(gy[j]) - static_cast<double>(y[j]) * dot) /
                                   nrm);
        }
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    double acc = 0.0;
    for (T v : x.data()) acc += static_cast<double>(v);
    const double inv = 1.0 / static_cast<double>(x.size());
    std::vector<T> out{static_cast<T>(acc * inv)};
    return Tensor<T>::make_op({1}, std::move(out), {x}, [inv](auto& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const T g = static_cast<T>(static_cast<double>(self.grad[0]) * inv);
        for (auto& v : p.grad) v += g;
    });
}

// mean absolute difference; the L1 pixel loss.
template <typename T>
Tensor<T> l1_diff(const Tensor<T>& a, const Tensor<T>& b) {
    check_dims(a.shape() == b.shape(),
               "l1_diff: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double acc = 0.0;
    const std::int64_t n = a.size();
    for (std::int64_t i = 0; i < n; ++i)
        acc += std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]));
    const double inv = 1.0 / static_cast<double>(n);
    std::vector<T> out{static_cast<T>(acc * inv)};
    return Tensor<T>::make_op({1}, std::move(out), {a, b}, [inv, n](auto& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const double g = static_cast<double>(self.grad[0]) * inv;
        for (std::int64_t i = 0; i < n; ++i) {
            const double d = static_cast<double>(pa.value[static_cast<size_t>(i)]) -
                             static_cast<double>(pb.value[static_cast<size_t>(i)]);
            const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            if (pa.requires_grad) {
                pa.ensure_grad();
                pa.grad[static_cast<size_t>(i)] += static_cast<T>(g * s);
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                pb.grad[static_cast<size_t>(i)] -= static_cast<T>(g * s);
            }
        }
    });
}

}  // namespace symunet
