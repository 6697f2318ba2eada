#include <gtest/gtest.h>

#include "symunet/gradcheck.hpp"
#include "symunet/ops.hpp"

using namespace symunet;

namespace {

// Brute-force cross-correlation, kept independent of the library path.
template <typename T>
std::vector<T> conv_reference(const std::vector<T>& x, const std::vector<T>& w, int cin, int h,
                              int win, int cout, int kh, int kw, int stride, int pad,
                              int groups) {
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (win + 2 * pad - kw) / stride + 1;
    const int cin_g = cin / groups, cout_g = cout / groups;
    std::vector<T> y(static_cast<size_t>(cout) * ho * wo, T(0));
    for (int co = 0; co < cout; ++co)
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                T acc = 0;
                const int g = co / cout_g;
                for (int cg = 0; cg < cin_g; ++cg)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const int iy = oy * stride - pad + ky;
                            const int ix = ox * stride - pad + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= win) continue;
                            acc += x[(static_cast<size_t>(g * cin_g + cg) * h + iy) * win + ix] *
                                   w[((static_cast<size_t>(co) * cin_g + cg) * kh + ky) * kw + kx];
                        }
                y[(static_cast<size_t>(co) * ho + oy) * wo + ox] = acc;
            }
    return y;
}

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
    auto t = Tensor<double>::zeros(std::move(shape));
    Rng rng(seed);
    fill_normal(t, rng, scale);
    return t;
}

}  // namespace

TEST(Conv2d, OnesKernelCountsOverlap) {
    auto x = Tensor<float>::full({1, 3, 3}, 1.0f);
    auto w = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
    auto y = conv2d(x, w, 1, 1);
    ASSERT_EQ(y.shape(), (Shape{1, 3, 3}));
    EXPECT_FLOAT_EQ(y.data()[4], 9.0f);  // center
    EXPECT_FLOAT_EQ(y.data()[0], 4.0f);  // corner
    EXPECT_FLOAT_EQ(y.data()[1], 6.0f);  // edge
}

TEST(Conv2d, IdentityKernel) {
    auto x = random_tensor({3, 5, 4}, 11);
    auto w = Tensor<double>::zeros({3, 3, 1, 1});
    for (int c = 0; c < 3; ++c) w.data()[static_cast<size_t>(c) * 3 + c] = 1.0;
    auto y = conv2d(x, w);
    EXPECT_TRUE(bitwise_equal(y, x));
}

TEST(Conv2d, MatchesBruteForce) {
    auto x = random_tensor({2, 5, 5}, 21);
    auto w = random_tensor({3, 2, 3, 3}, 22);
    for (int stride : {1, 2})
        for (int pad : {0, 1}) {
            if (5 + 2 * pad < 3) continue;
            auto y = conv2d(x, w, stride, pad);
            auto ref = conv_reference(x.data(), w.data(), 2, 5, 5, 3, 3, 3, stride, pad, 1);
            ASSERT_EQ(y.data().size(), ref.size());
            for (size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-6);
        }
}

TEST(Conv2d, GroupedMatchesBruteForce) {
    auto x = random_tensor({4, 4, 4}, 31);
    auto w = random_tensor({4, 1, 3, 3}, 32);  // depthwise
    auto y = conv2d(x, w, 1, 1, 4);
    auto ref = conv_reference(x.data(), w.data(), 4, 4, 4, 4, 3, 3, 1, 1, 4);
    for (size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-6);

    auto w2 = random_tensor({6, 2, 3, 3}, 33);  // two groups
    auto y2 = conv2d(x, w2, 1, 1, 2);
    auto ref2 = conv_reference(x.data(), w2.data(), 4, 4, 4, 6, 3, 3, 1, 1, 2);
    for (size_t i = 0; i < ref2.size(); ++i) EXPECT_NEAR(y2.data()[i], ref2[i], 1e-6);
}

TEST(Conv2d, ShapeErrors) {
    auto x = Tensor<float>::zeros({4, 6, 6});
    EXPECT_THROW(conv2d(x, Tensor<float>::zeros({4, 4, 3, 3}), 1, 1, 3), ConfigError);
    EXPECT_THROW(conv2d(x, Tensor<float>::zeros({4, 3, 3, 3}), 1, 1), ConfigError);
    EXPECT_THROW(conv2d(x, Tensor<float>::zeros({4, 4, 9, 9}), 1, 0), DimensionError);
}

TEST(Conv2d, LinearOpGradNearExact) {
    // Fixed weights and a fixed projection: the scalar is linear in x, so
    // central differences are exact up to rounding.
    auto w = random_tensor({2, 2, 3, 3}, 41, 0.5);
    auto proj = random_tensor({2, 4, 4}, 43);
    auto x = random_tensor({2, 4, 4}, 42);
    double err = grad_check(
        [&](Tensor<double>& in) { return mean_all(mul(conv2d(in, w, 1, 1), proj)); }, x);
    EXPECT_LT(err, 1e-8);
}

TEST(Conv2d, GradCheckInputAndWeights) {
    auto proj = random_tensor({4, 4, 3}, 99);
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto x = random_tensor({2, 4, 3}, 100 + seed);
        auto w = random_tensor({4, 2, 3, 3}, 200 + seed, 0.5);
        double err = grad_check(
            [&](std::vector<Tensor<double>>& in) {
                auto y = conv2d(in[0], in[1], 1, 1);
                return mean_all(mul(mul(y, y), proj));
            },
            {x, w});
        EXPECT_LT(err, 1e-3) << "seed " << seed;
    }
}

TEST(Conv2d, StridedGradCheck) {
    auto x = random_tensor({2, 6, 6}, 55);
    auto w = random_tensor({2, 2, 3, 3}, 56, 0.5);
    double err = grad_check(
        [](std::vector<Tensor<double>>& in) {
            return mean_all(mul(conv2d(in[0], in[1], 2, 1), conv2d(in[0], in[1], 2, 1)));
        },
        {x, w});
    EXPECT_LT(err, 1e-3);
}

TEST(LayerNorm, ConstantInputGivesZeros) {
    auto x = Tensor<float>::full({5, 3, 3}, 2.5f);
    auto g = Tensor<float>::full({5}, 1.0f);
    auto b = Tensor<float>::zeros({5});
    auto y = layer_norm_channel(x, g, b);
    for (float v : y.data()) EXPECT_FLOAT_EQ(v, 0.0f);
}

TEST(LayerNorm, NormalizesPerPosition) {
    auto x = random_tensor({7, 4, 4}, 61);
    auto g = Tensor<double>::full({7}, 1.0);
    auto b = Tensor<double>::zeros({7});
    auto y = layer_norm_channel(x, g, b);
    const int c = 7, hw = 16;
    for (int p = 0; p < hw; ++p) {
        double mean = 0, var = 0;
        for (int ci = 0; ci < c; ++ci) mean += y.data()[static_cast<size_t>(ci) * hw + p];
        mean /= c;
        for (int ci = 0; ci < c; ++ci) {
            double d = y.data()[static_cast<size_t>(ci) * hw + p] - mean;
            var += d * d;
        }
        var /= c;
        EXPECT_NEAR(mean, 0.0, 1e-9);
        EXPECT_NEAR(var, 1.0, 1e-4);  // epsilon-stabilized
    }
}

TEST(LayerNorm, GradCheck) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto x = random_tensor({3, 2, 2}, 70 + seed);
        auto g = random_tensor({3}, 80 + seed);
        auto b = random_tensor({3}, 90 + seed);
        double err = grad_check(
            [](std::vector<Tensor<double>>& in) {
                auto target = scale(in[0], 0.0);
                return l1_diff(layer_norm_channel(in[0], in[1], in[2]), target);
            },
            {x, g, b});
        EXPECT_LT(err, 1e-3) << "seed " << seed;
    }
}

TEST(PixelShuffle, RoundTripAndShapes) {
    auto x = random_tensor({4, 6, 6}, 91);
    auto down = pixel_unshuffle(x, 2);
    ASSERT_EQ(down.shape(), (Shape{16, 3, 3}));
    auto back = pixel_shuffle(down, 2);
    EXPECT_TRUE(bitwise_equal(back, x));
}

TEST(PixelShuffle, GradCheck) {
    auto x = random_tensor({4, 4, 4}, 92);
    double err = grad_check(
        [](Tensor<double>& in) { return mean_all(mul(pixel_unshuffle(in, 2), pixel_unshuffle(in, 2))); },
        x);
    EXPECT_LT(err, 1e-3);
    auto y = random_tensor({8, 2, 2}, 93);
    err = grad_check(
        [](Tensor<double>& in) { return mean_all(mul(pixel_shuffle(in, 2), pixel_shuffle(in, 2))); },
        y);
    EXPECT_LT(err, 1e-3);
}

TEST(Patchify, ShapesAndFlatten) {
    auto x = random_tensor({3, 8, 8}, 95);
    auto tok = patchify(x, 4);
    EXPECT_EQ(tok.shape(), (Shape{4, 48}));
    auto flat = patchify(x, 1);
    EXPECT_EQ(flat.shape(), (Shape{64, 3}));
}

TEST(Patchify, RoundTripBitExact) {
    auto x = random_tensor({5, 6, 9}, 96);
    auto tok = patchify(x, 3);
    auto back = unpatchify(tok, 3, 5, 6, 9);
    EXPECT_TRUE(bitwise_equal(back, x));
}

TEST(Patchify, Errors) {
    auto x = Tensor<float>::zeros({3, 8, 8});
    EXPECT_THROW(patchify(x, 3), DimensionError);
    auto tok = Tensor<float>::zeros({5, 48});
    EXPECT_THROW(unpatchify(tok, 4, 3, 8, 8), DimensionError);
}

TEST(Patchify, ZeroTokensGiveZeroTensor) {
    auto tok = Tensor<float>::zeros({4, 48});
    auto img = unpatchify(tok, 4, 3, 8, 8);
    for (float v : img.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Matmul, MatchesBruteForce) {
    auto a = random_tensor({3, 5}, 101);
    auto b = random_tensor({5, 4}, 102);
    auto y = matmul(a, b);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) {
            double acc = 0;
            for (int k = 0; k < 5; ++k)
                acc += a.data()[static_cast<size_t>(i) * 5 + k] * b.data()[static_cast<size_t>(k) * 4 + j];
            EXPECT_NEAR(y.data()[static_cast<size_t>(i) * 4 + j], acc, 1e-9);
        }
    auto bt = random_tensor({4, 5}, 103);
    auto y2 = matmul_transb(a, bt);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) {
            double acc = 0;
            for (int k = 0; k < 5; ++k)
                acc += a.data()[static_cast<size_t>(i) * 5 + k] * bt.data()[static_cast<size_t>(j) * 5 + k];
            EXPECT_NEAR(y2.data()[static_cast<size_t>(i) * 4 + j], acc, 1e-9);
        }
}

TEST(Matmul, GradCheck) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto a = random_tensor({2, 3}, 110 + seed);
        auto b = random_tensor({3, 4}, 120 + seed);
        double err = grad_check(
            [](std::vector<Tensor<double>>& in) {
                return l1_diff(matmul(in[0], in[1]), Tensor<double>::zeros({2, 4}));
            },
            {a, b});
        EXPECT_LT(err, 1e-3);
        auto bt = random_tensor({4, 3}, 130 + seed);
        err = grad_check(
            [](std::vector<Tensor<double>>& in) {
                return mean_all(mul(matmul_transb(in[0], in[1]), matmul_transb(in[0], in[1])));
            },
            {a, bt});
        EXPECT_LT(err, 1e-3);
    }
}

TEST(Softmax, RowsSumToOne) {
    auto x = random_tensor({6, 9}, 141, 3.0);
    auto y = softmax_rows(x);
    for (int i = 0; i < 6; ++i) {
        double s = 0;
        for (int j = 0; j < 9; ++j) s += y.data()[static_cast<size_t>(i) * 9 + j];
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Softmax, GradCheck) {
    auto x = random_tensor({3, 4}, 142);
    auto w = random_tensor({3, 4}, 143);
    double err = grad_check(
        [&](Tensor<double>& in) { return mean_all(mul(softmax_rows(in), w)); }, x);
    EXPECT_LT(err, 1e-3);
}

TEST(L2Normalize, UnitNorms) {
    auto x = random_tensor({4, 7}, 151);
    auto y = l2_normalize_rows(x);
    for (int i = 0; i < 4; ++i) {
        double s = 0;
        for (int j = 0; j < 7; ++j) {
            double v = y.data()[static_cast<size_t>(i) * 7 + j];
            s += v * v;
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(L2Normalize, GradCheck) {
    auto x = random_tensor({3, 5}, 152);
    auto w = random_tensor({3, 5}, 153);
    double err = grad_check(
        [&](Tensor<double>& in) { return mean_all(mul(l2_normalize_rows(in), w)); }, x);
    EXPECT_LT(err, 1e-3);
}

TEST(Gelu, KnownValuesAndGrad) {
    auto x = Tensor<double>::from_data({3}, {0.0, 10.0, -10.0});
    auto y = gelu(x);
    EXPECT_NEAR(y.data()[0], 0.0, 1e-12);
    EXPECT_NEAR(y.data()[1], 10.0, 1e-9);
    EXPECT_NEAR(y.data()[2], 0.0, 1e-9);
    auto in = random_tensor({2, 6}, 161);
    auto w = random_tensor({2, 6}, 162);
    double err = grad_check([&](Tensor<double>& t) { return mean_all(mul(gelu(t), w)); }, in);
    EXPECT_LT(err, 1e-3);
}

TEST(Reductions, MeanAndL1) {
    auto a = Tensor<double>::from_data({4}, {1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(mean_all(a).data()[0], 2.5);
    auto b = Tensor<double>::from_data({4}, {2, 2, 2, 2});
    EXPECT_DOUBLE_EQ(l1_diff(a, b).data()[0], (1 + 0 + 1 + 2) / 4.0);
    auto x = random_tensor({3, 3}, 171);
    auto t = random_tensor({3, 3}, 172);
    double err = grad_check([&](Tensor<double>& in) { return l1_diff(in, t); }, x);
    EXPECT_LT(err, 1e-3);
}

TEST(SliceConcat, RowsColsRoundTrip) {
    auto x = random_tensor({6, 5}, 181);
    auto top = narrow0(x, 0, 2);
    auto rest = narrow0(x, 2, 4);
    EXPECT_TRUE(bitwise_equal(concat0<double>({top, rest}), x));
    auto left = slice_cols(x, 0, 2);
    auto right = slice_cols(x, 2, 5);
    EXPECT_TRUE(bitwise_equal(concat_cols<double>({left, right}), x));
}

TEST(SliceConcat, GradCheck) {
    auto x = random_tensor({4, 6}, 182);
    double err = grad_check(
        [](Tensor<double>& in) {
            auto a = slice_cols(in, 0, 3);
            auto b = slice_cols(in, 3, 6);
            return mean_all(mul(a, b));
        },
        x);
    EXPECT_LT(err, 1e-3);
    err = grad_check(
        [](Tensor<double>& in) {
            auto a = narrow0(in, 0, 2);
            auto b = narrow0(in, 2, 2);
            return l1_diff(concat0<double>({mul(a, b), a}), Tensor<double>::zeros({4, 6}));
        },
        x);
    EXPECT_LT(err, 1e-3);
}

TEST(MulParamElement, ForwardAndGrad) {
    auto x = Tensor<double>::from_data({3}, {1, 2, 3});
    auto p = Tensor<double>::from_data({2}, {0.5, 4.0});
    EXPECT_DOUBLE_EQ(mul_param_element(x, p, 1).data()[2], 12.0);
    auto xr = random_tensor({2, 3}, 191);
    auto pr = random_tensor({2}, 192);
    double err = grad_check(
        [](std::vector<Tensor<double>>& in) {
            return mean_all(mul(mul_param_element(in[0], in[1], 0),
                                mul_param_element(in[0], in[1], 1)));
        },
        {xr, pr});
    EXPECT_LT(err, 1e-3);
}

TEST(GradCheck, DetectsCorruptedGradient) {
    // A custom op whose backward is deliberately twice the true gradient: the
    // checker must report rel err ~ 0.5.
    auto bad_double = [](const Tensor<double>& x) {
        std::vector<double> out(x.data());
        for (auto& v : out) v *= 3.0;
        return Tensor<double>::make_op(x.shape(), std::move(out), {x}, [](auto& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                p.grad[i] += self.grad[i] * 6.0;  // true jacobian is 3
        });
    };
    auto x = random_tensor({3}, 201);
    double err = grad_check([&](Tensor<double>& in) { return mean_all(bad_double(in)); }, x);
    EXPECT_NEAR(err, 0.5, 0.1);
}
