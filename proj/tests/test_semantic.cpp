#include <gtest/gtest.h>

#include <filesystem>

#include "symunet/gradcheck.hpp"
#include "symunet/optim.hpp"

using namespace symunet;

namespace {

ModelConfig tiny_se_config(GuidanceMode mode) {
    ModelConfig cfg;
    cfg.levels = 3;
    cfg.base_channels = 8;
    cfg.encoder_blocks = {1, 1, 1};
    cfg.bottleneck_blocks = 1;
    cfg.decoder_blocks = {1, 1, 1};
    cfg.heads_per_level = {1, 2, 4, 8};
    cfg.guidance_mode = mode;
    cfg.bottleneck_patch = 2;
    cfg.decoder_patch = {4, 4, 4};
    cfg.context_tokens = 9;
    cfg.context_dim = 16;
    cfg.ca_heads = 4;
    return cfg;
}

Tensor<float> random_image(int h, int w, std::uint64_t seed) {
    auto t = Tensor<float>::zeros({3, h, w});
    Rng rng(seed);
    fill_uniform(t, rng, 0.0, 1.0);
    return t;
}

template <typename T>
void randomize(Tensor<T>& t, std::uint64_t seed, double s = 0.3) {
    Rng rng(seed);
    fill_normal(t, rng, s);
}

}  // namespace

TEST(Context, StubShapeMatchesVitDims) {
    SemanticEncoder enc{ContextSource::kStub, 5, ""};
    auto img = random_image(40, 56, 1);
    auto ctx = extract_context(img, enc, 257, 1024, 3);
    EXPECT_EQ(ctx.tokens.shape(), (Shape{257, 1024}));
    EXPECT_EQ(ctx.level_tag, 3);
    EXPECT_FALSE(ctx.tokens.requires_grad());
    EXPECT_TRUE(all_finite(ctx.tokens.data()));
}

TEST(Context, StubIsFrozenAndDeterministic) {
    SemanticEncoder enc{ContextSource::kStub, 5, ""};
    auto img = random_image(32, 32, 2);
    auto a = extract_context(img, enc, 33, 24, 3);
    auto b = extract_context(img, enc, 33, 24, 3);
    EXPECT_TRUE(bitwise_equal(a.tokens, b.tokens));
    SemanticEncoder enc2{ContextSource::kStub, 6, ""};
    auto c = extract_context(img, enc2, 33, 24, 3);
    EXPECT_FALSE(bitwise_equal(a.tokens, c.tokens));
    // and it depends on the image content
    auto img2 = random_image(32, 32, 3);
    auto d = extract_context(img2, enc, 33, 24, 3);
    EXPECT_FALSE(bitwise_equal(a.tokens, d.tokens));
}

TEST(Context, FileAdapterRoundTrip) {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "symunet_ctx";
    fs::create_directories(dir);
    auto tokens = Tensor<float>::zeros({9, 16});
    randomize(tokens, 7);
    save_symt((dir / "img001.ctx.symt").string(), tokens);
    SemanticEncoder enc{ContextSource::kFile, 0, dir.string()};
    auto img = random_image(16, 16, 8);
    auto ctx = extract_context(img, enc, 9, 16, 3, "img001");
    EXPECT_TRUE(bitwise_equal(ctx.tokens, tokens));
    // wrong declared shape is a format error
    EXPECT_THROW(extract_context(img, enc, 10, 16, 3, "img001"), FormatError);
    fs::remove_all(dir);
}

TEST(CrossAttention, SingleKeyBroadcastsValue) {
    auto p = make_cross_attn_params<double>(4, 6, 2);
    randomize(p.wq, 1);
    randomize(p.wk, 2);
    randomize(p.wv, 3);
    randomize(p.wo, 4);
    auto q = Tensor<double>::zeros({3, 4});
    randomize(q, 5);
    auto kv = Tensor<double>::zeros({1, 6});
    randomize(kv, 6);
    auto out = cross_attention(q, kv, p);
    ASSERT_EQ(out.shape(), (Shape{3, 4}));
    // with one key the softmax weight is 1 for every query: each output row
    // equals wo(wv(kv_token)) regardless of the query
    std::vector<double> v(4, 0.0), expect(4, 0.0);
    for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 6; ++k) v[static_cast<size_t>(j)] += kv.data()[static_cast<size_t>(k)] * p.wv.data()[static_cast<size_t>(k) * 4 + j];
    for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 4; ++k) expect[static_cast<size_t>(j)] += v[static_cast<size_t>(k)] * p.wo.data()[static_cast<size_t>(k) * 4 + j];
    for (int r = 0; r < 3; ++r)
        for (int j = 0; j < 4; ++j)
            EXPECT_NEAR(out.data()[static_cast<size_t>(r) * 4 + j], expect[static_cast<size_t>(j)], 1e-9);
}

TEST(CrossAttention, ZeroOutputProjectionGivesZeros) {
    auto p = make_cross_attn_params<double>(4, 4, 2);
    randomize(p.wq, 1);
    randomize(p.wk, 2);
    randomize(p.wv, 3);
    auto q = Tensor<double>::zeros({5, 4});
    randomize(q, 4);
    auto kv = Tensor<double>::zeros({7, 4});
    randomize(kv, 5);
    auto out = cross_attention(q, kv, p);
    for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(CrossAttention, HandComputedTwoQueriesThreeKeys) {
    // 1 head, Dq = Dk = 2; weights set by hand, evaluated independently.
    auto p = make_cross_attn_params<double>(2, 2, 1);
    const std::vector<double> wq = {1.0, 0.5, -0.25, 0.75};
    const std::vector<double> wk = {0.5, -1.0, 0.25, 0.5};
    const std::vector<double> wv = {1.5, 0.0, -0.5, 1.0};
    const std::vector<double> wo = {0.4, -0.2, 0.3, 0.8};
    std::copy(wq.begin(), wq.end(), p.wq.data().begin());
    std::copy(wk.begin(), wk.end(), p.wk.data().begin());
    std::copy(wv.begin(), wv.end(), p.wv.data().begin());
    std::copy(wo.begin(), wo.end(), p.wo.data().begin());
    auto qin = Tensor<double>::from_data({2, 2}, {0.2, -0.6, 1.1, 0.4});
    auto kvin = Tensor<double>::from_data({3, 2}, {0.5, 0.1, -0.7, 0.9, 0.3, -0.2});
    auto out = cross_attention(qin, kvin, p);

    auto matmul2 = [](const std::vector<double>& a, const std::vector<double>& b, int m, int k,
                      int n) {
        std::vector<double> y(static_cast<size_t>(m) * n, 0.0);
        for (int i = 0; i < m; ++i)
            for (int kk = 0; kk < k; ++kk)
                for (int j = 0; j < n; ++j)
                    y[static_cast<size_t>(i) * n + j] += a[static_cast<size_t>(i) * k + kk] * b[static_cast<size_t>(kk) * n + j];
        return y;
    };
    auto q = matmul2(qin.data(), wq, 2, 2, 2);
    auto k = matmul2(kvin.data(), wk, 3, 2, 2);
    auto v = matmul2(kvin.data(), wv, 3, 2, 2);
    const double inv_sqrt = 1.0 / std::sqrt(2.0);
    std::vector<double> att(2 * 2, 0.0);
    for (int i = 0; i < 2; ++i) {
        double scores[3];
        double mx = -1e30;
        for (int j = 0; j < 3; ++j) {
            scores[j] = (q[static_cast<size_t>(i) * 2] * k[static_cast<size_t>(j) * 2] +
                         q[static_cast<size_t>(i) * 2 + 1] * k[static_cast<size_t>(j) * 2 + 1]) *
                        inv_sqrt;
            mx = std::max(mx, scores[j]);
        }
        double z = 0.0;
        for (int j = 0; j < 3; ++j) z += std::exp(scores[j] - mx);
        for (int j = 0; j < 3; ++j) {
            const double w = std::exp(scores[j] - mx) / z;
            att[static_cast<size_t>(i) * 2] += w * v[static_cast<size_t>(j) * 2];
            att[static_cast<size_t>(i) * 2 + 1] += w * v[static_cast<size_t>(j) * 2 + 1];
        }
    }
    auto expect = matmul2(att, wo, 2, 2, 2);
    for (size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(out.data()[i], expect[i], 1e-6);
}

TEST(CrossAttention, DimMismatchRejected) {
    auto p = make_cross_attn_params<double>(4, 6, 2);
    auto q = Tensor<double>::zeros({3, 5});
    auto kv = Tensor<double>::zeros({2, 6});
    EXPECT_THROW(cross_attention(q, kv, p), ConfigError);
}

TEST(CrossAttention, GradCheck) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto p = make_cross_attn_params<double>(4, 6, 2);
        randomize(p.wq, 10 + seed);
        randomize(p.wk, 20 + seed);
        randomize(p.wv, 30 + seed);
        randomize(p.wo, 40 + seed);
        auto q = Tensor<double>::zeros({3, 4});
        randomize(q, 50 + seed, 1.0);
        auto kv = Tensor<double>::zeros({4, 6});
        randomize(kv, 60 + seed, 1.0);
        auto proj = Tensor<double>::zeros({3, 4});
        randomize(proj, 70 + seed, 1.0);
        std::vector<Tensor<double>> leaves{q, kv, p.wq, p.wk, p.wv, p.wo};
        double err = grad_check(
            [&](std::vector<Tensor<double>>& in) {
                return mean_all(mul(cross_attention(in[0], in[1], p), proj));
            },
            leaves);
        EXPECT_LT(err, 1e-3) << "seed " << seed;
    }
}

TEST(Guidance, ZeroInitIsIdentity) {
    auto g = make_guidance_stage<double>(8, 4, 16, 4);
    randomize(g.z_proj, 1);
    randomize(g.guide.wq, 2);
    randomize(g.guide.wk, 3);
    randomize(g.guide.wv, 4);  // wo stays zero
    auto f = Tensor<double>::zeros({8, 8, 8});
    randomize(f, 5, 1.0);
    SemanticContext<double> z;
    z.tokens = Tensor<double>::zeros({9, 16});
    randomize(z.tokens, 6, 1.0);
    auto out = semantic_guidance(f, z, g, 4);
    EXPECT_TRUE(bitwise_equal(out, f));
}

TEST(Guidance, ShapePreserved) {
    auto g = make_guidance_stage<float>(48, 4, 32, 8);
    g.for_each([](const char*, Tensor<float>& t) {
        Rng rng(hash_name("x"));
        fill_normal(t, rng, 0.05);
    });
    auto f = Tensor<float>::zeros({48, 32, 32});
    Rng rng(9);
    fill_normal(f, rng, 1.0);
    SemanticContext<float> z;
    z.tokens = Tensor<float>::zeros({17, 32});
    fill_normal(z.tokens, rng, 1.0);
    EXPECT_EQ(semantic_guidance(f, z, g, 4).shape(), (Shape{48, 32, 32}));
}

TEST(Guidance, GradCheck) {
    auto g = make_guidance_stage<double>(2, 2, 6, 2);
    std::vector<Tensor<double>> leaves;
    int i = 0;
    g.for_each([&](const char*, Tensor<double>& t) {
        randomize(t, 100 + static_cast<std::uint64_t>(i++), 0.4);
        leaves.push_back(t);
    });
    auto f = Tensor<double>::zeros({2, 4, 4});
    randomize(f, 200, 1.0);
    SemanticContext<double> z;
    z.tokens = Tensor<double>::zeros({3, 6});
    randomize(z.tokens, 201, 1.0);
    auto target = Tensor<double>::zeros({2, 4, 4});
    randomize(target, 202, 1.0);
    leaves.push_back(f);
    double err = grad_check(
        [&](std::vector<Tensor<double>>& in) {
            return l1_diff(semantic_guidance(in.back(), z, g, 2), target);
        },
        leaves);
    EXPECT_LT(err, 1e-3);
}

TEST(Refine, ZeroInitKeepsContext) {
    auto g = make_guidance_stage<double>(4, 2, 12, 2);
    randomize(g.f_proj, 1);
    randomize(g.refine.wq, 2);
    randomize(g.refine.wk, 3);
    randomize(g.refine.wv, 4);  // refine wo stays zero
    auto f = Tensor<double>::zeros({4, 4, 4});
    randomize(f, 5, 1.0);
    SemanticContext<double> z;
    z.tokens = Tensor<double>::zeros({5, 12});
    randomize(z.tokens, 6, 1.0);
    auto z2 = semantic_refine(f, z, g, 2, 2);
    EXPECT_TRUE(bitwise_equal(z2.tokens, z.tokens));
    EXPECT_EQ(z2.level_tag, 2);
}

TEST(Refine, PreservesContextDimsForAnyStageShape) {
    // output stays (257,1024) even though f lives at a stage-specific shape
    auto g = make_guidance_stage<float>(8, 2, 1024, 8);
    g.for_each([](const char* n, Tensor<float>& t) {
        Rng rng(hash_name(n));
        fill_normal(t, rng, 0.02);
    });
    auto f = Tensor<float>::zeros({8, 6, 4});
    Rng rng(7);
    fill_normal(f, rng, 1.0);
    SemanticContext<float> z;
    z.tokens = Tensor<float>::zeros({257, 1024});
    fill_normal(z.tokens, rng, 1.0);
    auto z2 = semantic_refine(f, z, g, 2, 1);
    EXPECT_EQ(z2.tokens.shape(), (Shape{257, 1024}));
}

TEST(Refine, GradCheck) {
    auto g = make_guidance_stage<double>(2, 2, 4, 2);
    std::vector<Tensor<double>> leaves;
    int i = 0;
    g.for_each([&](const char*, Tensor<double>& t) {
        randomize(t, 300 + static_cast<std::uint64_t>(i++), 0.4);
        leaves.push_back(t);
    });
    auto f = Tensor<double>::zeros({2, 4, 4});
    randomize(f, 400, 1.0);
    SemanticContext<double> z;
    z.tokens = Tensor<double>::zeros({3, 4});
    randomize(z.tokens, 401, 1.0);
    auto target = Tensor<double>::zeros({3, 4});
    randomize(target, 402, 1.0);
    leaves.push_back(f);
    double err = grad_check(
        [&](std::vector<Tensor<double>>& in) {
            return l1_diff(semantic_refine(in.back(), z, g, 2, 0).tokens, target);
        },
        leaves);
    EXPECT_LT(err, 1e-3);
}

TEST(SeForward, RequiresGuidanceMode) {
    auto m = build_model<float>(tiny_se_config(GuidanceMode::kNone), 1);
    auto y = random_image(32, 32, 2);
    EXPECT_THROW(forward_se_symunet(m, y), ConfigError);
}

TEST(SeForward, ZeroInitGuidanceDegeneratesToBaseline) {
    // randomize the trunk thoroughly (including residual projections) over
    // several seeds; only the guidance output projections stay zero
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto m = build_model<float>(tiny_se_config(GuidanceMode::kBidirectional), seed);
        for (auto& [name, t] : m.params) {
            const bool guidance_wo = name.rfind("sg", 0) == 0 && detail::ends_with(name, ".wo");
            if (guidance_wo) continue;
            if (detail::ends_with(name, "attn_out") || detail::ends_with(name, "ffn_project") ||
                name == "final_conv") {
                Rng rng(splitmix64(seed ^ hash_name(name)));
                fill_normal(t, rng, 0.05);
            }
        }
        auto y = random_image(32, 32, 10 + seed);
        NoGradGuard ng;
        auto base = forward_symunet(m, y);
        ForwardStats stats;
        auto se = forward_se_symunet(m, y, &stats);
        EXPECT_TRUE(bitwise_equal(se, base)) << "seed " << seed;
        EXPECT_FALSE(bitwise_equal(base, y));  // trunk is non-trivial
    }
}

TEST(SeForward, BidirectionalCallCounts) {
    auto m = build_model<float>(tiny_se_config(GuidanceMode::kBidirectional), 3);
    auto y = random_image(32, 32, 4);
    ForwardStats stats;
    NoGradGuard ng;
    forward_se_symunet(m, y, &stats);
    EXPECT_EQ(stats.guidance_calls, m.config.levels + 1);
    EXPECT_EQ(stats.refine_calls, m.config.levels + 1);
}

TEST(SeForward, OneWayNeverRefines) {
    auto m = build_model<float>(tiny_se_config(GuidanceMode::kOneWay), 3);
    auto y = random_image(32, 32, 4);
    ForwardStats stats;
    NoGradGuard ng;
    forward_se_symunet(m, y, &stats);
    EXPECT_EQ(stats.guidance_calls, m.config.levels + 1);
    EXPECT_EQ(stats.refine_calls, 0);
}

TEST(SeForward, NoGradientReachesFrozenContext) {
    auto m = build_model<double>(tiny_se_config(GuidanceMode::kBidirectional), 5);
    // push guidance off zero so the context actually participates, and the
    // final conv off zero so gradient reaches the decoder path at all
    for (auto& [name, t] : m.params) {
        if (name.rfind("sg", 0) == 0 || name == "final_conv") {
            Rng rng(splitmix64(hash_name(name)));
            fill_normal(t, rng, 0.05);
        }
    }
    auto yf = random_image(16, 16, 6);
    auto y = Tensor<double>::from_data(yf.shape(),
                                       std::vector<double>(yf.data().begin(), yf.data().end()));
    SemanticContext<double> ctx =
        extract_context(y, m.encoder, m.config.context_tokens, m.config.context_dim,
                        m.config.levels);
    zero_grads(m);
    auto out = forward_se_symunet(m, y, nullptr, &ctx);
    auto loss = mean_all(mul(out, out));
    loss.backward();
    EXPECT_FALSE(ctx.tokens.requires_grad());
    EXPECT_FALSE(ctx.tokens.has_grad());
    // while guidance parameters do receive gradients
    auto& some = m.params.at("sg0.guide.wq");
    bool nonzero = false;
    for (double v : some.grad()) nonzero = nonzero || v != 0.0;
    EXPECT_TRUE(nonzero);
}

TEST(SeForward, GuidancePreservesShapesAtEveryStage) {
    auto m = build_model<float>(tiny_se_config(GuidanceMode::kBidirectional), 6);
    auto y = random_image(64, 32, 7);
    NoGradGuard ng;
    auto out = forward_se_symunet(m, y);
    EXPECT_EQ(out.shape(), y.shape());
}
