#include <cmath>

#include "doctest.h"
#include "mmfusion/graph.hpp"
#include "mmfusion/tokenizer.hpp"

using namespace mmf;

namespace {

TokenizerConfig make_cfg(std::size_t n, std::size_t c, TokenizerVariant variant) {
    TokenizerConfig cfg;
    cfg.n_tokens = n;
    cfg.channel_dim = c;
    cfg.variant = variant;
    return cfg;
}

TensorF random_fmap(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
    Rng rng = Rng::keyed(seed, "fmap");
    return TensorF::randn({c, h, w}, rng);
}

}  // namespace

TEST_CASE("visual tokens: identity case with a 1x1 spatial map") {
    ParamStore<float> store(1);
    VisualTokenizer<float> tok(make_cfg(1, 2, TokenizerVariant::feature_map), 1, store);
    store.find("tokenizer.visual.token_proj")->values() = {1.0f};
    TensorF f({2, 1, 1}, {3.0f, -1.5f});
    TensorF tokens = tok.visual_tokens(f);
    CHECK(tokens.shape() == Shape{1, 2});
    CHECK(tokens.at(0, 0) == doctest::Approx(3.0));
    CHECK(tokens.at(0, 1) == doctest::Approx(-1.5));
}

TEST_CASE("visual tokens: near-identity projection is applied, not skipped") {
    // H'W' == N: the projection still multiplies through.
    const std::size_t n = 4, c = 3;
    ParamStore<float> store(2);
    VisualTokenizer<float> tok(make_cfg(n, c, TokenizerVariant::feature_map), n, store);
    TensorF& proj = *store.find("tokenizer.visual.token_proj");
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) proj.at(i, j) = (i == j) ? 1.0f + 1e-3f : 0.0f;
    TensorF f = random_fmap(c, 2, 2, 5);
    TensorF tokens = tok.visual_tokens(f);
    CHECK(tokens.shape() == Shape{n, c});
    // Row i equals (1 + 1e-3) * spatial vector i; spatial vector 0 across
    // channels is f[ch, 0, 0] = data[ch * 4].
    for (std::size_t j = 0; j < c; ++j) {
        CHECK(tokens.at(0, j) == doctest::Approx((1.0f + 1e-3f) * f.values()[j * 4]).epsilon(1e-5));
    }
}

TEST_CASE("visual tokens: 128x4x4 -> 64x128 with gradient into the projection") {
    ParamStore<float> store(3);
    VisualTokenizer<float> tok(make_cfg(64, 128, TokenizerVariant::feature_map), 16, store);
    TensorF f = random_fmap(128, 4, 4, 6);

    GraphF g;
    GraphF::Scope scope(g);
    TensorF tokens = tok.visual_tokens(f);
    CHECK(tokens.shape() == Shape{64, 128});
    TensorF loss = sum(mul(tokens, tokens));
    g.backward(loss);
    TensorF& proj = *store.find("tokenizer.visual.token_proj");
    REQUIRE(proj.has_grad());
    double norm = 0;
    for (float v : proj.grad_view()) norm += std::abs(v);
    CHECK(norm > 0.0);
}

TEST_CASE("variant contract errors") {
    ParamStore<float> store(4);
    VisualTokenizer<float> fm(make_cfg(4, 8, TokenizerVariant::feature_map), 4, store);
    TensorF f = random_fmap(8, 2, 2, 7);
    CHECK_THROWS_AS(fm.embedding_tokens(f), ValueError);

    ParamStore<float> store2(4);
    VisualTokenizer<float> lin(make_cfg(4, 8, TokenizerVariant::embedding_linear), 4, store2);
    CHECK_THROWS_AS(lin.visual_tokens(f), ValueError);
}

TEST_CASE("embedding tokens: zero embedding with zero bias gives zero tokens") {
    ParamStore<float> store(5);
    VisualTokenizer<float> tok(make_cfg(3, 4, TokenizerVariant::embedding_linear), 4, store);
    TensorF f({4, 2, 2});  // all zeros -> GAP is zero
    TensorF tokens = tok.embedding_tokens(f);
    CHECK(tokens.shape() == Shape{3, 4});
    for (float v : tokens.values()) CHECK(v == 0.0f);
}

TEST_CASE("embedding linear with N=1 is a plain projection") {
    ParamStore<float> store(6);
    VisualTokenizer<float> tok(make_cfg(1, 4, TokenizerVariant::embedding_linear), 1, store);
    TensorF f({4, 1, 1}, {1, 2, 3, 4});
    TensorF tokens = tok.embedding_tokens(f);
    CHECK(tokens.shape() == Shape{1, 4});
    // Manually compute e W + b.
    TensorF& w = *store.find("tokenizer.visual.expand.w");
    for (std::size_t j = 0; j < 4; ++j) {
        float acc = 0;
        for (std::size_t i = 0; i < 4; ++i) acc += f.data()[i] * w.at(i, j);
        CHECK(tokens.at(0, j) == doctest::Approx(acc).epsilon(1e-6));
    }
}

TEST_CASE("mlp variant differs from linear on the same seed") {
    ParamStore<float> s1(9), s2(9);
    VisualTokenizer<float> lin(make_cfg(4, 8, TokenizerVariant::embedding_linear), 4, s1);
    VisualTokenizer<float> mlp(make_cfg(4, 8, TokenizerVariant::embedding_mlp), 4, s2);
    TensorF f = random_fmap(8, 2, 2, 10);
    TensorF a = lin.embedding_tokens(f);
    TensorF b = mlp.embedding_tokens(f);
    double diff = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) diff += std::abs(a.data()[i] - b.data()[i]);
    CHECK(diff > 1e-3);
}

TEST_CASE("feature_map variant is spatially sensitive; embedding variants are not") {
    const std::size_t c = 8, n = 4;
    TensorF f = random_fmap(c, 2, 2, 11);
    // Swap two spatial positions across all channels.
    TensorF swapped = f.clone();
    for (std::size_t ch = 0; ch < c; ++ch) {
        std::swap(swapped.values()[ch * 4 + 0], swapped.values()[ch * 4 + 3]);
    }

    ParamStore<float> s1(12);
    VisualTokenizer<float> fm(make_cfg(n, c, TokenizerVariant::feature_map), 4, s1);
    double fm_diff = 0;
    {
        TensorF a = fm.visual_tokens(f), b = fm.visual_tokens(swapped);
        for (std::size_t i = 0; i < a.numel(); ++i) fm_diff += std::abs(a.data()[i] - b.data()[i]);
    }
    CHECK(fm_diff > 1e-4);

    ParamStore<float> s2(12);
    VisualTokenizer<float> emb(make_cfg(n, c, TokenizerVariant::embedding_linear), 4, s2);
    {
        TensorF a = emb.embedding_tokens(f), b = emb.embedding_tokens(swapped);
        for (std::size_t i = 0; i < a.numel(); ++i) {
            CHECK(std::abs(a.data()[i] - b.data()[i]) < 1e-5);  // GAP is permutation-invariant
        }
    }
}

TEST_CASE("text tokens: L == N applies only the channel projection") {
    TokenizerConfig cfg = make_cfg(3, 4, TokenizerVariant::feature_map);
    ParamStore<float> store(13);
    TextTokenizer<float> tok(cfg, 2, 3, store);
    CHECK_FALSE(tok.has_token_axis_params());
    Rng rng = Rng::keyed(20, "txt");
    TensorF t = TensorF::randn({3, 2}, rng);
    TensorF out = tok.forward(t);
    CHECK(out.shape() == Shape{3, 4});
    TensorF& w = *store.find("tokenizer.text.channel_proj.w");
    for (std::size_t j = 0; j < 4; ++j) {
        const float expected = t.at(0, 0) * w.at(0, j) + t.at(0, 1) * w.at(1, j);
        CHECK(out.at(0, j) == doctest::Approx(expected).epsilon(1e-5));
    }
}

TEST_CASE("text tokens: down-sampling pools pairwise means under identity channel projection") {
    TokenizerConfig cfg = make_cfg(2, 3, TokenizerVariant::feature_map);
    ParamStore<float> store(14);
    TextTokenizer<float> tok(cfg, 3, 4, store);
    CHECK_FALSE(tok.has_token_axis_params());  // pooling path has no token-axis parameters
    TensorF& w = *store.find("tokenizer.text.channel_proj.w");
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) w.at(i, j) = i == j ? 1.0f : 0.0f;
    TensorF t({4, 3}, {0, 0, 0, 2, 2, 2, 4, 4, 4, 6, 6, 6});
    TensorF out = tok.forward(t);
    CHECK(out.shape() == Shape{2, 3});
    CHECK(out.at(0, 0) == doctest::Approx(1.0));
    CHECK(out.at(1, 0) == doctest::Approx(5.0));
}

TEST_CASE("text tokens: up-sampling has trainable token-axis parameters and gradients") {
    TokenizerConfig cfg = make_cfg(4, 3, TokenizerVariant::feature_map);
    ParamStore<float> store(15);
    TextTokenizer<float> tok(cfg, 2, 2, store);
    CHECK(tok.has_token_axis_params());
    REQUIRE(store.find("tokenizer.text.up_proj") != nullptr);

    Rng rng = Rng::keyed(21, "txt2");
    TensorF t = TensorF::randn({2, 2}, rng);
    GraphF g;
    GraphF::Scope scope(g);
    TensorF out = tok.forward(t);
    CHECK(out.shape() == Shape{4, 3});
    TensorF loss = sum(mul(out, out));
    g.backward(loss);
    for (const char* name : {"tokenizer.text.channel_proj.w", "tokenizer.text.up_proj"}) {
        TensorF* p = store.find(name);
        REQUIRE(p != nullptr);
        REQUIRE(p->has_grad());
        double norm = 0;
        for (float v : p->grad_view()) norm += std::abs(v);
        CHECK(norm > 0.0);
    }
}

TEST_CASE("output shape is always NxC over fuzzed input sizes") {
    Rng rng = Rng::keyed(30, "fuzz");
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t c = 4 * static_cast<std::size_t>(rng.uniform_int(1, 4));
        const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 12));
        const std::size_t hs = static_cast<std::size_t>(rng.uniform_int(1, 5));
        const std::size_t ws = static_cast<std::size_t>(rng.uniform_int(1, 5));
        const std::size_t l = static_cast<std::size_t>(rng.uniform_int(1, 16));
        const std::size_t d_text = static_cast<std::size_t>(rng.uniform_int(2, 8));

        ParamStore<float> store(100 + static_cast<std::uint64_t>(trial));
        VisualTokenizer<float> vt(make_cfg(n, c, TokenizerVariant::feature_map), hs * ws, store);
        TextTokenizer<float> tt(make_cfg(n, c, TokenizerVariant::feature_map), d_text, l, store);

        TensorF f = TensorF::randn({c, hs, ws}, rng);
        TensorF t = TensorF::randn({l, d_text}, rng);
        CHECK(vt.visual_tokens(f).shape() == Shape{n, c});
        CHECK(tt.forward(t).shape() == Shape{n, c});
    }
}
