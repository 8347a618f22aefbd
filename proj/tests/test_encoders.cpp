#include <cmath>

#include "doctest.h"
#include "mmfusion/encoders.hpp"
#include "mmfusion/graph.hpp"
#include "mmfusion/report.hpp"

using namespace mmf;

TEST_CASE("text encoding: all-PAD input and frozen determinism") {
    auto params = TextEncoderParams<float>::init(32, 8, 16, 42);
    auto params_again = TextEncoderParams<float>::init(32, 8, 16, 42);
    CHECK(params.embedding.values() == params_again.embedding.values());  // bitwise

    std::vector<int> pads(6, Vocabulary::kPad);
    auto enc = text_encode(pads, 0, params);
    CHECK(enc.tokens.shape() == Shape{6, 8});
    for (std::size_t pos = 0; pos < 6; ++pos) {
        CHECK(enc.valid[pos] == 0);
        for (std::size_t j = 0; j < 8; ++j) {
            const float expected = params.embedding.at(0, j) + params.positional.at(pos, j);
            CHECK(enc.tokens.at(pos, j) == expected);
        }
    }
}

TEST_CASE("text encoding differs only in the changed position") {
    auto params = TextEncoderParams<float>::init(32, 8, 16, 1);
    std::vector<int> a = {5, 9, 3, 2};
    std::vector<int> b = {5, 9, 7, 2};
    auto ea = text_encode(a, 4, params);
    auto eb = text_encode(b, 4, params);
    for (std::size_t pos = 0; pos < 4; ++pos) {
        bool same = true;
        for (std::size_t j = 0; j < 8; ++j) same = same && ea.tokens.at(pos, j) == eb.tokens.at(pos, j);
        CHECK(same == (pos != 2));
    }
}

TEST_CASE("text encoding rejects out-of-vocabulary ids") {
    auto params = TextEncoderParams<float>::init(10, 4, 8, 1);
    std::vector<int> bad = {3, 10};
    CHECK_THROWS_AS(text_encode(bad, 2, params), ValueError);
}

TEST_CASE("vision encoder shape contract: 64x64 -> 128x4x4 with default channels") {
    ParamStore<float> store(7);
    VisionEncoder<float> enc(VisionConfig{}, store);
    TensorF image({1, 64, 64});
    Rng rng = Rng::keyed(3, "img");
    for (auto& v : image.values()) v = static_cast<float>(rng.uniform(0.0, 1.0));
    TensorF fmap = enc.forward(image);
    CHECK(fmap.shape() == Shape{128, 4, 4});
}

TEST_CASE("vision encoder rejects non-divisible spatial dims") {
    ParamStore<float> store(7);
    VisionEncoder<float> enc(VisionConfig{}, store);
    TensorF image({1, 60, 64});
    CHECK_THROWS_AS(enc.forward(image), ShapeError);
}

TEST_CASE("vision encoder on a zero image is finite and deterministic") {
    VisionConfig cfg;
    cfg.channels = {4, 8, 16, 32};
    ParamStore<float> s1(11), s2(11);
    VisionEncoder<float> e1(cfg, s1), e2(cfg, s2);
    TensorF image({1, 32, 32});
    TensorF f1 = e1.forward(image);
    TensorF f2 = e2.forward(image);
    CHECK(f1.finite());
    CHECK(f1.values() == f2.values());  // same seed -> bitwise identical
}

TEST_CASE("vision gradients reach every conv stage") {
    VisionConfig cfg;
    cfg.channels = {4, 8, 16, 32};
    ParamStore<float> store(5);
    VisionEncoder<float> enc(cfg, store);
    TensorF image({1, 32, 32});
    Rng rng = Rng::keyed(8, "img");
    for (auto& v : image.values()) v = static_cast<float>(rng.uniform(0.0, 1.0));

    GraphF g;
    GraphF::Scope scope(g);
    TensorF fmap = enc.forward(image);
    TensorF loss = sum(mul(fmap, fmap));
    g.backward(loss);

    for (const auto& entry : store) {
        if (entry.name.find(".conv.w") == std::string::npos) continue;
        REQUIRE(entry.tensor.has_grad());
        double norm = 0;
        for (float gv : entry.tensor.grad_view()) norm += static_cast<double>(gv) * gv;
        CHECK(norm > 0.0);  // no dead gradient path
    }
}
