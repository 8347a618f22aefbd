#include <cmath>

#include "doctest.h"
#include "mmfusion/fusion.hpp"
#include "mmfusion/graph.hpp"

using namespace mmf;

namespace {

// Independent per-head reference: plain loops, no shared code with mha().
TensorF mha_reference(const TensorF& q, const TensorF& kv, const MhaParams<float>& p) {
    const std::size_t nq = q.extent(0), nk = kv.extent(0), c = p.dim, hd = c / p.heads;
    auto project = [c](const TensorF& x, const TensorF& w, const TensorF& b) {
        std::vector<float> out(x.extent(0) * c, 0.0f);
        for (std::size_t i = 0; i < x.extent(0); ++i)
            for (std::size_t j = 0; j < c; ++j) {
                double acc = b.data()[j];
                for (std::size_t k = 0; k < c; ++k)
                    acc += static_cast<double>(x.at(i, k)) * w.at(k, j);
                out[i * c + j] = static_cast<float>(acc);
            }
        return out;
    };
    const auto qp = project(q, p.wq, p.bq);
    const auto kp = project(kv, p.wk, p.bk);
    const auto vp = project(kv, p.wv, p.bv);

    std::vector<float> merged(nq * c, 0.0f);
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (std::size_t h = 0; h < p.heads; ++h) {
        for (std::size_t i = 0; i < nq; ++i) {
            std::vector<double> logits(nk);
            double mx = -1e300;
            for (std::size_t j = 0; j < nk; ++j) {
                double acc = 0;
                for (std::size_t d = 0; d < hd; ++d)
                    acc += static_cast<double>(qp[i * c + h * hd + d]) * kp[j * c + h * hd + d];
                logits[j] = acc * scale;
                mx = std::max(mx, logits[j]);
            }
            double denom = 0;
            for (std::size_t j = 0; j < nk; ++j) denom += std::exp(logits[j] - mx);
            for (std::size_t d = 0; d < hd; ++d) {
                double acc = 0;
                for (std::size_t j = 0; j < nk; ++j) {
                    acc += std::exp(logits[j] - mx) / denom * vp[j * c + h * hd + d];
                }
                merged[i * c + h * hd + d] = static_cast<float>(acc);
            }
        }
    }
    TensorF mt({nq, c}, std::move(merged));
    std::vector<float> out = project(mt, p.wo, p.bo);
    return TensorF({nq, c}, std::move(out));
}

TensorF randn_f(Shape shape, std::uint64_t seed) {
    Rng rng = Rng::keyed(seed, "fusion_test");
    return TensorF::randn(std::move(shape), rng);
}

}  // namespace

TEST_CASE("mha matches the brute-force per-head reference") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        ParamStore<float> store(40 + seed);
        MhaParams<float> p = MhaParams<float>::init(16, 4, store, "mha");
        TensorF q = randn_f({3, 16}, 100 + seed);
        TensorF kv = randn_f({4, 16}, 200 + seed);
        TensorF ours = mha(q, kv, p);
        TensorF ref = mha_reference(q, kv, p);
        for (std::size_t i = 0; i < ours.numel(); ++i) {
            CHECK(std::abs(ours.data()[i] - ref.data()[i]) < 1e-5);
        }
    }
}

TEST_CASE("mha with a single key reduces to the projected value") {
    ParamStore<float> store(50);
    MhaParams<float> p = MhaParams<float>::init(8, 2, store, "mha");
    TensorF q = randn_f({3, 8}, 51);
    TensorF kv = randn_f({1, 8}, 52);

    AttnProbe<float> probe;
    TensorF out = mha(q, kv, p, &probe);
    // Softmax over one key is exactly 1 -> output rows all equal W_o(v) + b_o.
    for (const auto& w : probe.weights) {
        for (std::size_t i = 0; i < w.numel(); ++i) CHECK(w.data()[i] == doctest::Approx(1.0));
    }
    for (std::size_t i = 1; i < 3; ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
            CHECK(out.at(i, j) == doctest::Approx(out.at(0, j)).epsilon(1e-5));
        }
    }
}

TEST_CASE("all-equal keys give uniform attention weights") {
    ParamStore<float> store(60);
    MhaParams<float> p = MhaParams<float>::init(8, 4, store, "mha");
    TensorF q = randn_f({2, 8}, 61);
    TensorF row = randn_f({1, 8}, 62);
    TensorF kv({4, 8});
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t j = 0; j < 8; ++j) kv.at(r, j) = row.at(0, j);

    AttnProbe<float> probe;
    mha(q, kv, p, &probe);
    for (const auto& w : probe.weights) {
        for (std::size_t i = 0; i < w.numel(); ++i) CHECK(w.data()[i] == doctest::Approx(0.25).epsilon(1e-5));
    }
}

TEST_CASE("mha rejects a head count that does not divide the dim") {
    ParamStore<float> store(70);
    CHECK_THROWS_AS(MhaParams<float>::init(10, 4, store, "mha"), ShapeError);
}

TEST_CASE("co block with zeroed output projections reduces to stacked layer norms") {
    ParamStore<float> store(80);
    CoBlock<float> block = CoBlock<float>::init(8, 2, store, "co");
    // Zero every output projection and the MLP second layer: all residual
    // branches vanish, so the block is LN(LN(LN(x))) per stream and the
    // streams cannot mix.
    for (auto& entry : store) {
        if (entry.name.find(".wo") != std::string::npos ||
            entry.name.find(".bo") != std::string::npos ||
            entry.name.find(".mlp.fc2") != std::string::npos) {
            std::fill(entry.tensor.values().begin(), entry.tensor.values().end(), 0.0f);
        }
    }
    TensorF v = randn_f({3, 8}, 81);
    TensorF t = randn_f({3, 8}, 82);
    auto [v_out, t_out] = block.forward(v, t, nullptr);

    auto triple_ln = [&store](const TensorF& x, const std::string& stream) {
        auto ln = [&store, &stream](const TensorF& in, const std::string& which) {
            TensorF gamma = *store.find("co." + stream + ".ln_" + which + ".gamma");
            TensorF beta = *store.find("co." + stream + ".ln_" + which + ".beta");
            return layer_norm(in, gamma, beta, 1e-5f);
        };
        return ln(ln(ln(x, "self"), "cross"), "mlp");
    };
    TensorF expect_v = triple_ln(v, "v");
    for (std::size_t i = 0; i < expect_v.numel(); ++i) {
        CHECK(std::abs(v_out.data()[i] - expect_v.data()[i]) < 1e-5);
    }

    // Changing T must not change V' in this configuration.
    TensorF t2 = randn_f({3, 8}, 83);
    auto [v_out2, t_out2] = block.forward(v, t2, nullptr);
    for (std::size_t i = 0; i < v_out.numel(); ++i) CHECK(v_out.data()[i] == v_out2.data()[i]);
}

TEST_CASE("co block with tied stream parameters swaps outputs when inputs swap") {
    ParamStore<float> store(90);
    CoBlock<float> block = CoBlock<float>::init(8, 2, store, "co");
    // Tie: copy every v-stream parameter into the t-stream twin.
    for (auto& entry : store) {
        const auto pos = entry.name.find(".v.");
        if (pos == std::string::npos) continue;
        std::string twin = entry.name;
        twin.replace(pos, 3, ".t.");
        TensorF* other = store.find(twin);
        REQUIRE(other != nullptr);
        other->values() = entry.tensor.values();
    }
    TensorF a = randn_f({3, 8}, 91);
    TensorF b = randn_f({3, 8}, 92);
    auto [v1, t1] = block.forward(a, b, nullptr);
    auto [v2, t2] = block.forward(b, a, nullptr);
    for (std::size_t i = 0; i < v1.numel(); ++i) {
        CHECK(v1.data()[i] == doctest::Approx(t2.data()[i]).epsilon(1e-6));
        CHECK(t1.data()[i] == doctest::Approx(v2.data()[i]).epsilon(1e-6));
    }
}

TEST_CASE("co block streams interact: gradient of V' w.r.t. T input is nonzero") {
    ParamStore<float> store(95);
    CoBlock<float> block = CoBlock<float>::init(8, 2, store, "co");
    TensorF v = randn_f({3, 8}, 96);
    TensorF t = randn_f({3, 8}, 97);
    TensorF weights = randn_f({3, 8}, 98);  // plain sum(LN(x)) is constant; weight the readout
    t.set_requires_grad(true);
    GraphF g;
    GraphF::Scope scope(g);
    auto [v_out, t_out] = block.forward(v, t, nullptr);
    TensorF loss = sum(mul(v_out, weights));
    g.backward(loss);
    REQUIRE(t.has_grad());
    double norm = 0;
    for (float gv : t.grad_view()) norm += std::abs(gv);
    CHECK(norm > 1e-6);
}

TEST_CASE("aggregate: depth 0 is the identity for attention kinds") {
    for (AggregatorKind kind : {AggregatorKind::co, AggregatorKind::merged, AggregatorKind::cross,
                                AggregatorKind::vision_self}) {
        AggregatorConfig cfg = AggregatorConfig::defaults_for(kind);
        cfg.depth = 0;
        ParamStore<float> store(101);
        Aggregator<float> agg(cfg, 8, store);
        TensorF v = randn_f({3, 8}, 102);
        TensorF t = randn_f({3, 8}, 103);
        auto [v_out, t_out] = agg.forward(v, t);
        CHECK(v_out.values() == v.values());
        CHECK(t_out.values() == t.values());
    }
}

TEST_CASE("merged aggregation runs attention over 2N concatenated tokens") {
    AggregatorConfig cfg = AggregatorConfig::defaults_for(AggregatorKind::merged);
    cfg.depth = 1;
    ParamStore<float> store(110);
    Aggregator<float> agg(cfg, 8, store);
    TensorF v = randn_f({3, 8}, 111);
    TensorF t = randn_f({3, 8}, 112);
    AttnProbe<float> probe;
    auto [v_out, t_out] = agg.forward(v, t, &probe);
    CHECK(v_out.shape() == Shape{3, 8});
    CHECK(t_out.shape() == Shape{3, 8});
    REQUIRE(!probe.weights.empty());
    for (const auto& w : probe.weights) CHECK(w.shape() == Shape{6, 6});  // 2N pre-split
}

TEST_CASE("co aggregation with k=3 equals three manual block applications") {
    AggregatorConfig cfg = AggregatorConfig::defaults_for(AggregatorKind::co);
    ParamStore<float> store(120);
    Aggregator<float> agg(cfg, 8, store);

    // A twin parameter store with identical seed builds identical blocks.
    ParamStore<float> store2(120);
    std::vector<CoBlock<float>> blocks;
    for (std::size_t i = 0; i < 3; ++i) {
        blocks.push_back(CoBlock<float>::init(8, cfg.heads, store2, "fusion.block" + std::to_string(i)));
    }

    TensorF v = randn_f({4, 8}, 121);
    TensorF t = randn_f({4, 8}, 122);
    auto [v_agg, t_agg] = agg.forward(v, t);
    TensorF v_manual = v, t_manual = t;
    for (const auto& block : blocks) {
        auto [v2, t2] = block.forward(v_manual, t_manual, nullptr);
        v_manual = v2;
        t_manual = t2;
    }
    for (std::size_t i = 0; i < v_agg.numel(); ++i) {
        CHECK(std::abs(v_agg.data()[i] - v_manual.data()[i]) < 1e-6);
        CHECK(std::abs(t_agg.data()[i] - t_manual.data()[i]) < 1e-6);
    }
}

TEST_CASE("attention probe on a kind without attention is a contract error") {
    for (AggregatorKind kind : {AggregatorKind::naive_mlp, AggregatorKind::vision_none}) {
        ParamStore<float> store(130);
        Aggregator<float> agg(AggregatorConfig::defaults_for(kind), 8, store);
        TensorF v = randn_f({3, 8}, 131);
        TensorF t = randn_f({3, 8}, 132);
        AttnProbe<float> probe;
        CHECK_THROWS_AS(agg.forward(v, t, &probe), ValueError);
        CHECK_NOTHROW(agg.forward(v, t));
    }
}

TEST_CASE("classifier: pooled-permutation invariance and finite bias path") {
    ParamStore<float> store(140);
    Classifier<float> clf(AggregatorKind::co, 8, Pooling::max, store);
    TensorF v = randn_f({5, 8}, 141);
    TensorF t = randn_f({5, 8}, 142);
    const float base = clf.forward(v, t).item();

    TensorF v_perm = v.clone(), t_perm = t.clone();
    for (std::size_t j = 0; j < 8; ++j) {
        std::swap(v_perm.at(0, j), v_perm.at(4, j));
        std::swap(t_perm.at(1, j), t_perm.at(3, j));
    }
    CHECK(clf.forward(v_perm, t_perm).item() == base);  // max pooling: bitwise equal

    TensorF zeros_v({2, 8});
    TensorF zeros_t({2, 8});
    const float bias_path = clf.forward(zeros_v, zeros_t).item();
    CHECK(std::isfinite(bias_path));
}

TEST_CASE("classifier zero-text neutrality for naive_mlp") {
    ParamStore<float> store(150);
    Classifier<float> clf(AggregatorKind::naive_mlp, 8, Pooling::max, store);
    TensorF v = randn_f({4, 8}, 151);
    TensorF t = randn_f({4, 8}, 152);

    ClassifyProbe<float> probe_a, probe_b;
    clf.forward(v, t, &probe_a);
    TensorF t_zero({4, 8});
    clf.forward(v, t_zero, &probe_b);
    REQUIRE(probe_a.pooled_concat.shape() == Shape{1, 16});
    for (std::size_t j = 0; j < 8; ++j) {
        CHECK(probe_a.pooled_concat.at(0, j) == probe_b.pooled_concat.at(0, j));  // vision half intact
    }
    bool text_half_changed = false;
    for (std::size_t j = 8; j < 16; ++j) {
        text_half_changed = text_half_changed ||
                            probe_a.pooled_concat.at(0, j) != probe_b.pooled_concat.at(0, j);
    }
    CHECK(text_half_changed);
}

TEST_CASE("classifier for vision-only kinds consumes width C") {
    ParamStore<float> store(160);
    Classifier<float> clf(AggregatorKind::vision_self, 8, Pooling::mean, store);
    TensorF v = randn_f({4, 8}, 161);
    TensorF t({1, 8});
    ClassifyProbe<float> probe;
    clf.forward(v, t, &probe);
    CHECK(probe.pooled_concat.shape() == Shape{1, 8});
}
