#include "mmfusion/verify.hpp"

#include <algorithm>
#include <cmath>

#include "mmfusion/data_synth.hpp"
#include "mmfusion/grad_check.hpp"
#include "mmfusion/metrics.hpp"
#include "mmfusion/model.hpp"

namespace mmf {

namespace {

TensorD randn_d(Shape shape, Rng& rng, double sd = 1.0) {
    return TensorD::randn(std::move(shape), rng, sd);
}

CheckResult check(const std::string& name, double measured, double tolerance) {
    return {name, measured, tolerance, measured < tolerance};
}

// A small full-pipeline config: 16x16 image, 8-token text, co-attention.
RunConfig tiny_model_config(std::uint64_t seed) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.vision_channels = {2, 4, 8, 16};
    cfg.d_text = 8;
    cfg.l_text = 8;
    cfg.l_max = 16;
    cfg.n_tokens = 4;
    cfg.aggregator = AggregatorKind::co;
    cfg.synth.image_size = 16;
    return cfg;
}

MetadataRecord sample_record() {
    MetadataRecord r;
    r.age = 57;
    r.nationality = "danish";
    r.device_manufacturer = "hologic";
    r.device_model = "selenia";
    r.institution = "oslo";
    r.exam_year = 2019;
    r.breast_density = 'C';
    r.birads = 2;
    return r;
}

}  // namespace

std::vector<CheckResult> verify_gradients() {
    std::vector<CheckResult> results;
    const double tol = 1e-4;
    const double eps = 1e-5;
    Rng rng = Rng::keyed(20240901, "verify_grad");

    {
        TensorD b = randn_d({3, 4}, rng);
        results.push_back(check("grad/matmul_lhs",
                                grad_check([&b](const TensorD& x) { return sum(matmul(x, b)); },
                                           randn_d({2, 3}, rng), eps),
                                tol));
        TensorD a = randn_d({2, 3}, rng);
        results.push_back(check("grad/matmul_rhs",
                                grad_check([&a](const TensorD& x) { return sum(matmul(a, x)); },
                                           randn_d({3, 4}, rng), eps),
                                tol));
    }
    {
        TensorD m = randn_d({3, 5}, rng);
        results.push_back(check("grad/softmax",
                                grad_check([&m](const TensorD& x) { return sum(mul(softmax(x), m)); },
                                           randn_d({3, 5}, rng), eps),
                                tol));
    }
    {
        TensorD gamma = randn_d({6}, rng, 0.5);
        TensorD beta = randn_d({6}, rng, 0.5);
        TensorD m = randn_d({4, 6}, rng);
        results.push_back(check(
            "grad/layer_norm_x",
            grad_check([&](const TensorD& x) { return sum(mul(layer_norm(x, gamma, beta, 1e-5), m)); },
                       randn_d({4, 6}, rng), eps),
            tol));
        TensorD x0 = randn_d({4, 6}, rng);
        results.push_back(check(
            "grad/layer_norm_gamma",
            grad_check([&](const TensorD& g) { return sum(mul(layer_norm(x0, g, beta, 1e-5), m)); },
                       randn_d({6}, rng), eps),
            tol));
    }
    results.push_back(check("grad/gelu",
                            grad_check([](const TensorD& x) { return sum(gelu(x)); },
                                       randn_d({3, 7}, rng), eps),
                            tol));
    {
        TensorD w = randn_d({3, 2, 3, 3}, rng, 0.4);
        results.push_back(check("grad/conv2d_input",
                                grad_check([&w](const TensorD& x) { return sum(conv2d(x, w, 1, 1)); },
                                           randn_d({2, 5, 6}, rng), eps),
                                tol));
        TensorD x0 = randn_d({2, 5, 6}, rng);
        results.push_back(check("grad/conv2d_weights",
                                grad_check([&x0](const TensorD& w2) { return sum(conv2d(x0, w2, 2, 1)); },
                                           randn_d({3, 2, 3, 3}, rng, 0.4), eps),
                                tol));
    }
    {
        TensorD m = randn_d({2, 2, 2}, rng);
        results.push_back(check("grad/max_pool2d",
                                grad_check([&m](const TensorD& x) { return sum(mul(max_pool2d(x, 2, 2), m)); },
                                           randn_d({2, 4, 4}, rng), eps),
                                tol));
    }
    {
        TensorD m = randn_d({3, 4}, rng);
        results.push_back(
            check("grad/adaptive_avg_pool_tokens",
                  grad_check([&m](const TensorD& x) { return sum(mul(adaptive_avg_pool_tokens(x, 3), m)); },
                             randn_d({7, 4}, rng), eps),
                  tol));
    }
    {
        TensorD m = randn_d({5}, rng);
        results.push_back(check("grad/max_pool_tokens",
                                grad_check([&m](const TensorD& x) { return sum(mul(max_pool_tokens(x), m)); },
                                           randn_d({6, 5}, rng), eps),
                                tol));
        results.push_back(check("grad/mean_pool_tokens",
                                grad_check([&m](const TensorD& x) { return sum(mul(mean_pool_tokens(x), m)); },
                                           randn_d({6, 5}, rng), eps),
                                tol));
    }
    results.push_back(check("grad/bce_with_logits",
                            grad_check([](const TensorD& x) { return bce_with_logits(x, 1); },
                                       randn_d({1}, rng), eps),
                            tol));
    {
        ParamStore<double> store(7);
        MhaParams<double> p = MhaParams<double>::init(8, 2, store, "mha");
        TensorD kv = randn_d({3, 8}, rng);
        results.push_back(check("grad/mha_query",
                                grad_check([&](const TensorD& q) { return sum(mha(q, kv, p)); },
                                           randn_d({4, 8}, rng), eps),
                                tol));
        TensorD q0 = randn_d({4, 8}, rng);
        results.push_back(check("grad/mha_keyvalue",
                                grad_check([&](const TensorD& kv2) { return sum(mha(q0, kv2, p)); },
                                           randn_d({3, 8}, rng), eps),
                                tol));
    }
    {
        ParamStore<double> store(11);
        CoBlock<double> block = CoBlock<double>::init(8, 2, store, "co");
        TensorD t_in = randn_d({4, 8}, rng);
        // Weighted readout: an unweighted sum of a layer-norm output is
        // constant (rows have fixed mean), so its true gradient is zero.
        TensorD wv = randn_d({4, 8}, rng);
        TensorD wt = randn_d({4, 8}, rng);
        results.push_back(check("grad/co_attention_block",
                                grad_check(
                                    [&](const TensorD& v) {
                                        auto [v2, t2] = block.forward(v, t_in, nullptr);
                                        return add(sum(mul(v2, wv)), sum(mul(t2, wt)));
                                    },
                                    randn_d({4, 8}, rng), eps),
                                tol));
        // The text stream must influence the visual output (stream interaction).
        TensorD v_in = randn_d({4, 8}, rng);
        results.push_back(check("grad/co_block_cross_stream",
                                grad_check(
                                    [&](const TensorD& t) {
                                        auto [v2, t2] = block.forward(v_in, t, nullptr);
                                        return sum(mul(v2, wv));
                                    },
                                    randn_d({4, 8}, rng), eps),
                                tol));
    }
    {
        // Full pipeline: gradient of BCE(logit) w.r.t. the 16x16 input image.
        // The head bias puts the model at a confidently-correct point: the
        // loss magnitude, and with it the finite-difference noise floor on
        // near-dead (max-pooled-away) pixels, shrinks by ~sigma(-logit),
        // while relative agreement is still checked on every coordinate.
        RunConfig cfg = tiny_model_config(31);
        Model<double> model(cfg);
        model.params().find("classifier.head.b")->values() = {6.0};
        EncodedText text = model.encode_record(sample_record());
        TensorD image({1, 16, 16});
        Rng irng = Rng::keyed(99, "verify_image");
        for (auto& v : image.values()) v = irng.uniform(0.05, 0.95);
        results.push_back(check("grad/full_co_attention_model",
                                grad_check(
                                    [&](const TensorD& img) {
                                        return bce_with_logits(model.forward(img, text), 1);
                                    },
                                    image, eps),
                                tol));
    }
    return results;
}

std::vector<CheckResult> verify_attention_normalization(std::size_t forwards) {
    std::vector<CheckResult> results;
    double worst = 0.0;
    const AggregatorKind kinds[] = {AggregatorKind::co, AggregatorKind::merged, AggregatorKind::cross,
                                    AggregatorKind::vision_self};
    for (std::size_t i = 0; i < forwards; ++i) {
        const AggregatorKind kind = kinds[i % 4];
        ParamStore<float> store(1000 + i);
        AggregatorConfig acfg = AggregatorConfig::defaults_for(kind);
        acfg.depth = 2;
        Aggregator<float> agg(acfg, 16, store);
        Rng rng = Rng::keyed(500 + i, "attn_inputs");
        TensorF v = TensorF::randn({6, 16}, rng);
        TensorF t = TensorF::randn({6, 16}, rng);
        AttnProbe<float> probe;
        agg.forward(v, t, &probe);
        for (const auto& w : probe.weights) {
            const std::size_t cols = w.extent(1);
            for (std::size_t r = 0; r < w.extent(0); ++r) {
                double s = 0.0;
                for (std::size_t c = 0; c < cols; ++c) s += static_cast<double>(w.at(r, c));
                if (!std::isfinite(s)) s = 1e9;
                worst = std::max(worst, std::abs(s - 1.0));
            }
        }
    }
    results.push_back(check("attention/row_sums", worst, 1e-6));

    // Stability stress: magnitudes past the f32 exp overflow threshold must
    // still produce normalized, finite rows.
    double worst_stress = 0.0;
    Rng rng = Rng::keyed(77, "softmax_stress");
    for (int i = 0; i < 200; ++i) {
        TensorF x({4, 8});
        for (auto& v : x.values()) v = static_cast<float>(rng.uniform(-100.0, 100.0));
        TensorF s = softmax(x);
        for (std::size_t r = 0; r < 4; ++r) {
            double total = 0.0;
            for (std::size_t c = 0; c < 8; ++c) {
                const double v = static_cast<double>(s.at(r, c));
                if (!std::isfinite(v)) total = 1e9;
                else total += v;
            }
            worst_stress = std::max(worst_stress, std::abs(total - 1.0));
        }
    }
    results.push_back(check("attention/softmax_stability_stress", worst_stress, 1e-6));
    return results;
}

std::vector<CheckResult> verify_permutation_invariance(std::size_t cases) {
    double worst = 0.0;
    for (std::size_t i = 0; i < cases; ++i) {
        RunConfig cfg = tiny_model_config(2000 + i);
        cfg.n_tokens = 6;
        Model<float> model(cfg);
        EncodedText text = model.encode_record(sample_record());

        Rng rng = Rng::keyed(3000 + i, "perm_case");
        TensorF image({1, 16, 16});
        for (auto& v : image.values()) v = static_cast<float>(rng.uniform(0.0, 1.0));

        std::vector<std::size_t> perm_v(cfg.n_tokens), perm_t(cfg.n_tokens);
        for (std::size_t k = 0; k < cfg.n_tokens; ++k) perm_v[k] = perm_t[k] = k;
        for (std::size_t k = cfg.n_tokens; k > 1; --k) {
            std::swap(perm_v[k - 1], perm_v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(k) - 1))]);
            std::swap(perm_t[k - 1], perm_t[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(k) - 1))]);
        }

        const float base = model.forward(image, text).item();
        ForwardHooks<float> hooks;
        hooks.permute_visual = &perm_v;
        hooks.permute_text = &perm_t;
        const float permuted = model.forward(image, text, hooks).item();
        worst = std::max(worst, static_cast<double>(std::abs(base - permuted)));
    }
    return {check("permutation/logit_invariance", worst, 1e-5)};
}

std::vector<CheckResult> verify_auc_oracles(std::size_t instances) {
    double worst = 0.0;
    Rng rng = Rng::keyed(4242, "auc_fuzz");
    for (std::size_t i = 0; i < instances; ++i) {
        const int n = rng.uniform_int(2, 200);
        std::vector<double> scores;
        std::vector<int> labels;
        const int quant = rng.uniform_int(1, 12);  // coarse scores force ties
        bool has0 = false, has1 = false;
        for (int k = 0; k < n; ++k) {
            scores.push_back(std::floor(rng.uniform() * quant) / quant);
            const int y = rng.uniform() < 0.4 ? 1 : 0;
            labels.push_back(y);
            (y ? has1 : has0) = true;
        }
        if (!has0) labels[0] = 0;
        if (!has1) labels[labels.size() - 1] = 1;
        worst = std::max(worst, std::abs(auc(scores, labels) - auc_trapezoid(scores, labels)));
    }
    return {check("auc/pair_counting_vs_trapezoid", worst, 1e-9)};
}

std::vector<CheckResult> verify_preprocess_idempotence(std::size_t samples) {
    SynthConfig cfg;
    cfg.image_size = 64;
    double worst = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
        const Task task = i % 2 == 0 ? Task::malignancy : Task::calcification;
        Sample s = draw_sample(cfg, task, 555, i);
        auto once = preprocess(s.image, 64, 64, 64, 64);
        auto twice = preprocess(once, 64, 64, 64, 64);
        for (std::size_t k = 0; k < once.size(); ++k) {
            worst = std::max(worst, static_cast<double>(std::abs(once[k] - twice[k])));
        }
    }
    return {check("preprocess/idempotence", worst, 1e-6)};
}

std::vector<CheckResult> run_all_verifications() {
    std::vector<CheckResult> all;
    for (auto&& group : {verify_gradients(), verify_attention_normalization(100),
                         verify_permutation_invariance(50), verify_auc_oracles(1000),
                         verify_preprocess_idempotence(50)}) {
        all.insert(all.end(), group.begin(), group.end());
    }
    return all;
}

}  // namespace mmf
