#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmfusion/ops.hpp"
#include "mmfusion/params.hpp"

namespace mmf {

// ---------------------------------------------------------------------------
// Text branch: frozen per-token embeddings plus a fixed sinusoidal
// positional table. Stands in for a frozen pretrained language model; the
// preserved contract is that the table never receives gradient and is fully
// determined by (seed, V, d_text).
// ---------------------------------------------------------------------------

template <typename S>
struct TextEncoderParams {
    Tensor<S> embedding;   // [V x d_text], frozen
    Tensor<S> positional;  // [L_max x d_text], fixed

    // The positional table is scaled to the embedding sd so word content and
    // position contribute at the same order; an O(1) positional signal on
    // frozen sigma=0.02 embeddings would reduce the content to a 2%
    // perturbation of a sample-independent constant.
    static TextEncoderParams init(std::size_t vocab_size, std::size_t d_text, std::size_t l_max,
                                  std::uint64_t seed, double embedding_sd = 0.02) {
        TextEncoderParams p;
        Rng rng = Rng::keyed(seed, "text_embedding");
        p.embedding = Tensor<S>::randn({vocab_size, d_text}, rng, embedding_sd);
        p.positional = Tensor<S>({l_max, d_text});
        for (std::size_t pos = 0; pos < l_max; ++pos) {
            for (std::size_t i = 0; i < d_text; ++i) {
                const double angle =
                    static_cast<double>(pos) /
                    std::pow(10000.0, 2.0 * static_cast<double>(i / 2) / static_cast<double>(d_text));
                p.positional.data()[pos * d_text + i] = static_cast<S>(
                    embedding_sd * ((i % 2 == 0) ? std::sin(angle) : std::cos(angle)));
            }
        }
        return p;
    }
};

template <typename S>
struct TextEncoding {
    Tensor<S> tokens;             // [L x d_text]
    std::vector<std::uint8_t> valid;  // per-position validity (0 for PAD slots)
};

// Embedding lookup + positional addition. PAD positions are emitted like any
// other token but flagged invalid in the mask; downstream ops deliberately do
// not mask them.
template <typename S>
TextEncoding<S> text_encode(const std::vector<int>& ids, std::size_t true_length,
                            const TextEncoderParams<S>& params) {
    const std::size_t l = ids.size();
    const std::size_t v = params.embedding.extent(0);
    const std::size_t d = params.embedding.extent(1);
    if (l > params.positional.extent(0)) {
        throw ShapeError("text_encode: sequence length " + std::to_string(l) +
                         " exceeds positional table " + shape_str(params.positional.shape()));
    }
    TextEncoding<S> out;
    out.tokens = Tensor<S>({l, d});
    out.valid.assign(l, 0);
    for (std::size_t pos = 0; pos < l; ++pos) {
        const int id = ids[pos];
        if (id < 0 || static_cast<std::size_t>(id) >= v) {
            throw ValueError("text_encode: token id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(v));
        }
        const S* emb = params.embedding.data() + static_cast<std::size_t>(id) * d;
        const S* pe = params.positional.data() + pos * d;
        S* row = out.tokens.data() + pos * d;
        for (std::size_t i = 0; i < d; ++i) row[i] = emb[i] + pe[i];
        out.valid[pos] = pos < true_length ? 1 : 0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Vision branch: small trainable ConvNet producing a spatial feature map.
// Four stages of 3x3 conv -> channel-wise layer norm -> GELU -> 2x2 max
// pool, halving each spatial dimension per stage. Channel-wise layer norm
// (normalizing the channel vector at each spatial position) keeps
// single-sample inference batch-independent.
// ---------------------------------------------------------------------------

struct VisionConfig {
    std::vector<std::size_t> channels = {16, 32, 64, 128};
    std::size_t in_channels = 1;
    std::size_t kernel = 3;
};

template <typename S>
class VisionEncoder {
public:
    VisionEncoder(const VisionConfig& cfg, ParamStore<S>& store, const std::string& prefix = "vision")
        : cfg_(cfg) {
        std::size_t cin = cfg.in_channels;
        for (std::size_t s = 0; s < cfg.channels.size(); ++s) {
            const std::size_t cout = cfg.channels[s];
            const std::string base = prefix + ".stage" + std::to_string(s);
            Stage stage;
            const std::size_t k = cfg.kernel;
            stage.w = store.add_xavier(base + ".conv.w", {cout, cin, k, k}, cin * k * k, cout * k * k);
            stage.b = store.add_zeros(base + ".conv.b", {cout});
            stage.gamma = store.add_full(base + ".norm.gamma", {cout}, S(1));
            stage.beta = store.add_zeros(base + ".norm.beta", {cout});
            stages_.push_back(stage);
            cin = cout;
        }
    }

    std::size_t out_channels() const { return cfg_.channels.back(); }
    std::size_t downsample_factor() const { return std::size_t(1) << stages_.size(); }

    // image [1 x H x W] with H, W divisible by 2^stages -> [C x H/f x W/f].
    Tensor<S> forward(const Tensor<S>& image) const {
        if (image.ndim() != 3 || image.extent(0) != cfg_.in_channels) {
            throw ShapeError("vision_encode: expected " + std::to_string(cfg_.in_channels) +
                             "xHxW image, got " + shape_str(image.shape()));
        }
        const std::size_t f = downsample_factor();
        if (image.extent(1) % f != 0 || image.extent(2) % f != 0) {
            throw ShapeError("vision_encode: spatial dims of " + shape_str(image.shape()) +
                             " not divisible by " + std::to_string(f));
        }
        Tensor<S> x = image;
        for (const auto& stage : stages_) {
            x = conv2d(x, stage.w, 1, cfg_.kernel / 2);
            x = add_channel_bias(x, stage.b);
            x = channel_layer_norm(x, stage.gamma, stage.beta);
            x = gelu(x);
            x = max_pool2d(x, 2, 2);
        }
        return x;
    }

private:
    struct Stage {
        Tensor<S> w;
        Tensor<S> b;
        Tensor<S> gamma;
        Tensor<S> beta;
    };

    // Layer norm across the channel axis at each spatial position.
    static Tensor<S> channel_layer_norm(const Tensor<S>& x, const Tensor<S>& gamma,
                                        const Tensor<S>& beta) {
        const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
        Tensor<S> flat = reshape(x, {c, h * w});
        Tensor<S> pos_major = transpose2d(flat);  // [HW x C]
        Tensor<S> normed = layer_norm(pos_major, gamma, beta, S(1e-5));
        return reshape(transpose2d(normed), {c, h, w});
    }

    VisionConfig cfg_;
    std::vector<Stage> stages_;
};

}  // namespace mmf
