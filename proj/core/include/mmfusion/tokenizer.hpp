#pragma once

#include <string>

#include "mmfusion/ops.hpp"
#include "mmfusion/params.hpp"

namespace mmf {

enum class TokenizerVariant { feature_map, embedding_linear, embedding_mlp };

inline const char* to_string(TokenizerVariant v) {
    switch (v) {
        case TokenizerVariant::feature_map: return "feature_map";
        case TokenizerVariant::embedding_linear: return "embedding_linear";
        case TokenizerVariant::embedding_mlp: return "embedding_mlp";
    }
    return "?";
}

struct TokenizerConfig {
    std::size_t n_tokens = 256;
    std::size_t channel_dim = 128;  // must match the feature-map channel count
    TokenizerVariant variant = TokenizerVariant::feature_map;
    std::size_t embed_mlp_hidden = 256;  // hidden width of the embedding_mlp variant
};

// Maps the vision feature map into N tokens of width C.
//
// feature_map variant: reshape [C x H' x W'] to (H'W') x C, then one
// trainable (N x H'W') projection along the token axis, shared across
// channels. Applied even when H'W' == N.
//
// embedding variants: global-average-pool the feature map to a single
// C-vector, then expand to N x C with a linear map (or a 2-layer GELU MLP).
template <typename S>
class VisualTokenizer {
public:
    VisualTokenizer(const TokenizerConfig& cfg, std::size_t spatial_len, ParamStore<S>& store,
                    const std::string& prefix = "tokenizer.visual")
        : cfg_(cfg), spatial_len_(spatial_len) {
        if (cfg.n_tokens < 1) throw ValueError("tokenizer: n_tokens must be >= 1");
        const std::size_t c = cfg.channel_dim;
        const std::size_t n = cfg.n_tokens;
        switch (cfg.variant) {
            case TokenizerVariant::feature_map:
                token_proj_ = store.add_xavier(prefix + ".token_proj", {n, spatial_len}, spatial_len, n);
                break;
            case TokenizerVariant::embedding_linear:
                w1_ = store.add_xavier(prefix + ".expand.w", {c, n * c}, c, n * c);
                b1_ = store.add_zeros(prefix + ".expand.b", {n * c});
                break;
            case TokenizerVariant::embedding_mlp: {
                const std::size_t h = cfg.embed_mlp_hidden;
                w1_ = store.add_xavier(prefix + ".fc1.w", {c, h}, c, h);
                b1_ = store.add_zeros(prefix + ".fc1.b", {h});
                w2_ = store.add_xavier(prefix + ".fc2.w", {h, n * c}, h, n * c);
                b2_ = store.add_zeros(prefix + ".fc2.b", {n * c});
                break;
            }
        }
    }

    // Feature-map path. Rejects embedding variants.
    Tensor<S> visual_tokens(const Tensor<S>& f) const {
        if (cfg_.variant != TokenizerVariant::feature_map) {
            throw ValueError(std::string("visual_tokens: configured variant is ") + to_string(cfg_.variant));
        }
        check_feature_map(f);
        const std::size_t c = f.extent(0), hw = f.extent(1) * f.extent(2);
        Tensor<S> spatial = transpose2d(reshape(f, {c, hw}));  // [HW x C]
        return matmul(token_proj_, spatial);                   // [N x C]
    }

    // Embedding path: consumes the global-average-pooled feature map.
    // Rejects the feature_map variant.
    Tensor<S> embedding_tokens(const Tensor<S>& f) const {
        if (cfg_.variant == TokenizerVariant::feature_map) {
            throw ValueError("embedding_tokens: configured variant is feature_map");
        }
        check_feature_map(f);
        const std::size_t c = f.extent(0), hw = f.extent(1) * f.extent(2);
        Tensor<S> pooled = mean_pool_tokens(transpose2d(reshape(f, {c, hw})));  // [C]
        Tensor<S> e = reshape(pooled, {1, c});
        Tensor<S> flat;
        if (cfg_.variant == TokenizerVariant::embedding_linear) {
            flat = add_row_bias(matmul(e, w1_), b1_);
        } else {
            Tensor<S> h = gelu(add_row_bias(matmul(e, w1_), b1_));
            flat = add_row_bias(matmul(h, w2_), b2_);
        }
        return reshape(flat, {cfg_.n_tokens, cfg_.channel_dim});
    }

    Tensor<S> forward(const Tensor<S>& feature_map) const {
        return cfg_.variant == TokenizerVariant::feature_map ? visual_tokens(feature_map)
                                                             : embedding_tokens(feature_map);
    }

    const TokenizerConfig& config() const { return cfg_; }

private:
    void check_feature_map(const Tensor<S>& f) const {
        if (f.ndim() != 3 || f.extent(0) != cfg_.channel_dim) {
            throw ShapeError("tokenizer: feature map " + shape_str(f.shape()) + " does not match C=" +
                             std::to_string(cfg_.channel_dim));
        }
        if (cfg_.variant == TokenizerVariant::feature_map && f.extent(1) * f.extent(2) != spatial_len_) {
            throw ShapeError("tokenizer: feature map " + shape_str(f.shape()) +
                             " does not match configured spatial length " + std::to_string(spatial_len_));
        }
    }

    TokenizerConfig cfg_;
    std::size_t spatial_len_;
    Tensor<S> token_proj_;
    Tensor<S> w1_, b1_, w2_, b2_;
};

// Projects text token embeddings [L x d_text] into the shared token space
// [N x C]. Channel projection first (d_text -> C per token), then the token
// count is matched: adaptive average pooling when down-sampling (L > N, no
// trainable token-axis parameters), a trainable (N x L) projection when
// up-sampling (L < N), nothing when L == N.
template <typename S>
class TextTokenizer {
public:
    TextTokenizer(const TokenizerConfig& cfg, std::size_t d_text, std::size_t text_len,
                  ParamStore<S>& store, const std::string& prefix = "tokenizer.text")
        : cfg_(cfg), d_text_(d_text), text_len_(text_len) {
        const std::size_t c = cfg.channel_dim;
        channel_proj_ = store.add_xavier(prefix + ".channel_proj.w", {d_text, c}, d_text, c);
        channel_bias_ = store.add_zeros(prefix + ".channel_proj.b", {c});
        if (text_len < cfg.n_tokens) {
            up_proj_ = store.add_xavier(prefix + ".up_proj", {cfg.n_tokens, text_len}, text_len, cfg.n_tokens);
            has_up_proj_ = true;
        }
    }

    Tensor<S> forward(const Tensor<S>& text_tokens) const {
        if (text_tokens.ndim() != 2 || text_tokens.extent(0) != text_len_ ||
            text_tokens.extent(1) != d_text_) {
            throw ShapeError("text_tokens: input " + shape_str(text_tokens.shape()) +
                             " does not match configured [" + std::to_string(text_len_) + "x" +
                             std::to_string(d_text_) + "]");
        }
        Tensor<S> x = add_row_bias(matmul(text_tokens, channel_proj_), channel_bias_);  // [L x C]
        const std::size_t n = cfg_.n_tokens;
        if (text_len_ > n) return adaptive_avg_pool_tokens(x, n);
        if (text_len_ < n) return matmul(up_proj_, x);
        return x;
    }

    bool has_token_axis_params() const { return has_up_proj_; }

private:
    TokenizerConfig cfg_;
    std::size_t d_text_;
    std::size_t text_len_;
    Tensor<S> channel_proj_;
    Tensor<S> channel_bias_;
    Tensor<S> up_proj_;
    bool has_up_proj_ = false;
};

}  // namespace mmf
