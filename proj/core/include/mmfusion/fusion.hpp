#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mmfusion/ops.hpp"
#include "mmfusion/params.hpp"

namespace mmf {

enum class AggregatorKind { co, merged, cross, naive_mlp, vision_self, vision_none };
enum class Pooling { max, mean };

inline const char* to_string(AggregatorKind k) {
    switch (k) {
        case AggregatorKind::co: return "co";
        case AggregatorKind::merged: return "merged";
        case AggregatorKind::cross: return "cross";
        case AggregatorKind::naive_mlp: return "naive_mlp";
        case AggregatorKind::vision_self: return "vision_self";
        case AggregatorKind::vision_none: return "vision_none";
    }
    return "?";
}

inline const char* to_string(Pooling p) { return p == Pooling::max ? "max" : "mean"; }

inline bool uses_text(AggregatorKind k) {
    return k == AggregatorKind::co || k == AggregatorKind::merged || k == AggregatorKind::cross ||
           k == AggregatorKind::naive_mlp;
}

inline bool has_attention(AggregatorKind k) {
    return k == AggregatorKind::co || k == AggregatorKind::merged || k == AggregatorKind::cross ||
           k == AggregatorKind::vision_self;
}

struct AggregatorConfig {
    AggregatorKind kind = AggregatorKind::co;
    std::size_t depth = 3;   // k consecutive blocks
    std::size_t heads = 4;
    Pooling pooling = Pooling::max;

    // Block counts and head counts used in the baseline comparison: the
    // vision-only transformer uses 8 heads and 4 blocks; merged-attention
    // uses 4 blocks and cross-attention 3.
    static AggregatorConfig defaults_for(AggregatorKind kind) {
        AggregatorConfig cfg;
        cfg.kind = kind;
        switch (kind) {
            case AggregatorKind::co: cfg.depth = 3; cfg.heads = 4; break;
            case AggregatorKind::merged: cfg.depth = 4; cfg.heads = 4; break;
            case AggregatorKind::cross: cfg.depth = 3; cfg.heads = 4; break;
            case AggregatorKind::vision_self: cfg.depth = 4; cfg.heads = 8; break;
            case AggregatorKind::naive_mlp:
            case AggregatorKind::vision_none: cfg.depth = 0; cfg.heads = 4; break;
        }
        return cfg;
    }
};

// Captures per-head attention weights during a forward pass, for
// normalization checks.
template <typename S>
struct AttnProbe {
    std::vector<Tensor<S>> weights;  // one [Nq x Nk] matrix per head per attention module
};

// ---------------------------------------------------------------------------
// Multi-head attention
// ---------------------------------------------------------------------------

template <typename S>
struct MhaParams {
    Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t heads = 1;
    std::size_t dim = 0;

    static MhaParams init(std::size_t c, std::size_t heads, ParamStore<S>& store,
                          const std::string& prefix) {
        if (heads == 0 || c % heads != 0) {
            throw ShapeError("mha: dim " + std::to_string(c) + " not divisible by " +
                             std::to_string(heads) + " heads");
        }
        MhaParams p;
        p.heads = heads;
        p.dim = c;
        p.wq = store.add_xavier(prefix + ".wq", {c, c}, c, c);
        p.bq = store.add_zeros(prefix + ".bq", {c});
        p.wk = store.add_xavier(prefix + ".wk", {c, c}, c, c);
        p.bk = store.add_zeros(prefix + ".bk", {c});
        p.wv = store.add_xavier(prefix + ".wv", {c, c}, c, c);
        p.bv = store.add_zeros(prefix + ".bv", {c});
        p.wo = store.add_xavier(prefix + ".wo", {c, c}, c, c);
        p.bo = store.add_zeros(prefix + ".bo", {c});
        return p;
    }
};

// Scaled dot-product attention with h heads; queries from q, keys/values
// from kv. Self-attention is mha(x, x, ...). Scale is 1/sqrt(C/h).
template <typename S>
Tensor<S> mha(const Tensor<S>& q, const Tensor<S>& kv, const MhaParams<S>& p,
              AttnProbe<S>* probe = nullptr) {
    if (q.ndim() != 2 || kv.ndim() != 2 || q.extent(1) != p.dim || kv.extent(1) != p.dim) {
        throw ShapeError("mha: inputs " + shape_str(q.shape()) + ", " + shape_str(kv.shape()) +
                         " do not match dim " + std::to_string(p.dim));
    }
    const std::size_t hd = p.dim / p.heads;
    const S att_scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));

    Tensor<S> qp = add_row_bias(matmul(q, p.wq), p.bq);
    Tensor<S> kp = add_row_bias(matmul(kv, p.wk), p.bk);
    Tensor<S> vp = add_row_bias(matmul(kv, p.wv), p.bv);

    std::vector<Tensor<S>> heads;
    heads.reserve(p.heads);
    for (std::size_t h = 0; h < p.heads; ++h) {
        Tensor<S> qh = slice_cols(qp, h * hd, (h + 1) * hd);
        Tensor<S> kh = slice_cols(kp, h * hd, (h + 1) * hd);
        Tensor<S> vh = slice_cols(vp, h * hd, (h + 1) * hd);
        Tensor<S> attn = softmax(scale(matmul(qh, transpose2d(kh)), att_scale));
        if (probe) probe->weights.push_back(attn);
        heads.push_back(matmul(attn, vh));
    }
    Tensor<S> merged = concat_cols(heads);
    return add_row_bias(matmul(merged, p.wo), p.bo);
}

// ---------------------------------------------------------------------------
// Block building blocks
// ---------------------------------------------------------------------------

template <typename S>
struct LayerNormParams {
    Tensor<S> gamma, beta;

    static LayerNormParams init(std::size_t c, ParamStore<S>& store, const std::string& prefix) {
        LayerNormParams p;
        p.gamma = store.add_full(prefix + ".gamma", {c}, S(1));
        p.beta = store.add_zeros(prefix + ".beta", {c});
        return p;
    }

    Tensor<S> operator()(const Tensor<S>& x) const { return layer_norm(x, gamma, beta, S(1e-5)); }
};

// 2-layer MLP with GELU; hidden width is 4x the channel dim.
template <typename S>
struct BlockMlp {
    Tensor<S> w1, b1, w2, b2;

    static BlockMlp init(std::size_t c, ParamStore<S>& store, const std::string& prefix) {
        const std::size_t hidden = 4 * c;
        BlockMlp p;
        p.w1 = store.add_xavier(prefix + ".fc1.w", {c, hidden}, c, hidden);
        p.b1 = store.add_zeros(prefix + ".fc1.b", {hidden});
        p.w2 = store.add_xavier(prefix + ".fc2.w", {hidden, c}, hidden, c);
        p.b2 = store.add_zeros(prefix + ".fc2.b", {c});
        return p;
    }

    Tensor<S> operator()(const Tensor<S>& x) const {
        return add_row_bias(matmul(gelu(add_row_bias(matmul(x, w1), b1)), w2), b2);
    }
};

// Standard transformer block: post-norm self-attention followed by a
// post-norm MLP. Used for the merged and vision-only baselines.
template <typename S>
struct SelfBlock {
    MhaParams<S> attn;
    BlockMlp<S> mlp;
    LayerNormParams<S> ln_attn, ln_mlp;

    static SelfBlock init(std::size_t c, std::size_t heads, ParamStore<S>& store,
                          const std::string& prefix) {
        SelfBlock b;
        b.attn = MhaParams<S>::init(c, heads, store, prefix + ".self");
        b.mlp = BlockMlp<S>::init(c, store, prefix + ".mlp");
        b.ln_attn = LayerNormParams<S>::init(c, store, prefix + ".ln_attn");
        b.ln_mlp = LayerNormParams<S>::init(c, store, prefix + ".ln_mlp");
        return b;
    }

    Tensor<S> forward(const Tensor<S>& x, AttnProbe<S>* probe) const {
        Tensor<S> a = ln_attn(add(x, mha(x, x, attn, probe)));
        return ln_mlp(add(a, mlp(a)));
    }
};

// Cross-attention-only block for one stream (the cross-attention baseline).
template <typename S>
struct CrossBlock {
    MhaParams<S> attn;
    BlockMlp<S> mlp;
    LayerNormParams<S> ln_attn, ln_mlp;

    static CrossBlock init(std::size_t c, std::size_t heads, ParamStore<S>& store,
                           const std::string& prefix) {
        CrossBlock b;
        b.attn = MhaParams<S>::init(c, heads, store, prefix + ".cross");
        b.mlp = BlockMlp<S>::init(c, store, prefix + ".mlp");
        b.ln_attn = LayerNormParams<S>::init(c, store, prefix + ".ln_attn");
        b.ln_mlp = LayerNormParams<S>::init(c, store, prefix + ".ln_mlp");
        return b;
    }

    Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& other, AttnProbe<S>* probe) const {
        Tensor<S> a = ln_attn(add(x, mha(x, other, attn, probe)));
        return ln_mlp(add(a, mlp(a)));
    }
};

// One co-attention stage: two intertwined streams. Per stream, post-norm
// self-attention; then each stream cross-attends to the other stream's
// post-self-attention state from the same stage (symmetric, neither stream
// sees the other's cross output); then a post-norm MLP.
template <typename S>
struct CoBlockStream {
    MhaParams<S> self_attn, cross_attn;
    BlockMlp<S> mlp;
    LayerNormParams<S> ln_self, ln_cross, ln_mlp;

    static CoBlockStream init(std::size_t c, std::size_t heads, ParamStore<S>& store,
                              const std::string& prefix) {
        CoBlockStream s;
        s.self_attn = MhaParams<S>::init(c, heads, store, prefix + ".self");
        s.cross_attn = MhaParams<S>::init(c, heads, store, prefix + ".cross");
        s.mlp = BlockMlp<S>::init(c, store, prefix + ".mlp");
        s.ln_self = LayerNormParams<S>::init(c, store, prefix + ".ln_self");
        s.ln_cross = LayerNormParams<S>::init(c, store, prefix + ".ln_cross");
        s.ln_mlp = LayerNormParams<S>::init(c, store, prefix + ".ln_mlp");
        return s;
    }
};

template <typename S>
struct CoBlock {
    CoBlockStream<S> v, t;

    static CoBlock init(std::size_t c, std::size_t heads, ParamStore<S>& store,
                        const std::string& prefix) {
        CoBlock b;
        b.v = CoBlockStream<S>::init(c, heads, store, prefix + ".v");
        b.t = CoBlockStream<S>::init(c, heads, store, prefix + ".t");
        return b;
    }

    std::pair<Tensor<S>, Tensor<S>> forward(const Tensor<S>& vis, const Tensor<S>& txt,
                                            AttnProbe<S>* probe) const {
        if (vis.shape() != txt.shape()) {
            throw ShapeError("co_attention_block: stream shapes differ, " + shape_str(vis.shape()) +
                             " vs " + shape_str(txt.shape()));
        }
        Tensor<S> v1 = v.ln_self(add(vis, mha(vis, vis, v.self_attn, probe)));
        Tensor<S> t1 = t.ln_self(add(txt, mha(txt, txt, t.self_attn, probe)));
        Tensor<S> v2 = v.ln_cross(add(v1, mha(v1, t1, v.cross_attn, probe)));
        Tensor<S> t2 = t.ln_cross(add(t1, mha(t1, v1, t.cross_attn, probe)));
        Tensor<S> v3 = v.ln_mlp(add(v2, v.mlp(v2)));
        Tensor<S> t3 = t.ln_mlp(add(t2, t.mlp(t2)));
        return {v3, t3};
    }
};

// ---------------------------------------------------------------------------
// Aggregator: all fusion strategies behind one interface
// ---------------------------------------------------------------------------

template <typename S>
class Aggregator {
public:
    Aggregator(const AggregatorConfig& cfg, std::size_t c, ParamStore<S>& store,
               const std::string& prefix = "fusion")
        : cfg_(cfg) {
        switch (cfg.kind) {
            case AggregatorKind::co:
                for (std::size_t i = 0; i < cfg.depth; ++i) {
                    co_blocks_.push_back(
                        CoBlock<S>::init(c, cfg.heads, store, prefix + ".block" + std::to_string(i)));
                }
                break;
            case AggregatorKind::merged:
            case AggregatorKind::vision_self:
                for (std::size_t i = 0; i < cfg.depth; ++i) {
                    self_blocks_.push_back(
                        SelfBlock<S>::init(c, cfg.heads, store, prefix + ".block" + std::to_string(i)));
                }
                break;
            case AggregatorKind::cross:
                for (std::size_t i = 0; i < cfg.depth; ++i) {
                    const std::string base = prefix + ".block" + std::to_string(i);
                    cross_blocks_v_.push_back(CrossBlock<S>::init(c, cfg.heads, store, base + ".v"));
                    cross_blocks_t_.push_back(CrossBlock<S>::init(c, cfg.heads, store, base + ".t"));
                }
                break;
            case AggregatorKind::naive_mlp:
            case AggregatorKind::vision_none:
                break;  // no attention parameters
        }
    }

    // Returns the aggregated (V, T) streams. Kinds without a text stream
    // return the text input untouched. Requesting an attention probe from a
    // kind with no attention is a contract error.
    std::pair<Tensor<S>, Tensor<S>> forward(const Tensor<S>& vis, const Tensor<S>& txt,
                                            AttnProbe<S>* probe = nullptr) const {
        if (probe && !has_attention(cfg_.kind)) {
            throw ValueError(std::string("aggregate: kind ") + to_string(cfg_.kind) +
                             " has no attention blocks to probe");
        }
        switch (cfg_.kind) {
            case AggregatorKind::co: {
                Tensor<S> v = vis, t = txt;
                for (const auto& block : co_blocks_) {
                    auto [v2, t2] = block.forward(v, t, probe);
                    v = v2;
                    t = t2;
                }
                return {v, t};
            }
            case AggregatorKind::merged: {
                if (vis.shape() != txt.shape()) {
                    throw ShapeError("aggregate(merged): stream shapes differ, " +
                                     shape_str(vis.shape()) + " vs " + shape_str(txt.shape()));
                }
                const std::size_t n = vis.extent(0);
                Tensor<S> m = concat_rows(vis, txt);  // [2N x C]
                for (const auto& block : self_blocks_) m = block.forward(m, probe);
                return {slice_rows(m, 0, n), slice_rows(m, n, 2 * n)};
            }
            case AggregatorKind::cross: {
                Tensor<S> v = vis, t = txt;
                for (std::size_t i = 0; i < cross_blocks_v_.size(); ++i) {
                    Tensor<S> v2 = cross_blocks_v_[i].forward(v, t, probe);
                    Tensor<S> t2 = cross_blocks_t_[i].forward(t, v, probe);
                    v = v2;
                    t = t2;
                }
                return {v, t};
            }
            case AggregatorKind::vision_self: {
                Tensor<S> v = vis;
                for (const auto& block : self_blocks_) v = block.forward(v, probe);
                return {v, txt};
            }
            case AggregatorKind::naive_mlp:
            case AggregatorKind::vision_none:
                return {vis, txt};
        }
        throw ValueError("aggregate: unreachable kind");
    }

    const AggregatorConfig& config() const { return cfg_; }

private:
    AggregatorConfig cfg_;
    std::vector<CoBlock<S>> co_blocks_;
    std::vector<SelfBlock<S>> self_blocks_;
    std::vector<CrossBlock<S>> cross_blocks_v_;
    std::vector<CrossBlock<S>> cross_blocks_t_;
};

// ---------------------------------------------------------------------------
// Classification head
// ---------------------------------------------------------------------------

template <typename S>
struct ClassifyProbe {
    Tensor<S> pooled_concat;  // the concatenated pooled features fed to the MLP
};

// Pools each stream over its token axis, concatenates (2C wide, or C for
// vision-only aggregators), then a 2-layer fusion MLP (1024 hidden, 512
// output, GELU) and a final linear classification layer to one logit.
template <typename S>
class Classifier {
public:
    Classifier(AggregatorKind kind, std::size_t c, Pooling pooling, ParamStore<S>& store,
               const std::string& prefix = "classifier", std::size_t hidden1 = 1024,
               std::size_t hidden2 = 512)
        : kind_(kind), pooling_(pooling), in_width_(uses_text(kind) ? 2 * c : c) {
        w1_ = store.add_xavier(prefix + ".fc1.w", {in_width_, hidden1}, in_width_, hidden1);
        b1_ = store.add_zeros(prefix + ".fc1.b", {hidden1});
        w2_ = store.add_xavier(prefix + ".fc2.w", {hidden1, hidden2}, hidden1, hidden2);
        b2_ = store.add_zeros(prefix + ".fc2.b", {hidden2});
        w3_ = store.add_xavier(prefix + ".head.w", {hidden2, 1}, hidden2, 1);
        b3_ = store.add_zeros(prefix + ".head.b", {1});
    }

    Tensor<S> forward(const Tensor<S>& v_out, const Tensor<S>& t_out,
                      ClassifyProbe<S>* probe = nullptr) const {
        Tensor<S> pooled_v = reshape(pool(v_out), {1, v_out.extent(1)});
        Tensor<S> x;
        if (uses_text(kind_)) {
            Tensor<S> pooled_t = reshape(pool(t_out), {1, t_out.extent(1)});
            x = concat_cols(std::vector<Tensor<S>>{pooled_v, pooled_t});
        } else {
            x = pooled_v;
        }
        if (x.extent(1) != in_width_) {
            throw ShapeError("classify: pooled width " + shape_str(x.shape()) +
                             " does not match configured input width " + std::to_string(in_width_));
        }
        if (probe) probe->pooled_concat = x;
        Tensor<S> h1 = gelu(add_row_bias(matmul(x, w1_), b1_));
        Tensor<S> h2 = gelu(add_row_bias(matmul(h1, w2_), b2_));
        return reshape(add_row_bias(matmul(h2, w3_), b3_), {1});
    }

    Pooling pooling() const { return pooling_; }

private:
    Tensor<S> pool(const Tensor<S>& tokens) const {
        return pooling_ == Pooling::max ? max_pool_tokens(tokens) : mean_pool_tokens(tokens);
    }

    AggregatorKind kind_;
    Pooling pooling_;
    std::size_t in_width_;
    Tensor<S> w1_, b1_, w2_, b2_, w3_, b3_;
};

}  // namespace mmf
