#pragma once

#include <fstream>
#include <memory>
#include <sstream>

#include "mmfusion/config.hpp"
#include "mmfusion/encoders.hpp"
#include "mmfusion/fusion.hpp"
#include "mmfusion/report.hpp"
#include "mmfusion/tokenizer.hpp"

namespace mmf {

// Reorders the rows of a 2-d tensor. Verification-only: refuses to run on a
// tensor that participates in an active graph, since it records no backward.
template <typename S>
Tensor<S> permute_rows(const Tensor<S>& x, const std::vector<std::size_t>& perm) {
    if (x.ndim() != 2 || perm.size() != x.extent(0)) {
        throw ShapeError("permute_rows: permutation of size " + std::to_string(perm.size()) +
                         " does not match " + shape_str(x.shape()));
    }
    if (auto* g = Graph<S>::active(); g && g->tracks(x)) {
        throw ValueError("permute_rows: cannot permute a tracked tensor (no backward defined)");
    }
    const std::size_t c = x.extent(1);
    Tensor<S> out(x.shape());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        std::copy(x.data() + perm[i] * c, x.data() + (perm[i] + 1) * c, out.data() + i * c);
    }
    return out;
}

template <typename S>
struct ForwardHooks {
    AttnProbe<S>* attn = nullptr;
    ClassifyProbe<S>* classify = nullptr;
    // Applied to the post-tokenizer token matrices (verification only).
    const std::vector<std::size_t>* permute_visual = nullptr;
    const std::vector<std::size_t>* permute_text = nullptr;
};

// The full pipeline: report encoding, frozen text embeddings, ConvNet
// feature map, dual tokenizers, aggregator, classification head.
template <typename S>
class Model {
public:
    explicit Model(const RunConfig& cfg)
        : cfg_(cfg),
          store_(cfg.seed),
          template_text_(load_template(cfg)),
          vocab_(Vocabulary::build(template_text_)) {
        text_params_ = TextEncoderParams<S>::init(vocab_.size(), cfg.d_text, cfg.l_max, cfg.seed);

        VisionConfig vc;
        vc.channels = cfg.vision_channels;
        vision_ = std::make_unique<VisionEncoder<S>>(vc, store_);

        const std::size_t f = vision_->downsample_factor();
        if (cfg.synth.image_size % f != 0) {
            throw ConfigError("model: image size " + std::to_string(cfg.synth.image_size) +
                              " not divisible by encoder downsample factor " + std::to_string(f));
        }
        const std::size_t side = cfg.synth.image_size / f;

        TokenizerConfig tc;
        tc.n_tokens = cfg.n_tokens;
        tc.channel_dim = cfg.channel_dim();
        tc.variant = cfg.tokenizer;
        tc.embed_mlp_hidden = cfg.embed_mlp_hidden;
        visual_tokenizer_ = std::make_unique<VisualTokenizer<S>>(tc, side * side, store_);

        if (uses_text(cfg.aggregator)) {
            text_tokenizer_ = std::make_unique<TextTokenizer<S>>(tc, cfg.d_text, cfg.l_text, store_);
        }

        const AggregatorConfig agg = cfg.aggregator_config();
        aggregator_ = std::make_unique<Aggregator<S>>(agg, cfg.channel_dim(), store_);
        classifier_ = std::make_unique<Classifier<S>>(cfg.aggregator, cfg.channel_dim(), agg.pooling, store_);
    }

    const RunConfig& config() const { return cfg_; }
    ParamStore<S>& params() { return store_; }
    const ParamStore<S>& params() const { return store_; }
    const Vocabulary& vocab() const { return vocab_; }
    const TextEncoderParams<S>& text_encoder() const { return text_params_; }
    const VisionEncoder<S>& vision_encoder() const { return *vision_; }

    EncodedText encode_record(const MetadataRecord& record) const {
        return encode_text(render_report(record, template_text_), vocab_, cfg_.l_text);
    }

    Tensor<S> forward(const Tensor<S>& image, const EncodedText& text,
                      const ForwardHooks<S>& hooks = {}) const {
        Tensor<S> fmap = vision_->forward(image);
        Tensor<S> v = visual_tokenizer_->forward(fmap);
        if (hooks.permute_visual) v = permute_rows(v, *hooks.permute_visual);

        Tensor<S> t;
        if (uses_text(cfg_.aggregator)) {
            TextEncoding<S> enc = text_encode(text.ids, text.length, text_params_);
            t = text_tokenizer_->forward(enc.tokens);
            if (hooks.permute_text) t = permute_rows(t, *hooks.permute_text);
        } else {
            t = Tensor<S>({1, cfg_.channel_dim()});  // placeholder, never read
        }

        auto [v_out, t_out] = aggregator_->forward(v, t, hooks.attn);
        return classifier_->forward(v_out, t_out, hooks.classify);
    }

    Tensor<S> forward_record(const Tensor<S>& image, const MetadataRecord& record,
                             const ForwardHooks<S>& hooks = {}) const {
        return forward(image, encode_record(record), hooks);
    }

private:
    static std::string load_template(const RunConfig& cfg) {
        if (cfg.template_path.empty()) return default_report_template();
        std::ifstream in(cfg.template_path);
        if (!in) throw IoError("model: cannot open template file '" + cfg.template_path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    RunConfig cfg_;
    ParamStore<S> store_;
    std::string template_text_;
    Vocabulary vocab_;
    TextEncoderParams<S> text_params_;
    std::unique_ptr<VisionEncoder<S>> vision_;
    std::unique_ptr<VisualTokenizer<S>> visual_tokenizer_;
    std::unique_ptr<TextTokenizer<S>> text_tokenizer_;
    std::unique_ptr<Aggregator<S>> aggregator_;
    std::unique_ptr<Classifier<S>> classifier_;
};

}  // namespace mmf
