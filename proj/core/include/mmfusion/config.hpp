#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmfusion/fusion.hpp"
#include "mmfusion/tokenizer.hpp"

namespace mmf {

enum class Task { malignancy, calcification };

inline const char* to_string(Task t) { return t == Task::malignancy ? "malignancy" : "calcification"; }

// Synthetic-dataset generation parameters. Everything the generator and the
// Bayes oracle consume is a config default here, never a code constant, so
// acceptance thresholds can be recalibrated against the oracle.
struct SynthConfig {
    std::size_t n_samples = 10000;
    std::size_t image_size = 64;
    double prevalence = 0.3;
    double missing_rate = 0.05;
    double test_fraction = 0.2;

    // Background and confounding texture.
    double bg_mean = 0.2;
    double bg_sd = 0.05;
    double texture_sd = 0.15;
    double texture_scale = 4.0;  // Gaussian filter sigma of the texture field, px

    // Malignancy task: one Gaussian blob for positives, occasional
    // distractor blob for negatives.
    double blob_sigma = 3.0;
    double blob_strong_prob = 0.75;
    double blob_amp_mean = 0.8;
    double blob_amp_sd = 0.3;
    double faint_amp_mean = 0.3;
    double faint_amp_sd = 0.1;
    double distractor_prob = 0.2;
    double distractor_amp_mean = 0.4;
    double distractor_amp_sd = 0.1;

    // Calcification task: clusters of near-pixel-size bright dots. Kept
    // faint and confounded enough that the image channel alone does not
    // saturate the task.
    int dots_min = 5;
    int dots_max = 15;
    double dot_amp_mean = 0.22;
    double dot_amp_sd = 0.1;
    double dot_distractor_prob = 0.35;
    int dot_distractor_max = 8;
    double dot_distractor_amp_mean = 0.2;
    double dot_distractor_amp_sd = 0.08;

    // Metadata shift (the planted text signal).
    double age_pos_mean = 60, age_pos_sd = 8;
    double age_neg_mean = 52, age_neg_sd = 10;
    std::vector<double> density_pos = {0.05, 0.20, 0.35, 0.40};
    std::vector<double> density_neg = {0.20, 0.40, 0.30, 0.10};

    // Effective noise of the idealized image-evidence channel used by the
    // Bayes oracle (matched-filter-scale noise from background + texture).
    double evidence_noise = 0.4;

    std::size_t mc_samples = 100000;
};

// Complete, serializable description of one experiment. Every field has a
// default; unknown keys in a config file are errors.
struct RunConfig {
    // paths
    std::string data_dir = "data";
    std::string out_dir = "out";
    std::string template_path;  // empty = built-in report template

    Task task = Task::malignancy;
    std::uint64_t seed = 1;

    // encoder sizes
    std::vector<std::size_t> vision_channels = {16, 32, 64, 128};
    std::size_t d_text = 64;
    std::size_t l_text = 48;  // padded report length
    std::size_t l_max = 64;   // positional table size

    // tokenizer
    TokenizerVariant tokenizer = TokenizerVariant::feature_map;
    std::size_t n_tokens = 256;
    std::size_t embed_mlp_hidden = 256;

    // aggregator; depth/heads of 0 mean "use the kind's default"
    AggregatorKind aggregator = AggregatorKind::co;
    std::size_t depth = 0;
    std::size_t heads = 0;
    Pooling pooling = Pooling::max;

    // training
    double lr_peak = 1e-3;  // desk-scale default; the paper's 5e-5 suits large pretrained backbones
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 16;
    double epochs = 3;
    double warmup_epochs = 1;
    double val_fraction = 0.1;
    bool apply_preprocess = false;
    bool apply_augment = false;

    SynthConfig synth;

    // compare harness
    std::vector<std::string> compare_aggregators = {"co",        "merged",      "cross",
                                                    "naive_mlp", "vision_self", "vision_none"};
    std::vector<std::uint64_t> compare_seeds = {1, 2, 3};
    std::string compare_data_malignancy;
    std::string compare_data_calcification;
    std::vector<std::size_t> ablate_tokens = {64, 256, 512};

    AggregatorConfig aggregator_config() const {
        AggregatorConfig cfg = AggregatorConfig::defaults_for(aggregator);
        if (depth > 0) cfg.depth = depth;
        if (heads > 0) cfg.heads = heads;
        cfg.pooling = pooling;
        return cfg;
    }

    std::size_t channel_dim() const { return vision_channels.back(); }

    void validate() const;
};

// Flat "key = value" text format; '#' starts a comment. Unknown keys throw
// ConfigError naming the key.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);
void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value);

// Canonical serialization: fixed key order, fixed number formatting. Two
// configs serialize identically iff they are equal.
std::string serialize_config(const RunConfig& cfg);

// FNV-1a over the canonical serialization, excluding filesystem paths.
std::uint64_t config_hash(const RunConfig& cfg);

AggregatorKind parse_aggregator(const std::string& name);
Task parse_task(const std::string& name);
TokenizerVariant parse_tokenizer_variant(const std::string& name);
Pooling parse_pooling(const std::string& name);

}  // namespace mmf
