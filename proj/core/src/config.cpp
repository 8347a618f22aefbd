#include "mmfusion/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mmfusion/errors.hpp"
#include "mmfusion/rng.hpp"

namespace mmf {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    double d = parse_double(key, v);
    if (d < 0 || d != static_cast<double>(static_cast<std::size_t>(d))) {
        throw ConfigError("config: key '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    return static_cast<std::size_t>(d);
}

int parse_int(const std::string& key, const std::string& v) {
    double d = parse_double(key, v);
    if (d != static_cast<double>(static_cast<long long>(d))) {
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
    return static_cast<int>(d);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

std::string fmt_double(double d) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", d);
    return buf;
}

template <typename T, typename F>
std::string join_list(const std::vector<T>& xs, F fmt) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        out += fmt(xs[i]);
    }
    return out;
}

}  // namespace

AggregatorKind parse_aggregator(const std::string& name) {
    if (name == "co") return AggregatorKind::co;
    if (name == "merged") return AggregatorKind::merged;
    if (name == "cross") return AggregatorKind::cross;
    if (name == "naive_mlp") return AggregatorKind::naive_mlp;
    if (name == "vision_self") return AggregatorKind::vision_self;
    if (name == "vision_none") return AggregatorKind::vision_none;
    throw ConfigError("config: unknown aggregator '" + name +
                      "' (expected co|merged|cross|naive_mlp|vision_self|vision_none)");
}

Task parse_task(const std::string& name) {
    if (name == "malignancy") return Task::malignancy;
    if (name == "calcification") return Task::calcification;
    throw ConfigError("config: unknown task '" + name + "' (expected malignancy|calcification)");
}

TokenizerVariant parse_tokenizer_variant(const std::string& name) {
    if (name == "feature_map") return TokenizerVariant::feature_map;
    if (name == "embedding_linear") return TokenizerVariant::embedding_linear;
    if (name == "embedding_mlp") return TokenizerVariant::embedding_mlp;
    throw ConfigError("config: unknown tokenizer '" + name +
                      "' (expected feature_map|embedding_linear|embedding_mlp)");
}

Pooling parse_pooling(const std::string& name) {
    if (name == "max") return Pooling::max;
    if (name == "mean") return Pooling::mean;
    throw ConfigError("config: unknown pooling '" + name + "' (expected max|mean)");
}

void apply_config_line(RunConfig& c, const std::string& key, const std::string& v) {
    auto sizes = [&](const std::string& s) {
        std::vector<std::size_t> out;
        for (const auto& item : split_csv(s)) out.push_back(parse_size(key, item));
        return out;
    };
    auto doubles = [&](const std::string& s) {
        std::vector<double> out;
        for (const auto& item : split_csv(s)) out.push_back(parse_double(key, item));
        return out;
    };

    if (key == "data_dir") c.data_dir = v;
    else if (key == "out_dir") c.out_dir = v;
    else if (key == "template_path") c.template_path = v;
    else if (key == "task") c.task = parse_task(v);
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_size(key, v));
    else if (key == "vision_channels") c.vision_channels = sizes(v);
    else if (key == "d_text") c.d_text = parse_size(key, v);
    else if (key == "l_text") c.l_text = parse_size(key, v);
    else if (key == "l_max") c.l_max = parse_size(key, v);
    else if (key == "tokenizer") c.tokenizer = parse_tokenizer_variant(v);
    else if (key == "n_tokens") c.n_tokens = parse_size(key, v);
    else if (key == "embed_mlp_hidden") c.embed_mlp_hidden = parse_size(key, v);
    else if (key == "aggregator") c.aggregator = parse_aggregator(v);
    else if (key == "depth") c.depth = parse_size(key, v);
    else if (key == "heads") c.heads = parse_size(key, v);
    else if (key == "pooling") c.pooling = parse_pooling(v);
    else if (key == "lr_peak") c.lr_peak = parse_double(key, v);
    else if (key == "weight_decay") c.weight_decay = parse_double(key, v);
    else if (key == "beta1") c.beta1 = parse_double(key, v);
    else if (key == "beta2") c.beta2 = parse_double(key, v);
    else if (key == "adam_eps") c.adam_eps = parse_double(key, v);
    else if (key == "batch_size") c.batch_size = parse_size(key, v);
    else if (key == "epochs") c.epochs = parse_double(key, v);
    else if (key == "warmup_epochs") c.warmup_epochs = parse_double(key, v);
    else if (key == "val_fraction") c.val_fraction = parse_double(key, v);
    else if (key == "apply_preprocess") c.apply_preprocess = parse_bool(key, v);
    else if (key == "apply_augment") c.apply_augment = parse_bool(key, v);
    else if (key == "synth_n_samples") c.synth.n_samples = parse_size(key, v);
    else if (key == "synth_image_size") c.synth.image_size = parse_size(key, v);
    else if (key == "synth_prevalence") c.synth.prevalence = parse_double(key, v);
    else if (key == "synth_missing_rate") c.synth.missing_rate = parse_double(key, v);
    else if (key == "synth_test_fraction") c.synth.test_fraction = parse_double(key, v);
    else if (key == "synth_bg_mean") c.synth.bg_mean = parse_double(key, v);
    else if (key == "synth_bg_sd") c.synth.bg_sd = parse_double(key, v);
    else if (key == "synth_texture_sd") c.synth.texture_sd = parse_double(key, v);
    else if (key == "synth_texture_scale") c.synth.texture_scale = parse_double(key, v);
    else if (key == "synth_blob_sigma") c.synth.blob_sigma = parse_double(key, v);
    else if (key == "synth_blob_strong_prob") c.synth.blob_strong_prob = parse_double(key, v);
    else if (key == "synth_blob_amp_mean") c.synth.blob_amp_mean = parse_double(key, v);
    else if (key == "synth_blob_amp_sd") c.synth.blob_amp_sd = parse_double(key, v);
    else if (key == "synth_faint_amp_mean") c.synth.faint_amp_mean = parse_double(key, v);
    else if (key == "synth_faint_amp_sd") c.synth.faint_amp_sd = parse_double(key, v);
    else if (key == "synth_distractor_prob") c.synth.distractor_prob = parse_double(key, v);
    else if (key == "synth_distractor_amp_mean") c.synth.distractor_amp_mean = parse_double(key, v);
    else if (key == "synth_distractor_amp_sd") c.synth.distractor_amp_sd = parse_double(key, v);
    else if (key == "synth_dots_min") c.synth.dots_min = parse_int(key, v);
    else if (key == "synth_dots_max") c.synth.dots_max = parse_int(key, v);
    else if (key == "synth_dot_amp_mean") c.synth.dot_amp_mean = parse_double(key, v);
    else if (key == "synth_dot_amp_sd") c.synth.dot_amp_sd = parse_double(key, v);
    else if (key == "synth_dot_distractor_prob") c.synth.dot_distractor_prob = parse_double(key, v);
    else if (key == "synth_dot_distractor_max") c.synth.dot_distractor_max = parse_int(key, v);
    else if (key == "synth_dot_distractor_amp_mean") c.synth.dot_distractor_amp_mean = parse_double(key, v);
    else if (key == "synth_dot_distractor_amp_sd") c.synth.dot_distractor_amp_sd = parse_double(key, v);
    else if (key == "synth_age_pos_mean") c.synth.age_pos_mean = parse_double(key, v);
    else if (key == "synth_age_pos_sd") c.synth.age_pos_sd = parse_double(key, v);
    else if (key == "synth_age_neg_mean") c.synth.age_neg_mean = parse_double(key, v);
    else if (key == "synth_age_neg_sd") c.synth.age_neg_sd = parse_double(key, v);
    else if (key == "synth_density_pos") c.synth.density_pos = doubles(v);
    else if (key == "synth_density_neg") c.synth.density_neg = doubles(v);
    else if (key == "synth_evidence_noise") c.synth.evidence_noise = parse_double(key, v);
    else if (key == "synth_mc_samples") c.synth.mc_samples = parse_size(key, v);
    else if (key == "compare_aggregators") c.compare_aggregators = split_csv(v);
    else if (key == "compare_seeds") {
        c.compare_seeds.clear();
        for (const auto& item : split_csv(v)) c.compare_seeds.push_back(parse_size(key, item));
    } else if (key == "compare_data_malignancy") c.compare_data_malignancy = v;
    else if (key == "compare_data_calcification") c.compare_data_calcification = v;
    else if (key == "ablate_tokens") c.ablate_tokens = sizes(v);
    else throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::stringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: line " + std::to_string(lineno) + " is not 'key = value': " + line);
        }
        apply_config_line(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

void RunConfig::validate() const {
    if (vision_channels.empty()) throw ConfigError("config: vision_channels is empty");
    if (n_tokens < 1) throw ConfigError("config: n_tokens must be >= 1");
    if (l_text < 1 || l_text > l_max) throw ConfigError("config: l_text must be in [1, l_max]");
    if (d_text < 2) throw ConfigError("config: d_text must be >= 2");
    if (lr_peak <= 0) throw ConfigError("config: lr_peak must be positive");
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (epochs <= 0) throw ConfigError("config: epochs must be positive");
    if (warmup_epochs < 0 || warmup_epochs > epochs) {
        throw ConfigError("config: warmup_epochs must be in [0, epochs]");
    }
    if (val_fraction <= 0 || val_fraction >= 1) throw ConfigError("config: val_fraction must be in (0, 1)");
    const AggregatorConfig agg = aggregator_config();
    if (has_attention(aggregator)) {
        if (agg.heads == 0 || channel_dim() % agg.heads != 0) {
            throw ConfigError("config: channel dim " + std::to_string(channel_dim()) +
                              " not divisible by " + std::to_string(agg.heads) + " heads");
        }
    }
    if (synth.prevalence < 0 || synth.prevalence > 1) {
        throw ConfigError("config: synth_prevalence must be in [0, 1]");
    }
    if (synth.missing_rate < 0 || synth.missing_rate > 1) {
        throw ConfigError("config: synth_missing_rate must be in [0, 1]");
    }
    if (synth.test_fraction < 0 || synth.test_fraction >= 1) {
        throw ConfigError("config: synth_test_fraction must be in [0, 1)");
    }
    if (synth.density_pos.size() != 4 || synth.density_neg.size() != 4) {
        throw ConfigError("config: density tables must have 4 entries (A,B,C,D)");
    }
    for (const auto& table : {synth.density_pos, synth.density_neg}) {
        double total = 0;
        for (double p : table) {
            if (p < 0) throw ConfigError("config: density probabilities must be non-negative");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9) throw ConfigError("config: density tables must sum to 1");
    }
    if (synth.dots_min < 1 || synth.dots_max < synth.dots_min) {
        throw ConfigError("config: synth dots range invalid");
    }
    // Image/encoder divisibility is a runtime contract of vision_encode, not
    // of the config: a config may describe synth-only runs.
}

std::string serialize_config(const RunConfig& c) {
    auto size_str = [](std::size_t s) { return std::to_string(s); };
    std::string out;
    auto kv = [&out](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
    kv("data_dir", c.data_dir);
    kv("out_dir", c.out_dir);
    kv("template_path", c.template_path);
    kv("task", to_string(c.task));
    kv("seed", std::to_string(c.seed));
    kv("vision_channels", join_list(c.vision_channels, size_str));
    kv("d_text", size_str(c.d_text));
    kv("l_text", size_str(c.l_text));
    kv("l_max", size_str(c.l_max));
    kv("tokenizer", to_string(c.tokenizer));
    kv("n_tokens", size_str(c.n_tokens));
    kv("embed_mlp_hidden", size_str(c.embed_mlp_hidden));
    kv("aggregator", to_string(c.aggregator));
    kv("depth", size_str(c.depth));
    kv("heads", size_str(c.heads));
    kv("pooling", to_string(c.pooling));
    kv("lr_peak", fmt_double(c.lr_peak));
    kv("weight_decay", fmt_double(c.weight_decay));
    kv("beta1", fmt_double(c.beta1));
    kv("beta2", fmt_double(c.beta2));
    kv("adam_eps", fmt_double(c.adam_eps));
    kv("batch_size", size_str(c.batch_size));
    kv("epochs", fmt_double(c.epochs));
    kv("warmup_epochs", fmt_double(c.warmup_epochs));
    kv("val_fraction", fmt_double(c.val_fraction));
    kv("apply_preprocess", c.apply_preprocess ? "true" : "false");
    kv("apply_augment", c.apply_augment ? "true" : "false");
    kv("synth_n_samples", size_str(c.synth.n_samples));
    kv("synth_image_size", size_str(c.synth.image_size));
    kv("synth_prevalence", fmt_double(c.synth.prevalence));
    kv("synth_missing_rate", fmt_double(c.synth.missing_rate));
    kv("synth_test_fraction", fmt_double(c.synth.test_fraction));
    kv("synth_bg_mean", fmt_double(c.synth.bg_mean));
    kv("synth_bg_sd", fmt_double(c.synth.bg_sd));
    kv("synth_texture_sd", fmt_double(c.synth.texture_sd));
    kv("synth_texture_scale", fmt_double(c.synth.texture_scale));
    kv("synth_blob_sigma", fmt_double(c.synth.blob_sigma));
    kv("synth_blob_strong_prob", fmt_double(c.synth.blob_strong_prob));
    kv("synth_blob_amp_mean", fmt_double(c.synth.blob_amp_mean));
    kv("synth_blob_amp_sd", fmt_double(c.synth.blob_amp_sd));
    kv("synth_faint_amp_mean", fmt_double(c.synth.faint_amp_mean));
    kv("synth_faint_amp_sd", fmt_double(c.synth.faint_amp_sd));
    kv("synth_distractor_prob", fmt_double(c.synth.distractor_prob));
    kv("synth_distractor_amp_mean", fmt_double(c.synth.distractor_amp_mean));
    kv("synth_distractor_amp_sd", fmt_double(c.synth.distractor_amp_sd));
    kv("synth_dots_min", std::to_string(c.synth.dots_min));
    kv("synth_dots_max", std::to_string(c.synth.dots_max));
    kv("synth_dot_amp_mean", fmt_double(c.synth.dot_amp_mean));
    kv("synth_dot_amp_sd", fmt_double(c.synth.dot_amp_sd));
    kv("synth_dot_distractor_prob", fmt_double(c.synth.dot_distractor_prob));
    kv("synth_dot_distractor_max", std::to_string(c.synth.dot_distractor_max));
    kv("synth_dot_distractor_amp_mean", fmt_double(c.synth.dot_distractor_amp_mean));
    kv("synth_dot_distractor_amp_sd", fmt_double(c.synth.dot_distractor_amp_sd));
    kv("synth_age_pos_mean", fmt_double(c.synth.age_pos_mean));
    kv("synth_age_pos_sd", fmt_double(c.synth.age_pos_sd));
    kv("synth_age_neg_mean", fmt_double(c.synth.age_neg_mean));
    kv("synth_age_neg_sd", fmt_double(c.synth.age_neg_sd));
    kv("synth_density_pos", join_list(c.synth.density_pos, fmt_double));
    kv("synth_density_neg", join_list(c.synth.density_neg, fmt_double));
    kv("synth_evidence_noise", fmt_double(c.synth.evidence_noise));
    kv("synth_mc_samples", size_str(c.synth.mc_samples));
    kv("compare_aggregators", join_list(c.compare_aggregators, [](const std::string& s) { return s; }));
    kv("compare_seeds", join_list(c.compare_seeds, [](std::uint64_t s) { return std::to_string(s); }));
    kv("compare_data_malignancy", c.compare_data_malignancy);
    kv("compare_data_calcification", c.compare_data_calcification);
    kv("ablate_tokens", join_list(c.ablate_tokens, size_str));
    return out;
}

std::uint64_t config_hash(const RunConfig& c) {
    // Paths do not describe the experiment, so they are excluded: a
    // checkpoint stays loadable after its data moves.
    static const char* path_keys[] = {"data_dir",
                                      "out_dir",
                                      "template_path",
                                      "compare_data_malignancy",
                                      "compare_data_calcification"};
    std::string canonical = serialize_config(c);
    std::string filtered;
    std::stringstream ss(canonical);
    std::string line;
    while (std::getline(ss, line)) {
        bool is_path = false;
        for (const char* k : path_keys) {
            if (line.rfind(std::string(k) + " =", 0) == 0) {
                is_path = true;
                break;
            }
        }
        if (!is_path) filtered += line + "\n";
    }
    return fnv1a(filtered);
}

}  // namespace mmf
