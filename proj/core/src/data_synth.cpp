#include "mmfusion/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "mmfusion/dataset_io.hpp"
#include "mmfusion/errors.hpp"
#include "mmfusion/metrics.hpp"

namespace mmf {

namespace {

constexpr double kPi = 3.14159265358979323846;

double normal_pdf(double x, double mean, double sd) {
    const double z = (x - mean) / sd;
    return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * kPi));
}

double normal_cdf(double x, double mean, double sd) {
    return 0.5 * std::erfc(-(x - mean) / (sd * std::sqrt(2.0)));
}

int draw_categorical(Rng& rng, const std::vector<double>& probs) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

int draw_clipped_rounded_age(Rng& rng, double mean, double sd) {
    double a = rng.gaussian(mean, sd);
    a = std::min(85.0, std::max(35.0, a));
    return static_cast<int>(std::lround(a));
}

// Probability that the clipped, rounded age equals k.
double age_pmf(int k, double mean, double sd) {
    if (k < 35 || k > 85) return 0.0;
    if (k == 35) return normal_cdf(35.5, mean, sd);
    if (k == 85) return 1.0 - normal_cdf(84.5, mean, sd);
    return normal_cdf(k + 0.5, mean, sd) - normal_cdf(k - 0.5, mean, sd);
}

template <typename T>
T pick(Rng& rng, const std::vector<T>& xs) {
    return xs[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(xs.size()) - 1))];
}

// Separable Gaussian filter with clamp-to-edge borders. Returns the L2 norm
// of the 2-d kernel so callers can standardize filtered white noise.
std::vector<double> gaussian_filter(const std::vector<double>& field, std::size_t h, std::size_t w,
                                    double sigma, double* kernel_l2 = nullptr) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (i / sigma) * (i / sigma));
        ksum += kernel[static_cast<std::size_t>(i + radius)];
    }
    for (double& k : kernel) k /= ksum;
    if (kernel_l2) {
        double q = 0.0;
        for (double k : kernel) q += k * k;
        *kernel_l2 = q;  // 2-d separable kernel: sum of squares = q * q, L2 norm = q
    }

    auto clampi = [](long v, long lo, long hi) { return std::min(hi, std::max(lo, v)); };
    std::vector<double> tmp(field.size()), out(field.size());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const long sx = clampi(static_cast<long>(x) + i, 0, static_cast<long>(w) - 1);
                acc += kernel[static_cast<std::size_t>(i + radius)] *
                       field[y * w + static_cast<std::size_t>(sx)];
            }
            tmp[y * w + x] = acc;
        }
    }
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const long sy = clampi(static_cast<long>(y) + i, 0, static_cast<long>(h) - 1);
                acc += kernel[static_cast<std::size_t>(i + radius)] *
                       tmp[static_cast<std::size_t>(sy) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    return out;
}

void add_gaussian_spot(std::vector<double>& img, std::size_t h, std::size_t w, double cy, double cx,
                       double amp, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
    const long y0 = std::max(0L, static_cast<long>(std::floor(cy)) - radius);
    const long y1 = std::min(static_cast<long>(h) - 1, static_cast<long>(std::ceil(cy)) + radius);
    const long x0 = std::max(0L, static_cast<long>(std::floor(cx)) - radius);
    const long x1 = std::min(static_cast<long>(w) - 1, static_cast<long>(std::ceil(cx)) + radius);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (long y = y0; y <= y1; ++y) {
        for (long x = x0; x <= x1; ++x) {
            const double dy = static_cast<double>(y) - cy;
            const double dx = static_cast<double>(x) - cx;
            img[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] +=
                amp * std::exp(-(dx * dx + dy * dy) * inv2s2);
        }
    }
}

// Latent draws, in a fixed documented order, from an already-positioned
// per-sample stream. Image pixels (if rendered) consume the stream after
// this returns, so latents never depend on whether pixels were rendered.
SampleLatents draw_latents_stream(const SynthConfig& cfg, Task task, Rng& rng) {
    SampleLatents s;
    const auto size = static_cast<double>(cfg.image_size);

    // 1. task label
    s.label = rng.uniform() < cfg.prevalence ? 1 : 0;

    // 2. image-signal latents
    if (task == Task::malignancy) {
        const double margin = std::min(size / 4.0, 2.0 * cfg.blob_sigma + 2.0);
        if (s.label == 1) {
            s.has_blob = true;
            s.strong_blob = rng.uniform() < cfg.blob_strong_prob;
            s.blob_amp = s.strong_blob ? rng.gaussian(cfg.blob_amp_mean, cfg.blob_amp_sd)
                                       : rng.gaussian(cfg.faint_amp_mean, cfg.faint_amp_sd);
        } else if (rng.uniform() < cfg.distractor_prob) {
            s.has_blob = true;
            s.blob_amp = rng.gaussian(cfg.distractor_amp_mean, cfg.distractor_amp_sd);
        }
        // Center is drawn unconditionally to keep the stream layout fixed.
        s.blob_cy = rng.uniform(margin, size - 1.0 - margin);
        s.blob_cx = rng.uniform(margin, size - 1.0 - margin);
    } else {
        if (s.label == 1) {
            s.n_dots = rng.uniform_int(cfg.dots_min, cfg.dots_max);
            for (int i = 0; i < s.n_dots; ++i) {
                s.dot_amps.push_back(rng.gaussian(cfg.dot_amp_mean, cfg.dot_amp_sd));
                s.dot_y.push_back(rng.uniform(2.0, size - 3.0));
                s.dot_x.push_back(rng.uniform(2.0, size - 3.0));
            }
        } else if (rng.uniform() < cfg.dot_distractor_prob) {
            s.n_dots = rng.uniform_int(1, cfg.dot_distractor_max);
            for (int i = 0; i < s.n_dots; ++i) {
                s.dot_amps.push_back(rng.gaussian(cfg.dot_distractor_amp_mean, cfg.dot_distractor_amp_sd));
                s.dot_y.push_back(rng.uniform(2.0, size - 3.0));
                s.dot_x.push_back(rng.uniform(2.0, size - 3.0));
            }
        }
    }

    // 3. metadata, shifted by the task label
    const auto& domains = CategoricalDomains::defaults();
    MetadataRecord r;
    const int density = draw_categorical(rng, s.label == 1 ? cfg.density_pos : cfg.density_neg);
    r.breast_density = static_cast<char>('A' + density);
    r.age = s.label == 1 ? draw_clipped_rounded_age(rng, cfg.age_pos_mean, cfg.age_pos_sd)
                         : draw_clipped_rounded_age(rng, cfg.age_neg_mean, cfg.age_neg_sd);
    r.nationality = pick(rng, domains.nationalities);
    r.device_manufacturer = pick(rng, domains.manufacturers);
    r.device_model = pick(rng, domains.models);
    r.institution = pick(rng, domains.institutions);
    r.exam_year = rng.uniform_int(2015, 2023);
    r.birads = rng.uniform_int(0, 6);  // deliberately label-independent

    // 4. per-field missingness
    if (rng.uniform() < cfg.missing_rate) r.age.reset();
    if (rng.uniform() < cfg.missing_rate) r.nationality.reset();
    if (rng.uniform() < cfg.missing_rate) r.device_manufacturer.reset();
    if (rng.uniform() < cfg.missing_rate) r.device_model.reset();
    if (rng.uniform() < cfg.missing_rate) r.institution.reset();
    if (rng.uniform() < cfg.missing_rate) r.exam_year.reset();
    if (rng.uniform() < cfg.missing_rate) r.breast_density.reset();
    if (rng.uniform() < cfg.missing_rate) r.birads.reset();
    s.record = r;

    // 5. independent draw for the other task's label
    s.other_label = rng.uniform() < cfg.prevalence ? 1 : 0;

    // 6. idealized image evidence
    double planted = 0.0;
    if (task == Task::malignancy) {
        planted = s.has_blob ? s.blob_amp : 0.0;
    } else {
        planted = std::accumulate(s.dot_amps.begin(), s.dot_amps.end(), 0.0);
    }
    s.evidence = planted + rng.gaussian(0.0, cfg.evidence_noise);

    return s;
}

}  // namespace

SampleLatents draw_latents(const SynthConfig& cfg, Task task, std::uint64_t seed, std::uint64_t index) {
    Rng rng = Rng::keyed(seed, "sample", index);
    return draw_latents_stream(cfg, task, rng);
}

Sample draw_sample(const SynthConfig& cfg, Task task, std::uint64_t seed, std::uint64_t index) {
    Rng rng = Rng::keyed(seed, "sample", index);
    Sample sample;
    sample.latents = draw_latents_stream(cfg, task, rng);

    const std::size_t h = cfg.image_size, w = cfg.image_size;
    std::vector<double> img(h * w);
    for (double& v : img) v = rng.gaussian(cfg.bg_mean, cfg.bg_sd);

    // Smooth confounding texture: Gaussian-filtered white noise standardized
    // to texture_sd. Its correlation length is close to the blob scale, so
    // image-only discrimination stays genuinely noisy.
    if (cfg.texture_sd > 0) {
        std::vector<double> noise(h * w);
        for (double& v : noise) v = rng.gaussian();
        double q = 1.0;
        std::vector<double> texture = gaussian_filter(noise, h, w, cfg.texture_scale, &q);
        const double field_sd = q;  // separable filter of unit noise has sd q
        const double gain = cfg.texture_sd / std::max(1e-12, field_sd);
        for (std::size_t i = 0; i < img.size(); ++i) img[i] += gain * texture[i];
    }

    const auto& s = sample.latents;
    if (task == Task::malignancy) {
        if (s.has_blob) add_gaussian_spot(img, h, w, s.blob_cy, s.blob_cx, s.blob_amp, cfg.blob_sigma);
    } else {
        for (std::size_t i = 0; i < s.dot_amps.size(); ++i) {
            add_gaussian_spot(img, h, w, s.dot_y[i], s.dot_x[i], s.dot_amps[i], 0.7);
        }
    }

    sample.image.resize(h * w);
    for (std::size_t i = 0; i < img.size(); ++i) {
        sample.image[i] = static_cast<float>(std::min(1.0, std::max(0.0, img[i])));
    }
    return sample;
}

void generate_dataset(const SynthConfig& cfg, Task task, std::uint64_t seed,
                      const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const fs::path base(out_dir);

    const std::size_t n = cfg.n_samples;
    const std::size_t px = cfg.image_size * cfg.image_size;
    std::vector<float> images(n * px);
    std::vector<MetadataRow> rows(n);
    char idbuf[24];
    for (std::size_t i = 0; i < n; ++i) {
        Sample sample = draw_sample(cfg, task, seed, i);
        std::copy(sample.image.begin(), sample.image.end(), images.begin() + i * px);
        MetadataRow& row = rows[i];
        std::snprintf(idbuf, sizeof(idbuf), "E%06zu", i);
        row.exam_id = idbuf;
        std::snprintf(idbuf, sizeof(idbuf), "I%06zu", i);
        row.image_id = idbuf;
        row.record = sample.latents.record;
        const int lbl = sample.latents.label, other = sample.latents.other_label;
        row.label_malignancy = task == Task::malignancy ? lbl : other;
        row.label_calcification = task == Task::calcification ? lbl : other;
    }

    ImagesDesc desc;
    desc.count = n;
    desc.height = cfg.image_size;
    desc.width = cfg.image_size;
    write_images((base / "images.bin").string(), (base / "images.desc").string(), images, desc);
    write_metadata_csv((base / "metadata.csv").string(), rows);

    // Seeded shuffle, then the last test_fraction of the permutation is the
    // test split.
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng split_rng = Rng::keyed(seed, "split");
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(split_rng.uniform_int(0, static_cast<int>(i) - 1));
        std::swap(perm[i - 1], perm[j]);
    }
    const auto n_test = static_cast<std::size_t>(std::lround(cfg.test_fraction * static_cast<double>(n)));
    std::vector<std::size_t> train(perm.begin(), perm.end() - static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> test(perm.end() - static_cast<std::ptrdiff_t>(n_test), perm.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    write_splits((base / "splits.json").string(), train, test);

    const OracleResult oracle = bayes_auc_oracle(cfg, task, cfg.mc_samples, seed);
    nlohmann::ordered_json j;
    j["task"] = to_string(task);
    j["seed"] = seed;
    j["n_mc"] = oracle.n_mc;
    j["auc_image_only"] = oracle.auc_image_only;
    j["auc_joint"] = oracle.auc_joint;
    j["gap"] = oracle.auc_joint - oracle.auc_image_only;
    std::ofstream out((base / "oracle.json").string());
    if (!out) throw IoError("generate_dataset: cannot write oracle report");
    out << j.dump(2) << "\n";
}

std::vector<float> bilinear_resize(const std::vector<float>& image, std::size_t h, std::size_t w,
                                   std::size_t out_h, std::size_t out_w) {
    if (image.size() != h * w) throw ShapeError("bilinear_resize: buffer does not match extents");
    if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: empty output");
    std::vector<float> out(out_h * out_w);
    const double sy = out_h > 1 ? static_cast<double>(h - 1) / static_cast<double>(out_h - 1) : 0.0;
    const double sx = out_w > 1 ? static_cast<double>(w - 1) / static_cast<double>(out_w - 1) : 0.0;
    for (std::size_t y = 0; y < out_h; ++y) {
        const double fy = static_cast<double>(y) * sy;
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
            const double fx = static_cast<double>(x) * sx;
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - static_cast<double>(x0);
            const double v00 = image[y0 * w + x0], v01 = image[y0 * w + x1];
            const double v10 = image[y1 * w + x0], v11 = image[y1 * w + x1];
            const double top = v00 + (v01 - v00) * wx;
            const double bot = v10 + (v11 - v10) * wx;
            out[y * out_w + x] = static_cast<float>(top + (bot - top) * wy);
        }
    }
    return out;
}

std::vector<float> preprocess(const std::vector<float>& image, std::size_t h, std::size_t w,
                              std::size_t target_h, std::size_t target_w, double threshold) {
    if (image.size() != h * w) throw ShapeError("preprocess: buffer does not match extents");
    std::vector<float> thresholded(image.size());
    for (std::size_t i = 0; i < image.size(); ++i) {
        thresholded[i] = static_cast<double>(image[i]) < threshold ? 0.0f : image[i];
    }

    std::size_t y_min = h, y_max = 0, x_min = w, x_max = 0;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            if (thresholded[y * w + x] != 0.0f) {
                y_min = std::min(y_min, y);
                y_max = std::max(y_max, y);
                x_min = std::min(x_min, x);
                x_max = std::max(x_max, x);
            }
        }
    }
    if (y_min > y_max) {
        // Nothing above threshold: a zero image at the target size.
        return std::vector<float>(target_h * target_w, 0.0f);
    }

    const std::size_t ch = y_max - y_min + 1, cw = x_max - x_min + 1;
    std::vector<float> cropped(ch * cw);
    for (std::size_t y = 0; y < ch; ++y) {
        std::copy(thresholded.begin() + static_cast<std::ptrdiff_t>((y + y_min) * w + x_min),
                  thresholded.begin() + static_cast<std::ptrdiff_t>((y + y_min) * w + x_min + cw),
                  cropped.begin() + static_cast<std::ptrdiff_t>(y * cw));
    }

    std::vector<float> resized = bilinear_resize(cropped, ch, cw, target_h, target_w);
    // Final threshold so outputs contain no sub-threshold interpolation
    // residue; this is what makes the pipeline idempotent.
    for (float& v : resized) {
        if (static_cast<double>(v) < threshold) v = 0.0f;
    }
    return resized;
}

OracleResult bayes_auc_oracle(const SynthConfig& cfg, Task task, std::size_t n_mc,
                              std::uint64_t seed) {
    if (n_mc < 10000) throw ValueError("bayes_auc_oracle: n_mc must be >= 10^4");
    const double sigma_e = std::max(1e-6, cfg.evidence_noise);

    auto log_or_floor = [](double p) { return std::log(std::max(p, 1e-300)); };

    // Evidence densities p(e | y) for the configured task.
    auto log_lr_image = [&](double e) {
        double p1 = 0.0, p0 = 0.0;
        if (task == Task::malignancy) {
            p1 = cfg.blob_strong_prob *
                     normal_pdf(e, cfg.blob_amp_mean, std::hypot(cfg.blob_amp_sd, sigma_e)) +
                 (1.0 - cfg.blob_strong_prob) *
                     normal_pdf(e, cfg.faint_amp_mean, std::hypot(cfg.faint_amp_sd, sigma_e));
            p0 = (1.0 - cfg.distractor_prob) * normal_pdf(e, 0.0, sigma_e) +
                 cfg.distractor_prob *
                     normal_pdf(e, cfg.distractor_amp_mean, std::hypot(cfg.distractor_amp_sd, sigma_e));
        } else {
            const int k1 = cfg.dots_max - cfg.dots_min + 1;
            for (int n = cfg.dots_min; n <= cfg.dots_max; ++n) {
                p1 += normal_pdf(e, n * cfg.dot_amp_mean,
                                 std::hypot(std::sqrt(static_cast<double>(n)) * cfg.dot_amp_sd, sigma_e)) /
                      k1;
            }
            p0 = (1.0 - cfg.dot_distractor_prob) * normal_pdf(e, 0.0, sigma_e);
            for (int n = 1; n <= cfg.dot_distractor_max; ++n) {
                p0 += cfg.dot_distractor_prob *
                      normal_pdf(e, n * cfg.dot_distractor_amp_mean,
                                 std::hypot(std::sqrt(static_cast<double>(n)) * cfg.dot_distractor_amp_sd,
                                            sigma_e)) /
                      cfg.dot_distractor_max;
            }
        }
        return log_or_floor(p1) - log_or_floor(p0);
    };

    auto log_lr_metadata = [&](const MetadataRecord& r) {
        double llr = 0.0;
        if (r.breast_density) {
            const int d = *r.breast_density - 'A';
            llr += log_or_floor(cfg.density_pos[static_cast<std::size_t>(d)]) -
                   log_or_floor(cfg.density_neg[static_cast<std::size_t>(d)]);
        }
        if (r.age) {
            llr += log_or_floor(age_pmf(*r.age, cfg.age_pos_mean, cfg.age_pos_sd)) -
                   log_or_floor(age_pmf(*r.age, cfg.age_neg_mean, cfg.age_neg_sd));
        }
        // Remaining fields are uniform regardless of label: factor 1.
        return llr;
    };

    std::vector<double> scores_img, scores_joint;
    std::vector<int> labels;
    scores_img.reserve(n_mc);
    scores_joint.reserve(n_mc);
    labels.reserve(n_mc);
    for (std::size_t i = 0; i < n_mc; ++i) {
        // A distinct stream from the dataset's own samples.
        Rng rng = Rng::keyed(seed, "oracle", i);
        SampleLatents s = draw_latents_stream(cfg, task, rng);
        const double li = log_lr_image(s.evidence);
        scores_img.push_back(li);
        scores_joint.push_back(li + log_lr_metadata(s.record));
        labels.push_back(s.label);
    }

    OracleResult result;
    result.n_mc = n_mc;
    result.seed = seed;
    result.auc_image_only = auc(scores_img, labels);
    result.auc_joint = auc(scores_joint, labels);
    return result;
}

}  // namespace mmf
