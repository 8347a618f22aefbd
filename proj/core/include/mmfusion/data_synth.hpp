#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmfusion/config.hpp"
#include "mmfusion/report.hpp"
#include "mmfusion/rng.hpp"

namespace mmf {

// Everything drawn for one sample before any pixel is rendered. The Bayes
// oracle scores these latents directly; the generator renders them into an
// image with the same per-sample RNG stream, so latents are identical
// whether or not the image is materialized.
struct SampleLatents {
    int label = 0;        // label for the configured task
    int other_label = 0;  // the other task's label; drawn independently, no planted signal

    // Malignancy-task image signal.
    bool has_blob = false;
    bool strong_blob = false;
    double blob_amp = 0.0;
    double blob_cx = 0.0, blob_cy = 0.0;

    // Calcification-task image signal.
    int n_dots = 0;
    std::vector<double> dot_amps;
    std::vector<double> dot_x, dot_y;

    // Idealized image evidence: planted amplitude plus matched-filter-scale
    // noise. Consumed only by the oracle.
    double evidence = 0.0;

    MetadataRecord record;
};

struct Sample {
    SampleLatents latents;
    std::vector<float> image;  // image_size * image_size, row-major, [0,1]
};

// Counter-based draws keyed by (seed, index): any sample can be generated
// independently and in parallel with identical results.
SampleLatents draw_latents(const SynthConfig& cfg, Task task, std::uint64_t seed, std::uint64_t index);
Sample draw_sample(const SynthConfig& cfg, Task task, std::uint64_t seed, std::uint64_t index);

// Writes the five dataset files: images.bin, images.desc, metadata.csv,
// splits.json, oracle.json.
void generate_dataset(const SynthConfig& cfg, Task task, std::uint64_t seed,
                      const std::string& out_dir);

// Threshold -> tight crop of nonzero pixels -> bilinear resize -> threshold.
// Idempotent on its own outputs; a fully-zero image maps to a zero image at
// the target size.
std::vector<float> preprocess(const std::vector<float>& image, std::size_t h, std::size_t w,
                              std::size_t target_h, std::size_t target_w,
                              double threshold = 40.0 / 255.0);

// Bilinear resize with corner alignment (equal sizes copy exactly).
std::vector<float> bilinear_resize(const std::vector<float>& image, std::size_t h, std::size_t w,
                                   std::size_t out_h, std::size_t out_w);

struct OracleResult {
    double auc_image_only = 0.0;
    double auc_joint = 0.0;
    std::size_t n_mc = 0;
    std::uint64_t seed = 0;
};

// Monte-Carlo AUC of the true likelihood-ratio scorer under the generative
// model, with (a) image evidence only and (b) image evidence plus metadata.
// Upper-bounds any trained classifier; used to calibrate acceptance
// thresholds before training is trusted.
OracleResult bayes_auc_oracle(const SynthConfig& cfg, Task task, std::size_t n_mc,
                              std::uint64_t seed);

}  // namespace mmf
