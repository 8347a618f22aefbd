#pragma once

#include <cstdint>
#include <vector>

#include "mmfusion/rng.hpp"

namespace mmf {

struct AugmentConfig {
    double max_rotation_deg = 20.0;
    double min_translate_frac = 0.001;  // translations are at least this fraction of the image
    double max_translate_frac = 0.05;
    double scale_min = 0.8;
    double scale_max = 1.2;
    double max_shear_deg = 20.0;
    double elastic_alpha = 10.0;
    double elastic_sigma = 5.0;
};

// The concrete draw for one augmentation. Kept separate from application so
// parameter distributions can be audited (and logged) directly.
struct AugmentParams {
    double rotation_deg = 0.0;
    double scale = 1.0;
    double shear_deg = 0.0;
    double translate_x_frac = 0.0;
    double translate_y_frac = 0.0;
    double elastic_alpha = 0.0;  // 0 disables the elastic pass
    double elastic_sigma = 5.0;
    std::uint64_t elastic_seed = 0;
};

inline AugmentParams identity_augment_params() { return {}; }

AugmentParams draw_augment_params(Rng& rng, const AugmentConfig& cfg = {});

// Affine warp (rotation, shear, isotropic scale about the center, then
// translation) with bilinear sampling and zero fill, followed by an elastic
// deformation whose displacement field is Gaussian-filtered unit noise
// scaled by alpha. Output is clipped to [0,1].
std::vector<float> apply_augment(const std::vector<float>& image, std::size_t h, std::size_t w,
                                 const AugmentParams& params);

std::vector<float> augment(const std::vector<float>& image, std::size_t h, std::size_t w,
                           std::uint64_t seed, const AugmentConfig& cfg = {});

}  // namespace mmf
