#include "mmfusion/augment.hpp"

#include <algorithm>
#include <cmath>

#include "mmfusion/errors.hpp"

namespace mmf {

namespace {

constexpr double kPi = 3.14159265358979323846;

double sample_bilinear_zero(const std::vector<float>& img, std::size_t h, std::size_t w, double y,
                            double x) {
    if (y <= -1.0 || x <= -1.0 || y >= static_cast<double>(h) || x >= static_cast<double>(w)) {
        return 0.0;
    }
    const auto y0 = static_cast<long>(std::floor(y));
    const auto x0 = static_cast<long>(std::floor(x));
    const double wy = y - static_cast<double>(y0);
    const double wx = x - static_cast<double>(x0);
    auto at = [&](long yy, long xx) -> double {
        if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) return 0.0;
        return img[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
    };
    const double top = at(y0, x0) * (1.0 - wx) + at(y0, x0 + 1) * wx;
    const double bot = at(y0 + 1, x0) * (1.0 - wx) + at(y0 + 1, x0 + 1) * wx;
    return top * (1.0 - wy) + bot * wy;
}

// Separable normalized Gaussian filter with clamp-to-edge borders.
std::vector<double> smooth(const std::vector<double>& field, std::size_t h, std::size_t w,
                           double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (i / sigma) * (i / sigma));
        ksum += kernel[static_cast<std::size_t>(i + radius)];
    }
    for (double& k : kernel) k /= ksum;
    auto clampi = [](long v, long lo, long hi) { return std::min(hi, std::max(lo, v)); };
    std::vector<double> tmp(field.size()), out(field.size());
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const long sx = clampi(static_cast<long>(x) + i, 0, static_cast<long>(w) - 1);
                acc += kernel[static_cast<std::size_t>(i + radius)] * field[y * w + static_cast<std::size_t>(sx)];
            }
            tmp[y * w + x] = acc;
        }
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const long sy = clampi(static_cast<long>(y) + i, 0, static_cast<long>(h) - 1);
                acc += kernel[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(sy) * w + x];
            }
            out[y * w + x] = acc;
        }
    return out;
}

}  // namespace

AugmentParams draw_augment_params(Rng& rng, const AugmentConfig& cfg) {
    AugmentParams p;
    p.rotation_deg = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    p.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
    p.shear_deg = rng.uniform(-cfg.max_shear_deg, cfg.max_shear_deg);
    const double tx = rng.uniform(cfg.min_translate_frac, cfg.max_translate_frac);
    const double ty = rng.uniform(cfg.min_translate_frac, cfg.max_translate_frac);
    p.translate_x_frac = rng.uniform() < 0.5 ? -tx : tx;
    p.translate_y_frac = rng.uniform() < 0.5 ? -ty : ty;
    p.elastic_alpha = cfg.elastic_alpha;
    p.elastic_sigma = cfg.elastic_sigma;
    p.elastic_seed = rng.next_u64();
    return p;
}

std::vector<float> apply_augment(const std::vector<float>& image, std::size_t h, std::size_t w,
                                 const AugmentParams& p) {
    if (image.size() != h * w) throw ShapeError("apply_augment: buffer does not match extents");

    // Forward map: dst = M * (src - c) + c + t, with M = R(theta) * Shear * s.
    // Sampling inverts it exactly.
    const double theta = p.rotation_deg * kPi / 180.0;
    const double shear = std::tan(p.shear_deg * kPi / 180.0);
    const double ct = std::cos(theta), st = std::sin(theta);
    // M = R * Sh, Sh = [[1, shear], [0, 1]], all scaled by p.scale.
    const double m00 = p.scale * ct;
    const double m01 = p.scale * (ct * shear - st);
    const double m10 = p.scale * st;
    const double m11 = p.scale * (st * shear + ct);
    const double det = m00 * m11 - m01 * m10;
    const double i00 = m11 / det, i01 = -m01 / det, i10 = -m10 / det, i11 = m00 / det;
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double ty = p.translate_y_frac * static_cast<double>(h);
    const double tx = p.translate_x_frac * static_cast<double>(w);

    std::vector<double> disp_y, disp_x;
    if (p.elastic_alpha != 0.0) {
        Rng rng(p.elastic_seed);
        std::vector<double> uy(h * w), ux(h * w);
        for (double& v : uy) v = rng.uniform(-1.0, 1.0);
        for (double& v : ux) v = rng.uniform(-1.0, 1.0);
        disp_y = smooth(uy, h, w, p.elastic_sigma);
        disp_x = smooth(ux, h, w, p.elastic_sigma);
        for (double& v : disp_y) v *= p.elastic_alpha;
        for (double& v : disp_x) v *= p.elastic_alpha;
    }

    std::vector<float> out(h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double dy = static_cast<double>(y) - cy - ty;
            double dx = static_cast<double>(x) - cx - tx;
            double sy = i00 * dy + i01 * dx + cy;
            double sx = i10 * dy + i11 * dx + cx;
            if (!disp_y.empty()) {
                sy += disp_y[y * w + x];
                sx += disp_x[y * w + x];
            }
            const double v = sample_bilinear_zero(image, h, w, sy, sx);
            out[y * w + x] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
        }
    }
    return out;
}

std::vector<float> augment(const std::vector<float>& image, std::size_t h, std::size_t w,
                           std::uint64_t seed, const AugmentConfig& cfg) {
    Rng rng(seed);
    return apply_augment(image, h, w, draw_augment_params(rng, cfg));
}

}  // namespace mmf
