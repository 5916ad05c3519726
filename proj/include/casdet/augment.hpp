#pragma once
// Training-time augmentation: resize -> rotate -> mirror -> translate -> crop
// -> additive Gaussian noise, with box coordinates mapped through the same
// affine chain. All three triplet slices share the geometric parameters.

#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "casdet/box.hpp"
#include "casdet/volume.hpp"

namespace casdet {

struct AugmentConfig {
    std::pair<int, int> crop_size{224, 224};            // width, height
    std::pair<double, double> rotation_range{0.0, 180.0};  // degrees
    std::pair<double, double> noise_percent_range{1.0, 3.0};
    std::pair<double, double> scale_range{0.9, 1.1};
    double mirror_prob = 0.5;
    double translate_range = 0.1;  // fraction of image size, per axis
    double min_box_area_ratio = 0.25;
};

// Row-major 2x3 affine: (x,y) -> (a x + b y + c, d x + e y + f).
struct Affine {
    double a = 1, b = 0, c = 0;
    double d = 0, e = 1, f = 0;

    static Affine identity() { return {}; }
    static Affine scaling(double s) { return {s, 0, 0, 0, s, 0}; }
    static Affine translation(double tx, double ty) { return {1, 0, tx, 0, 1, ty}; }
    static Affine rotation_about(double radians, double cx, double cy) {
        const double ca = std::cos(radians), sa = std::sin(radians);
        return {ca, -sa, cx - ca * cx + sa * cy, sa, ca, cy - sa * cx - ca * cy};
    }
    static Affine mirror_horizontal(double width) { return {-1, 0, width, 0, 1, 0}; }

    std::pair<double, double> apply(double x, double y) const {
        return {a * x + b * y + c, d * x + e * y + f};
    }
    double det() const { return a * e - b * d; }
    Affine inverse() const {
        const double dt = det();
        if (std::abs(dt) < 1e-12) throw std::invalid_argument("Affine: singular matrix");
        const double ia = e / dt, ib = -b / dt, id = -d / dt, ie = a / dt;
        return {ia, ib, -(ia * c + ib * f), id, ie, -(id * c + ie * f)};
    }
};

// Composition: apply `first`, then `second`.
inline Affine compose(const Affine& second, const Affine& first) {
    return {second.a * first.a + second.b * first.d,
            second.a * first.b + second.b * first.e,
            second.a * first.c + second.b * first.f + second.c,
            second.d * first.a + second.e * first.d,
            second.d * first.b + second.e * first.e,
            second.d * first.c + second.e * first.f + second.f};
}

// Axis-aligned hull of the transformed corners, clipped; empty after clip
// -> nullopt.
inline std::optional<Box> transform_box(const Box& box, const Affine& affine, const Box& clip_rect) {
    if (std::abs(affine.det()) < 1e-12) throw std::invalid_argument("transform_box: singular matrix");
    const double xs[2] = {box.x0, box.x1}, ys[2] = {box.y0, box.y1};
    double hx0 = 1e300, hy0 = 1e300, hx1 = -1e300, hy1 = -1e300;
    for (double x : xs)
        for (double y : ys) {
            auto [tx, ty] = affine.apply(x, y);
            hx0 = std::min(hx0, tx);
            hy0 = std::min(hy0, ty);
            hx1 = std::max(hx1, tx);
            hy1 = std::max(hy1, ty);
        }
    Box out{std::max(hx0, clip_rect.x0), std::max(hy0, clip_rect.y0),
            std::min(hx1, clip_rect.x1), std::min(hy1, clip_rect.y1), box.score};
    if (!out.valid()) return std::nullopt;
    return out;
}

// Bilinear warp of a single slice; samples outside the source are zero.
// Pixel (i,j) has continuous center (i+0.5, j+0.5).
inline std::vector<double> warp_slice(const std::vector<double>& src, int sw, int sh,
                                      const Affine& inv, int dw, int dh) {
    std::vector<double> dst(static_cast<std::size_t>(dw) * dh, 0.0);
    for (int y = 0; y < dh; ++y)
        for (int x = 0; x < dw; ++x) {
            auto [sx, sy] = inv.apply(x + 0.5, y + 0.5);
            const double fx = sx - 0.5, fy = sy - 0.5;
            const int x0 = static_cast<int>(std::floor(fx));
            const int y0 = static_cast<int>(std::floor(fy));
            const double wx = fx - x0, wy = fy - y0;
            double acc = 0.0;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const int px = x0 + dx, py = y0 + dy;
                    if (px < 0 || px >= sw || py < 0 || py >= sh) continue;
                    const double w = (dx ? wx : 1.0 - wx) * (dy ? wy : 1.0 - wy);
                    acc += w * src[static_cast<std::size_t>(py) * sw + px];
                }
            dst[static_cast<std::size_t>(y) * dw + x] = acc;
        }
    return dst;
}

struct AugmentDraw {
    double scale = 1.0;
    double angle_rad = 0.0;
    bool mirror = false;
    double tx = 0.0, ty = 0.0;
    double crop_x = 0.0, crop_y = 0.0;
    double noise_sigma = 0.0;
};

inline AugmentDraw draw_augment_params(const AugmentConfig& cfg, int width, int height,
                                       std::mt19937_64& rng) {
    auto uni = [&](double lo, double hi) {
        return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    AugmentDraw d;
    d.scale = uni(cfg.scale_range.first, cfg.scale_range.second);
    d.angle_rad = uni(cfg.rotation_range.first, cfg.rotation_range.second) * 3.14159265358979323846 / 180.0;
    d.mirror = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.mirror_prob;
    d.tx = uni(-cfg.translate_range, cfg.translate_range) * width;
    d.ty = uni(-cfg.translate_range, cfg.translate_range) * height;
    const double sw = width * d.scale, sh = height * d.scale;
    if (cfg.crop_size.first > sw + 1e-9 || cfg.crop_size.second > sh + 1e-9)
        throw std::invalid_argument("augment: crop larger than transformed image");
    d.crop_x = uni(0.0, sw - cfg.crop_size.first);
    d.crop_y = uni(0.0, sh - cfg.crop_size.second);
    d.noise_sigma = uni(cfg.noise_percent_range.first, cfg.noise_percent_range.second) / 100.0;
    return d;
}

inline Affine augment_affine(const AugmentDraw& d, int width, int height) {
    const double sw = width * d.scale, sh = height * d.scale;
    Affine m = Affine::scaling(d.scale);
    m = compose(Affine::rotation_about(d.angle_rad, sw / 2.0, sh / 2.0), m);
    if (d.mirror) m = compose(Affine::mirror_horizontal(sw), m);
    m = compose(Affine::translation(d.tx, d.ty), m);
    m = compose(Affine::translation(-d.crop_x, -d.crop_y), m);
    return m;
}

// Applies the full chain to a triplet and its boxes. Boxes retaining less
// than min_box_area_ratio of their transformed area inside the crop are
// dropped. Noise is drawn per slice; geometry is shared.
inline std::pair<SliceTriplet, std::vector<Box>> augment_sample(const SliceTriplet& triplet,
                                                                const std::vector<Box>& boxes,
                                                                const AugmentConfig& cfg,
                                                                std::mt19937_64& rng) {
    const int w = triplet.width, h = triplet.height;
    const AugmentDraw d = draw_augment_params(cfg, w, h, rng);
    const Affine fwd = augment_affine(d, w, h);
    const Affine inv = fwd.inverse();

    SliceTriplet out;
    out.width = cfg.crop_size.first;
    out.height = cfg.crop_size.second;
    out.center_z = triplet.center_z;
    out.t = triplet.t;
    std::normal_distribution<double> noise(0.0, d.noise_sigma);
    for (int i = 0; i < 3; ++i) {
        out.slices[i] = warp_slice(triplet.slices[i], w, h, inv, out.width, out.height);
        if (d.noise_sigma > 0.0)
            for (double& v : out.slices[i]) v += noise(rng);
    }

    const Box crop_rect{0, 0, static_cast<double>(out.width), static_cast<double>(out.height), 0};
    std::vector<Box> out_boxes;
    for (const Box& b : boxes) {
        // unclipped hull area is the survival baseline
        const Box wide{-1e12, -1e12, 1e12, 1e12, 0};
        auto full = transform_box(b, fwd, wide);
        auto clipped = transform_box(b, fwd, crop_rect);
        if (!full || !clipped) continue;
        if (clipped->area() < cfg.min_box_area_ratio * full->area()) continue;
        out_boxes.push_back(*clipped);
    }
    return {std::move(out), std::move(out_boxes)};
}

}  // namespace casdet
