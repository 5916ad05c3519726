#pragma once
// Synthetic 4D sequence generator: dividing cells among normal-cell clutter,
// with half-peak-threshold ground-truth boxes.

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "casdet/volume.hpp"

namespace casdet {

struct GeneratorConfig {
    Dims4 dims{128, 128, 12, 20};
    std::pair<int, int> event_count_range{1, 3};
    std::pair<int, int> normal_cell_count_range{6, 12};
    double noise_sigma = 0.02;
    std::pair<double, double> cell_radius_range{4.0, 6.0};  // half-peak radius, voxels
    std::pair<int, int> division_duration_range{4, 7};
    double border_margin = 16.0;       // min event-center distance from x/y borders
    std::pair<double, double> event_peak_range{0.6, 0.9};
    std::pair<double, double> normal_peak_range{0.5, 0.85};
    double background_level = 0.06;
    std::uint64_t seed = 0;

    void validate() const {
        auto ordered = [](auto r) { return r.first <= r.second; };
        if (!ordered(event_count_range) || !ordered(normal_cell_count_range) ||
            !ordered(cell_radius_range) || !ordered(division_duration_range) ||
            !ordered(event_peak_range) || !ordered(normal_peak_range))
            throw std::invalid_argument("GeneratorConfig: range lo > hi");
        if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0 || dims.t <= 0)
            throw std::invalid_argument("GeneratorConfig: non-positive dims");
        const double need = 2.0 * border_margin + 2.0 * cell_radius_range.second;
        if (dims.x < need || dims.y < need)
            throw std::invalid_argument("GeneratorConfig: cell does not fit inside volume margins");
        if (division_duration_range.first < 2)
            throw std::invalid_argument("GeneratorConfig: division duration must be >= 2 frames");
        if (division_duration_range.second + 2 > dims.t)
            throw std::invalid_argument("GeneratorConfig: division longer than sequence");
    }
};

// A division event: one blob splitting into two lobes along `dir` between
// frames t0 and t0+duration. Rendered for the whole sequence (mother before,
// daughters after); annotated only inside the division window.
struct MitosisParams {
    double cx = 0, cy = 0, cz = 0;
    double dir_x = 1, dir_y = 0, dir_z = 0;  // unit separation direction
    double sigma_xy = 3.0, sigma_z = 1.2;
    double peak = 0.8;
    int t0 = 0, duration = 5;
    double max_separation = 12.0;  // lobe center distance at full split
};

struct NormalCellParams {
    double cx = 0, cy = 0, cz = 0;
    double sigma_long = 3.0, sigma_short = 3.0, sigma_z = 1.2;
    double angle = 0.0;  // orientation of the long axis, radians
    double peak = 0.7;
};

struct SyntheticScene {
    GeneratorConfig config;
    std::vector<MitosisParams> events;
    std::vector<NormalCellParams> normals;
};

namespace detail {

constexpr double kHalfPeakSigmas = 1.1774;  // sqrt(2 ln 2)

inline double division_phase(const MitosisParams& e, int t) {
    const double u = (t - e.t0) / static_cast<double>(e.duration);
    return u < 0.0 ? 0.0 : u > 1.0 ? 1.0 : u;
}

// Normalized event field in [0,1]: max of the two lobe Gaussians, so the
// peak stays at 1 throughout the split.
inline double event_field(const MitosisParams& e, double x, double y, double z, int t) {
    const double u = division_phase(e, t);
    const double off = 0.5 * e.max_separation * u;
    const double s_xy = e.sigma_xy * (1.0 - 0.2 * u);
    const double s_z = e.sigma_z;
    double best = 0.0;
    for (int lobe : {-1, 1}) {
        const double dx = x - (e.cx + lobe * off * e.dir_x);
        const double dy = y - (e.cy + lobe * off * e.dir_y);
        const double dz = z - (e.cz + lobe * off * e.dir_z);
        const double q = (dx * dx + dy * dy) / (s_xy * s_xy) + (dz * dz) / (s_z * s_z);
        best = std::max(best, std::exp(-0.5 * q));
    }
    return best;
}

inline double normal_field(const NormalCellParams& c, double x, double y, double z) {
    const double dx = x - c.cx, dy = y - c.cy, dz = z - c.cz;
    const double ca = std::cos(c.angle), sa = std::sin(c.angle);
    const double lo = dx * ca + dy * sa;
    const double sh = -dx * sa + dy * ca;
    const double q = (lo * lo) / (c.sigma_long * c.sigma_long) +
                     (sh * sh) / (c.sigma_short * c.sigma_short) +
                     (dz * dz) / (c.sigma_z * c.sigma_z);
    return std::exp(-0.5 * q);
}

}  // namespace detail

// Tight integer boxes of the half-peak region, one per slice where the region
// is non-empty. Pure function of the parameters; deterministic.
inline std::map<std::pair<int, int>, Box> derive_event_boxes(const MitosisParams& e,
                                                             const Dims4& dims) {
    std::map<std::pair<int, int>, Box> out;
    for (int t = e.t0; t <= e.t0 + e.duration && t < dims.t; ++t) {
        const double reach = 0.5 * e.max_separation + 3.0 * e.sigma_xy;
        const int x_lo = std::max(0, static_cast<int>(std::floor(e.cx - reach)));
        const int x_hi = std::min(dims.x - 1, static_cast<int>(std::ceil(e.cx + reach)));
        const int y_lo = std::max(0, static_cast<int>(std::floor(e.cy - reach)));
        const int y_hi = std::min(dims.y - 1, static_cast<int>(std::ceil(e.cy + reach)));
        for (int z = 0; z < dims.z; ++z) {
            int bx0 = dims.x, by0 = dims.y, bx1 = -1, by1 = -1;
            for (int y = y_lo; y <= y_hi; ++y)
                for (int x = x_lo; x <= x_hi; ++x)
                    if (detail::event_field(e, x, y, z, t) >= 0.5) {
                        bx0 = std::min(bx0, x);
                        by0 = std::min(by0, y);
                        bx1 = std::max(bx1, x);
                        by1 = std::max(by1, y);
                    }
            if (bx1 >= bx0)
                out[{z, t}] = Box{static_cast<double>(bx0), static_cast<double>(by0),
                                  static_cast<double>(bx1 + 1), static_cast<double>(by1 + 1), 0.0};
        }
    }
    return out;
}

// Renders the scene (objects + background + sensor noise) and quantizes to the
// u16 grid so that a save/load round trip is exact.
inline Volume4D render_scene(const SyntheticScene& scene) {
    const Dims4& d = scene.config.dims;
    Volume4D vol = Volume4D::zeros(d);
    std::fill(vol.intensities.begin(), vol.intensities.end(), scene.config.background_level);

    auto splat = [&](int t, double cx, double cy, double reach_xy, double reach_z, auto&& field) {
        const int x_lo = std::max(0, static_cast<int>(std::floor(cx - reach_xy)));
        const int x_hi = std::min(d.x - 1, static_cast<int>(std::ceil(cx + reach_xy)));
        const int y_lo = std::max(0, static_cast<int>(std::floor(cy - reach_xy)));
        const int y_hi = std::min(d.y - 1, static_cast<int>(std::ceil(cy + reach_xy)));
        for (int z = 0; z < d.z; ++z) {
            for (int y = y_lo; y <= y_hi; ++y)
                for (int x = x_lo; x <= x_hi; ++x) vol.at(x, y, z, t) += field(x, y, z);
        }
        (void)reach_z;
    };

    for (int t = 0; t < d.t; ++t) {
        for (const auto& e : scene.events) {
            const double reach = 0.5 * e.max_separation + 3.5 * e.sigma_xy;
            splat(t, e.cx, e.cy, reach, 0, [&](int x, int y, int z) {
                return e.peak * detail::event_field(e, x, y, z, t);
            });
        }
        for (const auto& c : scene.normals) {
            const double reach = 3.5 * c.sigma_long;
            splat(t, c.cx, c.cy, reach, 0, [&](int x, int y, int z) {
                return c.peak * detail::normal_field(c, x, y, z);
            });
        }
    }

    std::mt19937_64 rng(scene.config.seed ^ 0x9e3779b97f4a7c15ull);
    std::normal_distribution<double> noise(0.0, scene.config.noise_sigma);
    for (double& v : vol.intensities) {
        if (scene.config.noise_sigma > 0.0) v += noise(rng);
        v = std::clamp(v, 0.0, 1.0);
        v = std::round(v * 65535.0) / 65535.0;  // u16 quantization grid
    }
    return vol;
}

inline SyntheticScene sample_scene(const GeneratorConfig& cfg) {
    cfg.validate();
    SyntheticScene scene;
    scene.config = cfg;
    std::mt19937_64 rng(cfg.seed);
    auto uni = [&](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    auto uni_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

    const Dims4& d = cfg.dims;
    const int n_events = uni_int(cfg.event_count_range.first, cfg.event_count_range.second);
    const int n_normals = uni_int(cfg.normal_cell_count_range.first, cfg.normal_cell_count_range.second);

    for (int i = 0; i < n_events; ++i) {
        MitosisParams e;
        const double radius = uni(cfg.cell_radius_range.first, cfg.cell_radius_range.second);
        e.sigma_xy = radius / detail::kHalfPeakSigmas;
        e.sigma_z = std::max(1.1, e.sigma_xy / 2.5);
        e.max_separation = 4.0 * e.sigma_xy;
        // keep event centers apart so annotations never overlap
        for (int attempt = 0; attempt < 64; ++attempt) {
            e.cx = uni(cfg.border_margin, d.x - cfg.border_margin);
            e.cy = uni(cfg.border_margin, d.y - cfg.border_margin);
            e.cz = uni(1.2, d.z - 2.2);
            bool ok = true;
            for (const auto& prev : scene.events) {
                const double dist = std::hypot(e.cx - prev.cx, e.cy - prev.cy);
                if (dist < 1.5 * (e.max_separation + prev.max_separation)) ok = false;
            }
            if (ok) break;
        }
        const double angle = uni(0.0, 2.0 * 3.14159265358979323846);
        const double tilt = uni(-0.25, 0.25);  // small z component of the split axis
        e.dir_x = std::cos(angle);
        e.dir_y = std::sin(angle);
        e.dir_z = tilt;
        const double norm = std::sqrt(e.dir_x * e.dir_x + e.dir_y * e.dir_y + e.dir_z * e.dir_z);
        e.dir_x /= norm;
        e.dir_y /= norm;
        e.dir_z /= norm;
        e.duration = uni_int(cfg.division_duration_range.first, cfg.division_duration_range.second);
        e.t0 = uni_int(1, d.t - e.duration - 2);
        e.peak = uni(cfg.event_peak_range.first, cfg.event_peak_range.second);
        scene.events.push_back(e);
    }

    for (int i = 0; i < n_normals; ++i) {
        NormalCellParams c;
        const double radius = uni(cfg.cell_radius_range.first, cfg.cell_radius_range.second);
        c.sigma_short = radius / detail::kHalfPeakSigmas;
        c.sigma_long = c.sigma_short * uni(1.0, 1.35);
        c.sigma_z = std::max(1.1, c.sigma_short / 2.5);
        c.angle = uni(0.0, 3.14159265358979323846);
        c.peak = uni(cfg.normal_peak_range.first, cfg.normal_peak_range.second);
        // normal cells may sit anywhere, including near borders, but keep them
        // clear of event annotations
        for (int attempt = 0; attempt < 64; ++attempt) {
            c.cx = uni(2.0, d.x - 2.0);
            c.cy = uni(2.0, d.y - 2.0);
            c.cz = uni(1.0, d.z - 2.0);
            bool ok = true;
            for (const auto& e : scene.events) {
                const double dist = std::hypot(c.cx - e.cx, c.cy - e.cy);
                if (dist < 0.5 * e.max_separation + 3.0 * (e.sigma_xy + c.sigma_long)) ok = false;
            }
            for (const auto& prev : scene.normals) {
                if (std::hypot(c.cx - prev.cx, c.cy - prev.cy) < 2.0 * (c.sigma_long + prev.sigma_long))
                    ok = false;
            }
            if (ok) break;
        }
        scene.normals.push_back(c);
    }
    return scene;
}

inline std::pair<Volume4D, std::vector<GroundTruthEvent>> generate_from_scene(
    const SyntheticScene& scene) {
    Volume4D vol = render_scene(scene);
    std::vector<GroundTruthEvent> truth;
    for (std::size_t i = 0; i < scene.events.size(); ++i) {
        GroundTruthEvent ev;
        ev.event_id = static_cast<int>(i);
        ev.boxes = derive_event_boxes(scene.events[i], scene.config.dims);
        truth.push_back(std::move(ev));
    }
    return {std::move(vol), std::move(truth)};
}

inline std::pair<Volume4D, std::vector<GroundTruthEvent>> generate_sequence(
    const GeneratorConfig& cfg) {
    return generate_from_scene(sample_scene(cfg));
}

}  // namespace casdet
