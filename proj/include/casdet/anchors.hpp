#pragma once
// Anchor grid generation and box-offset coding for the stage-1 proposal head.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "casdet/box.hpp"

namespace casdet {

struct AnchorConfig {
    std::vector<double> scales = {8.0, 16.0, 24.0};  // box side lengths, pixels
    std::vector<double> aspect_ratios = {1.0};       // height / width
    int stride = 8;
    double score_threshold = 0.1;
    double nms_iou = 0.5;
    int top_k = 64;

    int per_cell() const { return static_cast<int>(scales.size() * aspect_ratios.size()); }
};

// One anchor per (cell, scale, ratio); row-major cells, then scales, then
// ratios. Anchors are clipped to image bounds.
inline std::vector<Box> generate_anchors(int width, int height, const AnchorConfig& cfg) {
    if (width % cfg.stride != 0 || height % cfg.stride != 0)
        throw std::invalid_argument("generate_anchors: stride must divide image dims");
    const int cells_x = width / cfg.stride;
    const int cells_y = height / cfg.stride;
    std::vector<Box> anchors;
    anchors.reserve(static_cast<std::size_t>(cells_x) * cells_y * cfg.per_cell());
    for (int cy = 0; cy < cells_y; ++cy)
        for (int cx = 0; cx < cells_x; ++cx) {
            const double px = (cx + 0.5) * cfg.stride;
            const double py = (cy + 0.5) * cfg.stride;
            for (double s : cfg.scales)
                for (double r : cfg.aspect_ratios) {
                    const double w = s / std::sqrt(r);
                    const double h = s * std::sqrt(r);
                    Box b{px - w / 2, py - h / 2, px + w / 2, py + h / 2, 0.0};
                    anchors.push_back(clip_box(b, width, height));
                }
        }
    return anchors;
}

// Fast-R-CNN box coding: (dx, dy) relative to anchor size, (dw, dh) log-scale.
struct BoxDelta {
    double dx = 0, dy = 0, dw = 0, dh = 0;
};

inline BoxDelta encode_box(const Box& anchor, const Box& target) {
    const double aw = anchor.width(), ah = anchor.height();
    return {(target.cx() - anchor.cx()) / aw, (target.cy() - anchor.cy()) / ah,
            std::log(target.width() / aw), std::log(target.height() / ah)};
}

inline Box decode_box(const Box& anchor, const BoxDelta& d) {
    const double aw = anchor.width(), ah = anchor.height();
    const double cx = anchor.cx() + d.dx * aw;
    const double cy = anchor.cy() + d.dy * ah;
    const double w = aw * std::exp(std::clamp(d.dw, -4.0, 4.0));
    const double h = ah * std::exp(std::clamp(d.dh, -4.0, 4.0));
    return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, anchor.score};
}

}  // namespace casdet
