#pragma once
// Axis-aligned scored boxes, IoU, and greedy NMS. Boxes are half-open
// [x0,x1) x [y0,y1) in pixel coordinates.

#include <algorithm>
#include <cmath>
#include <tuple>
#include <vector>

namespace casdet {

struct Box {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    double score = 0.0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    double cx() const { return 0.5 * (x0 + x1); }
    double cy() const { return 0.5 * (y0 + y1); }
    bool valid() const { return x0 < x1 && y0 < y1; }
    bool operator==(const Box&) const = default;
};

inline double iou(const Box& a, const Box& b) {
    const double ix = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    const double iy = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    if (ix <= 0.0 || iy <= 0.0) return 0.0;
    const double inter = ix * iy;
    return inter / (a.area() + b.area() - inter);
}

inline Box clip_box(Box b, double w, double h) {
    b.x0 = std::clamp(b.x0, 0.0, w);
    b.x1 = std::clamp(b.x1, 0.0, w);
    b.y0 = std::clamp(b.y0, 0.0, h);
    b.y1 = std::clamp(b.y1, 0.0, h);
    return b;
}

inline bool score_order(const Box& a, const Box& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.x0, a.y0, a.x1, a.y1) < std::tie(b.x0, b.y0, b.x1, b.y1);
}

// Greedy descending-score suppression; ties broken lexicographically by corners.
inline std::vector<Box> nms(std::vector<Box> boxes, double iou_threshold) {
    std::stable_sort(boxes.begin(), boxes.end(), score_order);
    std::vector<Box> kept;
    std::vector<char> removed(boxes.size(), 0);
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        if (removed[i]) continue;
        kept.push_back(boxes[i]);
        for (std::size_t j = i + 1; j < boxes.size(); ++j)
            if (!removed[j] && iou(boxes[i], boxes[j]) >= iou_threshold) removed[j] = 1;
    }
    return kept;
}

}  // namespace casdet
