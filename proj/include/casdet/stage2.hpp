#pragma once
// Stage 2: temporal candidate pooling across {t-1, t, t+1}, per-frame crop
// classification, and temporal mean fusion producing the final detections.

#include <array>
#include <random>
#include <vector>

#include "casdet/layers.hpp"
#include "casdet/losses.hpp"
#include "casdet/stage1.hpp"
#include "casdet/volume.hpp"

namespace casdet {

namespace s2 {
constexpr int kCrop = 48;
constexpr int kC1 = 8;
constexpr int kC2 = 16;
constexpr int kHidden = 32;
constexpr int kFlat = kC2 * (kCrop / 4) * (kCrop / 4);
}  // namespace s2

struct Stage2Weights {
    LayerParams conv1, conv2, fc1, fc2;

    static Stage2Weights init(std::mt19937_64& rng) {
        Stage2Weights w;
        w.conv1 = make_conv2d(1, s2::kC1, 3, rng);
        w.conv2 = make_conv2d(s2::kC1, s2::kC2, 3, rng);
        w.fc1 = make_linear(s2::kFlat, s2::kHidden, rng);
        w.fc2 = make_linear(s2::kHidden, 2, rng);
        return w;
    }

    std::vector<LayerParams*> all_params() { return {&conv1, &conv2, &fc1, &fc2}; }
};

struct TemporalCandidate {
    Box box;                                   // frame-agnostic location
    std::array<bool, 3> source_frames{};       // contributed by {t-1, t, t+1}
    std::array<double, 3> per_frame_scores{};  // filled by classify_temporal
    bool scored = false;
};

// Union of the three volume-fused sets, deduplicated by greedy iou grouping.
// Candidates seen only by a neighboring frame are retained; that is the
// recovery path for cells the current frame missed.
inline std::vector<TemporalCandidate> build_candidate_pool(const DetectionSet& v_prev,
                                                           const DetectionSet& v_curr,
                                                           const DetectionSet& v_next,
                                                           double match_iou) {
    if (v_prev.z != v_curr.z || v_next.z != v_curr.z)
        throw std::invalid_argument("build_candidate_pool: member sets disagree on z");
    struct Tagged {
        Box box;
        int frame;  // 0,1,2 for t-1,t,t+1
        bool grouped = false;
    };
    std::vector<Tagged> pool;
    const DetectionSet* sets[3] = {&v_prev, &v_curr, &v_next};
    for (int f = 0; f < 3; ++f)
        for (const Box& b : sets[f]->boxes) pool.push_back({b, f, false});
    std::stable_sort(pool.begin(), pool.end(),
                     [](const Tagged& a, const Tagged& b) { return score_order(a.box, b.box); });

    std::vector<TemporalCandidate> out;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool[i].grouped) continue;
        pool[i].grouped = true;
        std::vector<const Tagged*> group{&pool[i]};
        for (int f = 0; f < 3; ++f) {
            if (f == pool[i].frame) continue;
            double best_iou = 0.0;
            std::size_t best_j = pool.size();
            for (std::size_t j = 0; j < pool.size(); ++j) {
                if (pool[j].grouped || pool[j].frame != f) continue;
                const double v = iou(pool[i].box, pool[j].box);
                if (v > best_iou) {
                    best_iou = v;
                    best_j = j;
                }
            }
            if (best_j < pool.size() && best_iou >= match_iou) {
                pool[best_j].grouped = true;
                group.push_back(&pool[best_j]);
            }
        }
        TemporalCandidate cand;
        double max_score = 0.0;
        for (const Tagged* t : group) {
            cand.box.x0 += t->box.x0;
            cand.box.y0 += t->box.y0;
            cand.box.x1 += t->box.x1;
            cand.box.y1 += t->box.y1;
            max_score = std::max(max_score, t->box.score);
            cand.source_frames[t->frame] = true;
        }
        const double n = static_cast<double>(group.size());
        cand.box.x0 /= n;
        cand.box.y0 /= n;
        cand.box.x1 /= n;
        cand.box.y1 /= n;
        cand.box.score = max_score;
        out.push_back(cand);
    }
    return out;
}

// ------------------------------------------------------------- classifier

// Fixed-size crop centered on (cx, cy); out-of-image samples are zero.
inline std::vector<double> crop_window(const double* slice, int w, int h, double cx, double cy,
                                       int size = s2::kCrop) {
    std::vector<double> out(static_cast<std::size_t>(size) * size, 0.0);
    const int x0 = static_cast<int>(std::lround(cx)) - size / 2;
    const int y0 = static_cast<int>(std::lround(cy)) - size / 2;
    for (int y = 0; y < size; ++y) {
        const int sy = y0 + y;
        if (sy < 0 || sy >= h) continue;
        for (int x = 0; x < size; ++x) {
            const int sx = x0 + x;
            if (sx < 0 || sx >= w) continue;
            out[static_cast<std::size_t>(y) * size + x] = slice[static_cast<std::size_t>(sy) * w + sx];
        }
    }
    return out;
}

struct Stage2Cache {
    Tensor input;
    Tensor c1, a1, p1;
    Tensor c2, a2, p2;
    Tensor fc1_out, fc1_act, logits;
};

inline Stage2Cache stage2_forward(const std::vector<double>& crop, const Stage2Weights& weights) {
    Stage2Cache c;
    c.input = Tensor({1, s2::kCrop, s2::kCrop}, crop);
    c.c1 = conv2d(c.input, weights.conv1, 1, 1);
    c.a1 = relu(c.c1);
    c.p1 = max_pool2d(c.a1, 2, 2);
    c.c2 = conv2d(c.p1, weights.conv2, 1, 1);
    c.a2 = relu(c.c2);
    c.p2 = max_pool2d(c.a2, 2, 2);
    Tensor flat({s2::kFlat}, c.p2.values);
    c.fc1_out = linear(flat, weights.fc1);
    c.fc1_act = relu(c.fc1_out);
    c.logits = linear(c.fc1_act, weights.fc2);
    return c;
}

inline void stage2_backward(const Stage2Cache& c, Stage2Weights& weights, const Tensor& grad_logits) {
    Tensor grad_act = linear_backward(c.fc1_act, weights.fc2, grad_logits);
    Tensor grad_fc1 = relu_backward(c.fc1_out, grad_act);
    Tensor flat({s2::kFlat}, c.p2.values);
    Tensor grad_flat = linear_backward(flat, weights.fc1, grad_fc1);
    Tensor grad_p2(c.p2.shape, grad_flat.values);
    Tensor grad_a2 = max_pool2d_backward(c.a2, 2, 2, grad_p2);
    Tensor grad_c2 = relu_backward(c.c2, grad_a2);
    Tensor grad_p1 = conv2d_backward(c.p1, weights.conv2, 1, 1, grad_c2);
    Tensor grad_a1 = max_pool2d_backward(c.a1, 2, 2, grad_p1);
    Tensor grad_c1 = relu_backward(c.c1, grad_a1);
    conv2d_backward(c.input, weights.conv1, 1, 1, grad_c1);
}

inline double stage2_score(const std::vector<double>& crop, const Stage2Weights& weights) {
    const Stage2Cache c = stage2_forward(crop, weights);
    return softmax_prob(c.logits, 1);
}

// Per-frame mitotic probability from crops at frames {t-1, t, t+1}; boundary
// frames replicate their existing neighbor.
inline TemporalCandidate classify_temporal(TemporalCandidate cand, const Volume4D& vol, int z,
                                           int t, const Stage2Weights& weights) {
    const int frames[3] = {t > 0 ? t - 1 : 0, t, t < vol.dims.t - 1 ? t + 1 : vol.dims.t - 1};
    for (int i = 0; i < 3; ++i) {
        const std::vector<double> crop =
            crop_window(vol.slice_ptr(z, frames[i]), vol.dims.x, vol.dims.y, cand.box.cx(), cand.box.cy());
        cand.per_frame_scores[i] = stage2_score(crop, weights);
    }
    cand.scored = true;
    return cand;
}

// Final score = mean of the three per-frame scores; keep iff >= threshold.
inline DetectionSet fuse_temporal(const std::vector<TemporalCandidate>& candidates, int z, int t,
                                  double accept_threshold) {
    DetectionSet out;
    out.z = z;
    out.t = t;
    out.stage = Stage::final;
    for (const TemporalCandidate& c : candidates) {
        if (!c.scored) throw std::invalid_argument("fuse_temporal: unpopulated per-frame scores");
        const double mean =
            (c.per_frame_scores[0] + c.per_frame_scores[1] + c.per_frame_scores[2]) / 3.0;
        if (mean >= accept_threshold) {
            Box b = c.box;
            b.score = mean;
            out.boxes.push_back(b);
        }
    }
    std::stable_sort(out.boxes.begin(), out.boxes.end(), score_order);
    return out;
}

}  // namespace casdet
