#pragma once
// Stage 1: per-slice candidate detection from slice triplets. Shared 2D
// backbone per slice, depth-collapsing 3x3x3 fusion conv, anchor proposal
// head, ROI classification/regression head, and z-neighbor mean fusion.

#include <array>
#include <random>
#include <vector>

#include "casdet/anchors.hpp"
#include "casdet/box.hpp"
#include "casdet/layers.hpp"
#include "casdet/losses.hpp"
#include "casdet/volume.hpp"

namespace casdet {

enum class Stage { raw, volume_fused, final };

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::raw: return "raw";
        case Stage::volume_fused: return "volume_fused";
        default: return "final";
    }
}

struct DetectionSet {
    int z = 0, t = 0;
    Stage stage = Stage::raw;
    std::vector<Box> boxes;
};

// Architecture constants. The feature stride (4 from the backbone pools, x2
// from the post-fusion pool) must match AnchorConfig::stride.
namespace s1 {
constexpr int kBackboneC1 = 16;
constexpr int kBackboneC2 = 32;
constexpr int kRoiPool = 7;
constexpr int kRoiHidden = 64;
constexpr int kFeatureStride = 8;
}  // namespace s1

struct Stage1Weights {
    LayerParams conv1, conv2;  // backbone, shared across the three slices
    LayerParams fuse3d;        // 3x3x3, collapses the triplet axis
    LayerParams rpn_head;      // 1x1 conv, per-anchor (2 cls logits + 4 deltas)
    LayerParams roi_fc1, roi_cls, roi_reg;

    static Stage1Weights init(int anchors_per_cell, std::mt19937_64& rng) {
        Stage1Weights w;
        w.conv1 = make_conv2d(1, s1::kBackboneC1, 3, rng);
        w.conv2 = make_conv2d(s1::kBackboneC1, s1::kBackboneC2, 3, rng);
        w.fuse3d = make_conv3d(s1::kBackboneC2, s1::kBackboneC2, 3, 3, 3, rng);
        w.rpn_head = make_conv2d(s1::kBackboneC2, anchors_per_cell * 6, 1, rng);
        const int roi_dim = s1::kBackboneC2 * s1::kRoiPool * s1::kRoiPool;
        w.roi_fc1 = make_linear(roi_dim, s1::kRoiHidden, rng);
        w.roi_cls = make_linear(s1::kRoiHidden, 2, rng);
        w.roi_reg = make_linear(s1::kRoiHidden, 4, rng);
        return w;
    }

    std::vector<LayerParams*> all_params() {
        return {&conv1, &conv2, &fuse3d, &rpn_head, &roi_fc1, &roi_cls, &roi_reg};
    }
};

// ------------------------------------------------------------ forward caches

struct SliceBackboneCache {
    Tensor input;         // [1,H,W]
    Tensor c1, a1, p1;    // conv1 out, relu, pool
    Tensor c2, a2, p2;    // conv2 out, relu, pool -> [C2, H/4, W/4]
};

struct Stage1Cache {
    std::array<SliceBackboneCache, 3> slices;
    Tensor stacked;   // [C2, 3, H/4, W/4]
    Tensor f3, a3;    // conv3d out [C2,1,H/4,W/4], relu
    Tensor squeezed;  // [C2, H/4, W/4]
    Tensor fused;     // [C2, H/8, W/8], the shared feature map
    Tensor rpn;       // [A*6, H/8, W/8]
    int width = 0, height = 0;
};

inline void backbone_forward(const std::vector<double>& slice, int w, int h,
                             const Stage1Weights& weights, SliceBackboneCache& cache) {
    cache.input = Tensor({1, h, w}, slice);
    cache.c1 = conv2d(cache.input, weights.conv1, 1, 1);
    cache.a1 = relu(cache.c1);
    cache.p1 = max_pool2d(cache.a1, 2, 2);
    cache.c2 = conv2d(cache.p1, weights.conv2, 1, 1);
    cache.a2 = relu(cache.c2);
    cache.p2 = max_pool2d(cache.a2, 2, 2);
}

inline Stage1Cache stage1_forward(const SliceTriplet& triplet, const Stage1Weights& weights) {
    Stage1Cache cache;
    cache.width = triplet.width;
    cache.height = triplet.height;
    for (int i = 0; i < 3; ++i)
        backbone_forward(triplet.slices[i], triplet.width, triplet.height, weights, cache.slices[i]);

    const int C = s1::kBackboneC2;
    const int fh = cache.slices[0].p2.shape[1], fw = cache.slices[0].p2.shape[2];
    cache.stacked = Tensor({C, 3, fh, fw});
    for (int c = 0; c < C; ++c)
        for (int s = 0; s < 3; ++s) {
            const double* src = cache.slices[s].p2.values.data() + static_cast<std::size_t>(c) * fh * fw;
            double* dst = cache.stacked.values.data() +
                          (static_cast<std::size_t>(c) * 3 + s) * fh * fw;
            std::copy(src, src + static_cast<std::size_t>(fh) * fw, dst);
        }
    cache.f3 = conv3d(cache.stacked, weights.fuse3d, 1, 0, 1, 1);  // depth 3 -> 1
    cache.a3 = relu(cache.f3);
    cache.squeezed = Tensor({C, fh, fw}, cache.a3.values);
    cache.fused = max_pool2d(cache.squeezed, 2, 2);
    cache.rpn = conv2d(cache.fused, weights.rpn_head, 1, 0);
    return cache;
}

// Backward from gradients at the rpn map and at the fused feature map.
inline void stage1_backward(const Stage1Cache& cache, Stage1Weights& weights,
                            const Tensor& grad_rpn, const Tensor& grad_fused_extra) {
    Tensor grad_fused = conv2d_backward(cache.fused, weights.rpn_head, 1, 0, grad_rpn);
    if (!grad_fused_extra.values.empty()) {
        for (std::size_t i = 0; i < grad_fused.numel(); ++i)
            grad_fused.values[i] += grad_fused_extra.values[i];
    }
    Tensor grad_sq = max_pool2d_backward(cache.squeezed, 2, 2, grad_fused);
    Tensor grad_a3(cache.a3.shape, grad_sq.values);
    Tensor grad_f3 = relu_backward(cache.f3, grad_a3);
    Tensor grad_stacked = conv3d_backward(cache.stacked, weights.fuse3d, 1, 0, 1, 1, grad_f3);

    const int C = s1::kBackboneC2;
    const int fh = cache.slices[0].p2.shape[1], fw = cache.slices[0].p2.shape[2];
    for (int s = 0; s < 3; ++s) {
        const SliceBackboneCache& sc = cache.slices[s];
        Tensor grad_p2({C, fh, fw});
        for (int c = 0; c < C; ++c) {
            const double* src = grad_stacked.values.data() +
                                (static_cast<std::size_t>(c) * 3 + s) * fh * fw;
            double* dst = grad_p2.values.data() + static_cast<std::size_t>(c) * fh * fw;
            std::copy(src, src + static_cast<std::size_t>(fh) * fw, dst);
        }
        Tensor grad_a2 = max_pool2d_backward(sc.a2, 2, 2, grad_p2);
        Tensor grad_c2 = relu_backward(sc.c2, grad_a2);
        Tensor grad_p1 = conv2d_backward(sc.p1, weights.conv2, 1, 1, grad_c2);
        Tensor grad_a1 = max_pool2d_backward(sc.a1, 2, 2, grad_p1);
        Tensor grad_c1 = relu_backward(sc.c1, grad_a1);
        conv2d_backward(sc.input, weights.conv1, 1, 1, grad_c1);
    }
}

// ----------------------------------------------------------------- ROI head

struct RoiCache {
    Box roi;
    Tensor pooled;               // [C2, 7, 7]
    std::vector<int> argmax;     // flat index into the fused map per pooled cell
    Tensor fc1_out, fc1_act;
    Tensor cls_logits, reg_out;  // [2], [4]
};

inline RoiCache roi_forward(const Tensor& fused, const Box& roi, const Stage1Weights& weights) {
    const int C = fused.shape[0], fh = fused.shape[1], fw = fused.shape[2];
    RoiCache rc;
    rc.roi = roi;
    rc.pooled = Tensor({C, s1::kRoiPool, s1::kRoiPool});
    rc.argmax.assign(static_cast<std::size_t>(C) * s1::kRoiPool * s1::kRoiPool, -1);

    const double fx0 = roi.x0 / s1::kFeatureStride, fx1 = roi.x1 / s1::kFeatureStride;
    const double fy0 = roi.y0 / s1::kFeatureStride, fy1 = roi.y1 / s1::kFeatureStride;
    const double bw = (fx1 - fx0) / s1::kRoiPool, bh = (fy1 - fy0) / s1::kRoiPool;
    for (int by = 0; by < s1::kRoiPool; ++by)
        for (int bx = 0; bx < s1::kRoiPool; ++bx) {
            int cx0 = static_cast<int>(std::floor(fx0 + bx * bw));
            int cx1 = static_cast<int>(std::ceil(fx0 + (bx + 1) * bw));
            int cy0 = static_cast<int>(std::floor(fy0 + by * bh));
            int cy1 = static_cast<int>(std::ceil(fy0 + (by + 1) * bh));
            cx0 = std::clamp(cx0, 0, fw - 1);
            cy0 = std::clamp(cy0, 0, fh - 1);
            cx1 = std::clamp(cx1, cx0 + 1, fw);
            cy1 = std::clamp(cy1, cy0 + 1, fh);
            for (int c = 0; c < C; ++c) {
                const double* plane = fused.values.data() + static_cast<std::size_t>(c) * fh * fw;
                int best_idx = cy0 * fw + cx0;
                double best = plane[best_idx];
                for (int y = cy0; y < cy1; ++y)
                    for (int x = cx0; x < cx1; ++x)
                        if (plane[y * fw + x] > best) {
                            best = plane[y * fw + x];
                            best_idx = y * fw + x;
                        }
                const std::size_t out_idx =
                    (static_cast<std::size_t>(c) * s1::kRoiPool + by) * s1::kRoiPool + bx;
                rc.pooled.values[out_idx] = best;
                rc.argmax[out_idx] = c * fh * fw + best_idx;
            }
        }

    Tensor flat({static_cast<int>(rc.pooled.numel())}, rc.pooled.values);
    rc.fc1_out = linear(flat, weights.roi_fc1);
    rc.fc1_act = relu(rc.fc1_out);
    rc.cls_logits = linear(rc.fc1_act, weights.roi_cls);
    rc.reg_out = linear(rc.fc1_act, weights.roi_reg);
    return rc;
}

inline void roi_backward(const RoiCache& rc, Stage1Weights& weights, const Tensor& grad_cls,
                         const Tensor& grad_reg, Tensor& grad_fused) {
    Tensor grad_fc1_act(rc.fc1_act.shape);
    {
        Tensor g1 = linear_backward(rc.fc1_act, weights.roi_cls, grad_cls);
        Tensor g2 = linear_backward(rc.fc1_act, weights.roi_reg, grad_reg);
        for (std::size_t i = 0; i < grad_fc1_act.numel(); ++i)
            grad_fc1_act.values[i] = g1.values[i] + g2.values[i];
    }
    Tensor grad_fc1 = relu_backward(rc.fc1_out, grad_fc1_act);
    Tensor flat({static_cast<int>(rc.pooled.numel())}, rc.pooled.values);
    Tensor grad_flat = linear_backward(flat, weights.roi_fc1, grad_fc1);
    for (std::size_t i = 0; i < rc.argmax.size(); ++i)
        grad_fused.values[rc.argmax[i]] += grad_flat.values[i];
}

// --------------------------------------------------------------- detection

// Decode + threshold + NMS + top_k over the rpn map. Anchor ordering matches
// generate_anchors (row-major cells, then scales, then ratios).
inline std::vector<Box> propose(const Stage1Cache& cache, const std::vector<Box>& anchors,
                                const AnchorConfig& cfg) {
    const int A = cfg.per_cell();
    const int fh = cache.rpn.shape[1], fw = cache.rpn.shape[2];
    std::vector<Box> cands;
    for (int cy = 0; cy < fh; ++cy)
        for (int cx = 0; cx < fw; ++cx)
            for (int a = 0; a < A; ++a) {
                const std::size_t anchor_idx = (static_cast<std::size_t>(cy) * fw + cx) * A + a;
                auto at = [&](int ch) {
                    return cache.rpn.values[(static_cast<std::size_t>(a * 6 + ch) * fh + cy) * fw + cx];
                };
                const double l0 = at(0), l1 = at(1);
                const double score = 1.0 / (1.0 + std::exp(l0 - l1));  // softmax fg prob
                if (score < cfg.score_threshold) continue;
                Box b = decode_box(anchors[anchor_idx], {at(2), at(3), at(4), at(5)});
                b.score = score;
                b = clip_box(b, cache.width, cache.height);
                if (b.valid()) cands.push_back(b);
            }
    std::vector<Box> kept = nms(std::move(cands), cfg.nms_iou);
    if (static_cast<int>(kept.size()) > cfg.top_k) kept.resize(cfg.top_k);
    return kept;
}

// Full stage-1 inference on one slice triplet; o_i of the cascade.
inline DetectionSet detect_slice(const SliceTriplet& triplet, const Stage1Weights& weights,
                                 const AnchorConfig& cfg) {
    Stage1Cache cache = stage1_forward(triplet, weights);
    const std::vector<Box> anchors = generate_anchors(triplet.width, triplet.height, cfg);
    DetectionSet out;
    out.z = triplet.center_z;
    out.t = triplet.t;
    out.stage = Stage::raw;
    for (const Box& p : propose(cache, anchors, cfg)) {
        RoiCache rc = roi_forward(cache.fused, p, weights);
        const double score = softmax_prob(rc.cls_logits, 1);
        if (score < cfg.score_threshold) continue;
        Box refined = decode_box(p, {rc.reg_out.values[0], rc.reg_out.values[1],
                                     rc.reg_out.values[2], rc.reg_out.values[3]});
        refined.score = score;
        refined = clip_box(refined, triplet.width, triplet.height);
        if (refined.valid()) out.boxes.push_back(refined);
    }
    std::stable_sort(out.boxes.begin(), out.boxes.end(), score_order);
    return out;
}

// ------------------------------------------------------------- z fusion

// The three raw detection sets at z-1, z, z+1 for one (z, t).
struct OutputSet {
    std::array<DetectionSet, 3> members;
};

// Greedy iou grouping + corner mean + sum/3 score (absent members count 0).
inline DetectionSet fuse_neighbor_outputs(const OutputSet& set, double match_iou,
                                          double keep_threshold = 0.25) {
    struct Tagged {
        Box box;
        int member;
        bool grouped = false;
    };
    std::vector<Tagged> pool;
    for (int m = 0; m < 3; ++m)
        for (const Box& b : set.members[m].boxes) pool.push_back({b, m, false});
    std::stable_sort(pool.begin(), pool.end(),
                     [](const Tagged& a, const Tagged& b) { return score_order(a.box, b.box); });

    DetectionSet out;
    out.z = set.members[1].z;
    out.t = set.members[1].t;
    out.stage = Stage::volume_fused;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool[i].grouped) continue;
        pool[i].grouped = true;
        std::vector<const Box*> group{&pool[i].box};
        for (int m = 0; m < 3; ++m) {
            if (m == pool[i].member) continue;
            double best_iou = 0.0;
            std::size_t best_j = pool.size();
            for (std::size_t j = 0; j < pool.size(); ++j) {
                if (pool[j].grouped || pool[j].member != m) continue;
                const double v = iou(pool[i].box, pool[j].box);
                if (v > best_iou) {
                    best_iou = v;
                    best_j = j;
                }
            }
            if (best_j < pool.size() && best_iou >= match_iou) {
                pool[best_j].grouped = true;
                group.push_back(&pool[best_j].box);
            }
        }
        Box fused{0, 0, 0, 0, 0};
        for (const Box* b : group) {
            fused.x0 += b->x0;
            fused.y0 += b->y0;
            fused.x1 += b->x1;
            fused.y1 += b->y1;
            fused.score += b->score;
        }
        const double n = static_cast<double>(group.size());
        fused.x0 /= n;
        fused.y0 /= n;
        fused.x1 /= n;
        fused.y1 /= n;
        fused.score /= 3.0;  // absent members count as zero
        if (fused.score >= keep_threshold) out.boxes.push_back(fused);
    }
    std::stable_sort(out.boxes.begin(), out.boxes.end(), score_order);
    return out;
}

}  // namespace casdet
