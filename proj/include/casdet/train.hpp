#pragma once
// End-to-end cascaded training. One Adam step per batch over all parameters
// of both stages; loss = stage-1 objectness + box regression (anchor head and
// ROI refinement) + stage-1 ROI classification + stage-2 temporal
// classification, equally weighted by default.

#include <random>
#include <stdexcept>
#include <vector>

#include "casdet/augment.hpp"
#include "casdet/metrics.hpp"
#include "casdet/model.hpp"
#include "casdet/optimizer.hpp"

namespace casdet {

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    OptimizerConfig optimizer;
    int batch_slices = 5;
    long max_batches = 2000;
    AugmentConfig augment;
    AnchorConfig anchors;
    double w_objectness = 1.0, w_regression = 1.0, w_roi_cls = 1.0, w_temporal = 1.0;
    std::uint64_t seed = 0;

    double positive_sample_prob = 0.7;  // chance a batch slot draws a positive slice
    int max_pos_anchors = 16, max_neg_anchors = 32;
    int max_pos_rois = 8, max_neg_rois = 8;
    int max_pos_candidates = 4, max_neg_candidates = 4;
    double anchor_pos_iou = 0.5, anchor_neg_iou = 0.3;
    double roi_pos_iou = 0.5, roi_neg_iou = 0.3;  // band between is ignored
    int jittered_positives = 2;  // extra perturbed truth boxes per ground-truth box

    double fuse_match_iou = 0.5, fuse_keep_threshold = 0.25;
    double temporal_match_iou = 0.5, accept_threshold = 0.5;

    TrainConfig() { augment.crop_size = {64, 64}; }  // desk-scale default
};

struct BatchLog {
    long batch = 0;
    double lr = 0.0;
    double loss_objectness = 0.0, loss_regression = 0.0, loss_roi_cls = 0.0, loss_temporal = 0.0;
    double total = 0.0;
};

struct TrainingDataset {
    Volume4D volume;
    std::vector<GroundTruthEvent> truth;
};

struct TrainResult {
    CascadeModel model;
    std::vector<BatchLog> log;
};

namespace traindetail {

struct SliceKey {
    int dataset, z, t;
};

// Augmented view of one training slice: the z triplet at frame t plus the
// center slice at frames t-1 and t+1 (same geometry, fresh noise), and the
// surviving transformed truth boxes.
struct AugmentedSample {
    SliceTriplet triplet;
    std::vector<double> prev_slice, next_slice;  // center z at t-1 / t+1
    int width = 0, height = 0;
    std::vector<Box> boxes;
};

inline AugmentedSample make_sample(const TrainingDataset& ds,
                                   const std::map<std::pair<int, int>, std::vector<Box>>& truth_map,
                                   int z, int t, const AugmentConfig& cfg, std::mt19937_64& rng) {
    const Volume4D& vol = ds.volume;
    const SliceTriplet raw = extract_slice_triplet(vol, z, t);
    const int w = raw.width, h = raw.height;
    const AugmentDraw d = draw_augment_params(cfg, w, h, rng);
    const Affine fwd = augment_affine(d, w, h);
    const Affine inv = fwd.inverse();

    AugmentedSample s;
    s.width = cfg.crop_size.first;
    s.height = cfg.crop_size.second;
    s.triplet.width = s.width;
    s.triplet.height = s.height;
    s.triplet.center_z = z;
    s.triplet.t = t;

    std::normal_distribution<double> noise(0.0, d.noise_sigma);
    auto warp_with_noise = [&](const std::vector<double>& src) {
        std::vector<double> out = warp_slice(src, w, h, inv, s.width, s.height);
        if (d.noise_sigma > 0.0)
            for (double& v : out) v += noise(rng);
        return out;
    };
    for (int i = 0; i < 3; ++i) s.triplet.slices[i] = warp_with_noise(raw.slices[i]);
    const int tm = t > 0 ? t - 1 : 0;
    const int tp = t < vol.dims.t - 1 ? t + 1 : vol.dims.t - 1;
    s.prev_slice = warp_with_noise(vol.slice(z, tm));
    s.next_slice = warp_with_noise(vol.slice(z, tp));

    const Box crop_rect{0, 0, static_cast<double>(s.width), static_cast<double>(s.height), 0};
    const Box wide{-1e12, -1e12, 1e12, 1e12, 0};
    auto it = truth_map.find({z, t});
    if (it != truth_map.end())
        for (const Box& b : it->second) {
            auto full = transform_box(b, fwd, wide);
            auto clipped = transform_box(b, fwd, crop_rect);
            if (!full || !clipped) continue;
            if (clipped->area() < cfg.min_box_area_ratio * full->area()) continue;
            s.boxes.push_back(*clipped);
        }
    return s;
}

struct LossAccum {
    double objectness = 0.0, regression = 0.0, roi_cls = 0.0, temporal = 0.0;
};

// Forward + backward for one augmented sample; gradients accumulate into the
// model parameters scaled by `upstream` (1 / batch size).
inline void train_sample(CascadeModel& model, const AugmentedSample& s, const TrainConfig& cfg,
                         std::mt19937_64& rng, double upstream, LossAccum& acc) {
    Stage1Cache cache = stage1_forward(s.triplet, model.stage1);
    const std::vector<Box> anchors = generate_anchors(s.width, s.height, model.anchors);
    const int A = model.anchors.per_cell();
    const int fh = cache.rpn.shape[1], fw = cache.rpn.shape[2];
    Tensor grad_rpn(cache.rpn.shape);

    // ---- anchor labels: iou >= pos threshold (plus best anchor per truth
    // box), iou < neg threshold; the band between is ignored.
    const int n_anchors = static_cast<int>(anchors.size());
    std::vector<double> max_iou(n_anchors, 0.0);
    std::vector<int> match(n_anchors, -1);
    for (int a = 0; a < n_anchors; ++a)
        for (std::size_t g = 0; g < s.boxes.size(); ++g) {
            const double v = iou(anchors[a], s.boxes[g]);
            if (v > max_iou[a]) {
                max_iou[a] = v;
                match[a] = static_cast<int>(g);
            }
        }
    std::vector<char> forced(n_anchors, 0);
    for (std::size_t g = 0; g < s.boxes.size(); ++g) {
        double best = 0.0;
        int best_a = -1;
        for (int a = 0; a < n_anchors; ++a) {
            const double v = iou(anchors[a], s.boxes[g]);
            if (v > best) {
                best = v;
                best_a = a;
            }
        }
        if (best_a >= 0 && best > 0.0) {
            forced[best_a] = 1;
            if (match[best_a] < 0) match[best_a] = static_cast<int>(g);
        }
    }
    std::vector<int> pos, neg;
    for (int a = 0; a < n_anchors; ++a) {
        if (forced[a] || max_iou[a] >= cfg.anchor_pos_iou)
            pos.push_back(a);
        else if (max_iou[a] < cfg.anchor_neg_iou)
            neg.push_back(a);
    }
    if (static_cast<int>(pos.size()) > cfg.max_pos_anchors) {
        std::shuffle(pos.begin(), pos.end(), rng);
        pos.resize(cfg.max_pos_anchors);
    }
    if (static_cast<int>(neg.size()) > cfg.max_neg_anchors) {
        std::shuffle(neg.begin(), neg.end(), rng);
        neg.resize(cfg.max_neg_anchors);
    }

    auto rpn_at = [&](int a_in_cell, int ch, int cy, int cx) -> std::size_t {
        return (static_cast<std::size_t>(a_in_cell * 6 + ch) * fh + cy) * fw + cx;
    };
    auto anchor_cell = [&](int a, int& cy, int& cx, int& ac) {
        ac = a % A;
        const int cell = a / A;
        cx = cell % fw;
        cy = cell / fw;
    };

    const int n_sampled = static_cast<int>(pos.size() + neg.size());
    if (n_sampled > 0) {
        const double cls_scale = cfg.w_objectness * upstream / n_sampled;
        auto anchor_cls = [&](int a, int label) {
            int cy, cx, ac;
            anchor_cell(a, cy, cx, ac);
            Tensor logits({2});
            logits.values[0] = cache.rpn.values[rpn_at(ac, 0, cy, cx)];
            logits.values[1] = cache.rpn.values[rpn_at(ac, 1, cy, cx)];
            acc.objectness += softmax_cross_entropy(logits, label) / n_sampled;
            Tensor g = softmax_cross_entropy_backward(logits, label, cls_scale);
            grad_rpn.values[rpn_at(ac, 0, cy, cx)] += g.values[0];
            grad_rpn.values[rpn_at(ac, 1, cy, cx)] += g.values[1];
        };
        for (int a : pos) anchor_cls(a, 1);
        for (int a : neg) anchor_cls(a, 0);
    }
    if (!pos.empty()) {
        const double reg_scale = cfg.w_regression * upstream / static_cast<double>(pos.size());
        for (int a : pos) {
            int cy, cx, ac;
            anchor_cell(a, cy, cx, ac);
            Tensor pred({4});
            for (int k = 0; k < 4; ++k) pred.values[k] = cache.rpn.values[rpn_at(ac, 2 + k, cy, cx)];
            const BoxDelta target = encode_box(anchors[a], s.boxes[match[a]]);
            Tensor tgt({4}, {target.dx, target.dy, target.dw, target.dh});
            acc.regression += smooth_l1(pred, tgt) / static_cast<double>(pos.size());
            Tensor g = smooth_l1_backward(pred, tgt, reg_scale);
            for (int k = 0; k < 4; ++k) grad_rpn.values[rpn_at(ac, 2 + k, cy, cx)] += g.values[k];
        }
    }

    // ---- ROI head on proposals plus teacher-forced truth boxes. Truth boxes
    // are also jittered so positives cover imperfectly aligned proposals.
    std::vector<Box> rois = propose(cache, anchors, model.anchors);
    for (const Box& b : s.boxes) {
        rois.push_back(b);
        std::uniform_real_distribution<double> shift(-0.15, 0.15), grow(-0.1, 0.1);
        for (int j = 0; j < cfg.jittered_positives; ++j) {
            const double dx = shift(rng) * b.width(), dy = shift(rng) * b.height();
            const double gw = grow(rng) * b.width(), gh = grow(rng) * b.height();
            Box jb{b.x0 + dx - gw / 2, b.y0 + dy - gh / 2, b.x1 + dx + gw / 2, b.y1 + dy + gh / 2,
                   0.0};
            jb = clip_box(jb, s.width, s.height);
            if (jb.valid()) rois.push_back(jb);
        }
    }
    std::vector<int> roi_pos, roi_neg, roi_match(rois.size(), -1);
    for (std::size_t i = 0; i < rois.size(); ++i) {
        double best = 0.0;
        for (std::size_t g = 0; g < s.boxes.size(); ++g) {
            const double v = iou(rois[i], s.boxes[g]);
            if (v > best) {
                best = v;
                roi_match[i] = static_cast<int>(g);
            }
        }
        if (best >= cfg.roi_pos_iou)
            roi_pos.push_back(static_cast<int>(i));
        else if (best < cfg.roi_neg_iou)  // the band between is ignored
            roi_neg.push_back(static_cast<int>(i));
    }
    if (static_cast<int>(roi_pos.size()) > cfg.max_pos_rois) {
        std::shuffle(roi_pos.begin(), roi_pos.end(), rng);
        roi_pos.resize(cfg.max_pos_rois);
    }
    if (static_cast<int>(roi_neg.size()) > cfg.max_neg_rois) {
        std::shuffle(roi_neg.begin(), roi_neg.end(), rng);
        roi_neg.resize(cfg.max_neg_rois);
    }
    Tensor grad_fused(cache.fused.shape);
    const int n_rois = static_cast<int>(roi_pos.size() + roi_neg.size());
    if (n_rois > 0) {
        const double cls_scale = cfg.w_roi_cls * upstream / n_rois;
        auto run_roi = [&](int idx, int label) {
            if (!rois[idx].valid()) return;
            RoiCache rc = roi_forward(cache.fused, rois[idx], model.stage1);
            acc.roi_cls += softmax_cross_entropy(rc.cls_logits, label) / n_rois;
            Tensor gcls = softmax_cross_entropy_backward(rc.cls_logits, label, cls_scale);
            Tensor greg({4});
            if (label == 1) {
                const BoxDelta target = encode_box(rois[idx], s.boxes[roi_match[idx]]);
                Tensor tgt({4}, {target.dx, target.dy, target.dw, target.dh});
                const double npos = static_cast<double>(roi_pos.size());
                acc.regression += smooth_l1(rc.reg_out, tgt) / npos;
                greg = smooth_l1_backward(rc.reg_out, tgt, cfg.w_regression * upstream / npos);
            }
            roi_backward(rc, model.stage1, gcls, greg, grad_fused);
        };
        for (int i : roi_pos) run_roi(i, 1);
        for (int i : roi_neg) run_roi(i, 0);
    }

    stage1_backward(cache, model.stage1, grad_rpn, grad_fused);

    // ---- stage-2 temporal classifier on crops around candidate locations.
    std::vector<int> cand_pos = roi_pos, cand_neg = roi_neg;
    if (static_cast<int>(cand_pos.size()) > cfg.max_pos_candidates) cand_pos.resize(cfg.max_pos_candidates);
    if (static_cast<int>(cand_neg.size()) > cfg.max_neg_candidates) cand_neg.resize(cfg.max_neg_candidates);
    const int n_cands = static_cast<int>(cand_pos.size() + cand_neg.size());
    if (n_cands > 0) {
        const double scale = cfg.w_temporal * upstream / (3.0 * n_cands);
        const std::vector<double>* frames[3] = {&s.prev_slice, &s.triplet.slices[1], &s.next_slice};
        auto run_candidate = [&](int idx, int label) {
            if (!rois[idx].valid()) return;
            for (int f = 0; f < 3; ++f) {
                const std::vector<double> crop = crop_window(frames[f]->data(), s.width, s.height,
                                                             rois[idx].cx(), rois[idx].cy());
                Stage2Cache sc = stage2_forward(crop, model.stage2);
                acc.temporal += softmax_cross_entropy(sc.logits, label) / (3.0 * n_cands);
                stage2_backward(sc, model.stage2, softmax_cross_entropy_backward(sc.logits, label, scale));
            }
        };
        for (int i : cand_pos) run_candidate(i, 1);
        for (int i : cand_neg) run_candidate(i, 0);
    }
}

}  // namespace traindetail

inline TrainResult train_cascade(const std::vector<TrainingDataset>& datasets,
                                 const TrainConfig& cfg) {
    if (datasets.empty()) throw TrainingError("train_cascade: no training datasets");
    cfg.optimizer.validate();

    TrainResult result;
    result.model = CascadeModel::init(cfg.seed, cfg.anchors);
    result.model.fuse_match_iou = cfg.fuse_match_iou;
    result.model.fuse_keep_threshold = cfg.fuse_keep_threshold;
    result.model.temporal_match_iou = cfg.temporal_match_iou;
    result.model.accept_threshold = cfg.accept_threshold;

    std::vector<std::map<std::pair<int, int>, std::vector<Box>>> truth_maps;
    std::vector<traindetail::SliceKey> positives, all_slices;
    for (std::size_t d = 0; d < datasets.size(); ++d) {
        truth_maps.push_back(truth_boxes_by_slice(datasets[d].truth));
        const Dims4& dims = datasets[d].volume.dims;
        for (int t = 0; t < dims.t; ++t)
            for (int z = 0; z < dims.z; ++z) all_slices.push_back({static_cast<int>(d), z, t});
        for (const auto& [key, boxes] : truth_maps.back())
            positives.push_back({static_cast<int>(d), key.first, key.second});
    }

    std::mt19937_64 rng(cfg.seed ^ 0xd1b54a32d192ed03ull);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    auto pick = [&](const std::vector<traindetail::SliceKey>& v) {
        return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
    };

    for (long batch = 0; batch < cfg.max_batches; ++batch) {
        for (LayerParams* p : result.model.all_params()) p->zero_grad();
        traindetail::LossAccum acc;
        const double upstream = 1.0 / cfg.batch_slices;
        for (int i = 0; i < cfg.batch_slices; ++i) {
            const bool want_positive =
                !positives.empty() && (i == 0 || coin(rng) < cfg.positive_sample_prob);
            const traindetail::SliceKey key = want_positive ? pick(positives) : pick(all_slices);
            traindetail::AugmentedSample sample = traindetail::make_sample(
                datasets[key.dataset], truth_maps[key.dataset], key.z, key.t, cfg.augment, rng);
            traindetail::LossAccum sample_acc;
            traindetail::train_sample(result.model, sample, cfg, rng, upstream, sample_acc);
            acc.objectness += sample_acc.objectness * upstream;
            acc.regression += sample_acc.regression * upstream;
            acc.roi_cls += sample_acc.roi_cls * upstream;
            acc.temporal += sample_acc.temporal * upstream;
        }

        BatchLog log;
        log.batch = batch;
        log.lr = effective_lr(cfg.optimizer, batch);
        log.loss_objectness = cfg.w_objectness * acc.objectness;
        log.loss_regression = cfg.w_regression * acc.regression;
        log.loss_roi_cls = cfg.w_roi_cls * acc.roi_cls;
        log.loss_temporal = cfg.w_temporal * acc.temporal;
        log.total = log.loss_objectness + log.loss_regression + log.loss_roi_cls + log.loss_temporal;
        if (!std::isfinite(log.total))
            throw TrainingError("divergence guard: non-finite loss at batch " + std::to_string(batch));
        result.log.push_back(log);

        for (LayerParams* p : result.model.all_params()) adam_step(*p, cfg.optimizer, batch);
    }
    return result;
}

// ------------------------------------------------------------- evaluation

struct StageMetrics {
    Counts counts;
    PrecisionRecall pr;
};

struct EvalResult {
    StageMetrics raw, volume_fused, final_;
    Counts event_counts;
    long truth_boxes = 0;
    long truth_events = 0;
};

inline Counts slice_counts(const std::vector<DetectionSet>& sets,
                           const std::map<std::pair<int, int>, std::vector<Box>>& truth_map,
                           double iou_threshold) {
    Counts c;
    static const std::vector<Box> kNoBoxes;
    for (const auto& set : sets) {
        auto it = truth_map.find({set.z, set.t});
        const std::vector<Box>& truth = it == truth_map.end() ? kNoBoxes : it->second;
        const MatchResult m = match_detections(set.boxes, truth, iou_threshold);
        c.tp += m.tp;
        c.fp += m.fp;
        c.fn += m.fn;
    }
    return c;
}

inline EvalResult evaluate_dataset(const Volume4D& vol, const std::vector<GroundTruthEvent>& truth,
                                   const CascadeModel& model, double iou_threshold = 0.5,
                                   double link_iou = 0.3) {
    const auto truth_map = truth_boxes_by_slice(truth);
    EvalResult res;
    for (const auto& [key, boxes] : truth_map) res.truth_boxes += static_cast<long>(boxes.size());
    res.truth_events = static_cast<long>(truth.size());

    const std::vector<DetectionSet> raw = detect_raw(vol, model);
    const std::vector<DetectionSet> fused = fuse_volume(raw, vol, model);
    const std::vector<DetectionSet> final_sets = fuse_time(fused, vol, model);
    res.raw.counts = slice_counts(raw, truth_map, iou_threshold);
    res.volume_fused.counts = slice_counts(fused, truth_map, iou_threshold);
    res.final_.counts = slice_counts(final_sets, truth_map, iou_threshold);
    res.raw.pr = precision_recall(res.raw.counts);
    res.volume_fused.pr = precision_recall(res.volume_fused.counts);
    res.final_.pr = precision_recall(res.final_.counts);

    const std::vector<MitosisEvent> events = aggregate_events(final_sets, link_iou);
    res.event_counts = event_metrics(events, truth_as_events(truth), iou_threshold);
    return res;
}

struct FoldResult {
    int held_out = 0;
    EvalResult eval;
    std::vector<BatchLog> log;
};

// Train on all datasets but i, evaluate on i, for every i.
inline std::vector<FoldResult> leave_one_out(const std::vector<TrainingDataset>& datasets,
                                             const TrainConfig& cfg) {
    if (datasets.size() < 2) throw TrainingError("leave_one_out: needs at least 2 datasets");
    std::vector<FoldResult> folds;
    for (std::size_t i = 0; i < datasets.size(); ++i) {
        std::vector<TrainingDataset> train_set;
        for (std::size_t j = 0; j < datasets.size(); ++j)
            if (j != i) train_set.push_back(datasets[j]);
        TrainResult tr = train_cascade(train_set, cfg);
        FoldResult fold;
        fold.held_out = static_cast<int>(i);
        fold.eval = evaluate_dataset(datasets[i].volume, datasets[i].truth, tr.model);
        fold.log = std::move(tr.log);
        folds.push_back(std::move(fold));
    }
    return folds;
}

}  // namespace casdet
