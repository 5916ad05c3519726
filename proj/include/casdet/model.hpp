#pragma once
// The full cascade: both networks plus the fusion thresholds, and whole-volume
// inference at each pipeline stage.

#include <random>
#include <vector>

#include "casdet/stage1.hpp"
#include "casdet/stage2.hpp"

namespace casdet {

struct CascadeModel {
    Stage1Weights stage1;
    Stage2Weights stage2;
    AnchorConfig anchors;
    double fuse_match_iou = 0.5;
    double fuse_keep_threshold = 0.25;
    double temporal_match_iou = 0.5;
    double accept_threshold = 0.5;

    static CascadeModel init(std::uint64_t seed, AnchorConfig anchor_cfg = {}) {
        CascadeModel m;
        m.anchors = std::move(anchor_cfg);
        std::mt19937_64 rng(seed);
        m.stage1 = Stage1Weights::init(m.anchors.per_cell(), rng);
        m.stage2 = Stage2Weights::init(rng);
        return m;
    }

    std::vector<LayerParams*> all_params() {
        std::vector<LayerParams*> out = stage1.all_params();
        for (LayerParams* p : stage2.all_params()) out.push_back(p);
        return out;
    }
};

// Raw detections for every (z, t).
inline std::vector<DetectionSet> detect_raw(const Volume4D& vol, const CascadeModel& model) {
    std::vector<DetectionSet> out;
    out.reserve(static_cast<std::size_t>(vol.dims.z) * vol.dims.t);
    for (int t = 0; t < vol.dims.t; ++t)
        for (int z = 0; z < vol.dims.z; ++z)
            out.push_back(detect_slice(extract_slice_triplet(vol, z, t), model.stage1, model.anchors));
    return out;
}

namespace detail {
inline const DetectionSet& at_zt(const std::vector<DetectionSet>& sets, const Dims4& dims, int z,
                                 int t) {
    return sets[static_cast<std::size_t>(t) * dims.z + z];
}
}  // namespace detail

// V_i^t from the raw sets: each slice fused with its z neighbors
// (boundary-replicated).
inline std::vector<DetectionSet> fuse_volume(const std::vector<DetectionSet>& raw,
                                             const Volume4D& vol, const CascadeModel& model) {
    std::vector<DetectionSet> out;
    out.reserve(raw.size());
    for (int t = 0; t < vol.dims.t; ++t)
        for (int z = 0; z < vol.dims.z; ++z) {
            const int zm = z > 0 ? z - 1 : 0;
            const int zp = z < vol.dims.z - 1 ? z + 1 : vol.dims.z - 1;
            OutputSet set{{detail::at_zt(raw, vol.dims, zm, t), detail::at_zt(raw, vol.dims, z, t),
                           detail::at_zt(raw, vol.dims, zp, t)}};
            DetectionSet fused =
                fuse_neighbor_outputs(set, model.fuse_match_iou, model.fuse_keep_threshold);
            fused.z = z;
            fused.t = t;
            out.push_back(std::move(fused));
        }
    return out;
}

// F_i^t: temporal pooling, per-frame classification, temporal mean fusion.
inline std::vector<DetectionSet> fuse_time(const std::vector<DetectionSet>& volume_fused,
                                           const Volume4D& vol, const CascadeModel& model) {
    std::vector<DetectionSet> out;
    out.reserve(volume_fused.size());
    for (int t = 0; t < vol.dims.t; ++t)
        for (int z = 0; z < vol.dims.z; ++z) {
            const int tm = t > 0 ? t - 1 : 0;
            const int tp = t < vol.dims.t - 1 ? t + 1 : vol.dims.t - 1;
            DetectionSet prev = detail::at_zt(volume_fused, vol.dims, z, tm);
            DetectionSet next = detail::at_zt(volume_fused, vol.dims, z, tp);
            prev.z = next.z = z;
            std::vector<TemporalCandidate> pool = build_candidate_pool(
                prev, detail::at_zt(volume_fused, vol.dims, z, t), next, model.temporal_match_iou);
            for (TemporalCandidate& c : pool)
                c = classify_temporal(std::move(c), vol, z, t, model.stage2);
            out.push_back(fuse_temporal(pool, z, t, model.accept_threshold));
        }
    return out;
}

inline std::vector<DetectionSet> run_pipeline(const Volume4D& vol, const CascadeModel& model,
                                              Stage stage) {
    std::vector<DetectionSet> raw = detect_raw(vol, model);
    if (stage == Stage::raw) return raw;
    std::vector<DetectionSet> fused = fuse_volume(raw, vol, model);
    if (stage == Stage::volume_fused) return fused;
    return fuse_time(fused, vol, model);
}

}  // namespace casdet
