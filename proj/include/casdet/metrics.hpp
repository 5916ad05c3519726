#pragma once
// Slice-level box matching and precision/recall, plus 4D event aggregation
// and event-level counts.

#include <cstdlib>
#include <functional>
#include <map>
#include <utility>
#include <vector>

#include "casdet/box.hpp"
#include "casdet/stage1.hpp"
#include "casdet/volume.hpp"

namespace casdet {

struct MatchedPair {
    int detection = 0, truth = 0;
    double iou = 0.0;
};

struct MatchResult {
    int tp = 0, fp = 0, fn = 0;
    std::vector<MatchedPair> pairs;
};

// Greedy one-to-one matching by descending detection score: each detection
// takes the unmatched truth box of highest iou if that iou clears the
// threshold.
inline MatchResult match_detections(const std::vector<Box>& detections,
                                    const std::vector<Box>& truth, double iou_threshold) {
    std::vector<int> order(detections.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return score_order(detections[a], detections[b]);
    });

    MatchResult res;
    std::vector<char> truth_used(truth.size(), 0);
    for (int di : order) {
        double best_iou = 0.0;
        int best_t = -1;
        for (std::size_t ti = 0; ti < truth.size(); ++ti) {
            if (truth_used[ti]) continue;
            const double v = iou(detections[di], truth[ti]);
            if (v > best_iou) {
                best_iou = v;
                best_t = static_cast<int>(ti);
            }
        }
        if (best_t >= 0 && best_iou >= iou_threshold) {
            truth_used[best_t] = 1;
            res.pairs.push_back({di, best_t, best_iou});
        }
    }
    res.tp = static_cast<int>(res.pairs.size());
    res.fp = static_cast<int>(detections.size()) - res.tp;
    res.fn = static_cast<int>(truth.size()) - res.tp;
    return res;
}

struct Counts {
    long tp = 0, fp = 0, fn = 0;
    Counts& operator+=(const Counts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
};

struct PrecisionRecall {
    double precision = 1.0, recall = 1.0;
};

// 0/0 is defined as 1 (vacuous case).
inline PrecisionRecall precision_recall(const Counts& c) {
    PrecisionRecall pr;
    pr.precision = (c.tp + c.fp) == 0 ? 1.0 : static_cast<double>(c.tp) / (c.tp + c.fp);
    pr.recall = (c.tp + c.fn) == 0 ? 1.0 : static_cast<double>(c.tp) / (c.tp + c.fn);
    return pr;
}

// ------------------------------------------------------------ 4D events

struct MitosisEvent {
    int event_id = 0;
    std::map<std::pair<int, int>, Box> boxes;  // key (z, t), best box per key
    double score = 0.0;                        // max member score
};

// Connected components over final detections: two detections link iff their
// (z, t) cells are distinct 8-neighbors and their boxes overlap at link_iou.
// Optional component_ids receives one label per flattened input detection.
inline std::vector<MitosisEvent> aggregate_events(const std::vector<DetectionSet>& sets,
                                                  double link_iou,
                                                  std::vector<int>* component_ids = nullptr) {
    struct Det {
        int z, t;
        Box box;
    };
    std::vector<Det> dets;
    for (const auto& s : sets)
        for (const Box& b : s.boxes) dets.push_back({s.z, s.t, b});

    std::vector<int> parent(dets.size());
    for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
    std::function<int(int)> find = [&](int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (std::size_t i = 0; i < dets.size(); ++i)
        for (std::size_t j = i + 1; j < dets.size(); ++j) {
            const int dz = std::abs(dets[i].z - dets[j].z);
            const int dt = std::abs(dets[i].t - dets[j].t);
            if (dz > 1 || dt > 1 || (dz == 0 && dt == 0)) continue;
            if (iou(dets[i].box, dets[j].box) < link_iou) continue;
            parent[find(static_cast<int>(i))] = find(static_cast<int>(j));
        }

    std::map<int, MitosisEvent> by_root;
    std::map<int, int> root_to_id;
    std::vector<int> ids(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) {
        const int root = find(static_cast<int>(i));
        auto [it, inserted] = by_root.try_emplace(root);
        MitosisEvent& ev = it->second;
        if (inserted) {
            ev.event_id = static_cast<int>(root_to_id.size());
            root_to_id[root] = ev.event_id;
        }
        ids[i] = root_to_id[root];
        const auto key = std::make_pair(dets[i].z, dets[i].t);
        auto bit = ev.boxes.find(key);
        if (bit == ev.boxes.end() || dets[i].box.score > bit->second.score)
            ev.boxes[key] = dets[i].box;
        ev.score = std::max(ev.score, dets[i].box.score);
    }
    if (component_ids) *component_ids = std::move(ids);

    std::vector<MitosisEvent> out;
    for (auto& [root, ev] : by_root) out.push_back(std::move(ev));
    return out;
}

inline std::vector<MitosisEvent> truth_as_events(const std::vector<GroundTruthEvent>& truth) {
    std::vector<MitosisEvent> out;
    for (const auto& g : truth) {
        MitosisEvent ev;
        ev.event_id = g.event_id;
        ev.boxes = g.boxes;
        ev.score = 1.0;
        out.push_back(std::move(ev));
    }
    return out;
}

// A predicted event matches an unmatched truth event iff any member box pair
// at the same (z, t) reaches the iou threshold. Greedy by event score.
inline Counts event_metrics(const std::vector<MitosisEvent>& predicted,
                            const std::vector<MitosisEvent>& truth, double iou_threshold = 0.5) {
    std::vector<int> order(predicted.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return predicted[a].score > predicted[b].score; });

    auto events_overlap = [&](const MitosisEvent& p, const MitosisEvent& t) {
        for (const auto& [key, pbox] : p.boxes) {
            auto it = t.boxes.find(key);
            if (it != t.boxes.end() && iou(pbox, it->second) >= iou_threshold) return true;
        }
        return false;
    };

    Counts c;
    std::vector<char> truth_used(truth.size(), 0);
    for (int pi : order) {
        int matched = -1;
        for (std::size_t ti = 0; ti < truth.size(); ++ti) {
            if (!truth_used[ti] && events_overlap(predicted[pi], truth[ti])) {
                matched = static_cast<int>(ti);
                break;
            }
        }
        if (matched >= 0) {
            truth_used[matched] = 1;
            ++c.tp;
        } else {
            ++c.fp;
        }
    }
    c.fn = static_cast<long>(truth.size()) - c.tp;
    return c;
}

// Per-(z,t) ground-truth boxes pooled across events.
inline std::map<std::pair<int, int>, std::vector<Box>> truth_boxes_by_slice(
    const std::vector<GroundTruthEvent>& truth) {
    std::map<std::pair<int, int>, std::vector<Box>> out;
    for (const auto& ev : truth)
        for (const auto& [key, box] : ev.boxes) out[key].push_back(box);
    return out;
}

}  // namespace casdet
