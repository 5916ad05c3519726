#pragma once
// JSON (de)serialization for the training configuration file.

#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "casdet/train.hpp"

namespace casdet {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline nlohmann::json to_json(const OptimizerConfig& c) {
    return {{"lr_initial", c.lr_initial},   {"lr_after", c.lr_after},
            {"lr_switch_batch", c.lr_switch_batch}, {"beta1", c.beta1},
            {"beta2", c.beta2},             {"epsilon", c.epsilon}};
}
inline void from_json_into(const nlohmann::json& j, OptimizerConfig& c) {
    c.lr_initial = j.value("lr_initial", c.lr_initial);
    c.lr_after = j.value("lr_after", c.lr_after);
    c.lr_switch_batch = j.value("lr_switch_batch", c.lr_switch_batch);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
}

inline nlohmann::json to_json(const AugmentConfig& c) {
    return {{"crop_size", {c.crop_size.first, c.crop_size.second}},
            {"rotation_range", {c.rotation_range.first, c.rotation_range.second}},
            {"noise_percent_range", {c.noise_percent_range.first, c.noise_percent_range.second}},
            {"scale_range", {c.scale_range.first, c.scale_range.second}},
            {"mirror_prob", c.mirror_prob},
            {"translate_range", c.translate_range},
            {"min_box_area_ratio", c.min_box_area_ratio}};
}
inline void from_json_into(const nlohmann::json& j, AugmentConfig& c) {
    auto pair_of = [&](const char* key, auto& dst) {
        if (j.contains(key)) {
            dst.first = j.at(key).at(0);
            dst.second = j.at(key).at(1);
        }
    };
    pair_of("crop_size", c.crop_size);
    pair_of("rotation_range", c.rotation_range);
    pair_of("noise_percent_range", c.noise_percent_range);
    pair_of("scale_range", c.scale_range);
    c.mirror_prob = j.value("mirror_prob", c.mirror_prob);
    c.translate_range = j.value("translate_range", c.translate_range);
    c.min_box_area_ratio = j.value("min_box_area_ratio", c.min_box_area_ratio);
}

inline nlohmann::json to_json(const AnchorConfig& c) {
    return {{"scales", c.scales},
            {"aspect_ratios", c.aspect_ratios},
            {"stride", c.stride},
            {"score_threshold", c.score_threshold},
            {"nms_iou", c.nms_iou},
            {"top_k", c.top_k}};
}
inline void from_json_into(const nlohmann::json& j, AnchorConfig& c) {
    if (j.contains("scales")) c.scales = j.at("scales").get<std::vector<double>>();
    if (j.contains("aspect_ratios"))
        c.aspect_ratios = j.at("aspect_ratios").get<std::vector<double>>();
    c.stride = j.value("stride", c.stride);
    c.score_threshold = j.value("score_threshold", c.score_threshold);
    c.nms_iou = j.value("nms_iou", c.nms_iou);
    c.top_k = j.value("top_k", c.top_k);
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"optimizer", to_json(c.optimizer)},
            {"batch_slices", c.batch_slices},
            {"max_batches", c.max_batches},
            {"augment", to_json(c.augment)},
            {"anchors", to_json(c.anchors)},
            {"loss_weights",
             {{"objectness", c.w_objectness},
              {"regression", c.w_regression},
              {"roi_cls", c.w_roi_cls},
              {"temporal", c.w_temporal}}},
            {"seed", c.seed},
            {"positive_sample_prob", c.positive_sample_prob},
            {"fuse_match_iou", c.fuse_match_iou},
            {"fuse_keep_threshold", c.fuse_keep_threshold},
            {"temporal_match_iou", c.temporal_match_iou},
            {"accept_threshold", c.accept_threshold}};
}
inline void from_json_into(const nlohmann::json& j, TrainConfig& c) {
    if (j.contains("optimizer")) from_json_into(j.at("optimizer"), c.optimizer);
    c.batch_slices = j.value("batch_slices", c.batch_slices);
    c.max_batches = j.value("max_batches", c.max_batches);
    if (j.contains("augment")) from_json_into(j.at("augment"), c.augment);
    if (j.contains("anchors")) from_json_into(j.at("anchors"), c.anchors);
    if (j.contains("loss_weights")) {
        const auto& w = j.at("loss_weights");
        c.w_objectness = w.value("objectness", c.w_objectness);
        c.w_regression = w.value("regression", c.w_regression);
        c.w_roi_cls = w.value("roi_cls", c.w_roi_cls);
        c.w_temporal = w.value("temporal", c.w_temporal);
    }
    c.seed = j.value("seed", c.seed);
    c.positive_sample_prob = j.value("positive_sample_prob", c.positive_sample_prob);
    c.fuse_match_iou = j.value("fuse_match_iou", c.fuse_match_iou);
    c.fuse_keep_threshold = j.value("fuse_keep_threshold", c.fuse_keep_threshold);
    c.temporal_match_iou = j.value("temporal_match_iou", c.temporal_match_iou);
    c.accept_threshold = j.value("accept_threshold", c.accept_threshold);
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    TrainConfig cfg;
    from_json_into(j, cfg);
    return cfg;
}

}  // namespace casdet
