#pragma once
// Detections file: JSON records {t, z, x0, y0, x1, y1, score, stage}.

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "casdet/stage1.hpp"
#include "casdet/volume.hpp"

namespace casdet {

struct DetectionsFileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline Stage stage_from_name(const std::string& name) {
    if (name == "raw") return Stage::raw;
    if (name == "volume_fused") return Stage::volume_fused;
    if (name == "final") return Stage::final;
    throw DetectionsFileError("unknown stage: " + name);
}

inline nlohmann::json detections_to_json(const std::vector<DetectionSet>& sets, const Dims4& dims) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& set : sets)
        for (const Box& b : set.boxes)
            records.push_back({{"t", set.t},
                               {"z", set.z},
                               {"x0", b.x0},
                               {"y0", b.y0},
                               {"x1", b.x1},
                               {"y1", b.y1},
                               {"score", b.score},
                               {"stage", stage_name(set.stage)}});
    return nlohmann::json{{"dims", {dims.x, dims.y, dims.z, dims.t}}, {"detections", records}};
}

inline void save_detections(const std::vector<DetectionSet>& sets, const Dims4& dims,
                            const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DetectionsFileError("cannot write " + path.string());
    out << detections_to_json(sets, dims).dump(2) << "\n";
}

// Returns one DetectionSet per (z, t) cell of `dims`, in t-major order.
inline std::pair<std::vector<DetectionSet>, Dims4> load_detections(
    const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DetectionsFileError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DetectionsFileError(std::string("malformed detections file: ") + e.what());
    }
    try {
        const auto jd = j.at("dims");
        Dims4 dims{jd.at(0).get<int>(), jd.at(1).get<int>(), jd.at(2).get<int>(),
                   jd.at(3).get<int>()};
        std::vector<DetectionSet> sets(static_cast<std::size_t>(dims.z) * dims.t);
        for (int t = 0; t < dims.t; ++t)
            for (int z = 0; z < dims.z; ++z) {
                DetectionSet& s = sets[static_cast<std::size_t>(t) * dims.z + z];
                s.z = z;
                s.t = t;
                s.stage = Stage::final;
            }
        for (const auto& r : j.at("detections")) {
            const int t = r.at("t").get<int>(), z = r.at("z").get<int>();
            if (t < 0 || t >= dims.t || z < 0 || z >= dims.z)
                throw DetectionsFileError("detection record outside volume dims");
            DetectionSet& s = sets[static_cast<std::size_t>(t) * dims.z + z];
            s.stage = stage_from_name(r.at("stage").get<std::string>());
            s.boxes.push_back(Box{r.at("x0").get<double>(), r.at("y0").get<double>(),
                                  r.at("x1").get<double>(), r.at("y1").get<double>(),
                                  r.at("score").get<double>()});
        }
        return {std::move(sets), dims};
    } catch (const nlohmann::json::exception& e) {
        throw DetectionsFileError(std::string("malformed detections file: ") + e.what());
    }
}

}  // namespace casdet
