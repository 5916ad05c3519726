#pragma once
// On-disk dataset layout:
//   manifest.json    {format_version, dims:[X,Y,Z,T], dtype:"u16le", frame_files:[...]}
//   vol_t0000.raw .. one u16 little-endian file per frame, x-fastest
//   annotations.json [{event_id, boxes:[{t,z,x0,y0,x1,y1}]}]

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "casdet/volume.hpp"

namespace casdet {

namespace fs = std::filesystem;

inline constexpr int kDatasetFormatVersion = 1;

struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string frame_file_name(int t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "vol_t%04d.raw", t);
    return buf;
}

inline void write_frame(const fs::path& path, const Volume4D& vol, int t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DatasetError("cannot open " + path.string() + " for writing");
    const std::size_t n = vol.dims.frame_voxels();
    std::vector<unsigned char> buf(n * 2);
    const double* p = vol.intensities.data() + n * static_cast<std::size_t>(t);
    for (std::size_t i = 0; i < n; ++i) {
        const auto v = static_cast<std::uint16_t>(std::lround(p[i] * 65535.0));
        buf[2 * i] = static_cast<unsigned char>(v & 0xff);
        buf[2 * i + 1] = static_cast<unsigned char>(v >> 8);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DatasetError("short write to " + path.string());
}

inline void read_frame(const fs::path& path, Volume4D& vol, int t) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("missing frame file: " + path.string());
    const std::size_t n = vol.dims.frame_voxels();
    std::vector<unsigned char> buf(n * 2);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size())
        throw DatasetError("frame file size mismatch: " + path.string());
    in.peek();
    if (!in.eof()) throw DatasetError("frame file larger than manifest dims: " + path.string());
    double* p = vol.intensities.data() + n * static_cast<std::size_t>(t);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint16_t v =
            static_cast<std::uint16_t>(buf[2 * i] | (buf[2 * i + 1] << 8));
        p[i] = v / 65535.0;  // load-time normalization to [0,1]
    }
}

}  // namespace detail

inline nlohmann::json events_to_json(const std::vector<GroundTruthEvent>& events) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& ev : events) {
        nlohmann::json boxes = nlohmann::json::array();
        for (const auto& [zt, box] : ev.boxes)
            boxes.push_back({{"t", zt.second},
                             {"z", zt.first},
                             {"x0", box.x0},
                             {"y0", box.y0},
                             {"x1", box.x1},
                             {"y1", box.y1}});
        arr.push_back({{"event_id", ev.event_id}, {"boxes", boxes}});
    }
    return arr;
}

inline std::vector<GroundTruthEvent> events_from_json(const nlohmann::json& arr) {
    std::vector<GroundTruthEvent> events;
    if (!arr.is_array()) throw DatasetError("annotations: top level must be an array");
    for (const auto& item : arr) {
        GroundTruthEvent ev;
        try {
            ev.event_id = item.at("event_id").get<int>();
            for (const auto& jb : item.at("boxes")) {
                Box box{jb.at("x0").get<double>(), jb.at("y0").get<double>(),
                        jb.at("x1").get<double>(), jb.at("y1").get<double>(), 0.0};
                if (!box.valid()) throw DatasetError("annotations: degenerate box");
                ev.boxes[{jb.at("z").get<int>(), jb.at("t").get<int>()}] = box;
            }
        } catch (const nlohmann::json::exception& e) {
            throw DatasetError(std::string("malformed annotation: ") + e.what());
        }
        if (ev.boxes.empty()) throw DatasetError("annotations: event with no boxes");
        events.push_back(std::move(ev));
    }
    return events;
}

inline fs::path save_dataset(const Volume4D& vol, const std::vector<GroundTruthEvent>& events,
                             const fs::path& dir) {
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["format_version"] = kDatasetFormatVersion;
    manifest["dims"] = {vol.dims.x, vol.dims.y, vol.dims.z, vol.dims.t};
    manifest["dtype"] = "u16le";
    manifest["id"] = vol.id;
    nlohmann::json frames = nlohmann::json::array();
    for (int t = 0; t < vol.dims.t; ++t) {
        const std::string name = detail::frame_file_name(t);
        detail::write_frame(dir / name, vol, t);
        frames.push_back(name);
    }
    manifest["frame_files"] = frames;

    const fs::path manifest_path = dir / "manifest.json";
    std::ofstream mf(manifest_path);
    if (!mf) throw DatasetError("cannot write " + manifest_path.string());
    mf << manifest.dump(2) << "\n";

    std::ofstream af(dir / "annotations.json");
    if (!af) throw DatasetError("cannot write annotations.json");
    af << events_to_json(events).dump(2) << "\n";
    return manifest_path;
}

inline std::pair<Volume4D, std::vector<GroundTruthEvent>> load_dataset(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream mf(manifest_path);
    if (!mf) throw DatasetError("missing manifest: " + manifest_path.string());
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError(std::string("malformed manifest: ") + e.what());
    }
    if (manifest.value("format_version", -1) != kDatasetFormatVersion)
        throw DatasetError("unsupported dataset format_version");
    if (manifest.value("dtype", "") != "u16le") throw DatasetError("unsupported dtype");
    const auto jd = manifest.at("dims");
    if (!jd.is_array() || jd.size() != 4) throw DatasetError("manifest dims must be [X,Y,Z,T]");
    Dims4 dims{jd[0].get<int>(), jd[1].get<int>(), jd[2].get<int>(), jd[3].get<int>()};
    const auto frames = manifest.at("frame_files");
    if (static_cast<int>(frames.size()) != dims.t)
        throw DatasetError("manifest declares T=" + std::to_string(dims.t) + " but lists " +
                           std::to_string(frames.size()) + " frame files");

    Volume4D vol = Volume4D::zeros(dims, manifest.value("id", ""));
    for (int t = 0; t < dims.t; ++t)
        detail::read_frame(dir / frames[t].get<std::string>(), vol, t);

    std::ifstream af(dir / "annotations.json");
    if (!af) throw DatasetError("missing annotations.json in " + dir.string());
    nlohmann::json ja;
    try {
        af >> ja;
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError(std::string("malformed annotations.json: ") + e.what());
    }
    return {std::move(vol), events_from_json(ja)};
}

}  // namespace casdet
