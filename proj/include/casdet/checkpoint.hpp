#pragma once
// Single-file binary checkpoint: format tag, model thresholds, and every
// LayerParams with shapes, values, optimizer state, and step count.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "casdet/model.hpp"

namespace casdet {

inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'S', 'D', 'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw CheckpointError("truncated checkpoint");
    return b[0] | (b[1] << 8) | (b[2] << 16) | (std::uint32_t(b[3]) << 24);
}
inline void write_doubles(std::ostream& out, const std::vector<double>& v) {
    write_u32(out, static_cast<std::uint32_t>(v.size()));
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}
inline std::vector<double> read_doubles(std::istream& in) {
    const std::uint32_t n = read_u32(in);
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw CheckpointError("truncated checkpoint");
    return v;
}
inline void write_shape(std::ostream& out, const Shape& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    for (int e : s) write_u32(out, static_cast<std::uint32_t>(e));
}
inline Shape read_shape(std::istream& in) {
    const std::uint32_t n = read_u32(in);
    Shape s(n);
    for (auto& e : s) e = static_cast<int>(read_u32(in));
    return s;
}

inline void write_tensor(std::ostream& out, const Tensor& t) {
    write_shape(out, t.shape);
    write_doubles(out, t.values);
}
inline Tensor read_tensor(std::istream& in) {
    Shape s = read_shape(in);
    std::vector<double> v = read_doubles(in);
    return Tensor(std::move(s), std::move(v));
}

inline void write_params(std::ostream& out, const LayerParams& p) {
    write_tensor(out, p.kernels);
    write_tensor(out, p.bias);
    write_tensor(out, p.adam_m_kernel);
    write_tensor(out, p.adam_v_kernel);
    write_tensor(out, p.adam_m_bias);
    write_tensor(out, p.adam_v_bias);
    write_u32(out, static_cast<std::uint32_t>(p.step_count));
}
inline void read_params(std::istream& in, LayerParams& p) {
    p.kernels = read_tensor(in);
    p.bias = read_tensor(in);
    p.adam_m_kernel = read_tensor(in);
    p.adam_v_kernel = read_tensor(in);
    p.adam_m_bias = read_tensor(in);
    p.adam_v_bias = read_tensor(in);
    p.step_count = read_u32(in);
}

inline void write_double(std::ostream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline double read_double(std::istream& in) {
    double v;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw CheckpointError("truncated checkpoint");
    return v;
}

}  // namespace detail

inline void save_checkpoint(const CascadeModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
    out.write(kCheckpointMagic, 8);
    detail::write_u32(out, kCheckpointVersion);

    detail::write_u32(out, static_cast<std::uint32_t>(model.anchors.scales.size()));
    for (double s : model.anchors.scales) detail::write_double(out, s);
    detail::write_u32(out, static_cast<std::uint32_t>(model.anchors.aspect_ratios.size()));
    for (double r : model.anchors.aspect_ratios) detail::write_double(out, r);
    detail::write_u32(out, static_cast<std::uint32_t>(model.anchors.stride));
    detail::write_double(out, model.anchors.score_threshold);
    detail::write_double(out, model.anchors.nms_iou);
    detail::write_u32(out, static_cast<std::uint32_t>(model.anchors.top_k));
    detail::write_double(out, model.fuse_match_iou);
    detail::write_double(out, model.fuse_keep_threshold);
    detail::write_double(out, model.temporal_match_iou);
    detail::write_double(out, model.accept_threshold);

    CascadeModel& m = const_cast<CascadeModel&>(model);
    std::vector<LayerParams*> params = m.all_params();
    detail::write_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const LayerParams* p : params) detail::write_params(out, *p);
    if (!out) throw CheckpointError("write failure: " + path.string());
}

inline CascadeModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw CheckpointError("not a checkpoint file: " + path.string());
    if (detail::read_u32(in) != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version");

    CascadeModel model;
    model.anchors.scales.resize(detail::read_u32(in));
    for (double& s : model.anchors.scales) s = detail::read_double(in);
    model.anchors.aspect_ratios.resize(detail::read_u32(in));
    for (double& r : model.anchors.aspect_ratios) r = detail::read_double(in);
    model.anchors.stride = static_cast<int>(detail::read_u32(in));
    model.anchors.score_threshold = detail::read_double(in);
    model.anchors.nms_iou = detail::read_double(in);
    model.anchors.top_k = static_cast<int>(detail::read_u32(in));
    model.fuse_match_iou = detail::read_double(in);
    model.fuse_keep_threshold = detail::read_double(in);
    model.temporal_match_iou = detail::read_double(in);
    model.accept_threshold = detail::read_double(in);

    std::vector<LayerParams*> params = model.all_params();
    const std::uint32_t n = detail::read_u32(in);
    if (n != params.size()) throw CheckpointError("checkpoint parameter count mismatch");
    for (LayerParams* p : params) detail::read_params(in, *p);
    return model;
}

}  // namespace casdet
