#pragma once
// 4D intensity volumes and 2.5D slice-triplet extraction.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "casdet/box.hpp"

namespace casdet {

struct Dims4 {
    int x = 0, y = 0, z = 0, t = 0;
    bool operator==(const Dims4&) const = default;
    std::size_t voxels() const {
        return static_cast<std::size_t>(x) * y * z * t;
    }
    std::size_t frame_voxels() const { return static_cast<std::size_t>(x) * y * z; }
};

// Intensities normalized to [0,1]; storage order t, z, y, x (x fastest).
struct Volume4D {
    Dims4 dims;
    std::vector<double> intensities;
    std::string id;

    static Volume4D zeros(Dims4 d, std::string id = "") {
        Volume4D v;
        v.dims = d;
        v.intensities.assign(d.voxels(), 0.0);
        v.id = std::move(id);
        return v;
    }

    std::size_t index(int x, int y, int z, int t) const {
        return ((static_cast<std::size_t>(t) * dims.z + z) * dims.y + y) * dims.x + x;
    }
    double& at(int x, int y, int z, int t) { return intensities[index(x, y, z, t)]; }
    double at(int x, int y, int z, int t) const { return intensities[index(x, y, z, t)]; }

    const double* slice_ptr(int z, int t) const {
        return intensities.data() + index(0, 0, z, t);
    }
    std::vector<double> slice(int z, int t) const {
        const double* p = slice_ptr(z, t);
        return std::vector<double>(p, p + static_cast<std::size_t>(dims.x) * dims.y);
    }
};

// One annotated mitosis: per-(z,t) boxes over the division window.
struct GroundTruthEvent {
    int event_id = 0;
    std::map<std::pair<int, int>, Box> boxes;  // key (z, t)
};

// The three slices {z-1, z, z+1} at one time point, boundary-replicated.
struct SliceTriplet {
    int width = 0, height = 0;
    int center_z = 0, t = 0;
    std::vector<double> slices[3];
};

inline SliceTriplet extract_slice_triplet(const Volume4D& vol, int z, int t) {
    if (z < 0 || z >= vol.dims.z) throw std::out_of_range("extract_slice_triplet: z out of range");
    if (t < 0 || t >= vol.dims.t) throw std::out_of_range("extract_slice_triplet: t out of range");
    SliceTriplet tr;
    tr.width = vol.dims.x;
    tr.height = vol.dims.y;
    tr.center_z = z;
    tr.t = t;
    const int zs[3] = {z > 0 ? z - 1 : 0, z, z < vol.dims.z - 1 ? z + 1 : vol.dims.z - 1};
    for (int i = 0; i < 3; ++i) tr.slices[i] = vol.slice(zs[i], t);
    return tr;
}

}  // namespace casdet
