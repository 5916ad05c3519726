#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "casdet/dataset_io.hpp"
#include "casdet/synth.hpp"

using namespace casdet;
namespace fs = std::filesystem;

namespace {
GeneratorConfig small_config(std::uint64_t seed) {
    GeneratorConfig cfg;
    cfg.dims = {64, 64, 8, 12};
    cfg.border_margin = 14.0;
    cfg.normal_cell_count_range = {2, 4};
    cfg.division_duration_range = {4, 6};
    cfg.seed = seed;
    return cfg;
}

fs::path temp_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("casdet_test_" + name);
    fs::remove_all(dir);
    return dir;
}
}  // namespace

TEST_CASE("generator is deterministic for a fixed seed") {
    GeneratorConfig cfg = small_config(7);
    auto [v1, e1] = generate_sequence(cfg);
    auto [v2, e2] = generate_sequence(cfg);
    CHECK(v1.intensities == v2.intensities);  // bit-identical
    REQUIRE(e1.size() == e2.size());
    for (std::size_t i = 0; i < e1.size(); ++i) {
        CHECK(e1[i].boxes.size() == e2[i].boxes.size());
        for (auto it1 = e1[i].boxes.begin(), it2 = e2[i].boxes.begin(); it1 != e1[i].boxes.end();
             ++it1, ++it2) {
            CHECK(it1->first == it2->first);
            CHECK(it1->second.x0 == it2->second.x0);
            CHECK(it1->second.y1 == it2->second.y1);
        }
    }
}

TEST_CASE("forced event count range") {
    GeneratorConfig cfg = small_config(3);
    cfg.event_count_range = {2, 2};
    auto [vol, events] = generate_sequence(cfg);
    CHECK(events.size() == 2);
}

TEST_CASE("intensities normalized and in range") {
    auto [vol, events] = generate_sequence(small_config(5));
    for (double v : vol.intensities) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("default-scale events span >= 3 frames and >= 2 z-slices") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        GeneratorConfig cfg;  // default 128x128x12, T=20
        cfg.seed = seed;
        const SyntheticScene scene = sample_scene(cfg);
        for (const auto& e : scene.events) {
            const auto boxes = derive_event_boxes(e, cfg.dims);
            std::set<int> zs, ts;
            for (const auto& [zt, box] : boxes) {
                zs.insert(zt.first);
                ts.insert(zt.second);
            }
            CHECK(ts.size() >= 3);
            CHECK(zs.size() >= 2);
        }
    }
}

TEST_CASE("event (z,t) keys are 8-connected") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        GeneratorConfig cfg;
        cfg.seed = seed;
        const SyntheticScene scene = sample_scene(cfg);
        for (const auto& e : scene.events) {
            const auto boxes = derive_event_boxes(e, cfg.dims);
            REQUIRE(!boxes.empty());
            // flood fill over the key set
            std::set<std::pair<int, int>> keys, visited;
            for (const auto& [zt, box] : boxes) keys.insert(zt);
            std::vector<std::pair<int, int>> stack{*keys.begin()};
            visited.insert(*keys.begin());
            while (!stack.empty()) {
                auto [z, t] = stack.back();
                stack.pop_back();
                for (int dz = -1; dz <= 1; ++dz)
                    for (int dt = -1; dt <= 1; ++dt) {
                        const std::pair<int, int> n{z + dz, t + dt};
                        if (keys.count(n) && !visited.count(n)) {
                            visited.insert(n);
                            stack.push_back(n);
                        }
                    }
            }
            CHECK(visited.size() == keys.size());
        }
    }
}

TEST_CASE("annotation consistency: boxes re-derivable from stored parameters") {
    GeneratorConfig cfg = small_config(11);
    const SyntheticScene scene = sample_scene(cfg);
    auto [vol, events] = generate_from_scene(scene);
    REQUIRE(events.size() == scene.events.size());
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto rederived = derive_event_boxes(scene.events[i], cfg.dims);
        REQUIRE(rederived.size() == events[i].boxes.size());
        for (const auto& [zt, box] : events[i].boxes) {
            auto it = rederived.find(zt);
            REQUIRE(it != rederived.end());
            CHECK(it->second.x0 == box.x0);
            CHECK(it->second.y0 == box.y0);
            CHECK(it->second.x1 == box.x1);
            CHECK(it->second.y1 == box.y1);
        }
    }
}

TEST_CASE("save/load round trip is exact") {
    const fs::path dir = temp_dir("roundtrip");
    auto [vol, events] = generate_sequence(small_config(7));
    save_dataset(vol, events, dir);
    auto [vol2, events2] = load_dataset(dir);
    CHECK(vol2.dims == vol.dims);
    CHECK(vol2.intensities == vol.intensities);  // exact: generator is u16-quantized
    REQUIRE(events2.size() == events.size());
    for (std::size_t i = 0; i < events.size(); ++i) CHECK(events2[i].boxes == events[i].boxes);
    fs::remove_all(dir);
}

TEST_CASE("round trip over random seeds") {
    for (std::uint64_t seed = 20; seed < 25; ++seed) {
        const fs::path dir = temp_dir("roundtrip_prop");
        auto [vol, events] = generate_sequence(small_config(seed));
        save_dataset(vol, events, dir);
        auto [vol2, events2] = load_dataset(dir);
        CHECK(vol2.intensities == vol.intensities);
        fs::remove_all(dir);
    }
}

TEST_CASE("missing frame file is reported by name") {
    const fs::path dir = temp_dir("missing_frame");
    auto [vol, events] = generate_sequence(small_config(9));
    save_dataset(vol, events, dir);
    fs::remove(dir / "vol_t0003.raw");
    try {
        load_dataset(dir);
        FAIL("expected DatasetError");
    } catch (const DatasetError& e) {
        CHECK(std::string(e.what()).find("vol_t0003.raw") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("frame size mismatch is an error") {
    const fs::path dir = temp_dir("short_frame");
    auto [vol, events] = generate_sequence(small_config(9));
    save_dataset(vol, events, dir);
    fs::resize_file(dir / "vol_t0001.raw", 10);
    CHECK_THROWS_AS(load_dataset(dir), DatasetError);
    fs::remove_all(dir);
}

TEST_CASE("malformed annotations are an error") {
    const fs::path dir = temp_dir("bad_annotations");
    auto [vol, events] = generate_sequence(small_config(9));
    save_dataset(vol, events, dir);
    std::ofstream(dir / "annotations.json") << "[{\"event_id\": 0}]";
    CHECK_THROWS_AS(load_dataset(dir), DatasetError);
    fs::remove_all(dir);
}

TEST_CASE("raw value 65535 loads as 1.0") {
    const fs::path dir = temp_dir("norm");
    Volume4D vol = Volume4D::zeros({2, 2, 1, 1});
    vol.intensities = {1.0, 0.0, 0.5, 1.0};
    // quantize 0.5 onto the u16 grid as the generator does
    vol.intensities[2] = std::round(0.5 * 65535.0) / 65535.0;
    save_dataset(vol, {}, dir);
    auto [vol2, events2] = load_dataset(dir);
    CHECK(vol2.intensities[0] == 1.0);
    CHECK(vol2.intensities[1] == 0.0);
    CHECK(vol2.intensities[2] == doctest::Approx(0.5).epsilon(1e-4));
    fs::remove_all(dir);
}

TEST_CASE("infeasible config is rejected") {
    GeneratorConfig cfg;
    cfg.dims = {16, 16, 4, 8};
    cfg.cell_radius_range = {10.0, 12.0};  // cell larger than the volume
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("slice triplet boundary replication") {
    auto [vol, events] = generate_sequence(small_config(2));
    const SliceTriplet at0 = extract_slice_triplet(vol, 0, 3);
    CHECK(at0.slices[0] == at0.slices[1]);  // z = 0 -> (0, 0, 1)
    CHECK(at0.slices[2] == vol.slice(1, 3));

    const int zmax = vol.dims.z - 1;
    const SliceTriplet at_end = extract_slice_triplet(vol, zmax, 3);
    CHECK(at_end.slices[1] == at_end.slices[2]);  // (Z-2, Z-1, Z-1)
    CHECK(at_end.slices[0] == vol.slice(zmax - 1, 3));

    const SliceTriplet mid = extract_slice_triplet(vol, 3, 5);
    CHECK(mid.slices[1] == vol.slice(3, 5));

    CHECK_THROWS_AS(extract_slice_triplet(vol, -1, 0), std::out_of_range);
    CHECK_THROWS_AS(extract_slice_triplet(vol, 0, vol.dims.t), std::out_of_range);
}

TEST_CASE("triplets two slices apart share nothing in the interior") {
    auto [vol, events] = generate_sequence(small_config(4));
    REQUIRE(vol.dims.z >= 5);
    const SliceTriplet a = extract_slice_triplet(vol, 2, 1);
    const SliceTriplet b = extract_slice_triplet(vol, 4, 1);
    // slices {1,2,3} vs {3,4,5}: only z=3 is shared, ends are distinct
    CHECK(a.slices[0] != b.slices[0]);
    CHECK(a.slices[1] != b.slices[1]);
    CHECK(a.slices[2] == b.slices[0]);
}
