#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <zlib.h>

#include "casdet/dataset_io.hpp"
#include "casdet/detections_io.hpp"
#include "casdet/metrics.hpp"
#include "casdet/render.hpp"

namespace fs = std::filesystem;
using namespace casdet;
using nlohmann::json;

namespace {

const char* cli = CASDET_CLI_PATH;

struct RunResult {
    int code = -1;
    std::string out;
};

RunResult run(const std::string& args) {
    static int counter = 0;
    const fs::path cap = fs::temp_directory_path() / ("casdet_cli_out_" + std::to_string(counter++));
    const std::string cmd = std::string(cli) + " " + args + " > " + cap.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(cap);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    fs::remove(cap);
    return r;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "casdet_cli_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<char> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Minimal reader for the PNGs this project writes: 8-bit truecolor, one
// IDAT chunk, filter byte 0 on every scanline.
RgbImage read_png(const fs::path& path) {
    const std::vector<char> bytes = read_bytes(path);
    REQUIRE(bytes.size() > 8);
    auto u32 = [&](std::size_t off) {
        return (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off])) << 24) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 1])) << 16) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 2])) << 8) |
               static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 3]));
    };
    int width = 0, height = 0;
    std::vector<std::uint8_t> compressed;
    std::size_t off = 8;
    while (off + 8 <= bytes.size()) {
        const std::uint32_t len = u32(off);
        const std::string type(bytes.begin() + off + 4, bytes.begin() + off + 8);
        const std::size_t data = off + 8;
        if (type == "IHDR") {
            width = static_cast<int>(u32(data));
            height = static_cast<int>(u32(data + 4));
        } else if (type == "IDAT") {
            compressed.insert(compressed.end(), bytes.begin() + data, bytes.begin() + data + len);
        }
        off = data + len + 4;  // skip crc
    }
    REQUIRE(width > 0);
    RgbImage img(width, height);
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(height) * (width * 3 + 1));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    REQUIRE(uncompress(raw.data(), &raw_len, compressed.data(),
                       static_cast<uLong>(compressed.size())) == Z_OK);
    REQUIRE(raw_len == raw.size());
    for (int y = 0; y < height; ++y) {
        const std::uint8_t* row = raw.data() + static_cast<std::size_t>(y) * (width * 3 + 1);
        REQUIRE(row[0] == 0);  // filter type
        std::copy(row + 1, row + 1 + static_cast<std::size_t>(width) * 3,
                  img.pixels.begin() + static_cast<std::size_t>(y) * width * 3);
    }
    return img;
}

Rgb pixel(const RgbImage& img, int x, int y) {
    const std::uint8_t* p = img.pixels.data() + (static_cast<std::size_t>(y) * img.width + x) * 3;
    return {p[0], p[1], p[2]};
}

bool same_color(Rgb a, Rgb b) { return a.r == b.r && a.g == b.g && a.b == b.b; }

}  // namespace

TEST_CASE("--help exits 0, bad invocations exit 1") {
    CHECK(run("--help").code == 0);
    CHECK(run("generate --help").code == 0);
    CHECK(run("").code == 1);                 // subcommand required
    CHECK(run("generate").code == 1);         // --out required
    CHECK(run("generate --bogus x").code == 1);
    CHECK(run("frobnicate").code == 1);
}

TEST_CASE("malformed option values exit 1") {
    const fs::path out = fresh_dir("baddims");
    CHECK(run("generate --out " + out.string() + " --dims banana").code == 1);
    CHECK(run("generate --out " + out.string() + " --dims 64x64x4").code == 1);
    CHECK(run("generate --out " + out.string() + " --events 5..2").code == 1);
}

TEST_CASE("generate is deterministic and honors --events") {
    const fs::path a = fresh_dir("gen_a"), b = fresh_dir("gen_b");
    const std::string common =
        " --seed 9 --dims 64x64x4x8 --events 2..2 --normals 3..4 --duration 4..5";
    REQUIRE(run("generate --out " + a.string() + common).code == 0);
    REQUIRE(run("generate --out " + b.string() + common).code == 0);

    // every frame file byte-identical across the two runs
    int frames = 0;
    for (const auto& entry : fs::directory_iterator(a)) {
        if (entry.path().extension() != ".raw") continue;
        ++frames;
        CHECK(read_bytes(entry.path()) == read_bytes(b / entry.path().filename()));
    }
    CHECK(frames == 8);

    std::ifstream ann(a / "annotations.json");
    json j;
    ann >> j;
    REQUIRE(j.is_array());
    CHECK(j.size() == 2);
}

TEST_CASE("train rejects a missing dataset directory") {
    const fs::path ckpt = fresh_dir("train_missing") / "model.ckpt";
    const RunResult r =
        run("train --data /nonexistent/dataset --out " + ckpt.string());
    CHECK(r.code == 1);
    CHECK(r.out.find("/nonexistent/dataset") != std::string::npos);
}

TEST_CASE("eval scores truth-derived detections perfectly; render burns in boxes") {
    const fs::path data = fresh_dir("eval_data");
    REQUIRE(run("generate --out " + data.string() +
                " --seed 4 --dims 64x64x4x8 --events 1..1 --normals 2..3 --duration 4..5")
                .code == 0);

    // build a detections file straight from the ground truth
    auto [vol, truth] = load_dataset(data);
    std::vector<DetectionSet> sets(static_cast<std::size_t>(vol.dims.z) * vol.dims.t);
    for (int t = 0; t < vol.dims.t; ++t)
        for (int z = 0; z < vol.dims.z; ++z) {
            DetectionSet& s = sets[static_cast<std::size_t>(t) * vol.dims.z + z];
            s.z = z;
            s.t = t;
            s.stage = Stage::final;
        }
    for (const auto& [key, boxes] : truth_boxes_by_slice(truth))
        for (Box b : boxes) {
            b.score = 0.95;
            sets[static_cast<std::size_t>(key.second) * vol.dims.z + key.first].boxes.push_back(b);
        }
    const fs::path dets = fresh_dir("eval_dets") / "dets.json";
    save_detections(sets, vol.dims, dets);

    const fs::path report = fresh_dir("eval_report") / "report.json";
    const RunResult r = run("eval --detections " + dets.string() + " --truth " + data.string() +
                            " --json " + report.string());
    REQUIRE(r.code == 0);
    std::ifstream rin(report);
    json rep;
    rin >> rep;
    const auto& row = rep.at("datasets").at(0);
    CHECK(row.at("slice").at("precision").get<double>() == 1.0);
    CHECK(row.at("slice").at("recall").get<double>() == 1.0);
    // event counts must match the library computation on the same inputs
    // (a truth event can split into several linked components, so fp is not
    // structurally zero here)
    const Counts expected =
        event_metrics(aggregate_events(sets, 0.3), truth_as_events(truth), 0.5);
    CHECK(row.at("events").at("tp").get<long>() == expected.tp);
    CHECK(row.at("events").at("fn").get<long>() == expected.fn);
    CHECK(row.at("events").at("fp").get<long>() == expected.fp);
    CHECK(expected.fn == 0);  // every truth event is recovered

    // render one slice that has a detection and verify the outline pixels
    std::pair<int, int> zt{-1, -1};
    Box drawn;
    for (const auto& s : sets)
        if (!s.boxes.empty()) {
            zt = {s.z, s.t};
            drawn = s.boxes[0];
            break;
        }
    REQUIRE(zt.first >= 0);
    const fs::path imgs = fresh_dir("render_out");
    REQUIRE(run("render --data " + data.string() + " --detections " + dets.string() + " --out " +
                imgs.string() + " --t " + std::to_string(zt.second) + " --z " +
                std::to_string(zt.first))
                .code == 0);
    char name[64];
    std::snprintf(name, sizeof name, "overlay_t%04d_z%02d.png", zt.second, zt.first);
    const RgbImage img = read_png(imgs / name);
    CHECK(img.width == vol.dims.x);
    CHECK(img.height == vol.dims.y);
    const int x0 = static_cast<int>(std::lround(drawn.x0));
    const int y0 = static_cast<int>(std::lround(drawn.y0));
    const int x1 = static_cast<int>(std::lround(drawn.x1)) - 1;
    const int y1 = static_cast<int>(std::lround(drawn.y1)) - 1;
    const int mx = (x0 + x1) / 2, my = (y0 + y1) / 2;
    CHECK(same_color(pixel(img, mx, y0), kDetectionColor));  // top edge
    CHECK(same_color(pixel(img, mx, y1), kDetectionColor));  // bottom
    CHECK(same_color(pixel(img, x0, my), kDetectionColor));  // left
    CHECK(same_color(pixel(img, x1, my), kDetectionColor));  // right
}

TEST_CASE("eval rejects detections whose dims mismatch the dataset") {
    const fs::path data = fresh_dir("mismatch_data");
    REQUIRE(run("generate --out " + data.string() +
                " --seed 5 --dims 64x64x4x8 --events 1..1 --normals 2..2 --duration 4..5")
                .code == 0);
    const fs::path dets = fresh_dir("mismatch_dets") / "dets.json";
    save_detections({}, Dims4{32, 32, 4, 8}, dets);
    const RunResult r = run("eval --detections " + dets.string() + " --truth " + data.string());
    CHECK(r.code == 1);
    CHECK(r.out.find("dims") != std::string::npos);
}

TEST_CASE("eval rejects a missing detections file") {
    const fs::path data = fresh_dir("nofile_data");
    REQUIRE(run("generate --out " + data.string() +
                " --seed 6 --dims 64x64x4x8 --events 1..1 --normals 2..2 --duration 4..5")
                .code == 0);
    CHECK(run("eval --detections /nonexistent.json --truth " + data.string()).code == 1);
}
