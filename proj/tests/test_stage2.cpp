#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "casdet/stage2.hpp"

using namespace casdet;

namespace {

DetectionSet fused_set(int z, int t, std::vector<Box> boxes) {
    DetectionSet s;
    s.z = z;
    s.t = t;
    s.stage = Stage::volume_fused;
    s.boxes = std::move(boxes);
    return s;
}

TemporalCandidate scored(Box box, double s0, double s1, double s2) {
    TemporalCandidate c;
    c.box = box;
    c.per_frame_scores = {s0, s1, s2};
    c.source_frames = {true, true, true};
    c.scored = true;
    return c;
}

}  // namespace

TEST_CASE("candidate pool: identical sets collapse to one candidate per box") {
    const DetectionSet s = fused_set(3, 5, {{10, 10, 20, 20, 0.8}, {40, 40, 50, 50, 0.6}});
    const auto pool = build_candidate_pool(s, s, s, 0.5);
    REQUIRE(pool.size() == 2);
    for (const auto& c : pool) {
        CHECK(c.source_frames[0]);
        CHECK(c.source_frames[1]);
        CHECK(c.source_frames[2]);
    }
}

TEST_CASE("candidate pool: neighbor-only box is retained") {
    const DetectionSet prev = fused_set(3, 4, {{10, 10, 20, 20, 0.7}});
    const DetectionSet curr = fused_set(3, 5, {});
    const DetectionSet next = fused_set(3, 6, {});
    const auto pool = build_candidate_pool(prev, curr, next, 0.5);
    REQUIRE(pool.size() == 1);
    CHECK(pool[0].source_frames == std::array<bool, 3>{true, false, false});
}

TEST_CASE("candidate pool: low-iou boxes stay distinct") {
    // iou((0,0,10,10),(5,5,15,15)) = 1/7 < 0.5
    const DetectionSet prev = fused_set(2, 1, {{0, 0, 10, 10, 0.9}});
    const DetectionSet curr = fused_set(2, 2, {{5, 5, 15, 15, 0.8}});
    const DetectionSet next = fused_set(2, 3, {});
    CHECK(build_candidate_pool(prev, curr, next, 0.5).size() == 2);
}

TEST_CASE("candidate pool rejects z mismatch") {
    const DetectionSet a = fused_set(2, 1, {});
    const DetectionSet b = fused_set(3, 1, {});
    CHECK_THROWS_AS(build_candidate_pool(a, b, a, 0.5), std::invalid_argument);
}

TEST_CASE("candidate pool is permutation invariant up to frame labels") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> pos(0.0, 80.0), len(4.0, 20.0), sc(0.0, 1.0);
    auto rand_set = [&](int n) {
        DetectionSet s = fused_set(0, 0, {});
        for (int i = 0; i < n; ++i) {
            const double x0 = pos(rng), y0 = pos(rng);
            s.boxes.push_back({x0, y0, x0 + len(rng), y0 + len(rng), sc(rng)});
        }
        return s;
    };
    for (int trial = 0; trial < 40; ++trial) {
        const DetectionSet a = rand_set(5), b = rand_set(5), c = rand_set(5);
        auto boxes_of = [](std::vector<TemporalCandidate> pool) {
            std::vector<Box> out;
            for (const auto& cand : pool) out.push_back(cand.box);
            return out;
        };
        const auto base = boxes_of(build_candidate_pool(a, b, c, 0.5));
        CHECK(boxes_of(build_candidate_pool(c, b, a, 0.5)) == base);
        CHECK(boxes_of(build_candidate_pool(b, a, c, 0.5)) == base);
    }
}

TEST_CASE("every current-frame box reaches the pool") {
    std::mt19937_64 rng(15);
    std::uniform_real_distribution<double> pos(0.0, 80.0), len(4.0, 20.0), sc(0.0, 1.0);
    for (int trial = 0; trial < 60; ++trial) {
        DetectionSet sets[3];
        for (auto& s : sets) {
            s = fused_set(0, 0, {});
            const int n = trial % 6;
            for (int i = 0; i < n; ++i) {
                const double x0 = pos(rng), y0 = pos(rng);
                s.boxes.push_back({x0, y0, x0 + len(rng), y0 + len(rng), sc(rng)});
            }
        }
        const auto pool = build_candidate_pool(sets[0], sets[1], sets[2], 0.5);
        for (const Box& b : sets[1].boxes) {
            bool found = false;
            for (const auto& c : pool)
                if (c.source_frames[1] && iou(c.box, b) >= 0.5) found = true;
            CHECK(found);  // merged at worst, never lost
        }
    }
}

TEST_CASE("classifier: zero crops with bias-free weights score 0.5") {
    std::mt19937_64 rng(7);
    Stage2Weights w = Stage2Weights::init(rng);
    const std::vector<double> zero(s2::kCrop * s2::kCrop, 0.0);
    CHECK(stage2_score(zero, w) == doctest::Approx(0.5));
}

TEST_CASE("classify_temporal: identical frame content gives equal scores") {
    Volume4D vol = Volume4D::zeros({32, 32, 3, 5});
    for (int t = 0; t < 5; ++t)
        for (int y = 10; y < 20; ++y)
            for (int x = 10; x < 20; ++x) vol.at(x, y, 1, t) = 0.8;  // static bright square
    std::mt19937_64 rng(11);
    Stage2Weights w = Stage2Weights::init(rng);
    TemporalCandidate c;
    c.box = {8, 8, 22, 22, 0.7};
    c.source_frames = {false, true, false};
    c = classify_temporal(std::move(c), vol, 1, 2, w);
    CHECK(c.scored);
    CHECK(c.per_frame_scores[0] == doctest::Approx(c.per_frame_scores[1]));
    CHECK(c.per_frame_scores[1] == doctest::Approx(c.per_frame_scores[2]));
}

TEST_CASE("classify_temporal replicates boundary frames") {
    Volume4D vol = Volume4D::zeros({32, 32, 2, 3});
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : vol.intensities) v = u(rng);
    Stage2Weights w = Stage2Weights::init(rng);
    TemporalCandidate c;
    c.box = {10, 10, 22, 22, 0.5};
    c.source_frames = {false, true, false};
    const TemporalCandidate at0 = classify_temporal(c, vol, 0, 0, w);
    CHECK(at0.per_frame_scores[0] == doctest::Approx(at0.per_frame_scores[1]));
    const TemporalCandidate at_end = classify_temporal(c, vol, 0, 2, w);
    CHECK(at_end.per_frame_scores[1] == doctest::Approx(at_end.per_frame_scores[2]));
}

TEST_CASE("fuse_temporal examples") {
    const Box b{10, 10, 20, 20, 0.0};
    {
        const auto out = fuse_temporal({scored(b, 0.9, 0.9, 0.9)}, 2, 3, 0.5);
        REQUIRE(out.boxes.size() == 1);
        CHECK(out.boxes[0].score == doctest::Approx(0.9));
        CHECK(out.stage == Stage::final);
    }
    CHECK(fuse_temporal({scored(b, 0.9, 0.1, 0.1)}, 2, 3, 0.5).boxes.empty());  // mean 0.3667
    {
        // weak frame-t evidence rescued by neighbors
        const auto out = fuse_temporal({scored(b, 0.4, 0.7, 0.7)}, 2, 3, 0.5);
        REQUIRE(out.boxes.size() == 1);
        CHECK(out.boxes[0].score == doctest::Approx(0.6));
    }
}

TEST_CASE("fuse_temporal requires populated scores") {
    TemporalCandidate c;
    c.box = {0, 0, 5, 5, 0.5};
    CHECK_THROWS_AS(fuse_temporal({c}, 0, 0, 0.5), std::invalid_argument);
}

TEST_CASE("fuse_temporal is monotone in per-frame scores") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Box b{0, 0, 10, 10, 0.0};
    for (int trial = 0; trial < 200; ++trial) {
        const double s0 = u(rng), s1 = u(rng), s2 = u(rng);
        const bool kept = !fuse_temporal({scored(b, s0, s1, s2)}, 0, 0, 0.5).boxes.empty();
        if (!kept) continue;
        for (int f = 0; f < 3; ++f) {
            double raised[3] = {s0, s1, s2};
            raised[f] = std::min(1.0, raised[f] + u(rng));
            CHECK(!fuse_temporal({scored(b, raised[0], raised[1], raised[2])}, 0, 0, 0.5)
                       .boxes.empty());
        }
    }
}
