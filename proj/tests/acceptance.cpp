// Acceptance suite: one test case per release criterion, with pinned
// tolerances. Criteria 5 and 6 share a single leave-one-out benchmark run.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>

#include "casdet/benchmark.hpp"
#include "casdet/checkpoint.hpp"
#include "casdet/detections_io.hpp"
#include "casdet/gradcheck.hpp"
#include "casdet/model.hpp"
#include "casdet/report.hpp"

using namespace casdet;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (double& v : t.values) v = dist(rng);
    return t;
}

std::vector<double> readout_weights(std::size_t n) {
    std::vector<double> w(n);
    std::mt19937_64 rng(1234);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (double& v : w) v = dist(rng);
    return w;
}

double weighted_sum(const Tensor& t, const std::vector<double>& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) s += t.values[i] * w[i];
    return s;
}

Tensor weights_as_grad(const Shape& shape, const std::vector<double>& w) {
    Tensor g(shape);
    g.values.assign(w.begin(), w.begin() + g.numel());
    return g;
}

// Reference NMS: repeatedly extract the best remaining box, discard overlaps.
std::vector<Box> nms_reference(std::vector<Box> boxes, double thr) {
    std::vector<Box> kept;
    while (!boxes.empty()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < boxes.size(); ++i)
            if (score_order(boxes[i], boxes[best])) best = i;
        const Box top = boxes[best];
        kept.push_back(top);
        std::vector<Box> rest;
        for (std::size_t i = 0; i < boxes.size(); ++i)
            if (i != best && iou(top, boxes[i]) < thr) rest.push_back(boxes[i]);
        boxes = std::move(rest);
    }
    return kept;
}

// Exhaustive maximum one-to-one matching (iou >= thr), by recursion.
int optimal_tp(const std::vector<Box>& dets, const std::vector<Box>& truth, double thr) {
    std::vector<char> used(truth.size(), 0);
    std::function<int(std::size_t)> go = [&](std::size_t d) -> int {
        if (d == dets.size()) return 0;
        int best = go(d + 1);
        for (std::size_t t = 0; t < truth.size(); ++t) {
            if (used[t] || iou(dets[d], truth[t]) < thr) continue;
            used[t] = 1;
            best = std::max(best, 1 + go(d + 1));
            used[t] = 0;
        }
        return best;
    };
    return go(0);
}

DetectionSet raw_set(std::vector<Box> boxes) {
    DetectionSet s;
    s.stage = Stage::raw;
    s.boxes = std::move(boxes);
    return s;
}

// The shared benchmark run for criteria 5 and 6.
struct BenchmarkRun {
    std::vector<FoldResult> folds;
    double elapsed_seconds = 0.0;
};

const BenchmarkRun& benchmark_run() {
    static const BenchmarkRun run = [] {
        BenchmarkRun r;
        const auto start = Clock::now();
        r.folds = leave_one_out(benchmark_datasets(), benchmark_train_config());
        r.elapsed_seconds = seconds_since(start);
        return r;
    }();
    return run;
}

std::vector<char> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// A single bright blob with one annotated box; every training draw sees the
// same slice, so the loss must collapse.
TrainingDataset one_sample_dataset() {
    TrainingDataset ds;
    ds.volume = Volume4D::zeros({64, 64, 1, 1});
    const double cx = 32.0, cy = 30.0, r = 5.0;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            const double d2 = (x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy);
            ds.volume.at(x, y, 0, 0) = 0.85 * std::exp(-d2 * std::log(2.0) / (r * r));
        }
    GroundTruthEvent ev;
    ev.event_id = 0;
    ev.boxes[{0, 0}] = Box{cx - r, cy - r, cx + r, cy + r, 0.0};
    ds.truth.push_back(ev);
    return ds;
}

}  // namespace

TEST_CASE("criterion 1: gradient correctness across all layers, under 60 s") {
    const auto start = Clock::now();
    std::mt19937_64 rng(7);

    {  // conv2d
        Tensor input = random_tensor({2, 8, 8}, rng);
        LayerParams p = make_conv2d(2, 3, 3, rng);
        const auto w = readout_weights(3 * 8 * 8);
        auto loss = [&] { return weighted_sum(conv2d(input, p, 1, 1), w); };
        Tensor out = conv2d(input, p, 1, 1);
        p.zero_grad();
        input.grad = conv2d_backward(input, p, 1, 1, weights_as_grad(out.shape, w)).values;
        const auto res = finite_difference_check(loss, {&input, &p.kernels, &p.bias}, 1e-4);
        CHECK(res.max_rel_error < 1e-4);
    }
    {  // conv3d
        Tensor input = random_tensor({1, 3, 6, 6}, rng);
        LayerParams p = make_conv3d(1, 2, 3, 3, 3, rng);
        const auto w = readout_weights(2 * 1 * 6 * 6);
        auto loss = [&] { return weighted_sum(conv3d(input, p, 1, 0, 1, 1), w); };
        Tensor out = conv3d(input, p, 1, 0, 1, 1);
        p.zero_grad();
        input.grad = conv3d_backward(input, p, 1, 0, 1, 1, weights_as_grad(out.shape, w)).values;
        const auto res = finite_difference_check(loss, {&input, &p.kernels, &p.bias}, 1e-4);
        CHECK(res.max_rel_error < 1e-4);
    }
    {  // relu (away from the kink)
        Tensor input = random_tensor({24}, rng);
        for (double& v : input.values)
            if (std::abs(v) < 0.05) v += 0.1;
        const auto w = readout_weights(24);
        auto loss = [&] { return weighted_sum(relu(input), w); };
        input.grad = relu_backward(input, weights_as_grad(input.shape, w)).values;
        const auto res = finite_difference_check(loss, {&input}, 1e-4);
        CHECK(res.max_rel_error < 1e-4);
    }
    {  // max pool
        Tensor input = random_tensor({1, 6, 6}, rng);
        const auto w = readout_weights(3 * 3);
        auto loss = [&] { return weighted_sum(max_pool2d(input, 2, 2), w); };
        Tensor out = max_pool2d(input, 2, 2);
        input.grad = max_pool2d_backward(input, 2, 2, weights_as_grad(out.shape, w)).values;
        const auto res = finite_difference_check(loss, {&input}, 1e-4);
        CHECK(res.max_rel_error < 1e-4);
    }
    {  // linear
        Tensor input = random_tensor({6}, rng);
        LayerParams p = make_linear(6, 4, rng);
        const auto w = readout_weights(4);
        auto loss = [&] { return weighted_sum(linear(input, p), w); };
        Tensor out = linear(input, p);
        p.zero_grad();
        input.grad = linear_backward(input, p, weights_as_grad(out.shape, w)).values;
        const auto res = finite_difference_check(loss, {&input, &p.kernels, &p.bias}, 1e-4);
        CHECK(res.max_rel_error < 1e-4);
    }
    {  // softmax cross entropy
        Tensor logits = random_tensor({5}, rng);
        auto loss = [&] { return softmax_cross_entropy(logits, 2); };
        logits.grad = softmax_cross_entropy_backward(logits, 2).values;
        const auto res = finite_difference_check(loss, {&logits}, 1e-4);
        CHECK(res.max_rel_error < 1e-4);
    }
    {  // smooth l1 (away from |x| = 1)
        Tensor pred = random_tensor({4}, rng);
        Tensor target({4}, {0.1, -0.2, 2.0, -2.5});
        for (std::size_t i = 0; i < 4; ++i)
            if (std::abs(std::abs(pred.values[i] - target.values[i]) - 1.0) < 0.05)
                pred.values[i] += 0.1;
        auto loss = [&] { return smooth_l1(pred, target); };
        pred.grad = smooth_l1_backward(pred, target).values;
        const auto res = finite_difference_check(loss, {&pred}, 1e-4);
        CHECK(res.max_rel_error < 1e-4);
    }

    CHECK(seconds_since(start) < 60.0);
}

TEST_CASE("criterion 2: iou vs pixel counting, nms vs brute force, exact") {
    // Every integer box in a 20x20 grid: 210 intervals per axis. Pixel overlap
    // and area tables are built by literal per-pixel counting.
    constexpr int G = 20;
    std::vector<std::pair<int, int>> iv;
    for (int a = 0; a < G; ++a)
        for (int b = a + 1; b <= G; ++b) iv.push_back({a, b});
    const int NI = static_cast<int>(iv.size());  // 210

    std::vector<long> overlap(static_cast<std::size_t>(NI) * NI, 0);
    std::vector<long> length(NI, 0);
    for (int i = 0; i < NI; ++i) {
        for (int p = iv[i].first; p < iv[i].second; ++p) ++length[i];
        for (int j = 0; j < NI; ++j) {
            long n = 0;
            for (int p = iv[i].first; p < iv[i].second; ++p)
                if (p >= iv[j].first && p < iv[j].second) ++n;
            overlap[static_cast<std::size_t>(i) * NI + j] = n;
        }
    }

    long mismatches = 0;
    for (int ax = 0; ax < NI && mismatches < 10; ++ax)
        for (int ay = 0; ay < NI; ++ay) {
            const Box a{static_cast<double>(iv[ax].first), static_cast<double>(iv[ay].first),
                        static_cast<double>(iv[ax].second), static_cast<double>(iv[ay].second), 0};
            const long area_a = length[ax] * length[ay];
            for (int bx = 0; bx < NI; ++bx) {
                const long* ox = &overlap[static_cast<std::size_t>(ax) * NI + bx];
                for (int by = 0; by < NI; ++by) {
                    const Box b{static_cast<double>(iv[bx].first), static_cast<double>(iv[by].first),
                                static_cast<double>(iv[bx].second),
                                static_cast<double>(iv[by].second), 0};
                    const long inter =
                        *ox * overlap[static_cast<std::size_t>(ay) * NI + by];
                    const long uni = area_a + length[bx] * length[by] - inter;
                    const double expected = static_cast<double>(inter) / static_cast<double>(uni);
                    if (iou(a, b) != expected) ++mismatches;
                }
            }
        }
    CHECK(mismatches == 0);

    // nms against the reference extractor: 1000 seeded scenes, n <= 200
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> count(0, 200);
    std::uniform_real_distribution<double> pos(0.0, 100.0), len(2.0, 30.0), sc(0.0, 1.0);
    std::uniform_real_distribution<double> thr(0.2, 0.7);
    long nms_mismatches = 0;
    for (int scene = 0; scene < 1000; ++scene) {
        std::vector<Box> boxes;
        const int n = count(rng);
        for (int i = 0; i < n; ++i) {
            const double x0 = pos(rng), y0 = pos(rng);
            boxes.push_back({x0, y0, x0 + len(rng), y0 + len(rng), sc(rng)});
        }
        const double t = thr(rng);
        if (nms(boxes, t) != nms_reference(boxes, t)) ++nms_mismatches;
    }
    CHECK(nms_mismatches == 0);
}

TEST_CASE("criterion 3: fusion algebra holds exactly") {
    const Box a{10, 10, 20, 20, 0.9};
    const Box b{40, 40, 52, 52, 0.6};
    const DetectionSet s = raw_set({a, b});

    // idempotence on identical triples: same boxes, scores unchanged
    const DetectionSet same = fuse_neighbor_outputs({{s, s, s}}, 0.5, 0.25);
    REQUIRE(same.boxes.size() == 2);
    CHECK(same.boxes[0].score == 0.9);
    CHECK(same.boxes[0].x0 == a.x0);
    CHECK(same.boxes[0].y1 == a.y1);
    CHECK(same.boxes[1].score == 0.6);

    // sum/3 absence rule: one member only, score 0.9 -> 0.3
    const DetectionSet lone =
        fuse_neighbor_outputs({{raw_set({a}), raw_set({}), raw_set({})}}, 0.5, 0.25);
    REQUIRE(lone.boxes.size() == 1);
    CHECK(lone.boxes[0].score == 0.9 / 3.0);

    // permutation invariance over the three members
    const DetectionSet x = raw_set({a});
    const DetectionSet y = raw_set({{11, 11, 21, 21, 0.6}});
    const DetectionSet z = raw_set({b});
    const DetectionSet base = fuse_neighbor_outputs({{x, y, z}}, 0.5, 0.25);
    const DetectionSet perm1 = fuse_neighbor_outputs({{z, x, y}}, 0.5, 0.25);
    const DetectionSet perm2 = fuse_neighbor_outputs({{y, z, x}}, 0.5, 0.25);
    CHECK(base.boxes == perm1.boxes);
    CHECK(base.boxes == perm2.boxes);
}

TEST_CASE("criterion 4: metric oracles") {
    // raw-count arithmetic: tp 662, fp 183, ground truth 711
    const auto pr = precision_recall({662, 183, 711 - 662});
    CHECK(pr.precision == doctest::Approx(0.7834).epsilon(1e-4));
    CHECK(pr.recall == doctest::Approx(0.9311).epsilon(1e-4));

    // greedy matcher vs exhaustive assignment on random scenes
    std::mt19937_64 rng(555);
    std::uniform_int_distribution<int> count(0, 6);
    std::uniform_real_distribution<double> pos(0.0, 50.0), len(4.0, 18.0), sc(0.0, 1.0);
    auto rand_boxes = [&](int n) {
        std::vector<Box> out;
        for (int i = 0; i < n; ++i) {
            const double x0 = pos(rng), y0 = pos(rng);
            out.push_back({x0, y0, x0 + len(rng), y0 + len(rng), sc(rng)});
        }
        return out;
    };
    int agree = 0;
    const int trials = 500;
    for (int trial = 0; trial < trials; ++trial) {
        const auto dets = rand_boxes(count(rng));
        const auto truth = rand_boxes(count(rng));
        const MatchResult m = match_detections(dets, truth, 0.3);
        const int best = optimal_tp(dets, truth, 0.3);
        CHECK(m.tp <= best);
        if (m.tp == best) ++agree;
        CHECK(m.tp + m.fn == static_cast<int>(truth.size()));
        CHECK(m.tp + m.fp == static_cast<int>(dets.size()));
    }
    CHECK(agree >= trials * 95 / 100);
}

TEST_CASE("criterion 5: directional precision gain from fusion on the benchmark") {
    const BenchmarkRun& run = benchmark_run();
    REQUIRE(run.folds.size() == 5);

    Counts vol, fin;
    for (const FoldResult& f : run.folds) {
        vol += f.eval.volume_fused.counts;
        fin += f.eval.final_.counts;
    }
    const PrecisionRecall pr_vol = precision_recall(vol);
    const PrecisionRecall pr_fin = precision_recall(fin);
    MESSAGE("volume_fused precision=" << pr_vol.precision << " recall=" << pr_vol.recall);
    MESSAGE("final        precision=" << pr_fin.precision << " recall=" << pr_fin.recall);
    MESSAGE("benchmark runtime " << run.elapsed_seconds << " s");

    CHECK(pr_fin.precision - pr_vol.precision >= 0.15);
    CHECK(pr_fin.recall >= pr_vol.recall - 0.10);
    CHECK(run.elapsed_seconds <= 1800.0);
}

TEST_CASE("criterion 6: event-level detection on the benchmark") {
    const BenchmarkRun& run = benchmark_run();
    REQUIRE(run.folds.size() == 5);

    // fold 0 holds out the easy dataset: perfect event counts required
    const Counts& easy = run.folds[0].eval.event_counts;
    MESSAGE("easy fold events tp=" << easy.tp << " fn=" << easy.fn << " fp=" << easy.fp);
    CHECK(easy.fp == 0);
    CHECK(easy.fn == 0);

    for (const FoldResult& f : run.folds) {
        const Counts& e = f.eval.event_counts;
        const double f1 =
            (2 * e.tp + e.fp + e.fn) == 0 ? 1.0 : 2.0 * e.tp / (2.0 * e.tp + e.fp + e.fn);
        MESSAGE("fold " << f.held_out << " events tp=" << e.tp << " fn=" << e.fn
                        << " fp=" << e.fp << " f1=" << f1);
        CHECK(f1 >= 0.8);
    }
}

TEST_CASE("criterion 7: identical seeds give byte-identical artifacts") {
    const fs::path dir = fs::temp_directory_path() / "casdet_acceptance_determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);

    GeneratorConfig gcfg;
    gcfg.dims = {64, 64, 4, 8};
    gcfg.division_duration_range = {4, 5};
    gcfg.seed = 11;
    TrainConfig tcfg;
    tcfg.max_batches = 10;
    tcfg.augment.crop_size = {48, 48};
    tcfg.optimizer.lr_initial = 2e-3;
    tcfg.optimizer.lr_after = 2e-4;
    tcfg.seed = 21;

    auto run_once = [&](const std::string& tag) {
        auto [vol, truth] = generate_sequence(gcfg);
        const TrainResult tr = train_cascade({{vol, truth}}, tcfg);
        const fs::path ckpt = dir / (tag + ".ckpt");
        save_checkpoint(tr.model, ckpt);
        const std::vector<DetectionSet> sets = run_pipeline(vol, tr.model, Stage::final);
        const fs::path dets = dir / (tag + ".json");
        save_detections(sets, vol.dims, dets);
        const EvalResult ev = evaluate_dataset(vol, truth, tr.model);
        return std::tuple{ckpt, dets, ev};
    };

    const auto [ckpt_a, dets_a, eval_a] = run_once("a");
    const auto [ckpt_b, dets_b, eval_b] = run_once("b");
    CHECK(file_bytes(ckpt_a) == file_bytes(ckpt_b));
    CHECK(file_bytes(dets_a) == file_bytes(dets_b));
    CHECK(eval_a.final_.counts.tp == eval_b.final_.counts.tp);
    CHECK(eval_a.final_.counts.fp == eval_b.final_.counts.fp);
    CHECK(eval_a.final_.counts.fn == eval_b.final_.counts.fn);
    CHECK(eval_a.final_.pr.precision == eval_b.final_.pr.precision);
    CHECK(eval_a.final_.pr.recall == eval_b.final_.pr.recall);
}

TEST_CASE("criterion 8: smoke training halves the loss; lr switch is exact") {
    TrainConfig cfg;
    cfg.max_batches = 200;
    cfg.batch_slices = 2;
    cfg.augment.crop_size = {64, 64};
    cfg.augment.rotation_range = {0.0, 0.0};
    cfg.augment.noise_percent_range = {0.0, 0.0};
    cfg.augment.scale_range = {1.0, 1.0};
    cfg.augment.mirror_prob = 0.0;
    cfg.augment.translate_range = 0.0;
    cfg.optimizer.lr_initial = 2e-3;
    cfg.optimizer.lr_after = 2e-4;
    cfg.optimizer.lr_switch_batch = 150;
    cfg.seed = 33;

    const TrainResult r = train_cascade({one_sample_dataset()}, cfg);
    REQUIRE(r.log.size() == 200);

    const double first = r.log[0].total;
    double best = first;
    for (const BatchLog& l : r.log) best = std::min(best, l.total);
    MESSAGE("smoke loss " << first << " -> " << best);
    CHECK(best <= 0.5 * first);

    CHECK(r.log[149].lr == cfg.optimizer.lr_initial);
    CHECK(r.log[150].lr == cfg.optimizer.lr_after);
    for (const BatchLog& l : r.log)
        CHECK(l.lr == (l.batch < 150 ? cfg.optimizer.lr_initial : cfg.optimizer.lr_after));
}
