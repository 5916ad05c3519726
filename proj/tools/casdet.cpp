// casdet: command-line front end for the cascaded mitosis-detection pipeline.
// Subcommands: generate, train, detect, eval, render.
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "casdet/checkpoint.hpp"
#include "casdet/config_io.hpp"
#include "casdet/dataset_io.hpp"
#include "casdet/detections_io.hpp"
#include "casdet/render.hpp"
#include "casdet/report.hpp"
#include "casdet/synth.hpp"
#include "casdet/train.hpp"

namespace fs = std::filesystem;
using namespace casdet;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

Dims4 parse_dims(const std::string& s) {
    Dims4 d;
    char sep1, sep2, sep3;
    std::istringstream in(s);
    if (!(in >> d.x >> sep1 >> d.y >> sep2 >> d.z >> sep3 >> d.t) || sep1 != 'x' || sep2 != 'x' ||
        sep3 != 'x' || !in.eof() || d.x <= 0 || d.y <= 0 || d.z <= 0 || d.t <= 0)
        throw UsageError("malformed --dims (expected XxYxZxT): " + s);
    return d;
}

template <typename T>
std::pair<T, T> parse_range(const std::string& s, const char* flag) {
    const auto pos = s.find("..");
    try {
        if (pos == std::string::npos) {
            const T v = static_cast<T>(std::stod(s));
            return {v, v};
        }
        const T lo = static_cast<T>(std::stod(s.substr(0, pos)));
        const T hi = static_cast<T>(std::stod(s.substr(pos + 2)));
        if (lo > hi) throw UsageError(std::string(flag) + ": lo > hi");
        return {lo, hi};
    } catch (const UsageError&) {
        throw;
    } catch (const std::exception&) {
        throw UsageError(std::string("malformed ") + flag + " (expected LO..HI): " + s);
    }
}

int cmd_generate(const std::string& out_dir, std::uint64_t seed, const std::string& dims,
                 const std::string& events, const std::string& normals, double noise,
                 const std::string& radius, const std::string& duration, double margin,
                 const std::string& event_peak, const std::string& normal_peak,
                 const std::string& id) {
    GeneratorConfig cfg;
    cfg.seed = seed;
    if (!dims.empty()) cfg.dims = parse_dims(dims);
    if (!events.empty()) cfg.event_count_range = parse_range<int>(events, "--events");
    if (!normals.empty()) cfg.normal_cell_count_range = parse_range<int>(normals, "--normals");
    if (noise >= 0.0) cfg.noise_sigma = noise;
    if (!radius.empty()) cfg.cell_radius_range = parse_range<double>(radius, "--radius");
    if (!duration.empty()) cfg.division_duration_range = parse_range<int>(duration, "--duration");
    if (margin >= 0.0) cfg.border_margin = margin;
    if (!event_peak.empty()) cfg.event_peak_range = parse_range<double>(event_peak, "--event-peak");
    if (!normal_peak.empty())
        cfg.normal_peak_range = parse_range<double>(normal_peak, "--normal-peak");
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    auto [volume, truth] = generate_sequence(cfg);
    volume.id = id.empty() ? fs::path(out_dir).filename().string() : id;
    const fs::path manifest = save_dataset(volume, truth, out_dir);
    std::cout << manifest.string() << "\n";
    return 0;
}

std::vector<TrainingDataset> load_training_data(const std::vector<std::string>& dirs) {
    std::vector<TrainingDataset> datasets;
    for (const std::string& dir : dirs) {
        if (!fs::exists(fs::path(dir) / "manifest.json"))
            throw UsageError("missing dataset dir (no manifest.json): " + dir);
        auto [vol, truth] = load_dataset(dir);
        datasets.push_back({std::move(vol), std::move(truth)});
    }
    return datasets;
}

void write_loss_log(const std::vector<BatchLog>& log, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write loss log: " + path.string());
    out << "batch,lr,loss_objectness,loss_regression,loss_roi_cls,loss_temporal,total\n";
    char buf[256];
    for (const BatchLog& l : log) {
        std::snprintf(buf, sizeof buf, "%ld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", l.batch, l.lr,
                      l.loss_objectness, l.loss_regression, l.loss_roi_cls, l.loss_temporal,
                      l.total);
        out << buf;
    }
}

int cmd_train(const std::vector<std::string>& data_dirs, const std::string& config_file,
              const std::string& out_ckpt, std::string log_file) {
    TrainConfig cfg;
    if (!config_file.empty()) {
        if (!fs::exists(config_file)) throw UsageError("missing config file: " + config_file);
        cfg = load_train_config(config_file);
    }
    std::vector<TrainingDataset> datasets = load_training_data(data_dirs);
    TrainResult result = train_cascade(datasets, cfg);
    save_checkpoint(result.model, out_ckpt);
    if (log_file.empty()) log_file = out_ckpt + ".log.csv";
    write_loss_log(result.log, log_file);
    std::cout << out_ckpt << "\n";
    return 0;
}

int cmd_detect(const std::string& data_dir, const std::string& ckpt, const std::string& out_file,
               const std::string& stage_name_str) {
    if (!fs::exists(fs::path(data_dir) / "manifest.json"))
        throw UsageError("missing dataset dir (no manifest.json): " + data_dir);
    if (!fs::exists(ckpt)) throw UsageError("missing checkpoint: " + ckpt);
    const Stage stage = stage_from_name(stage_name_str);
    auto [vol, truth] = load_dataset(data_dir);
    const CascadeModel model = load_checkpoint(ckpt);
    const std::vector<DetectionSet> sets = run_pipeline(vol, model, stage);
    save_detections(sets, vol.dims, out_file);
    std::cout << out_file << "\n";
    return 0;
}

int cmd_eval(const std::string& detections_file, const std::string& truth_dir, double iou_thr,
             double link_iou, const std::string& json_out) {
    std::pair<std::vector<DetectionSet>, Dims4> loaded;
    std::vector<GroundTruthEvent> truth;
    Volume4D vol;
    try {
        loaded = load_detections(detections_file);
        std::tie(vol, truth) = load_dataset(truth_dir);
    } catch (const DetectionsFileError& e) {
        throw UsageError(e.what());
    } catch (const DatasetError& e) {
        throw UsageError(e.what());
    }
    if (!(loaded.second == vol.dims))
        throw UsageError("detections dims do not match dataset dims");

    const auto truth_map = truth_boxes_by_slice(truth);
    DatasetReport row;
    row.name = vol.id.empty() ? fs::path(truth_dir).filename().string() : vol.id;
    row.slice = slice_counts(loaded.first, truth_map, iou_thr);
    const std::vector<MitosisEvent> events = aggregate_events(loaded.first, link_iou);
    row.events = event_metrics(events, truth_as_events(truth), iou_thr);

    MetricsReport rep;
    rep.rows.push_back(row);
    std::cout << report_to_text(rep);
    if (!json_out.empty()) {
        std::ofstream out(json_out);
        if (!out) throw std::runtime_error("cannot write " + json_out);
        out << report_to_json(rep).dump(2) << "\n";
    }
    return 0;
}

int cmd_render(const std::string& data_dir, const std::string& detections_file,
               const std::string& out_dir, int t_flag, int z_flag) {
    std::pair<std::vector<DetectionSet>, Dims4> loaded;
    std::vector<GroundTruthEvent> truth;
    Volume4D vol;
    try {
        loaded = load_detections(detections_file);
        std::tie(vol, truth) = load_dataset(data_dir);
    } catch (const DetectionsFileError& e) {
        throw UsageError(e.what());
    } catch (const DatasetError& e) {
        throw UsageError(e.what());
    }
    if (!(loaded.second == vol.dims))
        throw UsageError("detections dims do not match dataset dims");
    if (t_flag >= vol.dims.t) throw UsageError("--t out of range");
    if (z_flag >= vol.dims.z) throw UsageError("--z out of range");

    const auto truth_map = truth_boxes_by_slice(truth);
    std::set<std::pair<int, int>> wanted;  // (z, t)
    if (t_flag >= 0 || z_flag >= 0) {
        for (int t = 0; t < vol.dims.t; ++t)
            for (int z = 0; z < vol.dims.z; ++z) {
                if (t_flag >= 0 && t != t_flag) continue;
                if (z_flag >= 0 && z != z_flag) continue;
                wanted.insert({z, t});
            }
    } else {
        for (const auto& set : loaded.first)
            if (!set.boxes.empty()) wanted.insert({set.z, set.t});
        for (const auto& [key, boxes] : truth_map) wanted.insert(key);
    }

    fs::create_directories(out_dir);
    for (const auto& [z, t] : wanted) {
        RgbImage img = slice_to_image(vol, z, t);
        auto it = truth_map.find({z, t});
        if (it != truth_map.end())
            for (const Box& b : it->second) draw_box(img, b, kTruthColor);
        const DetectionSet& set = loaded.first[static_cast<std::size_t>(t) * vol.dims.z + z];
        for (const Box& b : set.boxes) draw_box(img, b, kDetectionColor);
        char name[64];
        std::snprintf(name, sizeof name, "overlay_t%04d_z%02d.png", t, z);
        write_png(img, fs::path(out_dir) / name);
    }
    std::cout << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cascaded 2.5D mitotic-cell detection pipeline"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "Generate a synthetic 4D dataset");
    std::string g_out, g_dims, g_events, g_normals, g_radius, g_duration, g_event_peak,
        g_normal_peak, g_id;
    std::uint64_t g_seed = 0;
    double g_noise = -1.0, g_margin = -1.0;
    gen->add_option("--out", g_out, "Output dataset directory")->required();
    gen->add_option("--seed", g_seed, "RNG seed");
    gen->add_option("--dims", g_dims, "Volume dims as XxYxZxT (default 128x128x12x20)");
    gen->add_option("--events", g_events, "Mitosis event count range LO..HI");
    gen->add_option("--normals", g_normals, "Normal cell count range LO..HI");
    gen->add_option("--noise", g_noise, "Additive Gaussian noise sigma");
    gen->add_option("--radius", g_radius, "Cell half-peak radius range LO..HI (voxels)");
    gen->add_option("--duration", g_duration, "Division duration range LO..HI (frames)");
    gen->add_option("--margin", g_margin, "Min event-center distance from x/y borders");
    gen->add_option("--event-peak", g_event_peak, "Mitotic cell peak intensity range LO..HI");
    gen->add_option("--normal-peak", g_normal_peak, "Normal cell peak intensity range LO..HI");
    gen->add_option("--id", g_id, "Dataset id stored in the manifest");

    // train
    auto* train = app.add_subcommand("train", "Train the cascade on one or more datasets");
    std::vector<std::string> t_data;
    std::string t_config, t_out, t_log;
    train->add_option("--data", t_data, "Training dataset directories")->required();
    train->add_option("--config", t_config, "Training config JSON file");
    train->add_option("--out", t_out, "Output checkpoint file")->required();
    train->add_option("--log", t_log, "Loss log CSV (default: <ckpt>.log.csv)");

    // detect
    auto* detect = app.add_subcommand("detect", "Run detection on a dataset");
    std::string d_data, d_ckpt, d_out, d_stage = "final";
    detect->add_option("--data", d_data, "Dataset directory")->required();
    detect->add_option("--ckpt", d_ckpt, "Checkpoint file")->required();
    detect->add_option("--out", d_out, "Output detections JSON")->required();
    detect->add_option("--stage", d_stage, "Pipeline stage: raw | volume_fused | final")
        ->check(CLI::IsMember({"raw", "volume_fused", "final"}));

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate detections against ground truth");
    std::string e_dets, e_truth, e_json;
    double e_iou = 0.5, e_link = 0.3;
    eval->add_option("--detections", e_dets, "Detections JSON file")->required();
    eval->add_option("--truth", e_truth, "Ground-truth dataset directory")->required();
    eval->add_option("--iou", e_iou, "TP matching IoU threshold");
    eval->add_option("--link-iou", e_link, "Event linking IoU threshold");
    eval->add_option("--json", e_json, "Also write the report as JSON to this path");

    // render
    auto* render = app.add_subcommand("render", "Render overlay PNGs of slices with boxes");
    std::string r_data, r_dets, r_out;
    int r_t = -1, r_z = -1;
    render->add_option("--data", r_data, "Dataset directory")->required();
    render->add_option("--detections", r_dets, "Detections JSON file")->required();
    render->add_option("--out", r_out, "Output image directory")->required();
    render->add_option("--t", r_t, "Only this frame index");
    render->add_option("--z", r_z, "Only this slice index");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed())
            return cmd_generate(g_out, g_seed, g_dims, g_events, g_normals, g_noise, g_radius,
                                g_duration, g_margin, g_event_peak, g_normal_peak, g_id);
        if (train->parsed()) return cmd_train(t_data, t_config, t_out, t_log);
        if (detect->parsed()) return cmd_detect(d_data, d_ckpt, d_out, d_stage);
        if (eval->parsed()) return cmd_eval(e_dets, e_truth, e_iou, e_link, e_json);
        if (render->parsed()) return cmd_render(r_data, r_dets, r_out, r_t, r_z);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
