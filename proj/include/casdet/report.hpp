#pragma once
// Metrics report: per-dataset slice counts, precision/recall with micro and
// macro aggregation, and event-level counts. Emitted as JSON and as aligned
// text tables.

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "casdet/metrics.hpp"

namespace casdet {

struct DatasetReport {
    std::string name;
    Counts slice;   // tp/fp/fn at box level
    Counts events;  // tp/fn/fp at 4D event level
};

struct MetricsReport {
    std::vector<DatasetReport> rows;

    Counts micro() const {
        Counts c;
        for (const auto& r : rows) c += r.slice;
        return c;
    }
    PrecisionRecall micro_pr() const { return precision_recall(micro()); }
    PrecisionRecall macro_pr() const {
        PrecisionRecall agg{0.0, 0.0};
        if (rows.empty()) return {1.0, 1.0};
        for (const auto& r : rows) {
            const PrecisionRecall pr = precision_recall(r.slice);
            agg.precision += pr.precision;
            agg.recall += pr.recall;
        }
        agg.precision /= rows.size();
        agg.recall /= rows.size();
        return agg;
    }
    Counts event_totals() const {
        Counts c;
        for (const auto& r : rows) c += r.events;
        return c;
    }
};

inline nlohmann::json report_to_json(const MetricsReport& rep) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : rep.rows) {
        const PrecisionRecall pr = precision_recall(r.slice);
        rows.push_back({{"dataset", r.name},
                        {"slice", {{"tp", r.slice.tp},
                                   {"fp", r.slice.fp},
                                   {"fn", r.slice.fn},
                                   {"ground_truth", r.slice.tp + r.slice.fn},
                                   {"precision", pr.precision},
                                   {"recall", pr.recall}}},
                        {"events", {{"tp", r.events.tp}, {"fn", r.events.fn}, {"fp", r.events.fp}}}});
    }
    const PrecisionRecall micro = rep.micro_pr();
    const PrecisionRecall macro = rep.macro_pr();
    return {{"datasets", rows},
            {"aggregate",
             {{"micro", {{"precision", micro.precision}, {"recall", micro.recall}}},
              {"macro", {{"precision", macro.precision}, {"recall", macro.recall}}}}}};
}

inline std::string report_to_text(const MetricsReport& rep) {
    std::ostringstream out;
    out << std::fixed;

    out << "Slice-level detections\n";
    out << std::left << std::setw(12) << "Data" << std::right << std::setw(14) << "true positive"
        << std::setw(16) << "false positive" << std::setw(14) << "ground truth" << "\n";
    for (const auto& r : rep.rows)
        out << std::left << std::setw(12) << r.name << std::right << std::setw(14) << r.slice.tp
            << std::setw(16) << r.slice.fp << std::setw(14) << (r.slice.tp + r.slice.fn) << "\n";

    out << "\nPrecision / recall\n";
    out << std::left << std::setw(12) << "Data" << std::right << std::setw(12) << "precision"
        << std::setw(12) << "recall" << "\n";
    out << std::setprecision(4);
    for (const auto& r : rep.rows) {
        const PrecisionRecall pr = precision_recall(r.slice);
        out << std::left << std::setw(12) << r.name << std::right << std::setw(12) << pr.precision
            << std::setw(12) << pr.recall << "\n";
    }
    const PrecisionRecall micro = rep.micro_pr();
    const PrecisionRecall macro = rep.macro_pr();
    out << std::left << std::setw(12) << "micro" << std::right << std::setw(12) << micro.precision
        << std::setw(12) << micro.recall << "\n";
    out << std::left << std::setw(12) << "macro" << std::right << std::setw(12) << macro.precision
        << std::setw(12) << macro.recall << "\n";

    out << "\nEvent-level detections (4D)\n";
    out << std::left << std::setw(12) << "Data" << std::right << std::setw(6) << "TP" << std::setw(6)
        << "FN" << std::setw(6) << "FP" << std::setw(14) << "ground truth" << "\n";
    for (const auto& r : rep.rows)
        out << std::left << std::setw(12) << r.name << std::right << std::setw(6) << r.events.tp
            << std::setw(6) << r.events.fn << std::setw(6) << r.events.fp << std::setw(14)
            << (r.events.tp + r.events.fn) << "\n";
    return out.str();
}

}  // namespace casdet
