#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "orbitedit/dataset.hpp"
#include "orbitedit/propagate.hpp"

namespace orbitedit::evalkit {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

double mse(std::span<const float> a, std::span<const float> b);

// -10 log10(mse / range^2); +infinity when the inputs are equal.
double psnr(std::span<const float> a, std::span<const float> b, double data_range = 1.0);
double psnr(const Frame& a, const Frame& b, double data_range = 1.0);

// Mean SSIM over every `window` x `window` patch (stride 1, uniform weights,
// population statistics) of the channel-mean grayscale images.
// C1 = (0.01 L)^2, C2 = (0.03 L)^2.
double ssim(const Frame& a, const Frame& b, int window = 7, double data_range = 1.0);

struct ViewMetrics {
    double psnr = 0.0;
    double ssim = 0.0;
    double mse = 0.0;
};

struct MetricReport {
    std::string scene_id;
    std::string edit_kind;
    std::string config_hash;
    std::vector<ViewMetrics> views;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    double mean_mse = 0.0;
    std::optional<double> delta_psnr;  // vs. a baseline run
};

MetricReport orbit_report(const ViewStack& output, const ViewStack& gt);

// Mean PSNR over views i with d(i, p) <= N / 4.
double near_anchor_psnr(const MetricReport& r, int p);

// JSON numbers, with +infinity written as the string "inf".
nlohmann::json metric_value(double v);
nlohmann::json to_json(const MetricReport& r);

struct SceneResult {
    std::string scene_id;
    std::string edit_kind;
    int anchor = 0;
    MetricReport report;
    double near_anchor_psnr = 0.0;
};

struct TableRow {
    std::string name;
    std::vector<SceneResult> scenes;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    double mean_mse = 0.0;
    double mean_near_anchor_psnr = 0.0;
};

struct Table {
    std::string name;
    std::string config_hash;
    std::vector<TableRow> rows;
};

struct HarnessOptions {
    propagate::DualStreamSettings settings;  // full-method settings; rows override spf / cva
    std::uint64_t seed = 0;
    int min_scenes = 20;
    int threads = 0;
    std::string config_hash;
    std::vector<std::string> layer_names;
};

// Per-scene sampling seed shared by every row of a table.
std::uint64_t scene_seed(std::uint64_t seed, int scene_index);

// Rows: baseline (equal weights, no CVA), +SPF, +SPF+CVA on edited test records,
// scored against the edited ground-truth orbits. Throws DataError with fewer than
// min_scenes records.
Table run_ablation(const std::vector<dataset::Record>& records, const sampler::EpsFn& eps,
                   const diffcore::Schedule& schedule, const HarnessOptions& options);

// Rows on unedited orbits: v0 (single stream), v0 & vi (vi from the single-stream
// output, i uniform in [1, N-1]), two ground-truth views v0 and vi.
Table run_view_settings(const std::vector<dataset::Record>& records, const sampler::EpsFn& eps,
                        const diffcore::Schedule& schedule, const HarnessOptions& options);

// Rows on back-insert edits: front-only single stream, dual stream with the edited anchor.
Table run_propagation(const std::vector<dataset::Record>& records, const sampler::EpsFn& eps,
                      const diffcore::Schedule& schedule, const HarnessOptions& options);

// Index of the view i used by the v0 & vi setting for a scene.
int random_anchor_index(std::uint64_t seed, int scene_index, int n_views);

struct TrendCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

TrendCheck check_no_degradation(const Table& view_settings, double tolerance_db = 0.1);
TrendCheck check_two_gt(const Table& view_settings, double margin_db = 0.3);
TrendCheck check_ablation_order(const Table& ablation, double margin_db = 0.3);
TrendCheck check_propagation(const Table& propagation);

// One JSON line per row, then one per (row, scene).
std::string to_jsonl(const Table& t);
std::string to_text(const Table& t);

}  // namespace orbitedit::evalkit
