#include "orbitedit/evalkit.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "orbitedit/parallel.hpp"

namespace orbitedit::evalkit {

namespace {

using propagate::DualStreamSettings;

std::vector<double> grayscale(const Frame& f) {
    const int R = f.resolution(), C = f.channels();
    std::vector<double> g(static_cast<std::size_t>(R) * R);
    auto v = f.values();
    for (std::size_t px = 0; px < g.size(); ++px) {
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += v[px * C + c];
        g[px] = s / C;
    }
    return g;
}

std::string format_double(double v, int precision) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

void require_scenes(const std::vector<dataset::Record>& records, const HarnessOptions& o, const std::string& what) {
    if (static_cast<int>(records.size()) < o.min_scenes)
        throw DataError(what + " needs at least " + std::to_string(o.min_scenes) + " scenes, got " +
                        std::to_string(records.size()));
}

void finalize(TableRow& row) {
    const double n = static_cast<double>(row.scenes.size());
    for (const auto& s : row.scenes) {
        row.mean_psnr += s.report.mean_psnr / n;
        row.mean_ssim += s.report.mean_ssim / n;
        row.mean_mse += s.report.mean_mse / n;
        row.mean_near_anchor_psnr += s.near_anchor_psnr / n;
    }
}

SceneResult score(const dataset::Record& r, const ViewStack& out, const ViewStack& gt, int p, const std::string& hash) {
    SceneResult s;
    s.scene_id = r.id;
    s.edit_kind = r.edit_kind;
    s.anchor = p;
    s.report = orbit_report(out, gt);
    s.report.scene_id = r.id;
    s.report.edit_kind = r.edit_kind;
    s.report.config_hash = hash;
    s.near_anchor_psnr = near_anchor_psnr(s.report, p);
    return s;
}

// Runs `scene_fn(k, rows)` for every record in parallel, filling one SceneResult
// per row, then aggregates in record order.
Table run_table(const std::string& name, const std::vector<std::string>& row_names, int n_scenes,
                const HarnessOptions& o, const std::function<std::vector<SceneResult>(int)>& scene_fn) {
    std::vector<std::vector<SceneResult>> results(n_scenes);
    parallel_for(n_scenes, o.threads > 0 ? o.threads : default_threads(),
                 [&](int k) { results[k] = scene_fn(k); });
    Table t;
    t.name = name;
    t.config_hash = o.config_hash;
    for (std::size_t r = 0; r < row_names.size(); ++r) {
        TableRow row;
        row.name = row_names[r];
        for (int k = 0; k < n_scenes; ++k) row.scenes.push_back(results[k][r]);
        finalize(row);
        t.rows.push_back(std::move(row));
    }
    for (auto& row : t.rows)
        for (std::size_t k = 0; k < row.scenes.size(); ++k)
            row.scenes[k].report.delta_psnr = row.scenes[k].report.mean_psnr - t.rows[0].scenes[k].report.mean_psnr;
    return t;
}

ViewStack single_stream(const sampler::EpsFn& eps, const Frame& front, int n, const diffcore::Schedule& sch,
                        std::uint64_t seed, sampler::SamplerKind kind) {
    return sampler::sample_orbit(eps, diffcore::Conditioning::trajectory(front, n), sch, seed, n, {}, kind);
}

}  // namespace

double mse(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw ShapeError("mse inputs differ in size");
    if (a.empty()) throw ShapeError("mse of empty inputs");
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = static_cast<double>(a[k]) - b[k];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

double psnr(std::span<const float> a, std::span<const float> b, double data_range) {
    const double m = mse(a, b);
    if (m == 0.0) return kInfinity;
    return -10.0 * std::log10(m / (data_range * data_range));
}

double psnr(const Frame& a, const Frame& b, double data_range) {
    if (!a.same_shape(b)) throw ShapeError("psnr inputs differ in shape");
    return psnr(a.values(), b.values(), data_range);
}

double ssim(const Frame& a, const Frame& b, int window, double data_range) {
    if (!a.same_shape(b)) throw ShapeError("ssim inputs differ in shape");
    const int R = a.resolution();
    if (window < 1 || R < window)
        throw ShapeError("image of size " + std::to_string(R) + " is smaller than the SSIM window " +
                         std::to_string(window));
    const double c1 = (0.01 * data_range) * (0.01 * data_range);
    const double c2 = (0.03 * data_range) * (0.03 * data_range);
    const auto ga = grayscale(a), gb = grayscale(b);
    const double n = static_cast<double>(window) * window;
    double total = 0.0;
    int count = 0;
    for (int y = 0; y + window <= R; ++y)
        for (int x = 0; x + window <= R; ++x) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int dy = 0; dy < window; ++dy)
                for (int dx = 0; dx < window; ++dx) {
                    const double va = ga[(y + dy) * R + x + dx], vb = gb[(y + dy) * R + x + dx];
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            const double ma = sa / n, mb = sb / n;
            const double va = saa / n - ma * ma, vb = sbb / n - mb * mb, cov = sab / n - ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return total / count;
}

MetricReport orbit_report(const ViewStack& output, const ViewStack& gt) {
    if (output.views() != gt.views())
        throw ShapeError("orbit report: output has " + std::to_string(output.views()) + " views, ground truth " +
                         std::to_string(gt.views()));
    require_same_shape(output, gt, "orbit report");
    MetricReport r;
    const int n = gt.views();
    for (int i = 0; i < n; ++i) {
        ViewMetrics m;
        m.mse = mse(output.view(i), gt.view(i));
        m.psnr = psnr(output.view(i), gt.view(i));
        m.ssim = ssim(output.frame(i), gt.frame(i));
        r.mean_psnr += m.psnr / n;
        r.mean_ssim += m.ssim / n;
        r.mean_mse += m.mse / n;
        r.views.push_back(m);
    }
    return r;
}

double near_anchor_psnr(const MetricReport& r, int p) {
    const int n = static_cast<int>(r.views.size());
    double s = 0.0;
    int count = 0;
    for (int i = 0; i < n; ++i)
        if (4 * propagate::cyclic_distance(i, p, n) <= n) {
            s += r.views[i].psnr;
            ++count;
        }
    return s / count;
}

nlohmann::json metric_value(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

nlohmann::json to_json(const MetricReport& r) {
    nlohmann::json views = nlohmann::json::array();
    for (const auto& v : r.views)
        views.push_back({{"psnr", metric_value(v.psnr)}, {"ssim", v.ssim}, {"mse", v.mse}});
    nlohmann::json j = {{"scene_id", r.scene_id},
                        {"edit_kind", r.edit_kind},
                        {"config_hash", r.config_hash},
                        {"mean_psnr", metric_value(r.mean_psnr)},
                        {"mean_ssim", r.mean_ssim},
                        {"mean_mse", r.mean_mse},
                        {"views", views}};
    if (r.delta_psnr) j["delta_psnr"] = metric_value(*r.delta_psnr);
    return j;
}

std::uint64_t scene_seed(std::uint64_t seed, int scene_index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(scene_index), 0x5eedu};
    std::uint32_t w[2];
    seq.generate(w, w + 2);
    return (static_cast<std::uint64_t>(w[1]) << 32) | w[0];
}

int random_anchor_index(std::uint64_t seed, int scene_index, int n_views) {
    std::mt19937_64 rng(scene_seed(seed, scene_index) ^ 0x616e63686f72ULL);
    return std::uniform_int_distribution<int>(1, n_views - 1)(rng);
}

Table run_ablation(const std::vector<dataset::Record>& records, const sampler::EpsFn& eps,
                   const diffcore::Schedule& sch, const HarnessOptions& o) {
    require_scenes(records, o, "ablation");
    for (const auto& r : records)
        if (!r.edit) throw DataError("ablation record " + r.id + " carries no edit");
    DualStreamSettings baseline = o.settings, spf = o.settings, full = o.settings;
    baseline.spf = false;
    baseline.cva = false;
    spf.cva = false;
    full.spf = full.cva = true;
    const std::vector<DualStreamSettings> rows{baseline, spf, full};
    return run_table("ablation", {"baseline", "+SPF", "+SPF+CVA"}, static_cast<int>(records.size()), o, [&](int k) {
        const auto& r = records[k];
        const int n = r.orbit.views();
        const Frame front = r.edited_orbit->frame(0);
        const Frame anchor = r.edited_orbit->frame(r.anchor);
        std::vector<SceneResult> out;
        for (const auto& st : rows) {
            const ViewStack y = propagate::run_dual_stream(eps, front, anchor, n, r.anchor, sch, st,
                                                           scene_seed(o.seed, k), o.layer_names);
            out.push_back(score(r, y, *r.edited_orbit, r.anchor, o.config_hash));
        }
        return out;
    });
}

Table run_view_settings(const std::vector<dataset::Record>& records, const sampler::EpsFn& eps,
                        const diffcore::Schedule& sch, const HarnessOptions& o) {
    require_scenes(records, o, "view-settings evaluation");
    DualStreamSettings full = o.settings;
    full.spf = full.cva = true;
    return run_table("view_settings", {"v0", "v0&vi", "2GT"}, static_cast<int>(records.size()), o, [&](int k) {
        const auto& r = records[k];
        const int n = r.orbit.views();
        const int i = random_anchor_index(o.seed, k, n);
        const std::uint64_t seed = scene_seed(o.seed, k);
        const Frame front = r.orbit.frame(0);
        const ViewStack single = single_stream(eps, front, n, sch, seed, full.kind);
        const ViewStack self =
            propagate::run_dual_stream(eps, front, single.frame(i), n, i, sch, full, seed, o.layer_names);
        const ViewStack two =
            propagate::run_dual_stream(eps, front, r.orbit.frame(i), n, i, sch, full, seed, o.layer_names);
        return std::vector<SceneResult>{score(r, single, r.orbit, i, o.config_hash),
                                        score(r, self, r.orbit, i, o.config_hash),
                                        score(r, two, r.orbit, i, o.config_hash)};
    });
}

Table run_propagation(const std::vector<dataset::Record>& records, const sampler::EpsFn& eps,
                      const diffcore::Schedule& sch, const HarnessOptions& o) {
    std::vector<dataset::Record> inserts;
    for (const auto& r : records)
        if (r.edit && r.edit_kind == "back_insert") inserts.push_back(r);
    require_scenes(inserts, o, "propagation evaluation (back inserts)");
    DualStreamSettings full = o.settings;
    full.spf = full.cva = true;
    return run_table("propagation", {"front_only", "dual_stream"}, static_cast<int>(inserts.size()), o, [&](int k) {
        const auto& r = inserts[k];
        const int n = r.orbit.views();
        const std::uint64_t seed = scene_seed(o.seed, k);
        const Frame front = r.edited_orbit->frame(0);
        const ViewStack single = single_stream(eps, front, n, sch, seed, full.kind);
        const ViewStack dual = propagate::run_dual_stream(eps, front, r.edited_orbit->frame(r.anchor), n, r.anchor,
                                                          sch, full, seed, o.layer_names);
        return std::vector<SceneResult>{score(r, single, *r.edited_orbit, r.anchor, o.config_hash),
                                        score(r, dual, *r.edited_orbit, r.anchor, o.config_hash)};
    });
}

TrendCheck check_no_degradation(const Table& t, double tolerance_db) {
    const double a = t.rows.at(0).mean_psnr, b = t.rows.at(1).mean_psnr;
    return {"v0&vi does not degrade v0", b >= a - tolerance_db,
            "v0 " + format_double(a, 3) + " dB, v0&vi " + format_double(b, 3) + " dB, tolerance " +
                format_double(tolerance_db, 2) + " dB"};
}

TrendCheck check_two_gt(const Table& t, double margin_db) {
    const double a = t.rows.at(0).mean_psnr, c = t.rows.at(2).mean_psnr;
    return {"2GT beats v0", c - a >= margin_db,
            "v0 " + format_double(a, 3) + " dB, 2GT " + format_double(c, 3) + " dB, required margin " +
                format_double(margin_db, 2) + " dB"};
}

TrendCheck check_ablation_order(const Table& t, double margin_db) {
    const double b = t.rows.at(0).mean_psnr, s = t.rows.at(1).mean_psnr, f = t.rows.at(2).mean_psnr;
    return {"baseline <= +SPF <= +SPF+CVA", b <= s && s <= f && f - b >= margin_db,
            "baseline " + format_double(b, 3) + " dB, +SPF " + format_double(s, 3) + " dB, +SPF+CVA " +
                format_double(f, 3) + " dB, required full - baseline " + format_double(margin_db, 2) + " dB"};
}

TrendCheck check_propagation(const Table& t) {
    const double a = t.rows.at(0).mean_near_anchor_psnr, b = t.rows.at(1).mean_near_anchor_psnr;
    return {"dual stream beats front-only near the anchor", b > a,
            "front-only " + format_double(a, 3) + " dB, dual stream " + format_double(b, 3) +
                " dB on views with d(i,p) <= N/4"};
}

std::string to_jsonl(const Table& t) {
    std::ostringstream out;
    const double base = t.rows.empty() ? 0.0 : t.rows[0].mean_psnr;
    for (const auto& row : t.rows) {
        const nlohmann::json j = {{"table", t.name},
                                  {"row", row.name},
                                  {"config_hash", t.config_hash},
                                  {"n_scenes", row.scenes.size()},
                                  {"mean_psnr", metric_value(row.mean_psnr)},
                                  {"mean_ssim", row.mean_ssim},
                                  {"mean_mse", row.mean_mse},
                                  {"mean_near_anchor_psnr", metric_value(row.mean_near_anchor_psnr)},
                                  {"delta_psnr", metric_value(row.mean_psnr - base)}};
        out << j.dump() << "\n";
    }
    for (const auto& row : t.rows)
        for (const auto& s : row.scenes) {
            nlohmann::json j = to_json(s.report);
            j["table"] = t.name;
            j["row"] = row.name;
            j["anchor"] = s.anchor;
            j["near_anchor_psnr"] = metric_value(s.near_anchor_psnr);
            out << j.dump() << "\n";
        }
    return out.str();
}

std::string to_text(const Table& t) {
    std::ostringstream out;
    const std::size_t scenes = t.rows.empty() ? 0 : t.rows[0].scenes.size();
    out << t.name << " (" << scenes << " scenes, config " << t.config_hash.substr(0, 12) << ")\n";
    char line[160];
    std::snprintf(line, sizeof line, "%-12s %9s %8s %10s %12s %9s\n", "row", "PSNR", "SSIM", "MSE", "PSNR@anchor",
                  "dPSNR");
    out << line;
    const double base = t.rows.empty() ? 0.0 : t.rows[0].mean_psnr;
    for (const auto& row : t.rows) {
        std::snprintf(line, sizeof line, "%-12s %9s %8.4f %10.6f %12s %+9.3f\n", row.name.c_str(),
                      format_double(row.mean_psnr, 3).c_str(), row.mean_ssim, row.mean_mse,
                      format_double(row.mean_near_anchor_psnr, 3).c_str(), row.mean_psnr - base);
        out << line;
    }
    return out.str();
}

}  // namespace orbitedit::evalkit
