#include "orbitedit/propagate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace orbitedit::propagate {

int cyclic_distance(int i, int p, int n) {
    const int a = wrap_index(static_cast<long>(i) - p, n);
    const int b = wrap_index(static_cast<long>(p) - i, n);
    return std::min(a, b);
}

ViewStack circular_shift(const ViewStack& seq, int p) {
    const int n = seq.views();
    if (p < 0 || p >= n) throw IndexError("shift " + std::to_string(p) + " outside [0, " + std::to_string(n) + ")");
    ViewStack out(n, seq.resolution(), seq.channels());
    for (int i = 0; i < n; ++i) {
        auto src = seq.view(wrap_index(static_cast<long>(i) + n - p, n));
        std::copy(src.begin(), src.end(), out.view(i).begin());
    }
    return out;
}

diffcore::Mat<float> circular_shift_rows(const diffcore::Mat<float>& rows, int views, int p) {
    if (views < 1 || rows.rows() % views != 0) throw ShapeError("row count is not a multiple of the view count");
    if (p < 0 || p >= views)
        throw IndexError("shift " + std::to_string(p) + " outside [0, " + std::to_string(views) + ")");
    const Eigen::Index block = rows.rows() / views;
    diffcore::Mat<float> out(rows.rows(), rows.cols());
    for (int i = 0; i < views; ++i)
        out.middleRows(i * block, block) = rows.middleRows(wrap_index(static_cast<long>(i) + views - p, views) * block, block);
    return out;
}

std::vector<double> make_alpha(int n, int p, Falloff falloff) {
    if (n < 4) throw ConfigError("fusion needs at least 4 views");
    if (p < 0 || p >= n) throw IndexError("anchor index " + std::to_string(p) + " outside [0, " + std::to_string(n) + ")");
    if (p == 0)
        throw DegenerateAnchorError("anchor index 0 coincides with the front view; choose an anchor in [1, " +
                                    std::to_string(n - 1) + "]");
    const double d0 = cyclic_distance(0, p, n);
    std::vector<double> alpha(n);
    for (int i = 0; i < n; ++i) {
        const double r = std::min(1.0, cyclic_distance(i, p, n) / d0);
        alpha[i] = falloff == Falloff::linear ? 1.0 - r : 0.5 * (1.0 + std::cos(std::numbers::pi * r));
    }
    alpha[p] = 1.0;
    alpha[0] = 0.0;
    return alpha;
}

FusionSchedule make_fusion_schedule(int n, int p, Falloff falloff, double detail_threshold, double detail_gain) {
    if (detail_threshold < 0.0 || detail_threshold > 1.0) throw ConfigError("detail threshold must lie in [0, 1]");
    if (detail_gain < 0.0) throw ConfigError("detail gain must be nonnegative");
    FusionSchedule s;
    s.alpha = make_alpha(n, p, falloff);
    s.p = p;
    s.falloff = falloff;
    s.detail_threshold = detail_threshold;
    s.detail_gain = detail_gain;
    return s;
}

FusionSchedule equal_weight_schedule(int n, int p) {
    if (p < 0 || p >= n) throw IndexError("anchor index outside the view ring");
    FusionSchedule s;
    s.alpha.assign(n, 0.5);
    s.p = p;
    s.detail_threshold = 0.0;
    s.detail_gain = 0.0;
    return s;
}

ViewStack blend(const ViewStack& front, const ViewStack& shifted, std::span<const double> alpha) {
    require_same_shape(front, shifted, "fusion");
    if (static_cast<int>(alpha.size()) != front.views()) throw ShapeError("one fusion weight per view is required");
    ViewStack out(front.views(), front.resolution(), front.channels());
    for (int i = 0; i < front.views(); ++i) {
        auto f = front.view(i);
        auto a = shifted.view(i);
        auto o = out.view(i);
        const double w = alpha[i];
        if (w == 0.0) {
            std::copy(f.begin(), f.end(), o.begin());
        } else if (w == 1.0) {
            std::copy(a.begin(), a.end(), o.begin());
        } else {
            for (std::size_t k = 0; k < o.size(); ++k) o[k] = static_cast<float>((1.0 - w) * f[k] + w * a[k]);
        }
    }
    return out;
}

ViewStack gaussian_blur(const ViewStack& seq, double sigma) {
    const int R = seq.resolution(), C = seq.channels();
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0.0;
    for (int k = -radius; k <= radius; ++k) total += kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    for (auto& k : kernel) k /= total;
    auto reflect = [R](int i) {
        while (i < 0 || i >= R) i = i < 0 ? -i - 1 : 2 * R - i - 1;
        return i;
    };
    ViewStack out(seq.views(), R, C);
    std::vector<double> tmp(static_cast<std::size_t>(R) * R * C);
    for (int n = 0; n < seq.views(); ++n) {
        auto src = seq.view(n);
        auto dst = out.view(n);
        for (int y = 0; y < R; ++y)
            for (int x = 0; x < R; ++x)
                for (int c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (int k = -radius; k <= radius; ++k)
                        acc += kernel[k + radius] * src[(static_cast<std::size_t>(y) * R + reflect(x + k)) * C + c];
                    tmp[(static_cast<std::size_t>(y) * R + x) * C + c] = acc;
                }
        for (int y = 0; y < R; ++y)
            for (int x = 0; x < R; ++x)
                for (int c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (int k = -radius; k <= radius; ++k)
                        acc += kernel[k + radius] * tmp[(static_cast<std::size_t>(reflect(y + k)) * R + x) * C + c];
                    dst[(static_cast<std::size_t>(y) * R + x) * C + c] = static_cast<float>(acc);
                }
    }
    return out;
}

ViewStack refine_detail(const ViewStack& fused, const ViewStack& front, const ViewStack& shifted,
                        const FusionSchedule& sched, int t, int T) {
    require_same_shape(fused, front, "refine_detail");
    require_same_shape(fused, shifted, "refine_detail");
    if (!(static_cast<double>(t) / T < sched.detail_threshold)) return fused;
    const ViewStack low_fused = gaussian_blur(fused, sched.blur_sigma);
    const ViewStack low_front = gaussian_blur(front, sched.blur_sigma);
    const ViewStack low_anchor = gaussian_blur(shifted, sched.blur_sigma);
    const double gain = 1.0 + sched.detail_gain;
    ViewStack out = fused;
    for (int i = 0; i < fused.views(); ++i) {
        const bool anchor_dominant = sched.alpha[i] > 0.5;
        auto dom = anchor_dominant ? shifted.view(i) : front.view(i);
        auto dom_low = anchor_dominant ? low_anchor.view(i) : low_front.view(i);
        auto fv = fused.view(i);
        auto fl = low_fused.view(i);
        auto o = out.view(i);
        // fused + (gain * high(dom) - high(fused)) == low(fused) + gain * high(dom)
        for (std::size_t k = 0; k < o.size(); ++k) {
            const double high_dom = static_cast<double>(dom[k]) - dom_low[k];
            const double high_fused = static_cast<double>(fv[k]) - fl[k];
            o[k] = static_cast<float>(fv[k] + (gain * high_dom - high_fused));
        }
    }
    return out;
}

ViewStack spf_fuse(const ViewStack& front, const ViewStack& anchor, const FusionSchedule& sched, int t, int T) {
    require_same_shape(front, anchor, "spf_fuse");
    const ViewStack shifted = circular_shift(anchor, sched.p);
    const ViewStack fused = blend(front, shifted, sched.alpha);
    return refine_detail(fused, front, shifted, sched, t, T);
}

CvaCapture cva_inject(const TrajectoryPair& pair, const EpsFn& eps, const std::vector<bool>& layer_mask,
                      const std::vector<std::string>& layer_names) {
    if (pair.front.t != pair.anchor.t) throw StepError("trajectory pair is out of sync");
    CvaCapture out;
    AttentionTap front_tap;
    out.front_eps = eps(pair.front.x, pair.front.t, pair.front.cond, nullptr, &front_tap);
    if (!layer_names.empty()) {
        for (const auto& name : layer_names)
            if (!front_tap.find(name)) throw InjectionError("unknown attention layer '" + name + "'");
    }
    if (!layer_mask.empty() && layer_mask.size() != front_tap.layers.size())
        throw InjectionError("CVA layer mask has " + std::to_string(layer_mask.size()) + " entries for " +
                             std::to_string(front_tap.layers.size()) + " attention layers");
    const int n = pair.n_views;
    const int back = wrap_index(-static_cast<long>(pair.p), n);
    out.tap.d_k = front_tap.d_k;
    out.tap.tokens_per_view = front_tap.tokens_per_view;
    for (std::size_t l = 0; l < front_tap.layers.size(); ++l) {
        if (!layer_mask.empty() && !layer_mask[l]) continue;
        const auto& kv = front_tap.layers[l];
        out.tap.layers.push_back(
            {kv.layer, circular_shift_rows(kv.keys, n, back), circular_shift_rows(kv.values, n, back)});
    }
    return out;
}

std::string to_string(Falloff f) { return f == Falloff::linear ? "linear" : "cosine"; }

Falloff falloff_from_string(const std::string& s) {
    if (s == "linear") return Falloff::linear;
    if (s == "cosine") return Falloff::cosine;
    throw ConfigError("unknown falloff '" + s + "'");
}

std::string to_string(Resync r) { return r == Resync::always ? "always" : "never"; }

Resync resync_from_string(const std::string& s) {
    if (s == "always") return Resync::always;
    if (s == "never") return Resync::never;
    throw ConfigError("unknown resync mode '" + s + "'");
}

nlohmann::json to_json(const DualStreamSettings& s) {
    return {{"spf", s.spf},
            {"cva", s.cva},
            {"falloff", to_string(s.falloff)},
            {"detail_threshold", s.detail_threshold},
            {"detail_gain", s.detail_gain},
            {"resync", to_string(s.resync)},
            {"shared_noise", s.shared_noise},
            {"cva_layer_mask", s.cva_layer_mask},
            {"cva_timestep_mask", s.cva_timestep_mask},
            {"sampler", s.kind == SamplerKind::ancestral ? "ancestral" : "deterministic"}};
}

ViewStack run_dual_stream(const EpsFn& eps, const Conditioning& front_cond, const Conditioning& anchor_cond, int p,
                          const Schedule& sch, const DualStreamSettings& st, std::uint64_t seed,
                          const std::vector<std::string>& layer_names, const StepObserver& observer) {
    const int n = static_cast<int>(front_cond.view_offsets.size());
    if (static_cast<int>(anchor_cond.view_offsets.size()) != n)
        throw ShapeError("front and anchor conditionings disagree on the view count");
    if (!front_cond.frame.same_shape(anchor_cond.frame)) throw ShapeError("conditioning frames differ in shape");
    if (!st.cva_timestep_mask.empty() && static_cast<int>(st.cva_timestep_mask.size()) != sch.T + 1)
        throw ConfigError("CVA timestep mask needs T + 1 entries");
    // make_alpha also rejects degenerate anchors for the baseline.
    FusionSchedule fusion = make_fusion_schedule(n, p, st.falloff, st.detail_threshold, st.detail_gain);
    if (!st.spf) fusion = equal_weight_schedule(n, p);

    const int R = front_cond.frame.resolution(), C = front_cond.frame.channels();
    std::vector<int> anchor_keys(n);
    for (int j = 0; j < n; ++j) anchor_keys[j] = wrap_index(static_cast<long>(p) + j, n);
    // Distinct noise streams when not shared: offset the anchor's seed.
    const std::uint64_t anchor_seed = st.shared_noise ? seed : seed ^ 0xa5a5a5a55a5a5a5aULL;

    TrajectoryPair pair;
    pair.p = p;
    pair.n_views = n;
    pair.front = sampler::init_state(seed, n, R, C, front_cond, sch.T);
    pair.anchor = sampler::init_state(anchor_seed, n, R, C, anchor_cond, sch.T, anchor_keys);
    if (st.resync == Resync::always) pair.anchor.x = circular_shift(pair.front.x, wrap_index(-static_cast<long>(p), n));

    const int back = wrap_index(-static_cast<long>(p), n);
    ViewStack fused;
    while (pair.front.t > 0) {
        const int t = pair.front.t;
        const bool inject = st.cva && (st.cva_timestep_mask.empty() || st.cva_timestep_mask[t]);
        SamplerState front_next, anchor_next;
        if (inject) {
            CvaCapture cap = cva_inject(pair, eps, st.cva_layer_mask, layer_names);
            front_next = sampler::step(pair.front, cap.front_eps, sch, st.kind);
            anchor_next = sampler::step(pair.anchor, eps, sch, &cap.tap, st.kind);
        } else {
            front_next = sampler::step(pair.front, eps, sch, nullptr, st.kind);
            anchor_next = sampler::step(pair.anchor, eps, sch, nullptr, st.kind);
        }
        fused = spf_fuse(front_next.x, anchor_next.x, fusion, front_next.t, sch.T);
        if (st.resync == Resync::always) {
            anchor_next.x = circular_shift(fused, back);
            front_next.x = std::move(fused);
            fused = front_next.x;
        }
        pair.front = std::move(front_next);
        pair.anchor = std::move(anchor_next);
        if (observer) observer(pair.front.t, fused);
    }
    return sampler::to_image_range(fused);
}

ViewStack run_dual_stream(const EpsFn& eps, const Frame& front_view, const Frame& anchor_view, int n_views, int p,
                          const Schedule& sch, const DualStreamSettings& st, std::uint64_t seed,
                          const std::vector<std::string>& layer_names, const StepObserver& observer) {
    if (!front_view.same_shape(anchor_view)) throw ShapeError("front and anchor frames differ in shape");
    return run_dual_stream(eps, Conditioning::trajectory(front_view, n_views),
                           Conditioning::trajectory(anchor_view, n_views), p,
                           sch, st, seed, layer_names, observer);
}

AnchorSelection select_anchor(const scenegen::SceneSpec& scene, const scenegen::EditSpec& edit,
                              const scenegen::OrbitParams& orbit) {
    const auto edited = scenegen::apply_edit(scene, edit);
    AnchorSelection sel;
    sel.changed_pixels.assign(orbit.n_views, 0);
    constexpr float kVisible = 1.0f / 255.0f;
    for (int i = 0; i < orbit.n_views; ++i) {
        const Frame a = scenegen::render_view(scene, orbit, i);
        const Frame b = scenegen::render_view(edited, orbit, i);
        const int C = orbit.channels;
        auto av = a.values();
        auto bv = b.values();
        for (std::size_t px = 0; px < av.size() / C; ++px) {
            bool changed = false;
            for (int c = 0; c < C; ++c) changed |= std::abs(av[px * C + c] - bv[px * C + c]) > kVisible;
            sel.changed_pixels[i] += changed;
        }
    }
    const auto best = std::max_element(sel.changed_pixels.begin(), sel.changed_pixels.end());
    if (*best == 0) {
        std::ostringstream msg;
        msg << "edit has no visible effect at any view; changed pixels per view:";
        for (int i = 0; i < orbit.n_views; ++i) msg << " [" << i << "]=" << sel.changed_pixels[i];
        throw SelectionError(msg.str());
    }
    // max_element returns the first maximum, i.e. the smallest index on ties.
    sel.p = static_cast<int>(best - sel.changed_pixels.begin());
    return sel;
}

AnchorSelection resolve_anchor(std::optional<int> manual, const scenegen::SceneSpec& scene,
                               const scenegen::EditSpec& edit, const scenegen::OrbitParams& orbit) {
    if (manual) {
        if (*manual < 0 || *manual >= orbit.n_views)
            throw IndexError("anchor " + std::to_string(*manual) + " outside [0, " + std::to_string(orbit.n_views) + ")");
        AnchorSelection sel;
        sel.p = *manual;
        return sel;
    }
    return select_anchor(scene, edit, orbit);
}

}  // namespace orbitedit::propagate
