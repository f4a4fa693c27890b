#pragma once

// Independent oracles shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "orbitedit/diffcore/denoiser.hpp"
#include "orbitedit/diffcore/schedule.hpp"
#include "orbitedit/propagate.hpp"
#include "orbitedit/sampler.hpp"

namespace orbitedit::testing {

// Index table by search: anchor element j is camera (p + j) mod N, and output
// slot i must hold the element whose camera is i.
inline std::vector<int> brute_shift_table(int n, int p) {
    std::vector<int> table(n, -1);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if ((p + j) % n == i) table[i] = j;
    return table;
}

struct ShiftSuiteResult {
    bool table_ok = true;
    bool inverse_ok = true;
    int cases = 0;
};

inline ShiftSuiteResult run_shift_suite(const std::vector<int>& sizes) {
    ShiftSuiteResult r;
    for (int n : sizes) {
        std::vector<int> seq(n);
        for (int k = 0; k < n; ++k) seq[k] = 100 + k;
        ViewStack stack(n, 2, 1);
        for (int k = 0; k < n; ++k)
            for (auto& v : stack.view(k)) v = static_cast<float>(k);
        for (int p = 0; p < n; ++p) {
            ++r.cases;
            const auto table = brute_shift_table(n, p);
            const auto out = propagate::circular_shift<int>(seq, p);
            for (int i = 0; i < n; ++i) r.table_ok = r.table_ok && out[i] == seq[table[i]];
            const auto shifted = propagate::circular_shift(stack, p);
            for (int i = 0; i < n; ++i) r.table_ok = r.table_ok && shifted.view(i)[0] == static_cast<float>(table[i]);
            const auto back = propagate::circular_shift<int>(out, (n - p) % n);
            r.inverse_ok = r.inverse_ok && back == seq;
            r.inverse_ok = r.inverse_ok && propagate::circular_shift(shifted, (n - p) % n) == stack;
        }
    }
    return r;
}

inline diffcore::ModelConfig micro_model(std::uint64_t init_seed = 0) {
    diffcore::ModelConfig m;
    m.resolution = 8;
    m.channels = 3;
    m.patch = 4;
    m.width = 16;
    m.blocks = 2;
    m.azimuth_harmonics = 2;
    m.time_embed_dim = 8;
    m.init_seed = init_seed;
    return m;
}

inline ViewStack gaussian_stack(int n, int r, int c, std::uint64_t seed, float scale = 1.0f) {
    ViewStack s(n, r, c);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> d(0.0f, scale);
    for (auto& v : s.values()) v = d(rng);
    return s;
}

inline Frame uniform_frame(int r, int c, std::uint64_t seed) {
    Frame f(r, c);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    for (auto& v : f.values()) v = d(rng);
    return f;
}

inline double max_abs_diff(const ViewStack& a, const ViewStack& b) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(static_cast<double>(a[k]) - b[k]));
    return m;
}

// Own keys and values of every attention layer, re-packed as an injection tap.
inline diffcore::AttentionTap self_tap(const diffcore::Denoiser<float>& model, const ViewStack& x, int t, int T,
                                       const diffcore::Conditioning& cond) {
    diffcore::AttentionTap tap;
    model.predict_eps(x, t, T, cond, nullptr, &tap);
    return tap;
}

struct DuplicationResult {
    double max_change = 0.0;     // max |eps(with own tap) - eps|
    double max_row_error = 0.0;  // max |sum(row) - 1|
    double min_weight = 1.0;
};

// Injects each model's own keys and values into itself.
inline DuplicationResult run_duplication_suite(int models) {
    DuplicationResult r;
    const diffcore::DiffusionConfig dc;
    for (int m = 0; m < models; ++m) {
        const auto cfg = micro_model(1000 + m);
        const diffcore::Denoiser<float> model(cfg, dc);
        const int n = 4 + (m % 3) * 2;
        const ViewStack x = gaussian_stack(n, cfg.resolution, cfg.channels, 77 + m);
        const auto cond = diffcore::Conditioning::trajectory(uniform_frame(cfg.resolution, cfg.channels, m), n);
        const int t = 1 + (m * 7) % dc.T;
        const ViewStack plain = model.predict_eps(x, t, dc.T, cond);
        const auto tap = self_tap(model, x, t, dc.T, cond);
        std::vector<diffcore::Mat<float>> weights;
        const ViewStack injected = model.predict_eps_with_weights(x, t, dc.T, cond, &tap, weights);
        r.max_change = std::max(r.max_change, max_abs_diff(plain, injected));
        for (const auto& w : weights) {
            for (Eigen::Index i = 0; i < w.rows(); ++i)
                r.max_row_error = std::max(r.max_row_error, std::abs(static_cast<double>(w.row(i).sum()) - 1.0));
            r.min_weight = std::min(r.min_weight, static_cast<double>(w.minCoeff()));
        }
    }
    return r;
}

struct EndpointResult {
    bool index_p_exact = true;
    bool index_0_exact = true;
    int states = 0;
};

// Random state pairs, random N and p, refinement off, both falloffs.
inline EndpointResult run_endpoint_suite(int states) {
    EndpointResult r;
    std::mt19937_64 rng(2024);
    for (int s = 0; s < states; ++s) {
        const int n = std::uniform_int_distribution<int>(4, 21)(rng);
        const int p = std::uniform_int_distribution<int>(1, n - 1)(rng);
        const auto falloff = s % 2 ? propagate::Falloff::cosine : propagate::Falloff::linear;
        const ViewStack front = gaussian_stack(n, 6, 3, rng());
        const ViewStack anchor = gaussian_stack(n, 6, 3, rng());
        const auto sched = propagate::make_fusion_schedule(n, p, falloff, 0.0, 0.5);
        const int T = 50, t = std::uniform_int_distribution<int>(1, T)(rng);
        const ViewStack fused = propagate::spf_fuse(front, anchor, sched, t, T);
        const ViewStack shifted = propagate::circular_shift(anchor, p);
        r.index_p_exact = r.index_p_exact && std::ranges::equal(fused.view(p), shifted.view(p)) &&
                          std::ranges::equal(fused.view(p), anchor.view(0));
        r.index_0_exact = r.index_0_exact && std::ranges::equal(fused.view(0), front.view(0));
        ++r.states;
    }
    return r;
}

struct GaussianOracleResult {
    double mean = 0.0, var = 0.0;
    double target_mean = 0.0, target_var = 0.0;
    double mean_z = 0.0, var_z = 0.0;  // deviations in Monte-Carlo standard errors
    int trajectories = 0;
};

// Data x0 ~ N(m, s^2); the optimal noise predictor is
// E[eps | x_t] = sqrt(1 - abar) (x_t - sqrt(abar) m) / (abar s^2 + 1 - abar).
// Every element of the state is an independent 1-D trajectory.
inline GaussianOracleResult run_gaussian_oracle(int trajectories, double m, double s, std::uint64_t seed,
                                                const diffcore::DiffusionConfig& dc) {
    const auto sch = diffcore::make_schedule(dc);
    const sampler::EpsFn eps = [&](const ViewStack& x, int t, const diffcore::Conditioning&,
                                   const diffcore::AttentionTap*, diffcore::AttentionTap*) {
        const double ab = sch.alpha_bar[t];
        ViewStack e(x.views(), x.resolution(), x.channels());
        for (std::size_t k = 0; k < x.size(); ++k)
            e[k] = static_cast<float>(std::sqrt(1.0 - ab) * (x[k] - std::sqrt(ab) * m) / (ab * s * s + 1.0 - ab));
        return e;
    };
    const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(trajectories))));
    diffcore::Conditioning cond;
    cond.frame = Frame(side, 1);
    cond.view_offsets = {0};
    auto state = sampler::init_state(seed, 1, side, 1, cond, sch.T);
    while (state.t > 0) state = sampler::step(state, eps, sch);

    GaussianOracleResult r;
    const int n = side * side;
    double sum = 0.0, sq = 0.0;
    for (std::size_t k = 0; k < state.x.size(); ++k) sum += state.x[k];
    r.mean = sum / n;
    for (std::size_t k = 0; k < state.x.size(); ++k) sq += (state.x[k] - r.mean) * (state.x[k] - r.mean);
    r.var = sq / (n - 1);
    r.target_mean = m;
    r.target_var = s * s;
    r.mean_z = std::abs(r.mean - m) / (s / std::sqrt(static_cast<double>(n)));
    r.var_z = std::abs(r.var - s * s) / (s * s * std::sqrt(2.0 / (n - 1)));
    r.trajectories = n;
    return r;
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    int checked = 0;
};

// Central differences of the double-precision training loss on a micro model
// (N = 4, R = 8) against the analytic gradient.
inline GradCheckResult run_grad_check(int params, std::uint64_t seed) {
    const auto cfg = micro_model(seed);
    const diffcore::DiffusionConfig dc;
    diffcore::Denoiser<double> model(cfg, dc);
    const int n = 4;
    const ViewStack x = gaussian_stack(n, cfg.resolution, cfg.channels, seed + 1);
    const ViewStack noise = gaussian_stack(n, cfg.resolution, cfg.channels, seed + 2);
    const auto cond = diffcore::Conditioning::trajectory(uniform_frame(cfg.resolution, cfg.channels, seed + 3), n);
    const int t = 17;
    std::vector<double> grad(model.params().count(), 0.0);
    model.loss(x, noise, t, dc.T, cond, &grad);

    std::mt19937_64 rng(seed + 4);
    std::uniform_int_distribution<std::size_t> pick(0, model.params().count() - 1);
    GradCheckResult r;
    const double h = 1e-5;
    // The copy gate has few parameters; always include them.
    std::vector<std::size_t> picks;
    for (const char* name : {"copy.w", "copy.b"}) {
        const auto& info = model.params().get(name);
        for (std::size_t j = 0; j < info.size; ++j) picks.push_back(info.offset + j);
    }
    while (static_cast<int>(picks.size()) < params) picks.push_back(pick(rng));
    picks.resize(params);
    for (const std::size_t i : picks) {
        double& w = model.params().values[i];
        const double orig = w;
        w = orig + h;
        const double up = model.loss(x, noise, t, dc.T, cond, nullptr);
        w = orig - h;
        const double down = model.loss(x, noise, t, dc.T, cond, nullptr);
        w = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(numeric), std::abs(grad[i]), 1e-6});
        r.max_rel_error = std::max(r.max_rel_error, std::abs(numeric - grad[i]) / denom);
        ++r.checked;
    }
    return r;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("orbitedit_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace orbitedit::testing
