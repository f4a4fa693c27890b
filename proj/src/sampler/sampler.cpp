#include "orbitedit/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace orbitedit::sampler {

namespace {

constexpr std::uint64_t kInitStage = 0xffffffffULL;

}  // namespace

EpsFn network_eps(const diffcore::Denoiser<float>& model, int T) {
    return [&model, T](const ViewStack& x, int t, const Conditioning& cond, const AttentionTap* inject,
                       AttentionTap* capture) { return model.predict_eps(x, t, T, cond, inject, capture); };
}

ViewStack keyed_noise(std::uint64_t seed, std::uint64_t stage, const std::vector<int>& view_keys, int resolution,
                      int channels) {
    ViewStack z(static_cast<int>(view_keys.size()), resolution, channels);
    for (std::size_t j = 0; j < view_keys.size(); ++j) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stage), static_cast<std::uint32_t>(view_keys[j])};
        std::mt19937_64 rng(seq);
        std::normal_distribution<float> dist(0.0f, 1.0f);
        for (auto& v : z.view(static_cast<int>(j))) v = dist(rng);
    }
    return z;
}

SamplerState init_state(std::uint64_t seed, int views, int resolution, int channels, Conditioning cond, int T,
                        std::vector<int> view_keys) {
    if (view_keys.empty()) {
        view_keys.resize(views);
        for (int i = 0; i < views; ++i) view_keys[i] = i;
    }
    if (static_cast<int>(view_keys.size()) != views) throw ShapeError("one noise key per view is required");
    SamplerState s;
    s.x = keyed_noise(seed, kInitStage, view_keys, resolution, channels);
    s.t = T;
    s.seed = seed;
    s.view_keys = std::move(view_keys);
    s.cond = std::move(cond);
    return s;
}

SamplerState step(const SamplerState& state, const ViewStack& eps_hat, const Schedule& sch, SamplerKind kind) {
    const int t = state.t;
    if (t < 1) throw StepError("cannot step a state that is already at t = 0");
    if (t > sch.T) throw StepError("state timestep exceeds the schedule length");
    require_same_shape(state.x, eps_hat, "sampler step");

    SamplerState next;
    next.t = t - 1;
    next.seed = state.seed;
    next.view_keys = state.view_keys;
    next.cond = state.cond;
    next.x = ViewStack(state.x.views(), state.x.resolution(), state.x.channels());

    const double beta = sch.beta[t], alpha = sch.alpha[t];
    const double ab = sch.alpha_bar[t], ab_prev = sch.alpha_bar[t - 1];
    auto x = state.x.values();
    auto e = eps_hat.values();
    auto out = next.x.values();

    if (kind == SamplerKind::deterministic) {
        const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
        const double sa_prev = std::sqrt(ab_prev), sb_prev = std::sqrt(1.0 - ab_prev);
        for (std::size_t k = 0; k < out.size(); ++k) {
            const double x0 = (x[k] - sb * e[k]) / sa;
            out[k] = static_cast<float>(sa_prev * x0 + sb_prev * e[k]);
        }
        return next;
    }

    const double coef = beta / std::sqrt(1.0 - ab);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = static_cast<float>((x[k] - coef * e[k]) * inv_sqrt_alpha);
    if (t > 1) {
        const double sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
        const ViewStack z = keyed_noise(state.seed, static_cast<std::uint64_t>(t), state.view_keys,
                                        state.x.resolution(), state.x.channels());
        auto zv = z.values();
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = static_cast<float>(out[k] + sigma * zv[k]);
    }
    return next;
}

SamplerState step(const SamplerState& state, const EpsFn& eps, const Schedule& sch, const AttentionTap* inject,
                  SamplerKind kind) {
    if (state.t < 1) throw StepError("cannot step a state that is already at t = 0");
    return step(state, eps(state.x, state.t, state.cond, inject, nullptr), sch, kind);
}

ViewStack to_image_range(const ViewStack& x) {
    ViewStack out(x.views(), x.resolution(), x.channels());
    auto src = x.values();
    auto dst = out.values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = std::clamp((src[k] + 1.0f) * 0.5f, 0.0f, 1.0f);
    return out;
}

ViewStack to_model_range(const ViewStack& images) {
    ViewStack out(images.views(), images.resolution(), images.channels());
    auto src = images.values();
    auto dst = out.values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = 2.0f * src[k] - 1.0f;
    return out;
}

Frame to_model_range(const Frame& image) {
    Frame out(image.resolution(), image.channels());
    auto src = image.values();
    auto dst = out.values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = 2.0f * src[k] - 1.0f;
    return out;
}

ViewStack sample_orbit(const EpsFn& eps, const Conditioning& cond, const Schedule& sch, std::uint64_t seed, int views,
                       const std::vector<Hook>& hooks, SamplerKind kind) {
    SamplerState state =
        init_state(seed, views, cond.frame.resolution(), cond.frame.channels(), cond, sch.T);
    while (state.t > 0) {
        state = step(state, eps, sch, nullptr, kind);
        for (std::size_t h = 0; h < hooks.size(); ++h) {
            const int t = state.t;
            try {
                SamplerState next = hooks[h](std::move(state), sch);
                if (next.t != t) throw StepError("hook changed the state timestep");
                state = std::move(next);
            } catch (const std::exception& e) {
                throw StepError("hook " + std::to_string(h) + " failed at t = " + std::to_string(t) + ": " + e.what());
            }
            if (state.x.views() != views) throw StepError("hook changed the state shape at t = " + std::to_string(t));
        }
    }
    return to_image_range(state.x);
}

}  // namespace orbitedit::sampler
