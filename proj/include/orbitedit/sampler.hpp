#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "orbitedit/diffcore/denoiser.hpp"
#include "orbitedit/diffcore/schedule.hpp"
#include "orbitedit/view_stack.hpp"

namespace orbitedit::sampler {

using diffcore::AttentionTap;
using diffcore::Conditioning;
using diffcore::Schedule;

// Gaussian draws are keyed by (seed, stage, view key): element j of a state draws
// from the stream of camera view_keys[j]. Two trajectories over the same cameras
// in different orders therefore see the same noise per camera when they share a
// seed.
struct SamplerState {
    ViewStack x;
    int t = 0;
    std::uint64_t seed = 0;
    std::vector<int> view_keys;
    Conditioning cond;
};

enum class SamplerKind { ancestral, deterministic };

// Noise predictor: (x_t, t, cond, inject, capture) -> eps_hat.
using EpsFn = std::function<ViewStack(const ViewStack&, int, const Conditioning&, const AttentionTap*, AttentionTap*)>;

EpsFn network_eps(const diffcore::Denoiser<float>& model, int T);

// Runs after every step; must keep t and the state shape.
using Hook = std::function<SamplerState(SamplerState, const Schedule&)>;

// x_T ~ N(0, I) with shape (views, resolution, resolution, channels).
SamplerState init_state(std::uint64_t seed, int views, int resolution, int channels, Conditioning cond, int T,
                        std::vector<int> view_keys = {});

// Unit Gaussian frames for the given state keys at one stage.
ViewStack keyed_noise(std::uint64_t seed, std::uint64_t stage, const std::vector<int>& view_keys, int resolution,
                      int channels);

// One reverse step from t to t-1 given the predicted noise.
SamplerState step(const SamplerState& state, const ViewStack& eps_hat, const Schedule& schedule,
                  SamplerKind kind = SamplerKind::ancestral);

SamplerState step(const SamplerState& state, const EpsFn& eps, const Schedule& schedule,
                  const AttentionTap* inject = nullptr, SamplerKind kind = SamplerKind::ancestral);

// Model range [-1, 1] -> image range [0, 1], clamped.
ViewStack to_image_range(const ViewStack& x);
ViewStack to_model_range(const ViewStack& images);
Frame to_model_range(const Frame& image);

ViewStack sample_orbit(const EpsFn& eps, const Conditioning& cond, const Schedule& schedule, std::uint64_t seed,
                       int views, const std::vector<Hook>& hooks = {}, SamplerKind kind = SamplerKind::ancestral);

}  // namespace orbitedit::sampler
