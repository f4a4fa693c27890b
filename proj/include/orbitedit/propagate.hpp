#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "orbitedit/sampler.hpp"
#include "orbitedit/scenegen.hpp"

namespace orbitedit::propagate {

using diffcore::AttentionTap;
using diffcore::Conditioning;
using diffcore::Schedule;
using sampler::EpsFn;
using sampler::SamplerKind;
using sampler::SamplerState;

// Ring distance between view indices.
int cyclic_distance(int i, int p, int n_views);

inline int wrap_index(long i, int n) { return static_cast<int>(((i % n) + n) % n); }

// out[i] = in[(i + N - p) mod N]: element 0 of a trajectory that starts at view p
// lands at index p. The inverse shift is N - p.
template <class T>
std::vector<T> circular_shift(std::span<const T> seq, int p) {
    const int n = static_cast<int>(seq.size());
    if (n == 0) return {};
    if (p < 0 || p >= n)
        throw IndexError("shift " + std::to_string(p) + " outside [0, " + std::to_string(n) + ")");
    std::vector<T> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) out.push_back(seq[wrap_index(static_cast<long>(i) + n - p, n)]);
    return out;
}

ViewStack circular_shift(const ViewStack& seq, int p);

// Block-wise shift of per-view row blocks (views * rows_per_view rows).
diffcore::Mat<float> circular_shift_rows(const diffcore::Mat<float>& rows, int views, int p);

enum class Falloff { linear, cosine };

struct FusionSchedule {
    std::vector<double> alpha;
    int p = 0;
    Falloff falloff = Falloff::linear;
    double detail_threshold = 0.2;  // refinement runs while t / T < threshold
    double detail_gain = 0.0;       // positive gains compound under resync "always"
    double blur_sigma = 1.0;        // pixels, splits low and high bands
};

// alpha_p = 1, alpha_0 = 0, non-increasing in cyclic distance from p.
std::vector<double> make_alpha(int n_views, int p, Falloff falloff);
FusionSchedule make_fusion_schedule(int n_views, int p, Falloff falloff, double detail_threshold = 0.2,
                                    double detail_gain = 0.0);
// Equal-weight fusion after shift alignment, refinement off.
FusionSchedule equal_weight_schedule(int n_views, int p);

// (1 - alpha_i) * front_i + alpha_i * shifted_anchor_i; exact copies at alpha 0 and 1.
ViewStack blend(const ViewStack& front, const ViewStack& shifted_anchor, std::span<const double> alpha);

// Separable Gaussian blur of every view and channel (reflected borders).
ViewStack gaussian_blur(const ViewStack& seq, double sigma);

// When t / T < detail_threshold: per view, low(fused) + (1 + gain) * high(dominant),
// dominant = shifted anchor if alpha_i > 0.5, else front. Otherwise returns fused.
ViewStack refine_detail(const ViewStack& fused, const ViewStack& front, const ViewStack& shifted_anchor,
                        const FusionSchedule& sched, int t, int T);

// Fuses the front state with the anchor state given in anchor index convention.
ViewStack spf_fuse(const ViewStack& front, const ViewStack& anchor, const FusionSchedule& sched, int t, int T);

struct TrajectoryPair {
    SamplerState front;
    SamplerState anchor;
    int p = 0;
    int n_views = 0;
};

struct CvaCapture {
    AttentionTap tap;      // anchor index convention
    ViewStack front_eps;   // eps_hat of the capture pass, equal to the plain front prediction
};

// Captures the front stream's keys and values and re-indexes them to the anchor
// convention (block shift by -p). Only layers enabled in `layer_mask` (empty = all)
// are kept.
CvaCapture cva_inject(const TrajectoryPair& pair, const EpsFn& eps, const std::vector<bool>& layer_mask = {},
                      const std::vector<std::string>& layer_names = {});

enum class Resync { always, never };

struct DualStreamSettings {
    bool spf = true;               // false: equal-weight baseline, no refinement
    bool cva = true;
    Falloff falloff = Falloff::linear;
    double detail_threshold = 0.2;
    double detail_gain = 0.0;
    Resync resync = Resync::always;
    bool shared_noise = true;      // both streams draw camera-keyed noise from one seed
    std::vector<bool> cva_layer_mask;     // empty = all layers
    std::vector<bool> cva_timestep_mask;  // indexed by t in [0, T]; empty = all
    SamplerKind kind = SamplerKind::ancestral;
};

nlohmann::json to_json(const DualStreamSettings& s);
std::string to_string(Falloff f);
Falloff falloff_from_string(const std::string& s);
std::string to_string(Resync r);
Resync resync_from_string(const std::string& s);

// Called after every fused step with the fused state (front convention).
using StepObserver = std::function<void(int t, const ViewStack& fused)>;

// Dual-stream sampling; returns the fused terminal sequence in [0,1], front index
// convention.
ViewStack run_dual_stream(const EpsFn& eps, const Conditioning& front_cond, const Conditioning& anchor_cond, int p,
                          const Schedule& schedule, const DualStreamSettings& settings, std::uint64_t seed,
                          const std::vector<std::string>& layer_names = {}, const StepObserver& observer = {});

// Convenience overload: standard trajectories conditioned on v^0 and the edited v^p.
ViewStack run_dual_stream(const EpsFn& eps, const Frame& front_view, const Frame& anchor_view, int n_views, int p,
                          const Schedule& schedule, const DualStreamSettings& settings, std::uint64_t seed,
                          const std::vector<std::string>& layer_names = {}, const StepObserver& observer = {});

struct AnchorSelection {
    int p = 0;
    std::vector<long> changed_pixels;  // per view
};

// argmax over views of the number of pixels changed by the edit; ties go to the
// smallest index.
AnchorSelection select_anchor(const scenegen::SceneSpec& scene, const scenegen::EditSpec& edit,
                              const scenegen::OrbitParams& orbit);

// Manual override when given (validated against the orbit), otherwise the heuristic.
AnchorSelection resolve_anchor(std::optional<int> manual, const scenegen::SceneSpec& scene,
                               const scenegen::EditSpec& edit, const scenegen::OrbitParams& orbit);

}  // namespace orbitedit::propagate
