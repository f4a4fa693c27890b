#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "orbitedit/diffcore/schedule.hpp"
#include "orbitedit/view_stack.hpp"

namespace orbitedit::diffcore {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

struct ModelConfig {
    int resolution = 32;
    int channels = 3;
    int patch = 4;
    int width = 64;             // token width, also d_k of every attention layer
    int blocks = 2;
    int azimuth_harmonics = 4;  // azimuth embedding has 2 * harmonics features
    int time_embed_dim = 32;
    std::uint64_t init_seed = 0;

    int grid() const { return resolution / patch; }
    int tokens_per_view() const { return grid() * grid(); }
    int patch_values() const { return patch * patch * channels; }
    int azimuth_embed_dim() const { return 2 * azimuth_harmonics; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void validate(const ModelConfig& c);
nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Conditioning of one trajectory: the starting frame (values in [0,1]) and, for
// every element of the noisy sequence, its azimuth offset in views relative to
// that frame. A standard trajectory has offsets 0, 1, ..., N-1.
struct Conditioning {
    Frame frame;
    std::vector<int> view_offsets;

    static Conditioning trajectory(Frame frame, int n_views);
};

// Keys and values of one attention layer, rows = views * tokens, cols = d_k.
struct LayerKV {
    std::string layer;
    Mat<float> keys;
    Mat<float> values;
};

struct AttentionTap {
    int d_k = 0;
    int tokens_per_view = 0;
    std::vector<LayerKV> layers;

    const LayerKV* find(const std::string& layer) const;
};

// softmax(q keys^T / sqrt(d_k)) values; `weights` receives the softmax rows.
// Injection passes keys and values with the injected rows stacked first.
template <class S>
Mat<S> attend(const Mat<S>& q, const Mat<S>& keys, const Mat<S>& values, Mat<S>& weights);

struct ParamInfo {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
};

// Flat parameter buffer with named views into it.
template <class S>
struct ParamSet {
    std::vector<ParamInfo> info;
    std::vector<S> values;

    std::size_t count() const { return values.size(); }
    const ParamInfo& get(const std::string& name) const;
    Eigen::Map<Mat<S>> mat(const ParamInfo& p);
    Eigen::Map<const Mat<S>> mat(const ParamInfo& p) const;
};

// Per-call activations kept for the backward pass.
template <class S>
struct ForwardCache;

// Per-view patch encoder, `blocks` x {cross-view token self-attention over all
// views' tokens, per-view 3x3 token convolution}, linear patch decoder.
// Conditioning enters by channel-concatenating the conditioning frame to every
// noisy frame and by sinusoidal azimuth and timestep embeddings. The network
// output F is read as a velocity: eps = sqrt(1 - abar_t) x_t + sqrt(abar_t) F,
// which keeps the x0 estimate bounded at high noise levels. A per-view gate on
// the azimuth features blends this with the noise implied by x0 = conditioning
// frame, so the view at the conditioning azimuth can reproduce it exactly.
template <class S>
class Denoiser {
public:
    Denoiser() = default;
    explicit Denoiser(const ModelConfig& config, const DiffusionConfig& diffusion = {});

    const ModelConfig& config() const { return config_; }
    const DiffusionConfig& diffusion() const { return diffusion_; }
    ParamSet<S>& params() { return params_; }
    const ParamSet<S>& params() const { return params_; }
    std::vector<std::string> attention_layers() const;

    // Predicted noise for x_t (model data range). `inject` concatenates its keys
    // and values in front of each listed layer's own; `capture` receives every
    // layer's own keys and values.
    ViewStack predict_eps(const ViewStack& x_t, int t, int T, const Conditioning& cond,
                          const AttentionTap* inject = nullptr, AttentionTap* capture = nullptr) const;

    // Mean squared error between `noise` and the prediction at x_t.
    // Accumulates d loss / d params into `grad` when it is non-null.
    S loss(const ViewStack& x_t, const ViewStack& noise, int t, int T, const Conditioning& cond,
           std::vector<S>* grad) const;

    // Same as predict_eps, additionally returning each layer's softmax weights
    // (rows = queries, cols = injected keys followed by own keys).
    ViewStack predict_eps_with_weights(const ViewStack& x_t, int t, int T, const Conditioning& cond,
                                       const AttentionTap* inject, std::vector<Mat<S>>& weights) const;

private:
    void forward(const ViewStack& x_t, int t, int T, const Conditioning& cond, const AttentionTap* inject,
                 AttentionTap* capture, ForwardCache<S>& cache) const;
    ViewStack decode(const ForwardCache<S>& cache) const;
    void backward(const ForwardCache<S>& cache, const Mat<S>& d_out, S* grad) const;

    ModelConfig config_;
    DiffusionConfig diffusion_;
    Schedule schedule_;
    ParamSet<S> params_;
};

extern template class Denoiser<float>;
extern template class Denoiser<double>;

}  // namespace orbitedit::diffcore
