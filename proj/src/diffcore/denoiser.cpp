#include "orbitedit/diffcore/denoiser.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace orbitedit::diffcore {

void validate(const ModelConfig& c) {
    if (c.channels != 1 && c.channels != 3) throw ConfigError("model channels must be 1 or 3");
    if (c.patch < 1 || c.resolution % c.patch != 0)
        throw ConfigError("model resolution must be a multiple of the patch size");
    if (c.width < 1 || c.blocks < 1) throw ConfigError("model width and block count must be positive");
    if (c.azimuth_harmonics < 1) throw ConfigError("azimuth harmonics must be positive");
    if (c.time_embed_dim < 2 || c.time_embed_dim % 2 != 0)
        throw ConfigError("time embedding dimension must be a positive even number");
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"resolution", c.resolution},
            {"channels", c.channels},
            {"patch", c.patch},
            {"width", c.width},
            {"blocks", c.blocks},
            {"azimuth_harmonics", c.azimuth_harmonics},
            {"azimuth_embed_dim", c.azimuth_embed_dim()},
            {"time_embed_dim", c.time_embed_dim},
            {"init_seed", c.init_seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.resolution = j.at("resolution").get<int>();
    c.channels = j.at("channels").get<int>();
    c.patch = j.at("patch").get<int>();
    c.width = j.at("width").get<int>();
    c.blocks = j.at("blocks").get<int>();
    c.azimuth_harmonics = j.at("azimuth_harmonics").get<int>();
    c.time_embed_dim = j.at("time_embed_dim").get<int>();
    c.init_seed = j.value("init_seed", std::uint64_t{0});
    validate(c);
    return c;
}

Conditioning Conditioning::trajectory(Frame frame, int n_views) {
    Conditioning c;
    c.frame = std::move(frame);
    c.view_offsets.resize(n_views);
    for (int i = 0; i < n_views; ++i) c.view_offsets[i] = i;
    return c;
}

const LayerKV* AttentionTap::find(const std::string& layer) const {
    for (const auto& l : layers)
        if (l.layer == layer) return &l;
    return nullptr;
}

template <class S>
const ParamInfo& ParamSet<S>::get(const std::string& name) const {
    for (const auto& p : info)
        if (p.name == name) return p;
    throw ConfigError("no parameter named '" + name + "'");
}

template <class S>
Eigen::Map<Mat<S>> ParamSet<S>::mat(const ParamInfo& p) {
    const int rows = p.shape.size() == 1 ? 1 : p.shape[0];
    const int cols = static_cast<int>(p.size / rows);
    return {values.data() + p.offset, rows, cols};
}

template <class S>
Eigen::Map<const Mat<S>> ParamSet<S>::mat(const ParamInfo& p) const {
    const int rows = p.shape.size() == 1 ? 1 : p.shape[0];
    const int cols = static_cast<int>(p.size / rows);
    return {values.data() + p.offset, rows, cols};
}

namespace {

constexpr double kLayerNormEps = 1e-5;

template <class S>
S silu(S x) {
    return x / (S(1) + std::exp(-x));
}

template <class S>
S silu_grad(S x) {
    const S sg = S(1) / (S(1) + std::exp(-x));
    return sg * (S(1) + x * (S(1) - sg));
}

template <class S>
struct LayerNormCache {
    Mat<S> xhat;
    Eigen::Matrix<S, Eigen::Dynamic, 1> rstd;
};

template <class S>
Mat<S> layer_norm(const Mat<S>& x, const Eigen::Map<const Mat<S>>& gamma, const Eigen::Map<const Mat<S>>& beta,
                  LayerNormCache<S>& cache) {
    const Eigen::Index rows = x.rows(), cols = x.cols();
    cache.xhat.resize(rows, cols);
    cache.rstd.resize(rows);
    Mat<S> y(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const S mean = x.row(r).mean();
        const S var = (x.row(r).array() - mean).square().mean();
        const S rstd = S(1) / std::sqrt(var + S(kLayerNormEps));
        cache.rstd(r) = rstd;
        cache.xhat.row(r) = (x.row(r).array() - mean) * rstd;
        y.row(r) = cache.xhat.row(r).cwiseProduct(gamma.row(0)) + beta.row(0);
    }
    return y;
}

template <class S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const LayerNormCache<S>& cache, const Eigen::Map<const Mat<S>>& gamma,
                           S* dgamma, S* dbeta) {
    const Eigen::Index rows = dy.rows(), cols = dy.cols();
    Eigen::Map<RowVec<S>> dg(dgamma, cols), db(dbeta, cols);
    dg += (dy.cwiseProduct(cache.xhat)).colwise().sum();
    db += dy.colwise().sum();
    Mat<S> dx(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const RowVec<S> dxhat = dy.row(r).cwiseProduct(gamma.row(0));
        const S m1 = dxhat.mean();
        const S m2 = dxhat.cwiseProduct(cache.xhat.row(r)).mean();
        dx.row(r) = cache.rstd(r) * (dxhat.array() - m1 - cache.xhat.row(r).array() * m2);
    }
    return dx;
}

// 3x3 same-padded neighbourhood gather on each view's token grid: output row
// (view, gy, gx) holds the 9 neighbours' features, zero outside the grid.
template <class S>
Mat<S> im2col(const Mat<S>& x, int views, int grid) {
    const Eigen::Index D = x.cols();
    Mat<S> col = Mat<S>::Zero(x.rows(), 9 * D);
    const int G = grid * grid;
    for (int n = 0; n < views; ++n)
        for (int gy = 0; gy < grid; ++gy)
            for (int gx = 0; gx < grid; ++gx) {
                const Eigen::Index row = n * G + gy * grid + gx;
                for (int k = 0; k < 9; ++k) {
                    const int sy = gy + k / 3 - 1, sx = gx + k % 3 - 1;
                    if (sy < 0 || sy >= grid || sx < 0 || sx >= grid) continue;
                    col.block(row, k * D, 1, D) = x.row(n * G + sy * grid + sx);
                }
            }
    return col;
}

template <class S>
Mat<S> col2im(const Mat<S>& dcol, int views, int grid, Eigen::Index D) {
    Mat<S> dx = Mat<S>::Zero(dcol.rows(), D);
    const int G = grid * grid;
    for (int n = 0; n < views; ++n)
        for (int gy = 0; gy < grid; ++gy)
            for (int gx = 0; gx < grid; ++gx) {
                const Eigen::Index row = n * G + gy * grid + gx;
                for (int k = 0; k < 9; ++k) {
                    const int sy = gy + k / 3 - 1, sx = gx + k % 3 - 1;
                    if (sy < 0 || sy >= grid || sx < 0 || sx >= grid) continue;
                    dx.row(n * G + sy * grid + sx) += dcol.block(row, k * D, 1, D);
                }
            }
    return dx;
}

std::string block_prefix(int b) { return "blocks." + std::to_string(b) + "."; }

}  // namespace

// Row-wise softmax in place.
template <class S>
void softmax_rows(Mat<S>& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const S mx = m.row(r).maxCoeff();
        m.row(r) = (m.row(r).array() - mx).exp();
        m.row(r) /= m.row(r).sum();
    }
}

template <class S>
Mat<S> attend(const Mat<S>& q, const Mat<S>& keys, const Mat<S>& values, Mat<S>& weights) {
    weights = (q * keys.transpose()) * (S(1) / std::sqrt(static_cast<S>(q.cols())));
    softmax_rows(weights);
    return weights * values;
}

template Mat<float> attend(const Mat<float>&, const Mat<float>&, const Mat<float>&, Mat<float>&);
template Mat<double> attend(const Mat<double>&, const Mat<double>&, const Mat<double>&, Mat<double>&);


template <class S>
struct BlockCache {
    Mat<S> h_in;
    LayerNormCache<S> ln1;
    Mat<S> a, q, k, v, keys, values, probs, o;
    Mat<S> h_mid;
    LayerNormCache<S> ln2;
    Mat<S> col, pre_act, act;
};

template <class S>
struct ForwardCache {
    int views = 0;
    Mat<S> tokens;     // (M, 2 * patch_values)
    Mat<S> az_feat;    // (N, 2K)
    RowVec<S> time_feat, time_pre, time_act;
    std::vector<BlockCache<S>> blocks;
    Mat<S> h_final;
    LayerNormCache<S> ln_out;
    Mat<S> f;
    Mat<S> out;        // (M, patch_values), network output
    S out_scale = S(1);  // sqrt(alpha_bar_t)
    Mat<S> net_eps;    // (M, patch_values), prediction of the network path
    Mat<S> copy_eps;   // (M, patch_values), noise implied by x0 = conditioning frame
    Mat<S> gate;       // (N, 1), per-view copy gate in (0, 1)
    Mat<S> eps;        // (M, patch_values)
};

template <class S>
Denoiser<S>::Denoiser(const ModelConfig& config, const DiffusionConfig& diffusion)
    : config_(config), diffusion_(diffusion), schedule_(make_schedule(diffusion)) {
    validate(config);
    const int D = config.width, P2C = config.patch_values(), G = config.tokens_per_view();
    const int TE = config.time_embed_dim, A = config.azimuth_embed_dim();
    std::size_t offset = 0;
    auto add = [&](std::string name, std::vector<int> shape) {
        std::size_t size = 1;
        for (int d : shape) size *= d;
        params_.info.push_back({std::move(name), std::move(shape), offset, size});
        offset += size;
    };
    add("embed.w", {2 * P2C, D});
    add("embed.b", {D});
    add("pos", {G, D});
    add("azimuth.w", {A, D});
    add("time.w1", {TE, D});
    add("time.b1", {D});
    add("time.w2", {D, D});
    add("time.b2", {D});
    for (int b = 0; b < config.blocks; ++b) {
        const auto p = block_prefix(b);
        add(p + "ln1.g", {D});
        add(p + "ln1.b", {D});
        add(p + "attn.wq", {D, D});
        add(p + "attn.wk", {D, D});
        add(p + "attn.wv", {D, D});
        add(p + "attn.wo", {D, D});
        add(p + "attn.bo", {D});
        add(p + "ln2.g", {D});
        add(p + "ln2.b", {D});
        add(p + "conv.w", {9 * D, D});
        add(p + "conv.b", {D});
        add(p + "proj.w", {D, D});
        add(p + "proj.b", {D});
    }
    add("out.ln.g", {D});
    add("out.ln.b", {D});
    add("out.w", {D, P2C});
    add("out.b", {P2C});
    add("copy.w", {2 * config.azimuth_harmonics, 1});
    add("copy.b", {1});
    params_.values.assign(offset, S(0));

    std::mt19937_64 rng(config.init_seed);
    for (const auto& p : params_.info) {
        const auto& n = p.name;
        const bool is_gain = n.ends_with(".g");
        const bool is_bias = n.ends_with(".b") || n.ends_with(".b1") || n.ends_with(".b2") || n.ends_with(".bo");
        S* dst = params_.values.data() + p.offset;
        if (is_gain) {
            std::fill(dst, dst + p.size, S(1));
            continue;
        }
        if (n == "copy.b") {
            // Copy path starts nearly closed.
            dst[0] = S(-4);
            continue;
        }
        if (is_bias || n == "copy.w") continue;
        double std = 1.0 / std::sqrt(static_cast<double>(p.shape[0]));
        if (n == "pos") std = 0.1;
        if (n.ends_with("attn.wo") || n.ends_with("proj.w")) std *= 0.5;
        if (n == "out.w") std *= 0.25;
        std::normal_distribution<double> dist(0.0, std);
        for (std::size_t k = 0; k < p.size; ++k) dst[k] = static_cast<S>(dist(rng));
    }
}

template <class S>
std::vector<std::string> Denoiser<S>::attention_layers() const {
    std::vector<std::string> out;
    for (int b = 0; b < config_.blocks; ++b) out.push_back(block_prefix(b) + "attn");
    return out;
}

template <class S>
void Denoiser<S>::forward(const ViewStack& x_t, int t, int T, const Conditioning& cond, const AttentionTap* inject,
                          AttentionTap* capture, ForwardCache<S>& c) const {
    const auto& cfg = config_;
    const int N = x_t.views(), R = cfg.resolution, Cc = cfg.channels, P = cfg.patch;
    const int grid = cfg.grid(), G = cfg.tokens_per_view(), D = cfg.width, P2C = cfg.patch_values();
    if (x_t.resolution() != R || x_t.channels() != Cc || N < 1)
        throw ShapeError("denoiser input shape does not match the model configuration");
    if (cond.frame.resolution() != R || cond.frame.channels() != Cc)
        throw ShapeError("conditioning frame shape does not match the model configuration");
    if (static_cast<int>(cond.view_offsets.size()) != N)
        throw ShapeError("conditioning needs one azimuth offset per view");
    if (T != schedule_.T) throw ShapeError("denoiser was built for T = " + std::to_string(schedule_.T));
    if (t < 1 || t > T) throw IndexError("timestep " + std::to_string(t) + " outside [1, T]");
    if (inject) {
        for (const auto& l : inject->layers) {
            bool known = false;
            for (int b = 0; b < cfg.blocks; ++b) known |= (l.layer == block_prefix(b) + "attn");
            if (!known) throw InjectionError("tap layer '" + l.layer + "' is not an attention layer of this model");
            if (l.keys.cols() != D || l.values.cols() != D || l.keys.rows() != l.values.rows())
                throw InjectionError("tap layer '" + l.layer + "' has mismatched key/value shapes");
        }
    }
    const int M = N * G;
    c.views = N;

    // Patch tokens: noisy patch followed by the conditioning patch mapped to [-1, 1].
    c.tokens.resize(M, 2 * P2C);
    auto cf = cond.frame.values();
    for (int n = 0; n < N; ++n) {
        auto xv = x_t.view(n);
        for (int gy = 0; gy < grid; ++gy)
            for (int gx = 0; gx < grid; ++gx) {
                const int row = n * G + gy * grid + gx;
                for (int py = 0; py < P; ++py)
                    for (int px = 0; px < P; ++px)
                        for (int ch = 0; ch < Cc; ++ch) {
                            const std::size_t src = (static_cast<std::size_t>(gy * P + py) * R + gx * P + px) * Cc + ch;
                            const int col = (py * P + px) * Cc + ch;
                            c.tokens(row, col) = static_cast<S>(xv[src]);
                            c.tokens(row, P2C + col) = static_cast<S>(2.0f * cf[src] - 1.0f);
                        }
            }
    }

    const int K = cfg.azimuth_harmonics;
    c.az_feat.resize(N, 2 * K);
    for (int n = 0; n < N; ++n) {
        const double theta = 2.0 * std::numbers::pi * cond.view_offsets[n] / N;
        for (int k = 0; k < K; ++k) {
            c.az_feat(n, 2 * k) = static_cast<S>(std::cos((k + 1) * theta));
            c.az_feat(n, 2 * k + 1) = static_cast<S>(std::sin((k + 1) * theta));
        }
    }

    const int half = cfg.time_embed_dim / 2;
    const double tscaled = 1000.0 * t / T;
    c.time_feat.resize(cfg.time_embed_dim);
    for (int j = 0; j < half; ++j) {
        const double freq = std::exp(-std::log(10000.0) * j / half);
        c.time_feat(j) = static_cast<S>(std::sin(tscaled * freq));
        c.time_feat(half + j) = static_cast<S>(std::cos(tscaled * freq));
    }

    const auto& ps = params_;
    c.time_pre = c.time_feat * ps.mat(ps.get("time.w1")) + ps.mat(ps.get("time.b1"));
    c.time_act = c.time_pre.unaryExpr([](S v) { return silu(v); });
    const RowVec<S> temb = c.time_act * ps.mat(ps.get("time.w2")) + ps.mat(ps.get("time.b2"));

    const Mat<S> az = c.az_feat * ps.mat(ps.get("azimuth.w"));
    const auto pos = ps.mat(ps.get("pos"));
    Mat<S> h = c.tokens * ps.mat(ps.get("embed.w"));
    const RowVec<S> bias = ps.mat(ps.get("embed.b")).row(0) + temb;
    for (int n = 0; n < N; ++n)
        for (int g = 0; g < G; ++g) h.row(n * G + g) += bias + pos.row(g) + az.row(n);

    if (capture) {
        capture->d_k = D;
        capture->tokens_per_view = G;
        capture->layers.clear();
    }
    c.blocks.resize(cfg.blocks);
    for (int b = 0; b < cfg.blocks; ++b) {
        const auto pre = block_prefix(b);
        auto& bc = c.blocks[b];
        bc.h_in = h;
        bc.a = layer_norm<S>(h, ps.mat(ps.get(pre + "ln1.g")), ps.mat(ps.get(pre + "ln1.b")), bc.ln1);
        bc.q = bc.a * ps.mat(ps.get(pre + "attn.wq"));
        bc.k = bc.a * ps.mat(ps.get(pre + "attn.wk"));
        bc.v = bc.a * ps.mat(ps.get(pre + "attn.wv"));
        if (capture)
            capture->layers.push_back({pre + "attn", bc.k.template cast<float>(), bc.v.template cast<float>()});
        const LayerKV* inj = inject ? inject->find(pre + "attn") : nullptr;
        if (inj) {
            const Eigen::Index E = inj->keys.rows();
            bc.keys.resize(E + M, D);
            bc.values.resize(E + M, D);
            bc.keys.topRows(E) = inj->keys.template cast<S>();
            bc.values.topRows(E) = inj->values.template cast<S>();
            bc.keys.bottomRows(M) = bc.k;
            bc.values.bottomRows(M) = bc.v;
        } else {
            bc.keys = bc.k;
            bc.values = bc.v;
        }
        bc.o = attend(bc.q, bc.keys, bc.values, bc.probs);
        bc.h_mid = h + bc.o * ps.mat(ps.get(pre + "attn.wo"));
        bc.h_mid.rowwise() += ps.mat(ps.get(pre + "attn.bo")).row(0);

        const Mat<S> bn = layer_norm<S>(bc.h_mid, ps.mat(ps.get(pre + "ln2.g")), ps.mat(ps.get(pre + "ln2.b")), bc.ln2);
        bc.col = im2col(bn, N, grid);
        bc.pre_act = bc.col * ps.mat(ps.get(pre + "conv.w"));
        bc.pre_act.rowwise() += ps.mat(ps.get(pre + "conv.b")).row(0);
        bc.act = bc.pre_act.unaryExpr([](S v) { return silu(v); });
        h = bc.h_mid + bc.act * ps.mat(ps.get(pre + "proj.w"));
        h.rowwise() += ps.mat(ps.get(pre + "proj.b")).row(0);
    }
    c.h_final = h;
    c.f = layer_norm<S>(h, ps.mat(ps.get("out.ln.g")), ps.mat(ps.get("out.ln.b")), c.ln_out);
    c.out = c.f * ps.mat(ps.get("out.w"));
    c.out.rowwise() += ps.mat(ps.get("out.b")).row(0);
    const double abar = schedule_.alpha_bar[t];
    c.out_scale = static_cast<S>(std::sqrt(abar));
    const S s = static_cast<S>(std::sqrt(1.0 - abar));
    c.net_eps = s * c.tokens.leftCols(P2C) + c.out_scale * c.out;
    c.copy_eps = (c.tokens.leftCols(P2C) - c.out_scale * c.tokens.rightCols(P2C)) / s;
    c.gate = (c.az_feat * ps.mat(ps.get("copy.w"))).array() + ps.mat(ps.get("copy.b"))(0, 0);
    c.gate = c.gate.unaryExpr([](S a) { return S(1) / (S(1) + std::exp(-a)); });
    c.eps.resize(M, P2C);
    for (int n = 0; n < N; ++n) {
        const S g = c.gate(n, 0);
        c.eps.middleRows(n * G, G) = (S(1) - g) * c.net_eps.middleRows(n * G, G) + g * c.copy_eps.middleRows(n * G, G);
    }
}

template <class S>
ViewStack Denoiser<S>::decode(const ForwardCache<S>& c) const {
    const auto& cfg = config_;
    const int N = c.views, R = cfg.resolution, Cc = cfg.channels, P = cfg.patch, grid = cfg.grid();
    const int G = cfg.tokens_per_view();
    ViewStack eps(N, R, Cc);
    for (int n = 0; n < N; ++n) {
        auto ev = eps.view(n);
        for (int gy = 0; gy < grid; ++gy)
            for (int gx = 0; gx < grid; ++gx)
                for (int py = 0; py < P; ++py)
                    for (int px = 0; px < P; ++px)
                        for (int ch = 0; ch < Cc; ++ch)
                            ev[(static_cast<std::size_t>(gy * P + py) * R + gx * P + px) * Cc + ch] =
                                static_cast<float>(c.eps(n * G + gy * grid + gx, (py * P + px) * Cc + ch));
    }
    return eps;
}

template <class S>
ViewStack Denoiser<S>::predict_eps(const ViewStack& x_t, int t, int T, const Conditioning& cond,
                                   const AttentionTap* inject, AttentionTap* capture) const {
    ForwardCache<S> cache;
    forward(x_t, t, T, cond, inject, capture, cache);
    return decode(cache);
}

template <class S>
ViewStack Denoiser<S>::predict_eps_with_weights(const ViewStack& x_t, int t, int T, const Conditioning& cond,
                                                const AttentionTap* inject, std::vector<Mat<S>>& weights) const {
    ForwardCache<S> cache;
    forward(x_t, t, T, cond, inject, nullptr, cache);
    weights.clear();
    for (const auto& b : cache.blocks) weights.push_back(b.probs);
    return decode(cache);
}

template <class S>
S Denoiser<S>::loss(const ViewStack& x_t, const ViewStack& noise, int t, int T, const Conditioning& cond,
                    std::vector<S>* grad) const {
    require_same_shape(x_t, noise, "denoiser loss");
    ForwardCache<S> cache;
    forward(x_t, t, T, cond, nullptr, nullptr, cache);
    const auto& cfg = config_;
    const int N = x_t.views(), R = cfg.resolution, Cc = cfg.channels, P = cfg.patch, grid = cfg.grid();
    const int G = cfg.tokens_per_view();
    // Target noise in token layout.
    Mat<S> target(cache.out.rows(), cache.out.cols());
    for (int n = 0; n < N; ++n) {
        auto nv = noise.view(n);
        for (int gy = 0; gy < grid; ++gy)
            for (int gx = 0; gx < grid; ++gx)
                for (int py = 0; py < P; ++py)
                    for (int px = 0; px < P; ++px)
                        for (int ch = 0; ch < Cc; ++ch)
                            target(n * G + gy * grid + gx, (py * P + px) * Cc + ch) =
                                static_cast<S>(nv[(static_cast<std::size_t>(gy * P + py) * R + gx * P + px) * Cc + ch]);
    }
    const Mat<S> diff = cache.eps - target;
    const S count = static_cast<S>(diff.size());
    const S value = diff.squaredNorm() / count;
    if (grad) {
        if (grad->size() != params_.count()) grad->assign(params_.count(), S(0));
        const Mat<S> d_eps = diff * (S(2) / count);
        Mat<S> d_out(d_eps.rows(), d_eps.cols());
        Mat<S> d_gate(N, 1);
        for (int n = 0; n < N; ++n) {
            const S g = cache.gate(n, 0);
            const auto rows = d_eps.middleRows(n * G, G);
            d_out.middleRows(n * G, G) = ((S(1) - g) * cache.out_scale) * rows;
            const S dg = (cache.copy_eps.middleRows(n * G, G) - cache.net_eps.middleRows(n * G, G))
                             .cwiseProduct(rows)
                             .sum();
            d_gate(n, 0) = dg * g * (S(1) - g);
        }
        // Accumulate into an aligned buffer: Eigen's kernels round differently
        // depending on the destination's alignment.
        Eigen::Matrix<S, Eigen::Dynamic, 1> local = Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(params_.count());
        const auto& cw = params_.get("copy.w");
        Eigen::Map<Mat<S>>(local.data() + cw.offset, cw.shape[0], 1) += cache.az_feat.transpose() * d_gate;
        local[params_.get("copy.b").offset] += d_gate.sum();
        backward(cache, d_out, local.data());
        for (std::size_t i = 0; i < params_.count(); ++i) (*grad)[i] += local[i];
    }
    return value;
}

template <class S>
void Denoiser<S>::backward(const ForwardCache<S>& c, const Mat<S>& d_out, S* grad) const {
    const auto& cfg = config_;
    const auto& ps = params_;
    const int N = c.views, G = cfg.tokens_per_view(), D = cfg.width, grid = cfg.grid();
    const S scale = S(1) / std::sqrt(static_cast<S>(D));
    auto g = [&](const std::string& name) {
        const auto& p = ps.get(name);
        const int rows = p.shape.size() == 1 ? 1 : p.shape[0];
        return Eigen::Map<Mat<S>>(grad + p.offset, rows, static_cast<int>(p.size / rows));
    };
    auto gptr = [&](const std::string& name) { return grad + ps.get(name).offset; };

    g("out.w") += c.f.transpose() * d_out;
    g("out.b") += d_out.colwise().sum();
    Mat<S> df = d_out * ps.mat(ps.get("out.w")).transpose();
    Mat<S> dh = layer_norm_backward<S>(df, c.ln_out, ps.mat(ps.get("out.ln.g")), gptr("out.ln.g"), gptr("out.ln.b"));

    for (int b = cfg.blocks - 1; b >= 0; --b) {
        const auto pre = block_prefix(b);
        const auto& bc = c.blocks[b];
        // conv branch
        g(pre + "proj.b") += dh.colwise().sum();
        g(pre + "proj.w") += bc.act.transpose() * dh;
        Mat<S> dpre = dh * ps.mat(ps.get(pre + "proj.w")).transpose();
        dpre = dpre.cwiseProduct(bc.pre_act.unaryExpr([](S v) { return silu_grad(v); }));
        g(pre + "conv.b") += dpre.colwise().sum();
        g(pre + "conv.w") += bc.col.transpose() * dpre;
        const Mat<S> dcol = dpre * ps.mat(ps.get(pre + "conv.w")).transpose();
        const Mat<S> dbn = col2im(dcol, N, grid, D);
        Mat<S> dmid = dh + layer_norm_backward<S>(dbn, bc.ln2, ps.mat(ps.get(pre + "ln2.g")), gptr(pre + "ln2.g"),
                                                  gptr(pre + "ln2.b"));
        // attention branch (no injection during training)
        g(pre + "attn.bo") += dmid.colwise().sum();
        g(pre + "attn.wo") += bc.o.transpose() * dmid;
        const Mat<S> d_o = dmid * ps.mat(ps.get(pre + "attn.wo")).transpose();
        const Mat<S> dprobs = d_o * bc.values.transpose();
        const Mat<S> dvalues = bc.probs.transpose() * d_o;
        Mat<S> dscores = bc.probs.cwiseProduct(dprobs);
        const Eigen::Matrix<S, Eigen::Dynamic, 1> rowdot = dscores.rowwise().sum();
        dscores -= bc.probs.cwiseProduct(rowdot.replicate(1, bc.probs.cols()));
        dscores *= scale;
        const Mat<S> dq = dscores * bc.keys;
        const Mat<S> dkeys = dscores.transpose() * bc.q;
        const Eigen::Index own = bc.k.rows();
        const Mat<S> dk = dkeys.bottomRows(own);
        const Mat<S> dv = dvalues.bottomRows(own);
        g(pre + "attn.wq") += bc.a.transpose() * dq;
        g(pre + "attn.wk") += bc.a.transpose() * dk;
        g(pre + "attn.wv") += bc.a.transpose() * dv;
        const Mat<S> da = dq * ps.mat(ps.get(pre + "attn.wq")).transpose() +
                          dk * ps.mat(ps.get(pre + "attn.wk")).transpose() +
                          dv * ps.mat(ps.get(pre + "attn.wv")).transpose();
        dh = dmid + layer_norm_backward<S>(da, bc.ln1, ps.mat(ps.get(pre + "ln1.g")), gptr(pre + "ln1.g"),
                                           gptr(pre + "ln1.b"));
    }

    // Embedding.
    g("embed.w") += c.tokens.transpose() * dh;
    const RowVec<S> dsum = dh.colwise().sum();
    g("embed.b") += dsum;
    auto dpos = g("pos");
    Mat<S> dview = Mat<S>::Zero(N, D);
    for (int n = 0; n < N; ++n) {
        dpos += dh.middleRows(n * G, G);
        dview.row(n) = dh.middleRows(n * G, G).colwise().sum();
    }
    g("azimuth.w") += c.az_feat.transpose() * dview;
    g("time.b2") += dsum;
    g("time.w2") += c.time_act.transpose() * dsum;
    const RowVec<S> dact = dsum * ps.mat(ps.get("time.w2")).transpose();
    const RowVec<S> dpre_t = dact.cwiseProduct(c.time_pre.unaryExpr([](S v) { return silu_grad(v); }));
    g("time.b1") += dpre_t;
    g("time.w1") += c.time_feat.transpose() * dpre_t;
}

template struct ParamSet<float>;
template struct ParamSet<double>;
template class Denoiser<float>;
template class Denoiser<double>;

}  // namespace orbitedit::diffcore
