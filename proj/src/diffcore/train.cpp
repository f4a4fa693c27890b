#include "orbitedit/diffcore/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "orbitedit/errors.hpp"
#include "orbitedit/io.hpp"
#include "orbitedit/parallel.hpp"

#ifndef ORBITEDIT_GIT_DESCRIBE
#define ORBITEDIT_GIT_DESCRIBE "unknown"
#endif

namespace orbitedit::diffcore {

namespace {

constexpr std::uint64_t kProbeStream = 0x70726f6265ULL;

std::mt19937_64 keyed_rng(std::initializer_list<std::uint64_t> keys) {
    std::vector<std::uint32_t> words;
    for (auto k : keys) {
        words.push_back(static_cast<std::uint32_t>(k));
        words.push_back(static_cast<std::uint32_t>(k >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return std::mt19937_64(seq);
}

TrainSample draw_sample(std::mt19937_64& rng, int record, int n_views, int T) {
    TrainSample s;
    s.record = record;
    s.start_view = std::uniform_int_distribution<int>(0, n_views - 1)(rng);
    s.t = std::uniform_int_distribution<int>(1, T)(rng);
    s.noise_key = rng();
    return s;
}

std::vector<TrainSample> probe_samples(const std::vector<ViewStack>& orbits, const Schedule& sch,
                                       const TrainConfig& c) {
    auto rng = keyed_rng({c.seed, kProbeStream});
    std::vector<TrainSample> out;
    for (int k = 0; k < c.probe_size; ++k) {
        const int record = std::uniform_int_distribution<int>(0, static_cast<int>(orbits.size()) - 1)(rng);
        out.push_back(draw_sample(rng, record, orbits[record].views(), sch.T));
    }
    return out;
}

// Per-sample losses and gradients, reduced in sample order.
double batch_loss(const Denoiser<float>& model, const std::vector<ViewStack>& orbits,
                  const std::vector<TrainSample>& samples, const Schedule& sch, int threads,
                  std::vector<float>* grad) {
    const int n = static_cast<int>(samples.size());
    std::vector<float> losses(n);
    std::vector<std::vector<float>> grads(grad ? n : 0);
    parallel_for(n, threads, [&](int k) {
        const TrainExample ex = make_example(orbits[samples[k].record], samples[k], sch);
        std::vector<float>* g = nullptr;
        if (grad) {
            grads[k].assign(model.params().count(), 0.0f);
            g = &grads[k];
        }
        losses[k] = model.loss(ex.x_t, ex.noise, samples[k].t, sch.T, ex.cond, g);
    });
    double total = 0.0;
    for (int k = 0; k < n; ++k) total += losses[k];
    if (grad) {
        grad->assign(model.params().count(), 0.0f);
        for (int k = 0; k < n; ++k)
            for (std::size_t i = 0; i < grad->size(); ++i) (*grad)[i] += grads[k][i] / static_cast<float>(n);
    }
    return total / n;
}

}  // namespace

void validate(const TrainConfig& c) {
    if (c.epochs < 0) throw ConfigError("epochs must be nonnegative");
    if (c.batch_size < 1) throw ConfigError("batch size must be positive");
    if (!(c.lr >= 0.0)) throw ConfigError("learning rate must be nonnegative");
    if (c.warmup_steps < 0) throw ConfigError("warmup steps must be nonnegative");
    if (c.min_lr_fraction < 0.0 || c.min_lr_fraction > 1.0) throw ConfigError("min_lr_fraction must lie in [0, 1]");
    if (c.beta1 < 0.0 || c.beta1 >= 1.0 || c.beta2 < 0.0 || c.beta2 >= 1.0)
        throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(c.adam_eps > 0.0)) throw ConfigError("Adam epsilon must be positive");
    if (c.grad_clip < 0.0) throw ConfigError("grad_clip must be nonnegative");
    if (c.probe_size < 1) throw ConfigError("probe size must be positive");
    if (c.threads < 0) throw ConfigError("threads must be nonnegative");
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},         {"batch_size", c.batch_size},
            {"lr", c.lr},                 {"warmup_steps", c.warmup_steps},
            {"min_lr_fraction", c.min_lr_fraction},
            {"beta1", c.beta1},           {"beta2", c.beta2},
            {"adam_eps", c.adam_eps},     {"grad_clip", c.grad_clip},
            {"probe_size", c.probe_size}, {"seed", c.seed},
            {"threads", c.threads}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.lr = j.at("lr").get<double>();
    c.warmup_steps = j.at("warmup_steps").get<int>();
    c.min_lr_fraction = j.at("min_lr_fraction").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.probe_size = j.at("probe_size").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.threads = j.at("threads").get<int>();
    validate(c);
    return c;
}

nlohmann::json to_json(const EpochLog& e) {
    return {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"probe_loss", e.probe_loss}, {"lr", e.lr}};
}

TrainExample make_example(const ViewStack& orbit, const TrainSample& s, const Schedule& sch) {
    const int N = orbit.views(), R = orbit.resolution(), C = orbit.channels();
    ViewStack x0(N, R, C);
    for (int j = 0; j < N; ++j) {
        auto src = orbit.view((s.start_view + j) % N);
        auto dst = x0.view(j);
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = 2.0f * src[k] - 1.0f;
    }
    TrainExample ex;
    ex.noise = ViewStack(N, R, C);
    std::mt19937_64 rng(s.noise_key);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (auto& v : ex.noise.values()) v = dist(rng);
    ex.x_t = q_sample(x0, s.t, ex.noise, sch);
    ex.cond = Conditioning::trajectory(orbit.frame(s.start_view), N);
    return ex;
}

double learning_rate(const TrainConfig& c, long step, long total_steps) {
    if (c.warmup_steps > 0 && step < c.warmup_steps) return c.lr * (step + 1) / c.warmup_steps;
    const long decay = std::max(1L, total_steps - c.warmup_steps);
    const double progress = std::clamp(static_cast<double>(step - c.warmup_steps) / decay, 0.0, 1.0);
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return c.lr * (c.min_lr_fraction + (1.0 - c.min_lr_fraction) * cosine);
}

double adam_step(std::vector<float>& params, std::vector<float> grad, AdamState& adam, double lr,
                 const TrainConfig& c) {
    if (grad.size() != params.size()) throw ShapeError("gradient size does not match the parameter count");
    if (adam.m.size() != params.size()) {
        adam.m.assign(params.size(), 0.0f);
        adam.v.assign(params.size(), 0.0f);
    }
    double sq = 0.0;
    for (float g : grad) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw TrainingError("non-finite gradient norm at optimizer step " + std::to_string(adam.step));
    if (c.grad_clip > 0.0 && norm > c.grad_clip) {
        const float scale = static_cast<float>(c.grad_clip / norm);
        for (auto& g : grad) g *= scale;
    }
    ++adam.step;
    const double b1 = c.beta1, b2 = c.beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(adam.step));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(adam.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double m = b1 * adam.m[i] + (1.0 - b1) * grad[i];
        const double v = b2 * adam.v[i] + (1.0 - b2) * static_cast<double>(grad[i]) * grad[i];
        adam.m[i] = static_cast<float>(m);
        adam.v[i] = static_cast<float>(v);
        params[i] = static_cast<float>(params[i] - lr * (m / corr1) / (std::sqrt(v / corr2) + c.adam_eps));
    }
    return norm;
}

TrainState init_training(const ModelConfig& model, const DiffusionConfig& diffusion) {
    TrainState s;
    s.model = Denoiser<float>(model, diffusion);
    return s;
}

double probe_loss(const Denoiser<float>& model, const std::vector<ViewStack>& orbits, const Schedule& sch,
                  const TrainConfig& c) {
    if (orbits.empty()) throw DataError("training set is empty");
    const int threads = c.threads > 0 ? c.threads : default_threads();
    return batch_loss(model, orbits, probe_samples(orbits, sch, c), sch, threads, nullptr);
}

EpochLog train_epoch(TrainState& state, const std::vector<ViewStack>& orbits, const Schedule& sch,
                     const TrainConfig& c) {
    if (orbits.empty()) throw DataError("training set is empty");
    const int epoch = state.epochs_done + 1;
    const int n = static_cast<int>(orbits.size());
    const long steps_per_epoch = (n + c.batch_size - 1) / c.batch_size;
    const long total_steps = steps_per_epoch * std::max(1, c.epochs);
    const int threads = c.threads > 0 ? c.threads : default_threads();

    auto rng = keyed_rng({c.seed, static_cast<std::uint64_t>(epoch)});
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<TrainSample> samples;
    samples.reserve(n);
    for (int k = 0; k < n; ++k) samples.push_back(draw_sample(rng, order[k], orbits[order[k]].views(), sch.T));

    EpochLog log;
    log.epoch = epoch;
    double loss_sum = 0.0;
    std::vector<float> grad;
    for (int b = 0; b < n; b += c.batch_size) {
        const std::vector<TrainSample> batch(samples.begin() + b, samples.begin() + std::min(n, b + c.batch_size));
        const double loss = batch_loss(state.model, orbits, batch, sch, threads, &grad);
        if (!std::isfinite(loss))
            throw TrainingError("loss became non-finite at epoch " + std::to_string(epoch) + ", optimizer step " +
                                std::to_string(state.adam.step));
        const double lr = learning_rate(c, state.adam.step, total_steps);
        adam_step(state.model.params().values, std::move(grad), state.adam, lr, c);
        loss_sum += loss * static_cast<double>(batch.size());
        log.lr = lr;
    }
    log.train_loss = loss_sum / n;
    log.probe_loss = probe_loss(state.model, orbits, sch, c);
    if (!std::isfinite(log.probe_loss))
        throw TrainingError("probe loss became non-finite after epoch " + std::to_string(epoch));
    state.epochs_done = epoch;
    state.log.push_back(log);
    return log;
}

void train(TrainState& state, const std::vector<ViewStack>& orbits, const Schedule& sch, const TrainConfig& c,
           const EpochCallback& on_epoch) {
    validate(c);
    if (orbits.empty()) throw DataError("training set is empty");
    if (state.epochs_done == 0 && state.log.empty()) state.initial_probe_loss = probe_loss(state.model, orbits, sch, c);
    while (state.epochs_done < c.epochs) {
        const auto start = std::chrono::steady_clock::now();
        const EpochLog log = train_epoch(state, orbits, sch, c);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (on_epoch) on_epoch(state, log, seconds);
    }
}

std::string git_describe() { return ORBITEDIT_GIT_DESCRIBE; }

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state, const DiffusionConfig& diffusion,
                     const TrainConfig& c) {
    std::filesystem::create_directories(dir);
    const auto& params = state.model.params();
    io::TensorMap tensors;
    auto slice = [](const std::vector<float>& src, const ParamInfo& p) {
        io::Tensor t;
        t.dtype = io::Tensor::DType::f32;
        t.shape.assign(p.shape.begin(), p.shape.end());
        t.f32.assign(src.begin() + p.offset, src.begin() + p.offset + p.size);
        return t;
    };
    for (const auto& p : params.info) {
        tensors[p.name] = slice(params.values, p);
        if (!state.adam.m.empty()) {
            tensors["adam.m." + p.name] = slice(state.adam.m, p);
            tensors["adam.v." + p.name] = slice(state.adam.v, p);
        }
    }
    nlohmann::json log = nlohmann::json::array();
    for (const auto& e : state.log) log.push_back(to_json(e));
    const nlohmann::json sidecar = {{"model", to_json(state.model.config())},
                                    {"diffusion", to_json(diffusion)},
                                    {"train", to_json(c)},
                                    {"seed", c.seed},
                                    {"git_describe", git_describe()},
                                    {"param_count", params.count()},
                                    {"epochs_done", state.epochs_done},
                                    {"adam_step", state.adam.step},
                                    {"initial_probe_loss", state.initial_probe_loss},
                                    {"log", log}};
    // Tensors first: a sidecar on disk always refers to a complete parameter file.
    io::save_tensors(dir / "model.safetensors", tensors);
    io::write_json(dir / "model.json", sidecar);
}

bool has_checkpoint(const std::filesystem::path& dir) {
    return std::filesystem::exists(dir / "model.json") && std::filesystem::exists(dir / "model.safetensors");
}

TrainState load_checkpoint(const std::filesystem::path& dir, DiffusionConfig* diffusion, TrainConfig* c) {
    if (!has_checkpoint(dir)) throw IoError("no checkpoint in " + dir.string());
    const nlohmann::json side = io::read_json(dir / "model.json");
    TrainState state;
    state.model = Denoiser<float>(model_config_from_json(side.at("model")),
                                  diffusion_config_from_json(side.at("diffusion")));
    const io::TensorMap tensors = io::load_tensors(dir / "model.safetensors");
    auto& params = state.model.params();
    const bool has_moments = tensors.count("adam.m." + params.info.front().name) > 0;
    if (has_moments) {
        state.adam.m.assign(params.count(), 0.0f);
        state.adam.v.assign(params.count(), 0.0f);
    }
    for (const auto& p : params.info) {
        auto load = [&](const std::string& name, std::vector<float>& dst) {
            auto it = tensors.find(name);
            if (it == tensors.end()) throw DataError("checkpoint is missing tensor '" + name + "'");
            if (it->second.dtype != io::Tensor::DType::f32 || it->second.f32.size() != p.size)
                throw DataError("checkpoint tensor '" + name + "' has the wrong size or dtype");
            std::copy(it->second.f32.begin(), it->second.f32.end(), dst.begin() + p.offset);
        };
        load(p.name, params.values);
        if (has_moments) {
            load("adam.m." + p.name, state.adam.m);
            load("adam.v." + p.name, state.adam.v);
        }
    }
    state.epochs_done = side.at("epochs_done").get<int>();
    state.adam.step = side.at("adam_step").get<long>();
    state.initial_probe_loss = side.at("initial_probe_loss").get<double>();
    for (const auto& e : side.at("log")) {
        EpochLog l;
        l.epoch = e.at("epoch").get<int>();
        l.train_loss = e.at("train_loss").get<double>();
        l.probe_loss = e.at("probe_loss").get<double>();
        l.lr = e.at("lr").get<double>();
        state.log.push_back(l);
    }
    if (diffusion) *diffusion = diffusion_config_from_json(side.at("diffusion"));
    if (c) *c = train_config_from_json(side.at("train"));
    return state;
}

}  // namespace orbitedit::diffcore
