#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <json.hpp>

#include "orbitedit/diffcore/denoiser.hpp"
#include "orbitedit/diffcore/schedule.hpp"

namespace orbitedit::diffcore {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 16;
    double lr = 2e-3;
    int warmup_steps = 50;
    double min_lr_fraction = 0.1;  // cosine decay floor
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;        // global L2 norm; 0 disables
    int probe_size = 32;
    std::uint64_t seed = 0;
    int threads = 0;               // 0 = hardware concurrency; results do not depend on it

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void validate(const TrainConfig& c);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct AdamState {
    std::vector<float> m;
    std::vector<float> v;
    long step = 0;
};

struct EpochLog {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double probe_loss = 0.0;
    double lr = 0.0;
};

nlohmann::json to_json(const EpochLog& e);

struct TrainState {
    Denoiser<float> model;
    AdamState adam;
    int epochs_done = 0;
    double initial_probe_loss = 0.0;
    std::vector<EpochLog> log;
};

// One training example: orbit index, start view, timestep and noise key.
struct TrainSample {
    int record = 0;
    int start_view = 0;
    int t = 1;
    std::uint64_t noise_key = 0;
};

// Builds (x_t, noise, cond) for a sample: the orbit is rotated to start at
// `start_view`, which also becomes the conditioning frame. Orbits are in [0,1].
struct TrainExample {
    ViewStack x_t;
    ViewStack noise;
    Conditioning cond;
};
TrainExample make_example(const ViewStack& orbit, const TrainSample& s, const Schedule& sch);

// Learning rate after `step` optimizer updates out of `total_steps`.
double learning_rate(const TrainConfig& c, long step, long total_steps);

// Applies one Adam update with global-norm clipping. Returns the pre-clip norm.
double adam_step(std::vector<float>& params, std::vector<float> grad, AdamState& adam, double lr,
                 const TrainConfig& c);

TrainState init_training(const ModelConfig& model, const DiffusionConfig& diffusion = {});

// Mean loss over a fixed probe set drawn from `seed`.
double probe_loss(const Denoiser<float>& model, const std::vector<ViewStack>& orbits, const Schedule& sch,
                  const TrainConfig& c);

// Runs one epoch. Throws TrainingError on a non-finite loss.
EpochLog train_epoch(TrainState& state, const std::vector<ViewStack>& orbits, const Schedule& sch,
                     const TrainConfig& c);

using EpochCallback = std::function<void(const TrainState&, const EpochLog&, double seconds)>;

// Trains up to c.epochs, continuing from state.epochs_done. Throws DataError on
// an empty dataset.
void train(TrainState& state, const std::vector<ViewStack>& orbits, const Schedule& sch, const TrainConfig& c,
           const EpochCallback& on_epoch = {});

// Checkpoint directory: model.safetensors (parameters plus "adam.m.*" and
// "adam.v.*" moments) and model.json (architecture, schedule, training config,
// seed, git describe, epoch counter, log).
void save_checkpoint(const std::filesystem::path& dir, const TrainState& state, const DiffusionConfig& diffusion,
                     const TrainConfig& c);
bool has_checkpoint(const std::filesystem::path& dir);
TrainState load_checkpoint(const std::filesystem::path& dir, DiffusionConfig* diffusion = nullptr,
                           TrainConfig* c = nullptr);

std::string git_describe();

}  // namespace orbitedit::diffcore
