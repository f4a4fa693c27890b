#pragma once

#include <vector>

#include <json.hpp>

#include "orbitedit/view_stack.hpp"

namespace orbitedit::diffcore {

// Linear beta schedule, epsilon prediction. Defaults follow the usual
// 1e-4..0.02 range rescaled by 1000/T, so that T = 50 ends close to pure noise.
struct DiffusionConfig {
    int T = 50;
    double beta_min = 0.002;
    double beta_max = 0.4;

    friend bool operator==(const DiffusionConfig&, const DiffusionConfig&) = default;
};

void validate(const DiffusionConfig& config);

// Arrays indexed by timestep t = 0..T; index 0 holds the clean-data convention
// (beta 0, alpha 1, alpha_bar 1).
struct Schedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
};

Schedule make_schedule(const DiffusionConfig& config);

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise, for t in [0, T].
ViewStack q_sample(const ViewStack& x0, int t, const ViewStack& noise, const Schedule& schedule);

nlohmann::json to_json(const DiffusionConfig& c);
DiffusionConfig diffusion_config_from_json(const nlohmann::json& j);

}  // namespace orbitedit::diffcore
