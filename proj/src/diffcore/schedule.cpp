#include "orbitedit/diffcore/schedule.hpp"

#include <cmath>
#include <string>

namespace orbitedit::diffcore {

void validate(const DiffusionConfig& c) {
    if (c.T < 1) throw ConfigError("diffusion T must be >= 1");
    if (!(c.beta_min > 0.0 && c.beta_min <= c.beta_max && c.beta_max < 1.0))
        throw ConfigError("diffusion betas must satisfy 0 < beta_min <= beta_max < 1 (got " +
                          std::to_string(c.beta_min) + ", " + std::to_string(c.beta_max) + ")");
}

Schedule make_schedule(const DiffusionConfig& c) {
    validate(c);
    Schedule s;
    s.T = c.T;
    s.beta.assign(c.T + 1, 0.0);
    s.alpha.assign(c.T + 1, 1.0);
    s.alpha_bar.assign(c.T + 1, 1.0);
    for (int t = 1; t <= c.T; ++t) {
        const double frac = c.T == 1 ? 0.0 : static_cast<double>(t - 1) / (c.T - 1);
        s.beta[t] = c.beta_min + (c.beta_max - c.beta_min) * frac;
        s.alpha[t] = 1.0 - s.beta[t];
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    }
    return s;
}

ViewStack q_sample(const ViewStack& x0, int t, const ViewStack& noise, const Schedule& s) {
    require_same_shape(x0, noise, "q_sample");
    if (t < 0 || t > s.T) throw IndexError("timestep " + std::to_string(t) + " outside [0, T]");
    if (t == 0) return x0;
    ViewStack out(x0.views(), x0.resolution(), x0.channels());
    const double a = std::sqrt(s.alpha_bar[t]), b = std::sqrt(1.0 - s.alpha_bar[t]);
    auto o = out.values();
    auto xv = x0.values();
    auto nv = noise.values();
    for (std::size_t k = 0; k < o.size(); ++k) o[k] = static_cast<float>(a * xv[k] + b * nv[k]);
    return out;
}

nlohmann::json to_json(const DiffusionConfig& c) {
    return {{"T", c.T}, {"beta_schedule", "linear"}, {"beta_min", c.beta_min}, {"beta_max", c.beta_max},
            {"predicts", "epsilon"}};
}

DiffusionConfig diffusion_config_from_json(const nlohmann::json& j) {
    DiffusionConfig c;
    c.T = j.at("T").get<int>();
    c.beta_min = j.at("beta_min").get<double>();
    c.beta_max = j.at("beta_max").get<double>();
    if (j.value("beta_schedule", std::string("linear")) != "linear")
        throw ConfigError("only the linear beta schedule is supported");
    validate(c);
    return c;
}

}  // namespace orbitedit::diffcore
