#include <doctest.h>

#include <cmath>

#include "orbitedit/sampler.hpp"
#include "support.hpp"

using namespace orbitedit;
using namespace orbitedit::sampler;

namespace {

Conditioning cond_for(int n, int r) { return Conditioning::trajectory(testing::uniform_frame(r, 3, 1), n); }

// Fixed linear noise predictor; enough to exercise the update arithmetic.
EpsFn linear_eps(double k) {
    return [k](const ViewStack& x, int, const Conditioning&, const AttentionTap*, AttentionTap*) {
        ViewStack e(x.views(), x.resolution(), x.channels());
        for (std::size_t i = 0; i < x.size(); ++i) e[i] = static_cast<float>(k * x[i]);
        return e;
    };
}

}  // namespace

TEST_SUITE("sampler") {

TEST_CASE("initial state is seeded Gaussian noise") {
    const auto a = init_state(1, 4, 8, 3, cond_for(4, 8), 50);
    const auto b = init_state(1, 4, 8, 3, cond_for(4, 8), 50);
    CHECK(a.x == b.x);
    CHECK(a.t == 50);
    CHECK(a.view_keys == std::vector<int>{0, 1, 2, 3});

    const auto big = init_state(7, 25, 200, 1, Conditioning::trajectory(Frame(200, 1), 25), 50);
    REQUIRE(big.x.size() == 1000000);
    double sum = 0.0, sq = 0.0;
    for (std::size_t k = 0; k < big.x.size(); ++k) sum += big.x[k], sq += static_cast<double>(big.x[k]) * big.x[k];
    CHECK(std::abs(sum / big.x.size()) < 0.01);
    CHECK(sq / big.x.size() == doctest::Approx(1.0).epsilon(0.01));

    const auto c = init_state(2, 4, 8, 3, cond_for(4, 8), 50);
    long differ = 0;
    for (std::size_t k = 0; k < a.x.size(); ++k) differ += a.x[k] != c.x[k];
    CHECK(differ > 0.99 * a.x.size());
}

TEST_CASE("noise is keyed by camera, not by position") {
    const auto a = init_state(3, 4, 8, 3, cond_for(4, 8), 50, {0, 1, 2, 3});
    const auto b = init_state(3, 4, 8, 3, cond_for(4, 8), 50, {2, 3, 0, 1});
    for (int j = 0; j < 4; ++j) CHECK(std::ranges::equal(b.x.view(j), a.x.view((j + 2) % 4)));
    CHECK_THROWS_AS(init_state(3, 4, 8, 3, cond_for(4, 8), 50, {0, 1}), ShapeError);
}

TEST_CASE("ancestral update formula") {
    const auto sch = diffcore::make_schedule({});
    auto s = init_state(4, 2, 4, 3, cond_for(2, 4), 30);
    const ViewStack eps = testing::gaussian_stack(2, 4, 3, 10);
    const auto next = step(s, eps, sch);
    CHECK(next.t == 29);
    const int t = 30;
    const double beta = sch.beta[t], ab = sch.alpha_bar[t], abp = sch.alpha_bar[t - 1];
    const double sigma = std::sqrt(beta * (1.0 - abp) / (1.0 - ab));
    const ViewStack z = keyed_noise(4, t, s.view_keys, 4, 3);
    for (std::size_t k = 0; k < s.x.size(); ++k) {
        const double mu = (s.x[k] - beta / std::sqrt(1.0 - ab) * eps[k]) / std::sqrt(1.0 - beta);
        CHECK(next.x[k] == doctest::Approx(mu + sigma * z[k]).epsilon(1e-5));
    }
    CHECK(step(s, eps, sch).x == next.x);
}

TEST_CASE("the last step adds no noise") {
    const auto sch = diffcore::make_schedule({});
    auto s = init_state(5, 2, 4, 3, cond_for(2, 4), 50);
    s.t = 1;
    const ViewStack eps = testing::gaussian_stack(2, 4, 3, 11);
    const auto a = step(s, eps, sch);
    auto s2 = s;
    s2.seed = 999;
    CHECK(step(s2, eps, sch).x == a.x);
    const double beta = sch.beta[1];
    for (std::size_t k = 0; k < s.x.size(); ++k)
        CHECK(a.x[k] == doctest::Approx((s.x[k] - beta / std::sqrt(1.0 - sch.alpha_bar[1]) * eps[k]) /
                                        std::sqrt(1.0 - beta))
                            .epsilon(1e-5));
}

TEST_CASE("stepping a finished state is an error") {
    const auto sch = diffcore::make_schedule({});
    auto s = init_state(5, 2, 4, 3, cond_for(2, 4), 50);
    s.t = 0;
    CHECK_THROWS_AS(step(s, ViewStack(2, 4, 3), sch), StepError);
    CHECK_THROWS_AS(step(s, linear_eps(0.1), sch), StepError);
    s.t = 60;
    CHECK_THROWS_AS(step(s, ViewStack(2, 4, 3), sch), StepError);
}

TEST_CASE("1-D Gaussian data with the optimal denoiser") {
    const auto r = testing::run_gaussian_oracle(2500, 0.3, 0.5, 17, {1000, 1e-4, 0.02});
    CHECK(r.trajectories == 2500);
    CHECK(r.mean_z < 3.0);
    CHECK(r.var_z < 3.0);
}

TEST_CASE("identity hooks are transparent") {
    const auto sch = diffcore::make_schedule({10, 0.01, 0.3});
    const auto eps = linear_eps(0.2);
    const auto cond = cond_for(4, 8);
    const auto plain = sample_orbit(eps, cond, sch, 3, 4);
    const Hook identity = [](SamplerState s, const Schedule&) { return s; };
    CHECK(sample_orbit(eps, cond, sch, 3, 4, {identity, identity}) == plain);
    CHECK(sample_orbit(eps, cond, sch, 3, 4) == plain);
    for (float v : plain.values()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("a hook that zeroes the state changes the output") {
    const auto sch = diffcore::make_schedule({10, 0.01, 0.3});
    const auto eps = linear_eps(0.2);
    const auto cond = cond_for(4, 8);
    const Hook zero = [](SamplerState s, const Schedule& sch) {
        if (s.t == sch.T / 2)
            for (auto& v : s.x.values()) v = 0.0f;
        return s;
    };
    CHECK(sample_orbit(eps, cond, sch, 3, 4, {zero}) != sample_orbit(eps, cond, sch, 3, 4));
}

TEST_CASE("hook errors carry the timestep") {
    const auto sch = diffcore::make_schedule({10, 0.01, 0.3});
    const Hook bad = [](SamplerState s, const Schedule&) {
        if (s.t == 4) throw std::runtime_error("boom");
        return s;
    };
    try {
        sample_orbit(linear_eps(0.1), cond_for(4, 8), sch, 3, 4, {bad});
        FAIL("expected StepError");
    } catch (const StepError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("t = 4") != std::string::npos);
        CHECK(msg.find("boom") != std::string::npos);
    }
    const Hook retime = [](SamplerState s, const Schedule&) {
        s.t += 1;
        return s;
    };
    CHECK_THROWS_AS(sample_orbit(linear_eps(0.1), cond_for(4, 8), sch, 3, 4, {retime}), StepError);
}

TEST_CASE("deterministic sampler ignores the seed") {
    const auto sch = diffcore::make_schedule({10, 0.01, 0.3});
    auto s1 = init_state(1, 2, 4, 3, cond_for(2, 4), 10);
    auto s2 = s1;
    s2.seed = 77;
    const auto eps = testing::gaussian_stack(2, 4, 3, 1);
    CHECK(step(s1, eps, sch, SamplerKind::deterministic).x == step(s2, eps, sch, SamplerKind::deterministic).x);
}

TEST_CASE("range maps") {
    ViewStack x(1, 2, 1);
    x[0] = -1.5f;
    x[1] = 0.0f;
    x[2] = 1.0f;
    x[3] = 3.0f;
    const auto img = to_image_range(x);
    CHECK(img[0] == 0.0f);
    CHECK(img[1] == 0.5f);
    CHECK(img[2] == 1.0f);
    CHECK(img[3] == 1.0f);
    CHECK(to_model_range(img)[1] == 0.0f);
}

}
