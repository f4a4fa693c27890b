#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "orbitedit/scenegen.hpp"

namespace orbitedit::scenegen {

namespace {

constexpr int kSupersample = 2;

// Primitive footprint after the view rotation, in image-plane coordinates
// u = x' (right) and v = z (up), both spanning [-1, 1].
struct Shape {
    PrimitiveKind kind;
    double depth;  // y' of the center; larger is closer to the camera
    int order;     // original index, stable tie-break
    Color color;
    // disk
    double cu = 0, cv = 0, radius = 0;
    // up to two visible box faces or one triangle
    struct Quad {
        double u0, u1, v0, v1, shade;
    };
    std::vector<Quad> faces;
    std::array<std::array<double, 2>, 3> tri{};
    double tri_shade = 0;
};

Shape project(const Primitive& p, int order, double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    auto rot_u = [&](double x, double y) { return x * c + y * s; };
    auto rot_depth = [&](double x, double y) { return -x * s + y * c; };

    Shape sh;
    sh.kind = p.kind;
    sh.order = order;
    sh.color = p.color;
    sh.depth = rot_depth(p.center[0], p.center[1]);
    const double cu = rot_u(p.center[0], p.center[1]);
    const double cz = p.center[2];
    const double r = p.size;

    switch (p.kind) {
        case PrimitiveKind::disk:
            sh.cu = cu;
            sh.cv = cz;
            sh.radius = r;
            break;
        case PrimitiveKind::box: {
            // Vertical faces with outward normals at yaw + k*pi/2; corners between them.
            for (int k = 0; k < 4; ++k) {
                const double a = p.yaw + k * std::numbers::pi / 2.0 - theta;
                const double facing = std::sin(a);  // component toward the camera
                if (facing <= 1e-9) continue;
                const double nx = std::cos(a), ny = std::sin(a);
                // Face center offset r along the normal, corners offset r along the tangent.
                const double fx = cu + nx * r, tx = -ny * r;
                const double u0 = std::min(fx - tx, fx + tx), u1 = std::max(fx - tx, fx + tx);
                sh.faces.push_back({u0, u1, cz - r, cz + r, 0.55 + 0.45 * facing});
            }
            break;
        }
        case PrimitiveKind::triangle: {
            // Flat upright triangle; at yaw 0 it lies in the plane y = center.y.
            const double a = p.yaw - theta;
            const double du = std::cos(a) * r;
            sh.tri = {{{cu - du, cz - r}, {cu + du, cz - r}, {cu, cz + r}}};
            sh.tri_shade = 0.6 + 0.4 * std::abs(std::sin(a + std::numbers::pi / 2.0));
            break;
        }
    }
    return sh;
}

double edge(const std::array<double, 2>& a, const std::array<double, 2>& b, double u, double v) {
    return (b[0] - a[0]) * (v - a[1]) - (b[1] - a[1]) * (u - a[0]);
}

// Returns the shade factor if the shape covers (u, v), or a negative value.
double coverage(const Shape& sh, double u, double v) {
    switch (sh.kind) {
        case PrimitiveKind::disk: {
            const double du = u - sh.cu, dv = v - sh.cv;
            const double rr = du * du + dv * dv, r2 = sh.radius * sh.radius;
            if (rr > r2) return -1.0;
            return 0.7 + 0.3 * std::sqrt(1.0 - rr / r2);
        }
        case PrimitiveKind::box:
            for (const auto& f : sh.faces)
                if (u >= f.u0 && u <= f.u1 && v >= f.v0 && v <= f.v1) return f.shade;
            return -1.0;
        case PrimitiveKind::triangle: {
            const auto& t = sh.tri;
            const double area = edge(t[0], t[1], t[2][0], t[2][1]);
            if (std::abs(area) < 1e-12) return -1.0;
            const double w0 = edge(t[1], t[2], u, v) / area;
            const double w1 = edge(t[2], t[0], u, v) / area;
            const double w2 = edge(t[0], t[1], u, v) / area;
            if (w0 < 0 || w1 < 0 || w2 < 0) return -1.0;
            return sh.tri_shade;
        }
    }
    return -1.0;
}

}  // namespace

Frame render_view(const SceneSpec& scene, const OrbitParams& orbit, int view) {
    validate(orbit);
    if (view < 0 || view >= orbit.n_views)
        throw IndexError("view index " + std::to_string(view) + " outside [0, " +
                         std::to_string(orbit.n_views) + ")");

    const double theta = 2.0 * std::numbers::pi * view / orbit.n_views;
    std::vector<Shape> shapes;
    shapes.reserve(scene.primitives.size());
    for (std::size_t k = 0; k < scene.primitives.size(); ++k)
        shapes.push_back(project(scene.primitives[k], static_cast<int>(k), theta));
    // Painter's order: farthest first.
    std::sort(shapes.begin(), shapes.end(), [](const Shape& a, const Shape& b) {
        return a.depth != b.depth ? a.depth < b.depth : a.order < b.order;
    });

    const int R = orbit.resolution, C = orbit.channels;
    const int S = R * kSupersample;
    Frame out(R, C);
    auto channel_value = [&](const Color& col, int ch) {
        if (C == 3) return static_cast<double>(col[ch]);
        return (static_cast<double>(col[0]) + col[1] + col[2]) / 3.0;
    };

    const double inv = 1.0 / (kSupersample * kSupersample);
    std::vector<double> acc(out.size(), 0.0);
    for (int row = 0; row < S; ++row) {
        const double v = 1.0 - 2.0 * (row + 0.5) / S;
        for (int col = 0; col < S; ++col) {
            const double u = 2.0 * (col + 0.5) / S - 1.0;
            const Color* color = &scene.background;
            double shade = 1.0;
            for (const auto& sh : shapes) {
                const double cov = coverage(sh, u, v);
                if (cov >= 0.0) {
                    color = &sh.color;
                    shade = cov;
                }
            }
            const std::size_t base =
                (static_cast<std::size_t>(row / kSupersample) * R + col / kSupersample) * C;
            for (int ch = 0; ch < C; ++ch) acc[base + ch] += channel_value(*color, ch) * shade * inv;
        }
    }
    auto dst = out.values();
    for (std::size_t k = 0; k < acc.size(); ++k)
        dst[k] = static_cast<float>(std::clamp(acc[k], 0.0, 1.0));
    return out;
}

ViewStack render_orbit(const SceneSpec& scene, const OrbitParams& orbit) {
    validate(orbit);
    ViewStack seq(orbit.n_views, orbit.resolution, orbit.channels);
    for (int i = 0; i < orbit.n_views; ++i) seq.set_frame(i, render_view(scene, orbit, i));
    return seq;
}

}  // namespace orbitedit::scenegen
