#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "orbitedit/errors.hpp"

namespace orbitedit {

// One R x R x C image, row-major, channels interleaved.
class Frame {
public:
    Frame() = default;
    Frame(int resolution, int channels, float fill = 0.0f)
        : resolution_(resolution), channels_(channels),
          data_(static_cast<std::size_t>(resolution) * resolution * channels, fill) {}

    int resolution() const { return resolution_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }

    float& at(int row, int col, int ch) { return data_[index(row, col, ch)]; }
    float at(int row, int col, int ch) const { return data_[index(row, col, ch)]; }

    std::span<float> values() { return data_; }
    std::span<const float> values() const { return data_; }

    bool same_shape(const Frame& other) const {
        return resolution_ == other.resolution_ && channels_ == other.channels_;
    }
    friend bool operator==(const Frame&, const Frame&) = default;

private:
    std::size_t index(int row, int col, int ch) const {
        return (static_cast<std::size_t>(row) * resolution_ + col) * channels_ + ch;
    }

    int resolution_ = 0;
    int channels_ = 0;
    std::vector<float> data_;
};

// N views of R x R x C, contiguous (N, R, R, C). Used for ground-truth orbits in
// [0,1] as well as for sampler states in the model's [-1,1] data range.
class ViewStack {
public:
    ViewStack() = default;
    ViewStack(int views, int resolution, int channels, float fill = 0.0f)
        : views_(views), resolution_(resolution), channels_(channels),
          data_(static_cast<std::size_t>(views) * resolution * resolution * channels, fill) {}

    int views() const { return views_; }
    int resolution() const { return resolution_; }
    int channels() const { return channels_; }
    std::size_t frame_size() const {
        return static_cast<std::size_t>(resolution_) * resolution_ * channels_;
    }
    std::size_t size() const { return data_.size(); }

    std::span<float> view(int i) {
        check_view(i);
        return {data_.data() + frame_size() * i, frame_size()};
    }
    std::span<const float> view(int i) const {
        check_view(i);
        return {data_.data() + frame_size() * i, frame_size()};
    }

    Frame frame(int i) const {
        Frame f(resolution_, channels_);
        auto src = view(i);
        std::copy(src.begin(), src.end(), f.values().begin());
        return f;
    }
    void set_frame(int i, const Frame& f) {
        if (f.resolution() != resolution_ || f.channels() != channels_)
            throw ShapeError("frame shape does not match view stack");
        auto src = f.values();
        std::copy(src.begin(), src.end(), view(i).begin());
    }

    std::span<float> values() { return data_; }
    std::span<const float> values() const { return data_; }
    float& operator[](std::size_t k) { return data_[k]; }
    float operator[](std::size_t k) const { return data_[k]; }

    bool same_shape(const ViewStack& other) const {
        return views_ == other.views_ && resolution_ == other.resolution_ &&
               channels_ == other.channels_;
    }
    friend bool operator==(const ViewStack&, const ViewStack&) = default;

private:
    void check_view(int i) const {
        if (i < 0 || i >= views_) throw IndexError("view index " + std::to_string(i) + " out of range");
    }

    int views_ = 0;
    int resolution_ = 0;
    int channels_ = 0;
    std::vector<float> data_;
};

inline void require_same_shape(const ViewStack& a, const ViewStack& b, const char* what) {
    if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": view stack shapes differ");
}

}  // namespace orbitedit
