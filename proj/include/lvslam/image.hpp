// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "lvslam/errors.hpp"

namespace lvslam {

/// Row-major H x W x C raster. Channel count is a runtime property so the
/// same container carries RGB images, label maps, depth maps and feature maps.
template <typename T>
class Image {
public:
    Image() = default;
    Image(int height, int width, int channels, T fill = T{})
        : height_(height), width_(width), channels_(channels),
          data_(static_cast<std::size_t>(height) * width * channels, fill) {}

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& at(int r, int c, int ch = 0) {
        return data_[(static_cast<std::size_t>(r) * width_ + c) * channels_ + ch];
    }
    const T& at(int r, int c, int ch = 0) const {
        return data_[(static_cast<std::size_t>(r) * width_ + c) * channels_ + ch];
    }

    T* row_ptr(int r, int c = 0) { return &data_[(static_cast<std::size_t>(r) * width_ + c) * channels_]; }
    const T* row_ptr(int r, int c = 0) const {
        return &data_[(static_cast<std::size_t>(r) * width_ + c) * channels_];
    }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    bool same_shape(const Image& o) const {
        return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
    }

    bool operator==(const Image& o) const {
        return same_shape(o) && data_ == o.data_;
    }

private:
    int height_ = 0, width_ = 0, channels_ = 0;
    std::vector<T> data_;
};

using ImageF = Image<double>;
using ImageU8 = Image<std::uint8_t>;

/// Binary mask convention throughout: nonzero = dynamic (excluded).
using Mask = Image<std::uint8_t>;

inline void require_same_shape(const char* what, int h1, int w1, int h2, int w2) {
    if (h1 != h2 || w1 != w2)
        throw ShapeMismatch(std::string(what) + ": shape mismatch");
}

}  // namespace lvslam
