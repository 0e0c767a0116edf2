#pragma once

#include <vector>

#include "trisplat/vec.hpp"

namespace ts {

// Row-major H x W raster. Pixel (x, y) with y = row index from the top.
template <typename T>
class Image {
public:
    Image() = default;
    Image(int width, int height, T fill = T{})
        : width_(width), height_(height), data_(static_cast<size_t>(width) * height, fill) {}

    int width() const { return width_; }
    int height() const { return height_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    bool same_size(int w, int h) const { return width_ == w && height_ == h; }

    T& at(int x, int y) { return data_[static_cast<size_t>(y) * width_ + x]; }
    const T& at(int x, int y) const { return data_[static_cast<size_t>(y) * width_ + x]; }
    T& operator[](size_t i) { return data_[i]; }
    const T& operator[](size_t i) const { return data_[i]; }

    bool in_bounds(int x, int y) const { return x >= 0 && x < width_ && y >= 0 && y < height_; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

private:
    int width_ = 0, height_ = 0;
    std::vector<T> data_;
};

using ImageF = Image<double>;
using ImageV3 = Image<Vec3>;

}  // namespace ts
