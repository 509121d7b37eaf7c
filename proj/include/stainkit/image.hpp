#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace stainkit {

// 8-bit RGB patch, interleaved row-major.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // width*height*3

    RgbImage() = default;
    RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}

    int pixels() const { return width * height; }
    std::uint8_t& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    bool operator==(const RgbImage&) const = default;
};

// Optical-density image: 3 channels x n pixels, channel-major
// (values[c*n + p]). Carries the source dimensions for reconstruction.
struct OdImage {
    static constexpr int channels = 3;
    int width = 0;
    int height = 0;
    std::vector<double> values;  // 3 * width * height

    OdImage() = default;
    OdImage(int w, int h) : width(w), height(h), values(static_cast<std::size_t>(w) * h * 3, 0.0) {}

    int pixels() const { return width * height; }
    double& at(int c, int p) { return values[static_cast<std::size_t>(c) * pixels() + p]; }
    double at(int c, int p) const { return values[static_cast<std::size_t>(c) * pixels() + p]; }
};

// CIELAB image, interleaved (L, a, b) per pixel; L in [0, 100].
struct LabImage {
    int width = 0;
    int height = 0;
    std::vector<double> data;  // width*height*3

    LabImage() = default;
    LabImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0.0) {}

    int pixels() const { return width * height; }
    double& at(int p, int c) { return data[static_cast<std::size_t>(p) * 3 + c]; }
    double at(int p, int c) const { return data[static_cast<std::size_t>(p) * 3 + c]; }
};

// Population mean and std per LAB channel.
struct ChannelStats {
    std::array<double, 3> mean{};
    std::array<double, 3> std{};
};

// Binary segmentation mask.
struct SegMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> values;  // 0 or 1

    SegMask() = default;
    SegMask(int w, int h) : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0) {}

    int pixels() const { return width * height; }
    std::uint8_t& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
    bool operator==(const SegMask&) const = default;
};

}  // namespace stainkit
