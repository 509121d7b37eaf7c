#include "stainkit/color.hpp"

#include <algorithm>
#include <cmath>

#include "stainkit/errors.hpp"

namespace stainkit::color {

namespace {

// sRGB <-> linear
double srgb_to_linear(double v) {
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double v) {
    return v <= 0.0031308 ? v * 12.92 : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

// D65 reference white
constexpr double kXn = 0.95047;
constexpr double kYn = 1.00000;
constexpr double kZn = 1.08883;

constexpr double kEps = 216.0 / 24389.0;
constexpr double kKappa = 24389.0 / 27.0;

double lab_f(double t) {
    return t > kEps ? std::cbrt(t) : (kKappa * t + 16.0) / 116.0;
}

double lab_f_inv(double ft) {
    double c = ft * ft * ft;
    return c > kEps ? c : (116.0 * ft - 16.0) / kKappa;
}

std::uint8_t to_u8(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

OdImage rgb_to_od(const RgbImage& img, double i0) {
    if (img.pixels() < 1) throw InvalidInput("rgb_to_od: empty image");
    if (i0 < 1.0 || i0 > 255.0) throw InvalidInput("rgb_to_od: i0 out of [1, 255]");
    OdImage od(img.width, img.height);
    const int n = img.pixels();
    for (int p = 0; p < n; ++p) {
        for (int c = 0; c < 3; ++c) {
            double v = img.data[static_cast<std::size_t>(p) * 3 + c];
            od.at(c, p) = -std::log((v + 1.0) / (i0 + 1.0));
        }
    }
    return od;
}

RgbImage od_to_rgb(const OdImage& od, double i0) {
    RgbImage img(od.width, od.height);
    const int n = od.pixels();
    for (int p = 0; p < n; ++p) {
        for (int c = 0; c < 3; ++c) {
            double v = (i0 + 1.0) * std::exp(-od.at(c, p)) - 1.0;
            img.data[static_cast<std::size_t>(p) * 3 + c] = to_u8(v);
        }
    }
    return img;
}

LabImage rgb_to_lab(const RgbImage& img) {
    LabImage lab(img.width, img.height);
    const int n = img.pixels();
    for (int p = 0; p < n; ++p) {
        double r = srgb_to_linear(img.data[static_cast<std::size_t>(p) * 3 + 0] / 255.0);
        double g = srgb_to_linear(img.data[static_cast<std::size_t>(p) * 3 + 1] / 255.0);
        double b = srgb_to_linear(img.data[static_cast<std::size_t>(p) * 3 + 2] / 255.0);

        double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
        double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
        double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;

        double fx = lab_f(x / kXn);
        double fy = lab_f(y / kYn);
        double fz = lab_f(z / kZn);

        lab.at(p, 0) = 116.0 * fy - 16.0;
        lab.at(p, 1) = 500.0 * (fx - fy);
        lab.at(p, 2) = 200.0 * (fy - fz);
    }
    return lab;
}

RgbImage lab_to_rgb(const LabImage& img) {
    RgbImage rgb(img.width, img.height);
    const int n = img.pixels();
    for (int p = 0; p < n; ++p) {
        double fy = (img.at(p, 0) + 16.0) / 116.0;
        double fx = fy + img.at(p, 1) / 500.0;
        double fz = fy - img.at(p, 2) / 200.0;

        double x = kXn * lab_f_inv(fx);
        double y = kYn * lab_f_inv(fy);
        double z = kZn * lab_f_inv(fz);

        double r = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
        double g = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
        double b = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;

        rgb.data[static_cast<std::size_t>(p) * 3 + 0] = to_u8(255.0 * linear_to_srgb(std::clamp(r, 0.0, 1.0)));
        rgb.data[static_cast<std::size_t>(p) * 3 + 1] = to_u8(255.0 * linear_to_srgb(std::clamp(g, 0.0, 1.0)));
        rgb.data[static_cast<std::size_t>(p) * 3 + 2] = to_u8(255.0 * linear_to_srgb(std::clamp(b, 0.0, 1.0)));
    }
    return rgb;
}

ChannelStats channel_stats(const LabImage& img) {
    const int n = img.pixels();
    if (n < 1) throw InvalidInput("channel_stats: empty image");
    ChannelStats s;
    for (int c = 0; c < 3; ++c) {
        double sum = 0.0;
        for (int p = 0; p < n; ++p) sum += img.at(p, c);
        double mean = sum / n;
        double var = 0.0;
        for (int p = 0; p < n; ++p) {
            double d = img.at(p, c) - mean;
            var += d * d;
        }
        s.mean[c] = mean;
        s.std[c] = std::sqrt(var / n);
    }
    return s;
}

}  // namespace stainkit::color
