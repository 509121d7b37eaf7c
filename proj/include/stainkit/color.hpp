#pragma once

#include "stainkit/image.hpp"

namespace stainkit::color {

// Beer-Lambert transform: od = -ln((v+1)/(i0+1)). The +1 guard makes
// od(i0) exactly zero and removes the log-of-zero singularity.
OdImage rgb_to_od(const RgbImage& img, double i0 = 255.0);

// Inverse transform with rounding and clamping to [0, 255].
RgbImage od_to_rgb(const OdImage& od, double i0 = 255.0);

// sRGB (D65) <-> CIELAB.
LabImage rgb_to_lab(const RgbImage& img);
RgbImage lab_to_rgb(const LabImage& img);

// Population mean/std per LAB channel.
ChannelStats channel_stats(const LabImage& img);

}  // namespace stainkit::color
