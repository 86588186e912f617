#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace geolat {

/// Interleaved float image, row-major, values nominally in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 3;
    std::vector<float> data;

    Image() = default;
    Image(int h, int w, int c) : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, 0.0f) {}

    size_t size() const { return data.size(); }
    float& at(int v, int u, int ch) { return data[(static_cast<size_t>(v) * width + u) * channels + ch]; }
    float at(int v, int u, int ch) const { return data[(static_cast<size_t>(v) * width + u) * channels + ch]; }
};

/// Value reported in place of +inf for identical images.
inline constexpr double kPsnrIdentical = 99.0;

/// Peak signal-to-noise ratio with MAX = 1.
double psnr(const Image& pred, const Image& gt);
double psnr(std::span<const float> pred, std::span<const float> gt);
double psnr(std::span<const double> pred, std::span<const double> gt);

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, averaged over channels.
double ssim(const Image& pred, const Image& gt);

}  // namespace geolat
