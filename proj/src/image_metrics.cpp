#include "geolat/image.hpp"

#include "geolat/errors.hpp"

#include <array>
#include <cmath>

namespace geolat {

namespace {

template <typename T>
double psnr_impl(std::span<const T> pred, std::span<const T> gt) {
    if (pred.size() != gt.size() || pred.empty()) {
        throw InvalidInput("psnr: images differ in shape or are empty");
    }
    double sum = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(pred.size());
    if (mse == 0.0) {
        return kPsnrIdentical;
    }
    return 10.0 * std::log10(1.0 / mse);
}

constexpr int kWindow = 11;

std::array<double, kWindow> gaussian_kernel() {
    std::array<double, kWindow> k{};
    double total = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double x = i - kWindow / 2;
        k[i] = std::exp(-(x * x) / (2.0 * 1.5 * 1.5));
        total += k[i];
    }
    for (double& v : k) {
        v /= total;
    }
    return k;
}

// Separable "valid" Gaussian filtering of one channel.
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::array<double, kWindow>& k) {
    const int ow = w - kWindow + 1;
    const int oh = h - kWindow + 1;
    std::vector<double> rows(static_cast<size_t>(h) * ow, 0.0);
    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < ow; ++u) {
            double s = 0.0;
            for (int i = 0; i < kWindow; ++i) {
                s += k[i] * img[static_cast<size_t>(v) * w + u + i];
            }
            rows[static_cast<size_t>(v) * ow + u] = s;
        }
    }
    std::vector<double> out(static_cast<size_t>(oh) * ow, 0.0);
    for (int v = 0; v < oh; ++v) {
        for (int u = 0; u < ow; ++u) {
            double s = 0.0;
            for (int i = 0; i < kWindow; ++i) {
                s += k[i] * rows[static_cast<size_t>(v + i) * ow + u];
            }
            out[static_cast<size_t>(v) * ow + u] = s;
        }
    }
    return out;
}

}  // namespace

double psnr(std::span<const float> pred, std::span<const float> gt) { return psnr_impl(pred, gt); }
double psnr(std::span<const double> pred, std::span<const double> gt) { return psnr_impl(pred, gt); }

double psnr(const Image& pred, const Image& gt) {
    if (pred.height != gt.height || pred.width != gt.width || pred.channels != gt.channels) {
        throw InvalidInput("psnr: images differ in shape");
    }
    return psnr_impl(std::span<const float>(pred.data), std::span<const float>(gt.data));
}

double ssim(const Image& pred, const Image& gt) {
    if (pred.height != gt.height || pred.width != gt.width || pred.channels != gt.channels) {
        throw InvalidInput("ssim: images differ in shape");
    }
    if (pred.height < kWindow || pred.width < kWindow) {
        throw InvalidInput("ssim: images must be at least 11x11");
    }
    const double c1 = (0.01 * 1.0) * (0.01 * 1.0);
    const double c2 = (0.03 * 1.0) * (0.03 * 1.0);
    const auto k = gaussian_kernel();
    const int h = pred.height;
    const int w = pred.width;
    const size_t n = static_cast<size_t>(h) * w;

    double total = 0.0;
    for (int ch = 0; ch < pred.channels; ++ch) {
        std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
        for (size_t i = 0; i < n; ++i) {
            x[i] = pred.data[i * pred.channels + ch];
            y[i] = gt.data[i * gt.channels + ch];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter_valid(x, h, w, k);
        const auto my = filter_valid(y, h, w, k);
        const auto sxx = filter_valid(xx, h, w, k);
        const auto syy = filter_valid(yy, h, w, k);
        const auto sxy = filter_valid(xy, h, w, k);
        double sum = 0.0;
        for (size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i];
            const double vy = syy[i] - my[i] * my[i];
            const double cxy = sxy[i] - mx[i] * my[i];
            sum += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
                   ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += sum / static_cast<double>(mx.size());
    }
    return total / pred.channels;
}

}  // namespace geolat
