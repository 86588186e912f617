#include "geolat/plots.hpp"

#include "geolat/errors.hpp"
#include "geolat/io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace geolat {

namespace {

constexpr std::array<std::array<float, 3>, 6> kPalette = {{
    {0.12f, 0.47f, 0.71f},
    {1.00f, 0.50f, 0.05f},
    {0.17f, 0.63f, 0.17f},
    {0.84f, 0.15f, 0.16f},
    {0.58f, 0.40f, 0.74f},
    {0.55f, 0.34f, 0.29f},
}};

constexpr int kMargin = 32;

struct Canvas {
    Image img;
    explicit Canvas(int w, int h) : img(h, w, 3) { std::fill(img.data.begin(), img.data.end(), 1.0f); }

    void set(int u, int v, const std::array<float, 3>& c) {
        if (u < 0 || v < 0 || u >= img.width || v >= img.height) {
            return;
        }
        for (int k = 0; k < 3; ++k) {
            img.at(v, u, k) = c[k];
        }
    }
    void line(double u0, double v0, double u1, double v1, const std::array<float, 3>& c) {
        const int steps = static_cast<int>(std::ceil(std::max(std::abs(u1 - u0), std::abs(v1 - v0)))) + 1;
        for (int s = 0; s <= steps; ++s) {
            const double a = static_cast<double>(s) / steps;
            set(static_cast<int>(std::lround(u0 + a * (u1 - u0))), static_cast<int>(std::lround(v0 + a * (v1 - v0))), c);
        }
    }
    void rect(int u0, int v0, int u1, int v1, const std::array<float, 3>& c) {
        for (int v = std::min(v0, v1); v <= std::max(v0, v1); ++v) {
            for (int u = std::min(u0, u1); u <= std::max(u0, u1); ++u) {
                set(u, v, c);
            }
        }
    }
    void axes() {
        const std::array<float, 3> black{0.f, 0.f, 0.f};
        line(kMargin, kMargin, kMargin, img.height - kMargin, black);
        line(kMargin, img.height - kMargin, img.width - kMargin, img.height - kMargin, black);
    }
};

std::vector<double> smoothed(const std::vector<double>& y, int window) {
    if (window <= 1) {
        return y;
    }
    std::vector<double> out(y.size());
    double sum = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
        sum += y[i];
        if (i >= static_cast<size_t>(window)) {
            sum -= y[i - window];
        }
        out[i] = sum / static_cast<double>(std::min(i + 1, static_cast<size_t>(window)));
    }
    return out;
}

void check_size(const PlotOptions& opts) {
    if (opts.width <= 2 * kMargin || opts.height <= 2 * kMargin) {
        throw InvalidInput("plot is too small");
    }
}

}  // namespace

Image line_chart(const std::vector<Series>& series, const PlotOptions& opts) {
    check_size(opts);
    Canvas canvas(opts.width, opts.height);
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    std::vector<std::vector<double>> ys;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) {
            throw InvalidInput("series " + s.name + " has mismatched x / y lengths");
        }
        auto y = smoothed(s.y, opts.smoothing);
        for (auto& v : y) {
            v = opts.log_y ? std::log10(std::max(v, 1e-12)) : v;
        }
        for (size_t i = 0; i < y.size(); ++i) {
            if (!std::isfinite(y[i])) {
                continue;
            }
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, y[i]);
            y1 = std::max(y1, y[i]);
        }
        ys.push_back(std::move(y));
    }
    canvas.axes();
    if (!std::isfinite(x0)) {
        return canvas.img;
    }
    if (x1 == x0) x1 = x0 + 1.0;
    if (y1 == y0) y1 = y0 + 1.0;
    const double pw = opts.width - 2.0 * kMargin, ph = opts.height - 2.0 * kMargin;
    auto px = [&](double x) { return kMargin + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return opts.height - kMargin - (y - y0) / (y1 - y0) * ph; };
    for (size_t s = 0; s < series.size(); ++s) {
        const auto& color = kPalette[s % kPalette.size()];
        for (size_t i = 1; i < ys[s].size(); ++i) {
            if (std::isfinite(ys[s][i - 1]) && std::isfinite(ys[s][i])) {
                canvas.line(px(series[s].x[i - 1]), py(ys[s][i - 1]), px(series[s].x[i]), py(ys[s][i]), color);
            }
        }
    }
    return canvas.img;
}

Image bar_chart(const std::vector<std::string>& labels, const std::vector<Series>& series, const PlotOptions& opts) {
    check_size(opts);
    Canvas canvas(opts.width, opts.height);
    double hi = 0.0, lo = 0.0;
    for (const auto& s : series) {
        if (s.y.size() != labels.size()) {
            throw InvalidInput("series " + s.name + " does not have one value per label");
        }
        for (double v : s.y) {
            if (std::isfinite(v)) {
                hi = std::max(hi, v);
                lo = std::min(lo, v);
            }
        }
    }
    canvas.axes();
    if (labels.empty() || series.empty() || hi == lo) {
        return canvas.img;
    }
    const double pw = opts.width - 2.0 * kMargin, ph = opts.height - 2.0 * kMargin;
    const double group = pw / static_cast<double>(labels.size());
    const double bar = group * 0.8 / static_cast<double>(series.size());
    auto py = [&](double y) { return static_cast<int>(std::lround(opts.height - kMargin - (y - lo) / (hi - lo) * ph)); };
    for (size_t g = 0; g < labels.size(); ++g) {
        for (size_t s = 0; s < series.size(); ++s) {
            const double v = series[s].y[g];
            if (!std::isfinite(v)) {
                continue;
            }
            const int u0 = static_cast<int>(kMargin + g * group + group * 0.1 + s * bar);
            const int u1 = static_cast<int>(u0 + bar) - 1;
            canvas.rect(u0, py(0.0), u1, py(v), kPalette[s % kPalette.size()]);
        }
    }
    return canvas.img;
}

void save_chart(const std::filesystem::path& png_path, const Image& image, const std::vector<Series>& series,
                const std::vector<std::string>& labels) {
    write_png(png_path, image);
    Json legend = Json::array();
    for (size_t s = 0; s < series.size(); ++s) {
        const auto& c = kPalette[s % kPalette.size()];
        Json entry = {{"name", series[s].name}, {"color", {c[0], c[1], c[2]}}};
        if (!series[s].y.empty()) {
            const auto [mn, mx] = std::minmax_element(series[s].y.begin(), series[s].y.end());
            entry["y_range"] = {*mn, *mx};
        }
        legend.push_back(entry);
    }
    Json meta = {{"image", png_path.filename().string()}, {"series", legend}};
    if (!labels.empty()) {
        meta["labels"] = labels;
    }
    auto json_path = png_path;
    json_path.replace_extension(".json");
    write_json(json_path, meta);
}

}  // namespace geolat
