#pragma once

#include "geolat/image.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace geolat {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

struct PlotOptions {
    int width = 640;
    int height = 360;
    bool log_y = false;
    int smoothing = 1;  // moving-average window over y
};

/// Rasterized multi-series line chart with axes; series colors cycle through a fixed palette.
Image line_chart(const std::vector<Series>& series, const PlotOptions& opts = {});

/// Grouped bar chart: one group per label, one bar per series value.
Image bar_chart(const std::vector<std::string>& labels, const std::vector<Series>& series, const PlotOptions& opts = {});

/// Writes `<stem>.png` plus `<stem>.json` naming series, colors, and axis ranges.
void save_chart(const std::filesystem::path& png_path, const Image& image, const std::vector<Series>& series,
                const std::vector<std::string>& labels = {});

}  // namespace geolat
