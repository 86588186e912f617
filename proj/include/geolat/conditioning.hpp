#pragma once

#include "geolat/rng.hpp"
#include "geolat/shapes.hpp"

#include <array>
#include <string>
#include <vector>

namespace geolat {

enum class ConditionMode { FirstFrame = 0, FirstLast = 1, AllFrames = 2 };

inline constexpr int kConditionModeCount = 3;

std::string mode_name(ConditionMode mode);
ConditionMode mode_from_name(const std::string& name);

/// Which input frames are provided under a mode (length N, 0/1).
std::vector<int> provided_frames(ConditionMode mode, int frames);

/// Mask bits per latent frame: bits[k][j] is the mask of the j-th input frame grouped into latent frame k.
std::vector<std::array<int, kMaskChannels>> latent_mask_bits(const std::vector<int>& frame_mask);

struct ConditionDraw {
    ConditionMode mode = ConditionMode::FirstFrame;
    bool descriptor_dropped = false;
    bool camera_dropped = false;
};

struct ConditionDropRates {
    double descriptor = 0.2;
    double camera = 0.5;
};

/// Training-time draw: uniform mode, descriptor dropped with p = 0.2, cameras dropped with p = 0.5.
ConditionDraw sample_training_condition(Rng& rng, const ConditionDropRates& rates = {});

}  // namespace geolat
