#include "geolat/conditioning.hpp"

#include "geolat/errors.hpp"

#include <algorithm>

namespace geolat {

std::string mode_name(ConditionMode mode) {
    switch (mode) {
        case ConditionMode::FirstFrame: return "first-frame";
        case ConditionMode::FirstLast: return "first-last";
        case ConditionMode::AllFrames: return "all-frames";
    }
    return "first-frame";
}

ConditionMode mode_from_name(const std::string& name) {
    if (name == "first-frame" || name == "1-view") return ConditionMode::FirstFrame;
    if (name == "first-last" || name == "2-view") return ConditionMode::FirstLast;
    if (name == "all-frames" || name == "reconstruction") return ConditionMode::AllFrames;
    throw InvalidInput("unknown condition mode " + name);
}

std::vector<int> provided_frames(ConditionMode mode, int frames) {
    if (frames < 1) {
        throw InvalidInput("frame count must be positive");
    }
    std::vector<int> mask(frames, 0);
    switch (mode) {
        case ConditionMode::FirstFrame:
            mask[0] = 1;
            break;
        case ConditionMode::FirstLast:
            mask[0] = 1;
            mask[frames - 1] = 1;
            break;
        case ConditionMode::AllFrames:
            std::fill(mask.begin(), mask.end(), 1);
            break;
    }
    return mask;
}

std::vector<std::array<int, kMaskChannels>> latent_mask_bits(const std::vector<int>& frame_mask) {
    const auto groups = latent_frame_groups(static_cast<int>(frame_mask.size()));
    std::vector<std::array<int, kMaskChannels>> bits(groups.size());
    for (size_t k = 0; k < groups.size(); ++k) {
        for (int j = 0; j < kMaskChannels; ++j) {
            bits[k][j] = frame_mask[groups[k][j]] != 0 ? 1 : 0;
        }
    }
    return bits;
}

ConditionDraw sample_training_condition(Rng& rng, const ConditionDropRates& rates) {
    ConditionDraw d;
    d.mode = static_cast<ConditionMode>(rng.below(kConditionModeCount));
    d.descriptor_dropped = rng.bernoulli(rates.descriptor);
    d.camera_dropped = rng.bernoulli(rates.camera);
    return d;
}

}  // namespace geolat
