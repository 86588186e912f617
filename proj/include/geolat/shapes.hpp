#pragma once

#include <array>
#include <vector>

namespace geolat {

inline constexpr int kTemporalStride = 4;
inline constexpr int kSpatialStride = 8;
inline constexpr int kMaskChannels = 4;

struct LatentShape {
    int n = 0;  // latent frames
    int h = 0;
    int w = 0;
    int c = 0;

    bool operator==(const LatentShape&) const = default;
};

/// n = 1 + (N - 1) / 4; throws InvalidInput unless (N - 1) is a multiple of 4.
int latent_frame_count(int frames);

/// Compression law for an N x H x W clip with c latent channels.
LatentShape appearance_latent_shape(int frames, int height, int width, int channels);

/// Input frames covered by each latent frame; latent frame 0 repeats frame 0 four times.
std::vector<std::array<int, kTemporalStride>> latent_frame_groups(int frames);

inline int adapter_input_channels(int levels, int token_channels) { return levels * token_channels; }
inline int joint_width(int latent_width) { return 2 * latent_width; }
inline int condition_channels(int c) { return c + kMaskChannels; }
inline int model_input_channels(int c) { return c + condition_channels(c); }

}  // namespace geolat
