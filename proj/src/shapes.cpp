#include "geolat/shapes.hpp"

#include "geolat/errors.hpp"

#include <string>

namespace geolat {

int latent_frame_count(int frames) {
    if (frames < 1 || (frames - 1) % kTemporalStride != 0) {
        throw InvalidInput("frame count " + std::to_string(frames) + " violates N = 1 + 4k");
    }
    return 1 + (frames - 1) / kTemporalStride;
}

LatentShape appearance_latent_shape(int frames, int height, int width, int channels) {
    if (height < kSpatialStride || width < kSpatialStride || height % kSpatialStride != 0 ||
        width % kSpatialStride != 0) {
        throw InvalidInput("image size must be a positive multiple of 8");
    }
    if (channels < 1) {
        throw InvalidInput("latent channel count must be positive");
    }
    return {latent_frame_count(frames), height / kSpatialStride, width / kSpatialStride, channels};
}

std::vector<std::array<int, kTemporalStride>> latent_frame_groups(int frames) {
    const int n = latent_frame_count(frames);
    std::vector<std::array<int, kTemporalStride>> groups;
    groups.reserve(n);
    groups.push_back({0, 0, 0, 0});
    for (int k = 1; k < n; ++k) {
        groups.push_back({4 * k - 3, 4 * k - 2, 4 * k - 1, 4 * k});
    }
    return groups;
}

}  // namespace geolat
