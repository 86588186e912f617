#pragma once

#include <cstdint>
#include <string>

namespace geolat::check {

struct Outcome {
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

// Tolerances.
inline constexpr double kOracleTolerance = 1e-9;
inline constexpr double kUmeyamaRecoveryTolerance = 1e-6;
inline constexpr double kSpotTolerance = 1e-9;
inline constexpr double kGradientTolerance = 1e-3;
inline constexpr double kBandSigmas = 3.0;

inline constexpr int kOracleInstances = 200;
inline constexpr int kOracleMaxSize = 64;
inline constexpr int kGradientProbes = 32;
inline constexpr int kConditionDraws = 30000;

/// FPS, chamfer, Umeyama, relative pose errors, and AUC against brute-force references.
Outcome metric_oracles(std::uint64_t seed = 11);
/// Closed-form KL, single-pair AUC, and constant-offset PSNR values.
Outcome spot_values();
/// Latent compression, adapter reshape, joint width, and model input channel laws, including real forwards.
Outcome shape_laws();
/// Central finite differences of the adapter loss and the flow-matching loss in 64-bit.
Outcome gradient_checks(std::uint64_t seed = 5);
/// Mask law, zero geometry condition, rotary half-sharing, and condition draw frequencies.
Outcome conditioning_laws(std::uint64_t seed = 17);

}  // namespace geolat::check
