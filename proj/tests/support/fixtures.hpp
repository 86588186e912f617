#pragma once

#include "geolat/pipeline.hpp"

#include <filesystem>
#include <string>

namespace geolat::fixture {

/// Fresh directory under the system temp dir, removed first if it exists.
std::filesystem::path scratch_dir(const std::string& name);

/// 8-scene, 64 px, 9-frame dataset shared by tests; rendered once per root.
DatasetHandle desk_dataset(const std::filesystem::path& root);

/// Full-size models with a handful of optimizer steps, for plumbing and determinism tests.
ExperimentConfig quick_config(const std::filesystem::path& data_root, const std::filesystem::path& run_dir,
                              int steps = 3);

/// Runs a CLI command line and captures its streams.
struct CliRun {
    int code = 0;
    std::string out;
    std::string err;
};
CliRun run_cli(const std::vector<std::string>& args);

}  // namespace geolat::fixture
