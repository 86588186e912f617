#include "support/fixtures.hpp"

#include "geolat/cli.hpp"

#include <sstream>

namespace geolat::fixture {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("geolat_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

DatasetHandle desk_dataset(const fs::path& root) {
    if (fs::exists(root / "manifest.json")) {
        return open_dataset(root);
    }
    return make_dataset(root, 8, 7, {64, 64}, 9);
}

ExperimentConfig quick_config(const fs::path& data_root, const fs::path& run_dir, int steps) {
    ExperimentConfig c = ExperimentConfig::defaults();
    c.data.root = data_root;
    c.run_dir = run_dir;
    c.codec.steps = steps;
    c.surrogate.train.steps = steps;
    c.surrogate.extra_scenes = 1;
    c.surrogate.heldout_scenes = 1;
    c.adapter.steps = steps;
    c.diffusion.steps = steps;
    c.sampler.steps = 2;
    c.evaluation.sample_k = 200;
    return c;
}

CliRun run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv = {"geolat"};
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out, err;
    CliRun r;
    r.code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

}  // namespace geolat::fixture
