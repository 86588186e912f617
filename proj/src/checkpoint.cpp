#include "geolat/errors.hpp"
#include "geolat/hash.hpp"
#include "geolat/models.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace fs = std::filesystem;

namespace geolat {

namespace {

constexpr char kMagic[8] = {'G', 'E', 'O', 'L', 'A', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& module) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& item : module.named_parameters(true)) {
        out.emplace_back(item.key(), item.value());
    }
    for (const auto& item : module.named_buffers(true)) {
        out.emplace_back(item.key(), item.value());
    }
    return out;
}

torch::Tensor as_f32(const torch::Tensor& t) { return t.detach().to(torch::kFloat32).contiguous(); }

}  // namespace

std::string parameter_hash(const torch::nn::Module& module) {
    Sha256 h;
    for (const auto& [name, tensor] : named_state(module)) {
        h.update(name);
        for (auto s : tensor.sizes()) {
            const std::int64_t v = s;
            h.update(&v, sizeof(v));
        }
        const auto data = as_f32(tensor);
        h.update(data.data_ptr<float>(), static_cast<size_t>(data.numel()) * sizeof(float));
    }
    return h.hex_digest();
}

void save_checkpoint(const fs::path& path, const torch::nn::Module& module, const Json& config, const Json& extra) {
    Json tensors = Json::array();
    std::vector<torch::Tensor> payload;
    std::int64_t offset = 0;
    for (const auto& [name, tensor] : named_state(module)) {
        const auto data = as_f32(tensor);
        tensors.push_back({{"name", name}, {"shape", data.sizes().vec()}, {"offset", offset}, {"numel", data.numel()}});
        offset += data.numel();
        payload.push_back(data);
    }
    Json manifest{{"format", "geolat-checkpoint"},
                  {"version", kVersion},
                  {"dtype", "float32"},
                  {"config", config},
                  {"extra", extra},
                  {"tensors", tensors},
                  {"parameter_hash", parameter_hash(module)}};
    const std::string text = manifest.dump();

    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot write checkpoint " + path.string());
        }
        out.write(kMagic, sizeof(kMagic));
        out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
        const std::uint64_t len = text.size();
        out.write(reinterpret_cast<const char*>(&len), sizeof(len));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& t : payload) {
            out.write(reinterpret_cast<const char*>(t.data_ptr<float>()),
                      static_cast<std::streamsize>(t.numel() * sizeof(float)));
        }
        if (!out) {
            throw std::runtime_error("failed writing checkpoint " + path.string());
        }
    }
    fs::rename(tmp, path);
}

namespace {

Json read_header(std::ifstream& in, const fs::path& path) {
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic, sizeof(magic));
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0 || version != kVersion) {
        throw InvalidInput("not a geolat checkpoint: " + path.string());
    }
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) {
        throw InvalidInput("truncated checkpoint manifest: " + path.string());
    }
    return Json::parse(text);
}

}  // namespace

Json read_checkpoint_manifest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw MissingPrerequisite("checkpoint not found: " + path.string());
    }
    return read_header(in, path);
}

Json load_checkpoint(const fs::path& path, torch::nn::Module& module) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw MissingPrerequisite("checkpoint not found: " + path.string());
    }
    const Json manifest = read_header(in, path);
    std::vector<float> payload;
    {
        std::int64_t total = 0;
        for (const auto& t : manifest.at("tensors")) {
            total += t.at("numel").get<std::int64_t>();
        }
        payload.resize(static_cast<size_t>(total));
        in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(total * sizeof(float)));
        if (!in) {
            throw InvalidInput("truncated checkpoint payload: " + path.string());
        }
    }
    std::map<std::string, Json> entries;
    for (const auto& t : manifest.at("tensors")) {
        entries[t.at("name").get<std::string>()] = t;
    }
    auto state = named_state(module);
    if (state.size() != entries.size()) {
        throw ConfigMismatch("checkpoint tensor count differs from the model: " + path.string());
    }
    torch::NoGradGuard guard;
    for (auto& [name, tensor] : state) {
        const auto it = entries.find(name);
        if (it == entries.end()) {
            throw ConfigMismatch("checkpoint lacks tensor " + name);
        }
        const auto shape = it->second.at("shape").get<std::vector<std::int64_t>>();
        if (shape != tensor.sizes().vec()) {
            throw ConfigMismatch("checkpoint tensor " + name + " has a different shape");
        }
        const auto offset = it->second.at("offset").get<std::int64_t>();
        const auto src = torch::from_blob(payload.data() + offset, shape, torch::kFloat32);
        tensor.copy_(src.to(tensor.scalar_type()));
    }
    return manifest;
}

void freeze(torch::nn::Module& module) {
    for (auto& p : module.parameters(true)) {
        p.set_requires_grad(false);
    }
}

}  // namespace geolat
