#include "geolat/io.hpp"

#include "geolat/errors.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace fs = std::filesystem;

namespace geolat {

static_assert(std::endian::native == std::endian::little, "blob and PLY writers assume a little-endian host");

namespace {

void ensure_parent(const fs::path& path) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
}

std::ofstream open_out(const fs::path& path) {
    ensure_parent(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    return out;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f != nullptr) {
            std::fclose(f);
        }
    }
};

}  // namespace

Json read_json(const fs::path& path) {
    try {
        return Json::parse(read_text(path));
    } catch (const Json::parse_error& e) {
        throw InvalidInput("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const Json& value) {
    auto out = open_out(path);
    out << value.dump(2) << '\n';
}

void write_png(const fs::path& path, const Image& image) {
    if (image.channels != 1 && image.channels != 3) {
        throw InvalidInput("write_png supports 1 or 3 channels");
    }
    ensure_parent(path);
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) {
        throw std::runtime_error("cannot write " + path.string());
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, image.width, image.height, 8, image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // Fixed header fields keep output byte-identical across runs.
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<size_t>(image.width) * image.channels);
    for (int v = 0; v < image.height; ++v) {
        for (size_t i = 0; i < row.size(); ++i) {
            const float x = image.data[static_cast<size_t>(v) * row.size() + i];
            const float c = std::isfinite(x) ? std::clamp(x, 0.0f, 1.0f) : 0.0f;
            row[i] = static_cast<png_byte>(std::lround(c * 255.0f));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const fs::path& path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) {
        throw std::runtime_error("cannot read " + path.string());
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw InvalidInput("libpng failed reading " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    Image image(height, width, channels);
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    for (int v = 0; v < height; ++v) {
        png_read_row(png, row.data(), nullptr);
        for (int i = 0; i < width * channels; ++i) {
            image.data[static_cast<size_t>(v) * width * channels + i] = row[i] / 255.0f;
        }
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

std::int64_t Blob::numel() const {
    std::int64_t n = 1;
    for (auto s : shape) {
        n *= s;
    }
    return n;
}

fs::path sidecar_path(const fs::path& blob_path) {
    fs::path p = blob_path;
    p.replace_extension(".json");
    return p;
}

namespace {

template <typename T>
void write_blob_impl(const fs::path& path, std::span<const T> data, const std::vector<std::int64_t>& shape,
                     const char* dtype) {
    std::int64_t n = 1;
    for (auto s : shape) {
        n *= s;
    }
    if (n != static_cast<std::int64_t>(data.size())) {
        throw InvalidInput("blob shape does not match data length");
    }
    {
        auto out = open_out(path);
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
    }
    write_json(sidecar_path(path), Json{{"dtype", dtype}, {"shape", shape}, {"byte_order", "little"}});
}

}  // namespace

void write_blob(const fs::path& path, std::span<const float> data, const std::vector<std::int64_t>& shape) {
    write_blob_impl(path, data, shape, "float32");
}

void write_blob(const fs::path& path, std::span<const std::uint8_t> data, const std::vector<std::int64_t>& shape) {
    write_blob_impl(path, data, shape, "uint8");
}

Blob read_blob(const fs::path& path) {
    const Json meta = read_json(sidecar_path(path));
    Blob blob;
    blob.dtype = meta.at("dtype").get<std::string>();
    blob.shape = meta.at("shape").get<std::vector<std::int64_t>>();
    const std::string raw = read_text(path);
    const auto n = static_cast<size_t>(blob.numel());
    if (blob.dtype == "float32") {
        if (raw.size() != n * sizeof(float)) {
            throw InvalidInput("blob size does not match its sidecar: " + path.string());
        }
        blob.f32.resize(n);
        std::memcpy(blob.f32.data(), raw.data(), raw.size());
    } else if (blob.dtype == "uint8") {
        if (raw.size() != n) {
            throw InvalidInput("blob size does not match its sidecar: " + path.string());
        }
        blob.u8.assign(raw.begin(), raw.end());
    } else {
        throw InvalidInput("unsupported blob dtype " + blob.dtype);
    }
    return blob;
}

void write_ply(const fs::path& path, const PointCloud& cloud) {
    auto out = open_out(path);
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << cloud.size() << "\n";
    out << "property float x\nproperty float y\nproperty float z\n";
    if (cloud.has_colors()) {
        out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    out << "end_header\n";
    for (size_t i = 0; i < cloud.size(); ++i) {
        const float xyz[3] = {static_cast<float>(cloud.points[i].x()), static_cast<float>(cloud.points[i].y()),
                              static_cast<float>(cloud.points[i].z())};
        out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
        if (cloud.has_colors()) {
            unsigned char rgb[3];
            for (int c = 0; c < 3; ++c) {
                rgb[c] = static_cast<unsigned char>(std::lround(std::clamp(cloud.colors[i][c], 0.0f, 1.0f) * 255.0f));
            }
            out.write(reinterpret_cast<const char*>(rgb), sizeof(rgb));
        }
    }
}

PointCloud read_ply(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    std::string line;
    std::getline(in, line);
    if (line != "ply") {
        throw InvalidInput("not a PLY file: " + path.string());
    }
    size_t count = 0;
    std::vector<std::string> props;
    bool binary_le = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            binary_le = fmt == "binary_little_endian";
        } else if (word == "element") {
            std::string name;
            ls >> name >> count;
            if (name != "vertex") {
                throw InvalidInput("PLY reader only supports a vertex element");
            }
        } else if (word == "property") {
            std::string type, name;
            ls >> type >> name;
            props.push_back(type + ":" + name);
        } else if (word == "end_header") {
            break;
        }
    }
    const std::vector<std::string> xyz = {"float:x", "float:y", "float:z"};
    const std::vector<std::string> xyzrgb = {"float:x", "float:y", "float:z", "uchar:red", "uchar:green", "uchar:blue"};
    if (!binary_le || (props != xyz && props != xyzrgb)) {
        throw InvalidInput("unsupported PLY layout in " + path.string());
    }
    const bool colored = props.size() == 6;
    PointCloud cloud;
    cloud.points.resize(count);
    if (colored) {
        cloud.colors.resize(count);
    }
    for (size_t i = 0; i < count; ++i) {
        float p[3];
        in.read(reinterpret_cast<char*>(p), sizeof(p));
        cloud.points[i] = Eigen::Vector3d(p[0], p[1], p[2]);
        if (colored) {
            unsigned char rgb[3];
            in.read(reinterpret_cast<char*>(rgb), sizeof(rgb));
            cloud.colors[i] = Eigen::Vector3f(rgb[0] / 255.0f, rgb[1] / 255.0f, rgb[2] / 255.0f);
        }
    }
    if (!in) {
        throw InvalidInput("truncated PLY file " + path.string());
    }
    return cloud;
}

Json poses_to_json(std::span<const CameraPose> cameras) {
    Json order = Json::array();
    for (const char* name : camera_vector_order()) {
        order.push_back(name);
    }
    Json list = Json::array();
    for (const auto& cam : cameras) {
        list.push_back(cam.to_vector());
    }
    return Json{{"order", order}, {"cameras", list}};
}

std::vector<CameraPose> poses_from_json(const Json& value) {
    const auto order = value.at("order").get<std::vector<std::string>>();
    const auto& expected = camera_vector_order();
    if (order.size() != expected.size() || !std::equal(order.begin(), order.end(), expected.begin())) {
        throw InvalidInput("pose file uses an unsupported vector order");
    }
    std::vector<CameraPose> cams;
    for (const auto& row : value.at("cameras")) {
        const auto v = row.get<std::vector<double>>();
        cams.push_back(CameraPose::from_vector(std::span<const double>(v)));
    }
    return cams;
}

void write_poses(const fs::path& path, std::span<const CameraPose> cameras) {
    write_json(path, poses_to_json(cameras));
}

std::vector<CameraPose> read_poses(const fs::path& path) { return poses_from_json(read_json(path)); }

}  // namespace geolat
